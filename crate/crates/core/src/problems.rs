//! Stochastic-gradient oracles: a quadratic with known Gaussian gradient
//! noise, a noisy Rosenbrock valley, and MLP classification.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::Mlp;
use crate::data::{BatchSampler, Dataset};
use crate::error::{ensure_finite, ensure_len, Error, Result};
use crate::linalg::{check_symmetric, spectral_map, symmetric_eigen, Matrix};
use crate::ParamVector;

/// Tolerance on negative eigenvalues when validating PSD inputs.
const PSD_TOLERANCE: f64 = 1e-10;

/// One observed stochastic gradient and the loss of the batch it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct GradSample {
    pub grad: Vec<f64>,
    pub loss: f64,
}

/// Deterministic full-data (or analytic) evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    /// Fraction correct, for classification problems.
    pub accuracy: Option<f64>,
}

/// Uniform interface over everything the harness can train.
///
/// Implementations own their randomness, so repeated calls with the same
/// arguments may return different samples; the sequence is a function of the
/// construction seed.
pub trait StochasticProblem: Send {
    fn dim(&self) -> usize;

    fn initial_params(&self) -> ParamVector;

    /// Gradient samples that make up one epoch.
    fn steps_per_epoch(&self) -> usize;

    fn sample_gradient(&mut self, theta: &[f64], epoch: u32, step: usize) -> Result<GradSample>;

    fn evaluate(&mut self, theta: &[f64]) -> Result<Evaluation>;
}

fn check_psd(what: &str, m: &Matrix) -> Result<()> {
    check_symmetric(m)?;
    let eig = symmetric_eigen(m)?;
    let max = eig.values.last().copied().unwrap_or(0.0);
    if let Some(&min) = eig.values.first() {
        if min < -PSD_TOLERANCE * (1.0 + max.abs()) {
            return Err(Error::config(format!(
                "{what} must be positive semi-definite (min eigenvalue {min})"
            )));
        }
    }
    Ok(())
}

fn standard_normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// `f(θ) = ½ θᵀAθ` observed through `ĝ = Aθ + η`, `η ~ N(0, Σ_n)`.
#[derive(Debug, Clone)]
pub struct NoisyQuadratic {
    a: Matrix,
    noise_cov: Matrix,
    noise_sqrt: Matrix,
    start: Vec<f64>,
    steps_per_epoch: usize,
    rng: ChaCha8Rng,
}

impl NoisyQuadratic {
    pub fn new(a: Matrix, noise_cov: Matrix, start: Vec<f64>, seed: u64) -> Result<Self> {
        ensure_len(a.dim(), noise_cov.dim())?;
        ensure_len(a.dim(), start.len())?;
        ensure_finite("start", &start)?;
        check_psd("curvature", &a)?;
        check_psd("noise covariance", &noise_cov)?;
        let noise_sqrt = spectral_map(&noise_cov, |l| l.max(0.0).sqrt())?;
        Ok(Self {
            a,
            noise_cov,
            noise_sqrt,
            start,
            steps_per_epoch: 1,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Diagonal curvature and diagonal noise variances.
    pub fn diagonal(curvature: &[f64], noise_var: &[f64], start: Vec<f64>, seed: u64) -> Result<Self> {
        Self::new(
            Matrix::from_diag(curvature),
            Matrix::from_diag(noise_var),
            start,
            seed,
        )
    }

    pub fn with_steps_per_epoch(mut self, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::config("steps per epoch must be positive"));
        }
        self.steps_per_epoch = steps;
        Ok(self)
    }

    pub fn curvature(&self) -> &Matrix {
        &self.a
    }

    pub fn noise_cov(&self) -> &Matrix {
        &self.noise_cov
    }

    /// Noise-free gradient `Aθ`. Test and analysis use only; the training
    /// loop sees [`StochasticProblem::sample_gradient`].
    pub fn true_gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        ensure_finite("theta", theta)?;
        self.a.mul_vec(theta)
    }

    /// `½ θᵀAθ`.
    pub fn true_loss(&self, theta: &[f64]) -> Result<f64> {
        let g = self.true_gradient(theta)?;
        Ok(0.5 * g.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>())
    }
}

impl StochasticProblem for NoisyQuadratic {
    fn dim(&self) -> usize {
        self.a.dim()
    }

    fn initial_params(&self) -> ParamVector {
        self.start.clone()
    }

    fn steps_per_epoch(&self) -> usize {
        self.steps_per_epoch
    }

    fn sample_gradient(&mut self, theta: &[f64], _epoch: u32, _step: usize) -> Result<GradSample> {
        let mut grad = self.true_gradient(theta)?;
        let z = standard_normals(&mut self.rng, grad.len());
        for (g, n) in grad.iter_mut().zip(self.noise_sqrt.mul_vec(&z)?) {
            *g += n;
        }
        Ok(GradSample {
            grad,
            loss: self.true_loss(theta)?,
        })
    }

    fn evaluate(&mut self, theta: &[f64]) -> Result<Evaluation> {
        Ok(Evaluation {
            loss: self.true_loss(theta)?,
            accuracy: None,
        })
    }
}

/// `f(θ) = (1 − θ₁)² + 100(θ₂ − θ₁²)²` with isotropic Gaussian gradient noise.
#[derive(Debug, Clone)]
pub struct Rosenbrock {
    noise_std: f64,
    start: Vec<f64>,
    steps_per_epoch: usize,
    rng: ChaCha8Rng,
}

/// Rosenbrock problem starting from the customary `(−1.2, 1)`.
pub fn make_rosenbrock(noise_std: f64, seed: u64) -> Result<Rosenbrock> {
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::config(format!("noise std must be non-negative, got {noise_std}")));
    }
    Ok(Rosenbrock {
        noise_std,
        start: vec![-1.2, 1.0],
        steps_per_epoch: 1,
        rng: ChaCha8Rng::seed_from_u64(seed),
    })
}

impl Rosenbrock {
    pub fn with_steps_per_epoch(mut self, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::config("steps per epoch must be positive"));
        }
        self.steps_per_epoch = steps;
        Ok(self)
    }

    pub fn with_start(mut self, start: Vec<f64>) -> Result<Self> {
        ensure_len(2, start.len())?;
        ensure_finite("start", &start)?;
        self.start = start;
        Ok(self)
    }

    pub fn loss(theta: &[f64]) -> f64 {
        let (x, y) = (theta[0], theta[1]);
        (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2)
    }

    pub fn true_gradient(theta: &[f64]) -> Vec<f64> {
        let (x, y) = (theta[0], theta[1]);
        vec![
            -2.0 * (1.0 - x) - 400.0 * x * (y - x * x),
            200.0 * (y - x * x),
        ]
    }
}

impl StochasticProblem for Rosenbrock {
    fn dim(&self) -> usize {
        2
    }

    fn initial_params(&self) -> ParamVector {
        self.start.clone()
    }

    fn steps_per_epoch(&self) -> usize {
        self.steps_per_epoch
    }

    fn sample_gradient(&mut self, theta: &[f64], _epoch: u32, _step: usize) -> Result<GradSample> {
        ensure_len(2, theta.len())?;
        ensure_finite("theta", theta)?;
        let mut grad = Self::true_gradient(theta);
        let z = standard_normals(&mut self.rng, 2);
        for (g, n) in grad.iter_mut().zip(z) {
            *g += self.noise_std * n;
        }
        Ok(GradSample {
            grad,
            loss: Self::loss(theta),
        })
    }

    fn evaluate(&mut self, theta: &[f64]) -> Result<Evaluation> {
        ensure_len(2, theta.len())?;
        Ok(Evaluation {
            loss: Self::loss(theta),
            accuracy: None,
        })
    }
}

/// Rows per forward pass when evaluating on the whole dataset.
const EVAL_CHUNK: usize = 2048;

/// Mini-batch NLL training of an MLP on a dataset.
#[derive(Debug, Clone)]
pub struct ClassificationProblem {
    mlp: Mlp,
    data: Arc<Dataset>,
    sampler: BatchSampler,
    start: Vec<f64>,
}

impl ClassificationProblem {
    pub fn new(mlp: Mlp, data: Arc<Dataset>, sampler: BatchSampler) -> Result<Self> {
        ensure_len(mlp.input_dim(), data.dim())?;
        if mlp.num_classes() < data.num_classes() {
            return Err(Error::config(format!(
                "network has {} outputs but the dataset has {} classes",
                mlp.num_classes(),
                data.num_classes()
            )));
        }
        if sampler.batch_size() > data.len() {
            return Err(Error::config(format!(
                "batch size {} exceeds dataset size {}",
                sampler.batch_size(),
                data.len()
            )));
        }
        let start = mlp.graph.params_flat();
        Ok(Self {
            mlp,
            data,
            sampler,
            start,
        })
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }

    /// Gradient over an explicit set of sample indices.
    pub fn gradient_on(&mut self, theta: &[f64], indices: &[usize]) -> Result<GradSample> {
        ensure_finite("theta", theta)?;
        let (x, y) = self.data.batch(indices);
        let (eval, grad) = self.mlp.loss_and_grad(theta, x, y)?;
        Ok(GradSample {
            grad,
            loss: eval.loss,
        })
    }
}

impl StochasticProblem for ClassificationProblem {
    fn dim(&self) -> usize {
        self.mlp.num_params()
    }

    fn initial_params(&self) -> ParamVector {
        self.start.clone()
    }

    fn steps_per_epoch(&self) -> usize {
        self.sampler.batches_per_epoch(self.data.len())
    }

    fn sample_gradient(&mut self, theta: &[f64], epoch: u32, step: usize) -> Result<GradSample> {
        let indices = self.sampler.next_batch(self.data.len(), epoch, step)?;
        self.gradient_on(theta, &indices)
    }

    fn evaluate(&mut self, theta: &[f64]) -> Result<Evaluation> {
        ensure_finite("theta", theta)?;
        let n = self.data.len();
        let mut loss_sum = 0.0;
        let mut correct = 0;
        let all: Vec<usize> = (0..n).collect();
        for chunk in all.chunks(EVAL_CHUNK) {
            let (x, y) = self.data.batch(chunk);
            let eval = self.mlp.evaluate(theta, x, y)?;
            loss_sum += eval.loss * eval.count as f64;
            correct += eval.correct;
        }
        Ok(Evaluation {
            loss: loss_sum / n as f64,
            accuracy: Some(correct as f64 / n as f64),
        })
    }
}
