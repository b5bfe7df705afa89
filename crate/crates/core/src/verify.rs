//! Executable acceptance properties.
//!
//! Each check returns a [`CriterionReport`] instead of panicking so the same
//! code drives both `sdprop verify` and the acceptance test target. The
//! oracles here are deliberately independent of the code under test:
//! eigenvalues come from nalgebra, the moving statistics are re-derived from
//! their unrolled sums, and gradients are compared with central differences
//! of a straight-line forward pass.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{build_mlp, Activation, InitSpec, Tensor};
use crate::covstat::{inv_sqrt, DiagCovState, FullCovState, DEFAULT_EIGEN_FLOOR};
use crate::data::{dataset_from_idx, load_mnist_dir, synthetic_classification, Dataset, IdxImages, IdxLabels};
use crate::error::{Error, Result};
use crate::harness::{
    run_experiment_with_data, summarize_accuracies, train, AccuracySummary, Cadence, ExperimentConfig,
    ExperimentResult, Grid, NetSpec, ProblemSpec, TrainSpec,
};
use crate::linalg::Matrix;
use crate::optim::OptimizerConfig;
use crate::problems::NoisyQuadratic;

/// Outcome of one acceptance criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct CriterionReport {
    pub id: u8,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CriterionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {} [{}] {}: {} ({:.1} s)",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.title,
            self.detail,
            self.seconds
        )
    }
}

fn timed(id: u8, title: &'static str, check: impl FnOnce() -> Result<(bool, String)>) -> CriterionReport {
    let clock = Instant::now();
    let (passed, detail) = match check() {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    CriterionReport {
        id,
        title,
        passed,
        detail,
        seconds: clock.elapsed().as_secs_f64(),
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn nalgebra_eigenvalues(m: &Matrix) -> Vec<f64> {
    let n = m.dim();
    let dm = DMatrix::from_row_slice(n, n, m.as_slice());
    let mut ev: Vec<f64> = dm.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// A stream `g_t = m + s·B z_t` with random rank, scale and offset.
fn random_stream(rng: &mut ChaCha8Rng, dim: usize, len: usize) -> Vec<Vec<f64>> {
    let rank = rng.random_range(1..=dim);
    let scale = 10f64.powf(rng.random_range(-3.0..3.0));
    let offset: Vec<f64> = (0..dim).map(|_| normal(rng) * scale).collect();
    let basis: Vec<f64> = (0..dim * rank).map(|_| normal(rng)).collect();
    (0..len)
        .map(|_| {
            let z: Vec<f64> = (0..rank).map(|_| normal(rng)).collect();
            (0..dim)
                .map(|i| offset[i] + scale * (0..rank).map(|k| basis[i * rank + k] * z[k]).sum::<f64>())
                .collect()
        })
        .collect()
}

const PSD_GAMMAS: [f64; 4] = [0.0, 0.5, 0.9, 0.99];

/// Criterion 1: every intermediate covariance is PSD.
pub fn psd_invariant(streams: usize, seed: u64) -> CriterionReport {
    timed(1, "PSD invariant of the online covariance", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = f64::INFINITY;
        let mut checked = 0usize;
        for _ in 0..streams {
            let dim = rng.random_range(1..=10);
            let len = rng.random_range(1..=500);
            let gamma = PSD_GAMMAS[rng.random_range(0..PSD_GAMMAS.len())];
            let mut state = FullCovState::new(dim, gamma)?;
            for g in random_stream(&mut rng, dim, len) {
                state.observe(&g)?;
                let ev = nalgebra_eigenvalues(state.cov());
                let (min, max) = (ev[0], ev[dim - 1]);
                worst = worst.min(min / (1.0 + max.abs()));
                checked += 1;
            }
        }
        Ok((
            worst >= -1e-10,
            format!("{checked} matrices, worst min-eigenvalue/(1+max) = {worst:.3e} (bound -1e-10)"),
        ))
    })
}

fn random_spd(rng: &mut ChaCha8Rng, dim: usize) -> Matrix {
    let b: Vec<f64> = (0..dim * dim).map(|_| normal(rng)).collect();
    let mut m = Matrix::identity(dim).scaled(0.5);
    for k in 0..dim {
        let col: Vec<f64> = (0..dim).map(|i| b[i * dim + k]).collect();
        m.add_outer(1.0, &col);
    }
    m
}

fn empirical_covariance(samples: &[Vec<f64>]) -> Matrix {
    let dim = samples[0].len();
    let n = samples.len() as f64;
    let mut mean = vec![0.0; dim];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v / n;
        }
    }
    let mut cov = Matrix::zeros(dim);
    let mut dev = vec![0.0; dim];
    for s in samples {
        for ((d, v), m) in dev.iter_mut().zip(s).zip(&mean) {
            *d = v - m;
        }
        cov.add_outer(1.0 / (n - 1.0), &dev);
    }
    cov
}

/// Criterion 2: `ρ Σ^{-1/2} ĝ` has covariance `ρ² I`.
pub fn whitening(samples: usize, seed: u64) -> CriterionReport {
    timed(2, "whitening by the inverse square root", || {
        let dim = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = random_spd(&mut rng, dim);
        let mean: Vec<f64> = (0..dim).map(|_| 3.0 * normal(&mut rng)).collect();
        let chol = DMatrix::from_row_slice(dim, dim, sigma.as_slice())
            .cholesky()
            .ok_or_else(|| Error::config("test covariance is not positive definite"))?
            .l();
        let d = inv_sqrt(&sigma, DEFAULT_EIGEN_FLOOR)?;
        let dcd = d.matmul(&sigma)?.matmul(&d.transpose())?;
        let identity_err = dcd.max_abs_diff(&Matrix::identity(dim));

        let whitened: Vec<Vec<f64>> = (0..samples)
            .map(|_| {
                let z: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
                let g: Vec<f64> = (0..dim)
                    .map(|i| mean[i] + (0..=i).map(|k| chol[(i, k)] * z[k]).sum::<f64>())
                    .collect();
                d.mul_vec(&g)
            })
            .collect::<Result<_>>()?;
        let mut passed = identity_err <= 1e-8;
        let mut parts = vec![format!("|DΣDᵀ - I| = {identity_err:.1e}")];
        for rho in [0.1, 1.0] {
            let steps: Vec<Vec<f64>> = whitened
                .iter()
                .map(|w| w.iter().map(|v| rho * v).collect())
                .collect();
            let cov = empirical_covariance(&steps);
            let target = Matrix::identity(dim).scaled(rho * rho);
            let rel = cov.max_abs_diff(&target) / (rho * rho);
            passed &= rel <= 0.05;
            parts.push(format!("rho={rho}: |cov - rho²I|/rho² = {rel:.4}"));
        }
        Ok((passed, format!("{samples} samples, {}", parts.join(", "))))
    })
}

/// `μ_t` and `C_t` from their unrolled sums rather than the recursion.
fn unrolled_statistics(stream: &[Vec<f64>], gamma: f64) -> (Vec<Vec<f64>>, Vec<Matrix>) {
    let dim = stream[0].len();
    let mut mus: Vec<Vec<f64>> = Vec::with_capacity(stream.len());
    for t in 1..=stream.len() {
        let mut mu: Vec<f64> = stream[0].iter().map(|g| gamma.powi(t as i32 - 1) * g).collect();
        for k in 2..=t {
            let w = (1.0 - gamma) * gamma.powi((t - k) as i32);
            for (m, g) in mu.iter_mut().zip(&stream[k - 1]) {
                *m += w * g;
            }
        }
        mus.push(mu);
    }
    let mut covs = Vec::with_capacity(stream.len());
    for t in 1..=stream.len() {
        let mut c = Matrix::zeros(dim);
        for k in 2..=t {
            let dev: Vec<f64> = stream[k - 1].iter().zip(&mus[k - 2]).map(|(g, m)| g - m).collect();
            c.add_outer(gamma.powi((t - k) as i32 + 1) * (1.0 - gamma), &dev);
        }
        covs.push(c);
    }
    (mus, covs)
}

fn scaled_error(a: &[f64], b: &[f64], scale: f64) -> f64 {
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if diff == 0.0 {
        0.0
    } else {
        diff / scale.max(f64::MIN_POSITIVE)
    }
}

/// Criterion 3: the online updates agree with a brute-force evaluation.
pub fn recurrence_oracle(streams: usize, seed: u64) -> CriterionReport {
    timed(3, "online statistics match the unrolled recurrences", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut worst_mu, mut worst_c, mut worst_diag) = (0.0f64, 0.0f64, 0.0f64);
        for s in 0..streams {
            let dim = if s % 2 == 0 { 1 } else { rng.random_range(2..=8) };
            let len = rng.random_range(1..=200);
            let gamma = rng.random_range(0.0..0.999);
            let stream = random_stream(&mut rng, dim, len);
            let (mus, covs) = unrolled_statistics(&stream, gamma);
            let mut diag = DiagCovState::new(dim, gamma)?;
            let mut full = FullCovState::new(dim, gamma)?;
            let mut magnitude = 0.0f64;
            for (t, g) in stream.iter().enumerate() {
                diag.observe(g)?;
                full.observe(g)?;
                magnitude = g.iter().fold(magnitude, |m, v| m.max(v.abs()));
                worst_mu = worst_mu.max(scaled_error(diag.mu(), &mus[t], magnitude));
                worst_mu = worst_mu.max(scaled_error(full.mu(), &mus[t], magnitude));
                worst_c = worst_c.max(scaled_error(
                    full.cov().as_slice(),
                    covs[t].as_slice(),
                    covs[t].max_abs(),
                ));
                worst_c = worst_c.max(scaled_error(diag.c2(), &covs[t].diagonal(), covs[t].max_abs()));
                for (a, b) in full.cov().diagonal().iter().zip(diag.c2()) {
                    if a != b {
                        worst_diag = worst_diag.max((a - b).abs() / a.abs().max(b.abs()));
                    }
                }
            }
        }
        let passed = worst_mu <= 1e-12 && worst_c <= 1e-12 && worst_diag <= 1e-12;
        Ok((
            passed,
            format!(
                "{streams} streams, worst relative error: mean {worst_mu:.1e}, covariance {worst_c:.1e}, diag(full) vs diagonal {worst_diag:.1e}"
            ),
        ))
    })
}

/// Straight-line MLP forward pass over the flat parameter layout of
/// [`build_mlp`]. Returns the mean NLL and the sign pattern and smallest
/// magnitude of the hidden pre-activations.
pub fn reference_mlp_loss(sizes: &[usize], theta: &[f64], x: &[f64], y: &[usize]) -> (f64, Vec<bool>, f64) {
    let mut rows: Vec<Vec<f64>> = x.chunks(sizes[0]).map(<[f64]>::to_vec).collect();
    let mut offset = 0;
    let mut pattern = Vec::new();
    let mut min_abs = f64::INFINITY;
    let layers = sizes.len() - 1;
    for l in 0..layers {
        let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
        let w = &theta[offset..offset + fan_in * fan_out];
        offset += fan_in * fan_out;
        let b = &theta[offset..offset + fan_out];
        offset += fan_out;
        rows = rows
            .iter()
            .map(|r| {
                (0..fan_out)
                    .map(|j| b[j] + (0..fan_in).map(|i| r[i] * w[i * fan_out + j]).sum::<f64>())
                    .collect()
            })
            .collect();
        if l + 1 < layers {
            for v in rows.iter_mut().flatten() {
                pattern.push(*v > 0.0);
                min_abs = min_abs.min(v.abs());
                *v = v.max(0.0);
            }
        }
    }
    let loss = rows
        .iter()
        .zip(y)
        .map(|(r, &label)| {
            let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + r.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - r[label]
        })
        .sum::<f64>()
        / y.len() as f64;
    (loss, pattern, min_abs)
}

const FD_STEP: f64 = 1e-5;
/// Gradient components smaller than this are compared absolutely: central
/// differences carry ~1e-11 of round-off, which would swamp a relative
/// comparison of a near-zero component.
const FD_MAGNITUDE_FLOOR: f64 = 1e-4;
const KINK_MARGIN: f64 = 1e-6;

/// Criterion 4: backward agrees with central differences on random MLPs.
pub fn gradient_check(nets: usize, seed: u64) -> CriterionReport {
    timed(4, "autodiff gradients match finite differences", || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        let mut worst_forward = 0.0f64;
        let (mut compared, mut skipped) = (0usize, 0usize);
        let mut built = 0;
        while built < nets {
            let hidden = rng.random_range(1..=3);
            let mut sizes = vec![rng.random_range(2..=6)];
            sizes.extend((0..hidden).map(|_| rng.random_range(2..=8)));
            sizes.push(rng.random_range(2..=5));
            let params: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
            if params > 500 {
                continue;
            }
            built += 1;
            let mut mlp = build_mlp(
                &sizes,
                Activation::Relu,
                InitSpec {
                    mean: 0.0,
                    stddev: 0.5,
                    seed: rng.random(),
                },
            )?;
            let batch = rng.random_range(1..=6);
            let x: Vec<f64> = (0..batch * sizes[0]).map(|_| normal(&mut rng)).collect();
            let y: Vec<usize> = (0..batch).map(|_| rng.random_range(0..sizes[sizes.len() - 1])).collect();
            let theta = mlp.graph.params_flat();
            let (eval, grad) = mlp.loss_and_grad(
                &theta,
                Tensor::matrix(batch, sizes[0], x.clone())?,
                Tensor::vector(y.iter().map(|&v| v as f64).collect()),
            )?;
            let (ref_loss, pattern, min_abs) = reference_mlp_loss(&sizes, &theta, &x, &y);
            worst_forward = worst_forward.max((eval.loss - ref_loss).abs() / ref_loss.abs().max(1.0));
            let near_kink = min_abs < KINK_MARGIN;
            let mut probe = theta.clone();
            for i in 0..theta.len() {
                probe[i] = theta[i] + FD_STEP;
                let (up, p_up, _) = reference_mlp_loss(&sizes, &probe, &x, &y);
                probe[i] = theta[i] - FD_STEP;
                let (down, p_down, _) = reference_mlp_loss(&sizes, &probe, &x, &y);
                probe[i] = theta[i];
                if near_kink || p_up != pattern || p_down != pattern {
                    skipped += 1;
                    continue;
                }
                let fd = (up - down) / (2.0 * FD_STEP);
                let denom = fd.abs().max(grad[i].abs()).max(FD_MAGNITUDE_FLOOR);
                worst = worst.max((fd - grad[i]).abs() / denom);
                compared += 1;
            }
        }
        Ok((
            worst <= 1e-5 && worst_forward <= 1e-12,
            format!(
                "{nets} nets, {compared} components (skipped {skipped} across a ReLU kink), worst relative error {worst:.2e}, forward vs reference {worst_forward:.1e}"
            ),
        ))
    })
}

/// Settings of the noisy-quadratic comparison.
#[derive(Debug, Clone)]
pub struct QuadraticStudyOptions {
    pub seeds: u64,
    pub steps: usize,
    pub window_start: usize,
    /// Statistics-only steps before SDProp's first update. With a single
    /// observation the variance estimate is near zero and the first real
    /// steps at gamma = 0.99 overshoot by orders of magnitude.
    pub sdprop_warmup: u64,
}

impl Default for QuadraticStudyOptions {
    fn default() -> Self {
        Self {
            seeds: 20,
            steps: 2000,
            window_start: 500,
            sdprop_warmup: 10,
        }
    }
}

fn quadratic_curves(cfg: &OptimizerConfig, opts: &QuadraticStudyOptions) -> Result<Vec<Vec<f64>>> {
    (0..opts.seeds)
        .map(|seed| {
            let mut q = NoisyQuadratic::diagonal(&[1.0, 100.0], &[1.0, 1.0], vec![1.0, 1.0], seed)?
                .with_steps_per_epoch(opts.steps)?;
            let (status, records) = train(
                &mut q,
                &TrainSpec {
                    optimizer: cfg,
                    epochs: 1,
                    cadence: Cadence::Step,
                    run: seed as u32,
                    wall_clock: false,
                },
            )?;
            Ok(if status == crate::harness::RunStatus::Completed {
                records.iter().map(|r| r.loss).collect()
            } else {
                vec![f64::INFINITY; opts.steps + 1]
            })
        })
        .collect()
}

fn final_mean(curves: &[Vec<f64>]) -> f64 {
    curves.iter().map(|c| *c.last().unwrap()).sum::<f64>() / curves.len() as f64
}

fn tune(
    base: OptimizerConfig,
    grid: &Grid,
    opts: &QuadraticStudyOptions,
) -> Result<(OptimizerConfig, Vec<Vec<f64>>)> {
    let mut best: Option<(OptimizerConfig, Vec<Vec<f64>>)> = None;
    for (_, cfg) in grid.cells(&base) {
        let curves = quadratic_curves(&cfg, opts)?;
        let better = match &best {
            None => true,
            Some((_, b)) => final_mean(&curves) < final_mean(b),
        };
        if better {
            best = Some((cfg, curves));
        }
    }
    best.ok_or_else(|| Error::config("empty grid"))
}

/// Criterion 5: tuned SDProp versus tuned SGD on an ill-conditioned noisy
/// quadratic.
pub fn noisy_quadratic(opts: &QuadraticStudyOptions) -> CriterionReport {
    timed(5, "noisy quadratic: tuned SDProp vs tuned SGD", || {
        let sdprop_base = OptimizerConfig::new(crate::OptimizerKind::SdPropDiag).with_warmup(opts.sdprop_warmup);
        let (sd_cfg, sd) = tune(sdprop_base, &Grid::default_for(crate::OptimizerKind::SdPropDiag), opts)?;
        let (sgd_cfg, sgd) = tune(
            OptimizerConfig::new(crate::OptimizerKind::Sgd),
            &Grid::default_for(crate::OptimizerKind::Sgd),
            opts,
        )?;
        let (sd_final, sgd_final) = (final_mean(&sd), final_mean(&sgd));
        let window = opts.window_start..=opts.steps;
        let window_mean = |c: &Vec<f64>| c[window.clone()].iter().sum::<f64>() / window.clone().count() as f64;
        let mut below = 0;
        let mut below_everywhere = 0;
        for (a, b) in sd.iter().zip(&sgd) {
            if window_mean(a) < window_mean(b) {
                below += 1;
            }
            if window.clone().all(|t| a[t] < b[t]) {
                below_everywhere += 1;
            }
        }
        let needed = (opts.seeds * 4).div_ceil(5) as usize;
        Ok((
            sd_final <= sgd_final && below >= needed,
            format!(
                "SDProp(rho={}, gamma={}) final {sd_final:.5} vs SGD(alpha={}) {sgd_final:.5}; window mean lower in {below}/{} seeds (need {needed}); pointwise lower at every step in {below_everywhere}",
                sd_cfg.rho.unwrap(),
                sd_cfg.gamma.unwrap(),
                sgd_cfg.alpha.unwrap(),
                opts.seeds
            ),
        ))
    })
}

/// Criterion 8: identical configuration and seed give identical metrics.
pub fn determinism() -> CriterionReport {
    timed(8, "determinism of metrics", || {
        let mut quad = ExperimentConfig::new(
            ProblemSpec::Quadratic {
                curvature: vec![1.0, 100.0],
                noise: vec![1.0, 1.0],
                start: vec![1.0, 1.0],
                steps_per_epoch: 50,
            },
            OptimizerConfig::sdprop(0.01, 0.9).with_warmup(1),
        );
        quad.epochs = 4;
        quad.runs = 2;
        quad.cadence = Cadence::Step;
        let mut mlp = ExperimentConfig::new(
            ProblemSpec::Synthetic {
                samples: 200,
                features: 5,
                classes: 3,
                separation: 3.0,
                net: NetSpec {
                    hidden_layers: 2,
                    hidden_units: 8,
                    init_std: 0.1,
                },
            },
            OptimizerConfig::rmsprop(0.01, 0.9),
        );
        mlp.batch_size = 32;
        mlp.epochs = 3;
        let mut identical = true;
        for cfg in [&quad, &mlp] {
            let data = crate::harness::load_dataset(&cfg.problem, cfg.seed)?;
            let a = run_experiment_with_data(cfg, data.as_ref())?.metrics_csv()?;
            let b = run_experiment_with_data(cfg, data.as_ref())?.metrics_csv()?;
            identical &= a == b;
        }
        Ok((identical, "repeated quadratic and MLP runs give byte-identical CSV".into()))
    })
}

/// Criterion 9: IDX decoding round-trips and rejects malformed files.
pub fn idx_ingestion(real_dir: Option<&std::path::Path>) -> CriterionReport {
    timed(9, "IDX ingestion", || {
        let images = IdxImages {
            count: 3,
            rows: 2,
            cols: 2,
            pixels: vec![0, 255, 128, 0, 1, 2, 3, 4, 250, 251, 252, 253],
        };
        let labels = IdxLabels { labels: vec![7, 0, 9] };
        let (ib, lb) = (images.to_bytes(), labels.to_bytes());
        let mut ok = IdxImages::parse(&ib)?.to_bytes() == ib && IdxLabels::parse(&lb)?.to_bytes() == lb;
        let ds = dataset_from_idx(&IdxImages::parse(&ib)?, &IdxLabels::parse(&lb)?)?;
        ok &= ds.features()[..4] == [0.0, 1.0, 128.0 / 255.0, 0.0];
        ok &= ds.features().iter().all(|v| (0.0..=1.0).contains(v));

        ok &= matches!(IdxLabels::parse(&ib), Err(Error::Format { expected: 2049, found: 2051 }));
        ok &= matches!(IdxImages::parse(&lb), Err(Error::Format { expected: 2051, found: 2049 }));
        ok &= matches!(IdxImages::parse(&ib[..ib.len() - 1]), Err(Error::Truncated { .. }));
        ok &= matches!(IdxLabels::parse(&lb[..5]), Err(Error::Truncated { .. }));
        let two = IdxLabels { labels: vec![1, 2] };
        ok &= matches!(
            dataset_from_idx(&images, &two),
            Err(Error::CountMismatch { images: 3, labels: 2 })
        );
        let mut detail = "synthetic round trip and wrong-magic/truncation/count-mismatch cases".to_string();
        if let Some(dir) = real_dir {
            let ib = std::fs::read(dir.join("train-images-idx3-ubyte")).map_err(|e| Error::io(dir, e))?;
            let lb = std::fs::read(dir.join("train-labels-idx1-ubyte")).map_err(|e| Error::io(dir, e))?;
            ok &= IdxImages::parse(&ib)?.to_bytes() == ib && IdxLabels::parse(&lb)?.to_bytes() == lb;
            let ds = load_mnist_dir(dir)?;
            detail.push_str(&format!("; {} round-trips ({} images)", dir.display(), ds.len()));
        }
        Ok((ok, detail))
    })
}

/// Settings of the deep-MLP study behind criteria 6 and 7.
#[derive(Debug, Clone)]
pub struct MlpStudyOptions {
    pub runs: u32,
    pub epochs: u32,
    pub net: NetSpec,
    pub large_batch: usize,
    pub small_batch: usize,
    /// Shared by both optimizers. Must be far below the gradient scale of
    /// the deep layers, which starts around 1e-20 under this initialisation.
    pub epsilon: f64,
    /// SDProp statistics-only warmup, in epochs.
    pub sdprop_warmup_epochs: u64,
    pub seed: u64,
}

impl Default for MlpStudyOptions {
    fn default() -> Self {
        Self {
            runs: 5,
            epochs: 50,
            net: NetSpec::default(),
            large_batch: 128,
            small_batch: 16,
            epsilon: 1e-30,
            sdprop_warmup_epochs: 1,
            seed: 0,
        }
    }
}

/// Final-accuracy summaries of every cell of the study. Diverged runs count
/// as accuracy 0.
#[derive(Debug, Clone)]
pub struct MlpStudy {
    pub sdprop_g099: AccuracySummary,
    pub sdprop_g090: AccuracySummary,
    pub rmsprop_b099: AccuracySummary,
    pub sdprop_g099_small: AccuracySummary,
    pub rmsprop_b099_small: AccuracySummary,
}

fn study_summary(result: &ExperimentResult) -> Result<AccuracySummary> {
    let accs: Vec<f64> = result
        .runs
        .iter()
        .map(|r| {
            if r.completed() {
                r.final_record().and_then(|m| m.accuracy).unwrap_or(0.0)
            } else {
                0.0
            }
        })
        .collect();
    let diverged = result.runs.iter().filter(|r| !r.completed()).count();
    summarize_accuracies(&accs, diverged)
}

/// Trains every configuration criteria 6 and 7 need. `progress` receives a
/// line per finished cell.
pub fn mlp_study(data: Arc<Dataset>, opts: &MlpStudyOptions, progress: &mut dyn FnMut(&str)) -> Result<MlpStudy> {
    let cell = |optimizer: OptimizerConfig, batch: usize| {
        let mut cfg = ExperimentConfig::new(
            ProblemSpec::Synthetic {
                samples: data.len(),
                features: data.dim(),
                classes: data.num_classes(),
                separation: 0.0,
                net: opts.net,
            },
            optimizer,
        );
        cfg.batch_size = batch;
        cfg.epochs = opts.epochs;
        cfg.runs = opts.runs;
        cfg.seed = opts.seed;
        cfg
    };
    let steps = |batch: usize| (data.len().div_ceil(batch)) as u64 * opts.sdprop_warmup_epochs;
    let sdprop = |gamma: f64, batch: usize| {
        OptimizerConfig::sdprop(0.001, gamma)
            .with_epsilon(opts.epsilon)
            .with_warmup(steps(batch))
    };
    let rmsprop = || OptimizerConfig::rmsprop(0.001, 0.99).with_epsilon(opts.epsilon);

    let mut run = |name: &str, cfg: ExperimentConfig| -> Result<AccuracySummary> {
        let result = run_experiment_with_data(&cfg, Some(&data))?;
        let summary = study_summary(&result)?;
        let accs: Vec<String> = result
            .runs
            .iter()
            .map(|r| match r.final_record().and_then(|m| m.accuracy) {
                Some(a) if r.completed() => format!("{a:.4}"),
                _ => "diverged".into(),
            })
            .collect();
        progress(&format!(
            "{name} batch {}: avg {:.4} best {:.4} worst {:.4} [{}]",
            cfg.batch_size,
            summary.avg,
            summary.best,
            summary.worst,
            accs.join(", ")
        ));
        Ok(summary)
    };
    let (lb, sb) = (opts.large_batch, opts.small_batch);
    Ok(MlpStudy {
        sdprop_g099: run("sdprop gamma=0.99 rho=0.001", cell(sdprop(0.99, lb), lb))?,
        sdprop_g090: run("sdprop gamma=0.9 rho=0.001", cell(sdprop(0.9, lb), lb))?,
        rmsprop_b099: run("rmsprop beta=0.99 alpha=0.001", cell(rmsprop(), lb))?,
        sdprop_g099_small: run("sdprop gamma=0.99 rho=0.001", cell(sdprop(0.99, sb), sb))?,
        rmsprop_b099_small: run("rmsprop beta=0.99 alpha=0.001", cell(rmsprop(), sb))?,
    })
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

/// Criterion 6 from a finished study.
pub fn deep_mlp_report(study: &MlpStudy, seconds: f64) -> CriterionReport {
    let a = study.sdprop_g099.avg > study.sdprop_g090.avg;
    let b = study.sdprop_g099.spread() <= study.rmsprop_b099.spread();
    CriterionReport {
        id: 6,
        title: "deep MLP: gamma ordering and run-to-run spread",
        passed: a && b,
        detail: format!(
            "(a) {}: SDProp avg {} (gamma=0.99) vs {} (gamma=0.9); (b) {}: spread SDProp {} vs RMSProp {}",
            if a { "holds" } else { "fails" },
            pct(study.sdprop_g099.avg),
            pct(study.sdprop_g090.avg),
            if b { "holds" } else { "fails" },
            pct(study.sdprop_g099.spread()),
            pct(study.rmsprop_b099.spread()),
        ),
        seconds,
    }
}

/// Criterion 7 from a finished study.
pub fn batch_sensitivity_report(study: &MlpStudy, seconds: f64) -> CriterionReport {
    let sd_drop = study.sdprop_g099.avg - study.sdprop_g099_small.avg;
    let rms_drop = study.rmsprop_b099.avg - study.rmsprop_b099_small.avg;
    CriterionReport {
        id: 7,
        title: "mini-batch sensitivity",
        passed: sd_drop <= rms_drop,
        detail: format!(
            "accuracy drop from large to small batch: SDProp {} ({} -> {}), RMSProp {} ({} -> {})",
            pct(sd_drop),
            pct(study.sdprop_g099.avg),
            pct(study.sdprop_g099_small.avg),
            pct(rms_drop),
            pct(study.rmsprop_b099.avg),
            pct(study.rmsprop_b099_small.avg),
        ),
        seconds,
    }
}

/// Criteria 1 to 5, 8 and 9 with their stated sizes.
pub fn fast_suite(mnist_dir: Option<&std::path::Path>) -> Vec<CriterionReport> {
    vec![
        psd_invariant(1000, 1),
        whitening(100_000, 2),
        recurrence_oracle(200, 3),
        gradient_check(50, 4),
        noisy_quadratic(&QuadraticStudyOptions::default()),
        determinism(),
        idx_ingestion(mnist_dir),
    ]
}

/// A small separable dataset for exercising the MLP study without MNIST.
pub fn tiny_study_dataset() -> Result<Arc<Dataset>> {
    Ok(Arc::new(synthetic_classification(256, 8, 3, 4.0, 0)?))
}
