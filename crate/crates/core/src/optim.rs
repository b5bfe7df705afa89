//! Parameter-update rules: SGD, RMSProp, Adam and the two SDProp variants,
//! plus gradient clipping and step-wise rate decay.
//!
//! Every rule updates its statistics with the current gradient *before*
//! taking the parameter step, so the step at time `t` divides by the
//! statistic at time `t`. The stabiliser `ε` is added outside the square
//! root (`√v + ε`, `√c² + ε`).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::covstat::{DiagCovState, FullCovState, DEFAULT_EIGEN_FLOOR};
use crate::error::{ensure_finite, ensure_len, Error, Result};
use crate::linalg::spectral_map;

/// Largest parameter count accepted by full-matrix SDProp. Each step costs
/// an `O(d³)` eigendecomposition and the state holds `d²` entries.
pub const MAX_FULL_DIM: usize = 50;

pub const DEFAULT_EPSILON: f64 = 1e-8;
pub const DEFAULT_BETA: f64 = 0.9;
pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_GAMMA: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OptimizerKind {
    #[serde(rename = "sgd")]
    Sgd,
    #[serde(rename = "rmsprop")]
    RmsProp,
    #[serde(rename = "adam")]
    Adam,
    #[serde(rename = "sdprop")]
    SdPropDiag,
    #[serde(rename = "sdprop-full")]
    SdPropFull,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 5] = [
        OptimizerKind::Sgd,
        OptimizerKind::RmsProp,
        OptimizerKind::Adam,
        OptimizerKind::SdPropDiag,
        OptimizerKind::SdPropFull,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::RmsProp => "rmsprop",
            OptimizerKind::Adam => "adam",
            OptimizerKind::SdPropDiag => "sdprop",
            OptimizerKind::SdPropFull => "sdprop-full",
        }
    }

    fn is_sdprop(self) -> bool {
        matches!(self, OptimizerKind::SdPropDiag | OptimizerKind::SdPropFull)
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OptimizerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown optimizer `{s}` (expected sgd, rmsprop, adam, sdprop, sdprop-full)"
                ))
            })
    }
}

/// Multiply the rate by `factor` once every `every_n_epochs` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecaySchedule {
    pub every_n_epochs: u32,
    pub factor: f64,
}

impl DecaySchedule {
    pub fn validate(&self) -> Result<()> {
        if self.every_n_epochs == 0 {
            return Err(Error::config("decay interval must be at least one epoch"));
        }
        if !(self.factor > 0.0 && self.factor <= 1.0) {
            return Err(Error::config(format!(
                "decay factor must lie in (0, 1], got {}",
                self.factor
            )));
        }
        Ok(())
    }
}

/// `rate · factor^⌊epoch / every_n_epochs⌋`, epochs counted from zero.
pub fn apply_decay(rate: f64, epoch: u32, schedule: &DecaySchedule) -> f64 {
    let periods = epoch / schedule.every_n_epochs.max(1);
    rate * schedule.factor.powi(periods as i32)
}

/// Rescales `g` onto the ball of radius `threshold` when its Euclidean norm
/// exceeds it. Returns whether the gradient was rescaled.
pub fn clip_gradient(g: &mut [f64], threshold: f64) -> Result<bool> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(Error::config(format!("clip threshold must be positive, got {threshold}")));
    }
    ensure_finite("gradient", g)?;
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > threshold {
        let s = threshold / norm;
        g.iter_mut().for_each(|x| *x *= s);
        return Ok(true);
    }
    Ok(false)
}

/// Declarative optimizer description. Only the fields that belong to `kind`
/// may be set; unset ones fall back to the defaults above, except the rate
/// (`alpha` or `rho`), which is mandatory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub alpha: Option<f64>,
    pub rho: Option<f64>,
    pub beta: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub gamma: Option<f64>,
    pub epsilon: Option<f64>,
    pub bias_correction: bool,
    /// SDProp only: number of initial gradients that update the statistics
    /// without moving the parameters.
    pub warmup_steps: u64,
    /// SDProp-full only: eigenvalue floor of the preconditioner.
    pub eigen_floor: Option<f64>,
    pub clip_threshold: Option<f64>,
    pub decay: Option<DecaySchedule>,
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            alpha: None,
            rho: None,
            beta: None,
            beta1: None,
            beta2: None,
            gamma: None,
            epsilon: None,
            bias_correction: false,
            warmup_steps: 0,
            eigen_floor: None,
            clip_threshold: None,
            decay: None,
        }
    }

    pub fn sgd(alpha: f64) -> Self {
        Self {
            alpha: Some(alpha),
            ..Self::new(OptimizerKind::Sgd)
        }
    }

    pub fn rmsprop(alpha: f64, beta: f64) -> Self {
        Self {
            alpha: Some(alpha),
            beta: Some(beta),
            ..Self::new(OptimizerKind::RmsProp)
        }
    }

    pub fn adam(alpha: f64) -> Self {
        Self {
            alpha: Some(alpha),
            ..Self::new(OptimizerKind::Adam)
        }
    }

    pub fn sdprop(rho: f64, gamma: f64) -> Self {
        Self {
            rho: Some(rho),
            gamma: Some(gamma),
            ..Self::new(OptimizerKind::SdPropDiag)
        }
    }

    pub fn sdprop_full(rho: f64, gamma: f64) -> Self {
        Self {
            rho: Some(rho),
            gamma: Some(gamma),
            ..Self::new(OptimizerKind::SdPropFull)
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = Some(epsilon);
        self
    }

    pub fn with_warmup(mut self, steps: u64) -> Self {
        self.warmup_steps = steps;
        self
    }

    /// The undecayed learning rate (`alpha`, or `rho` for SDProp).
    pub fn base_rate(&self) -> Option<f64> {
        if self.kind.is_sdprop() {
            self.rho
        } else {
            self.alpha
        }
    }

    pub fn set_base_rate(&mut self, rate: f64) {
        if self.kind.is_sdprop() {
            self.rho = Some(rate);
        } else {
            self.alpha = Some(rate);
        }
    }

    /// Checks ranges and field relevance, filling in defaults.
    pub fn resolve(&self) -> Result<Hyper> {
        use OptimizerKind::*;
        let kind = self.kind;
        let allowed: &[&str] = match kind {
            Sgd => &["alpha"],
            RmsProp => &["alpha", "beta", "epsilon"],
            Adam => &["alpha", "beta1", "beta2", "epsilon"],
            SdPropDiag => &["rho", "gamma", "epsilon", "bias_correction", "warmup"],
            SdPropFull => &["rho", "gamma", "eigen_floor", "warmup"],
        };
        let present = [
            ("alpha", self.alpha.is_some()),
            ("rho", self.rho.is_some()),
            ("beta", self.beta.is_some()),
            ("beta1", self.beta1.is_some()),
            ("beta2", self.beta2.is_some()),
            ("gamma", self.gamma.is_some()),
            ("epsilon", self.epsilon.is_some()),
            ("bias_correction", self.bias_correction),
            ("warmup", self.warmup_steps > 0),
            ("eigen_floor", self.eigen_floor.is_some()),
        ];
        for (name, set) in present {
            if set && !allowed.contains(&name) {
                return Err(Error::config(format!("`{name}` is not a {kind} parameter")));
            }
        }

        if let Some(t) = self.clip_threshold {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::config(format!("clip threshold must be positive, got {t}")));
            }
        }
        if let Some(d) = &self.decay {
            d.validate()?;
        }

        let rate_name = if kind.is_sdprop() { "rho" } else { "alpha" };
        let rate = self
            .base_rate()
            .ok_or_else(|| Error::config(format!("{kind} requires `{rate_name}`")))?;
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(Error::config(format!("{rate_name} must be non-negative, got {rate}")));
        }
        let decay_rate = |name: &str, v: f64| -> Result<f64> {
            if (0.0..1.0).contains(&v) {
                Ok(v)
            } else {
                Err(Error::config(format!("{name} must lie in [0, 1), got {v}")))
            }
        };
        let epsilon = self.epsilon.unwrap_or(DEFAULT_EPSILON);
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::config(format!("epsilon must be non-negative, got {epsilon}")));
        }

        Ok(match kind {
            Sgd => Hyper::Sgd { alpha: rate },
            RmsProp => Hyper::RmsProp(RmsPropParams {
                alpha: rate,
                beta: decay_rate("beta", self.beta.unwrap_or(DEFAULT_BETA))?,
                epsilon,
            }),
            Adam => Hyper::Adam(AdamParams {
                alpha: rate,
                beta1: decay_rate("beta1", self.beta1.unwrap_or(DEFAULT_BETA1))?,
                beta2: decay_rate("beta2", self.beta2.unwrap_or(DEFAULT_BETA2))?,
                epsilon,
            }),
            SdPropDiag => Hyper::SdPropDiag(SdPropParams {
                rho: rate,
                gamma: decay_rate("gamma", self.gamma.unwrap_or(DEFAULT_GAMMA))?,
                epsilon,
                bias_correction: self.bias_correction,
                warmup_steps: self.warmup_steps,
            }),
            SdPropFull => {
                let floor = self.eigen_floor.unwrap_or(DEFAULT_EIGEN_FLOOR);
                if !(floor > 0.0 && floor.is_finite()) {
                    return Err(Error::config(format!(
                        "eigen floor must be positive, got {floor}"
                    )));
                }
                Hyper::SdPropFull(SdPropFullParams {
                    rho: rate,
                    gamma: decay_rate("gamma", self.gamma.unwrap_or(DEFAULT_GAMMA))?,
                    eigen_floor: floor,
                    warmup_steps: self.warmup_steps,
                })
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsPropParams {
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdPropParams {
    pub rho: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub bias_correction: bool,
    pub warmup_steps: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdPropFullParams {
    pub rho: f64,
    pub gamma: f64,
    pub eigen_floor: f64,
    pub warmup_steps: u64,
}

/// Validated hyperparameters of one optimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Hyper {
    Sgd { alpha: f64 },
    RmsProp(RmsPropParams),
    Adam(AdamParams),
    SdPropDiag(SdPropParams),
    SdPropFull(SdPropFullParams),
}

impl Hyper {
    pub fn rate(&self) -> f64 {
        match self {
            Hyper::Sgd { alpha } => *alpha,
            Hyper::RmsProp(p) => p.alpha,
            Hyper::Adam(p) => p.alpha,
            Hyper::SdPropDiag(p) => p.rho,
            Hyper::SdPropFull(p) => p.rho,
        }
    }

    fn set_rate(&mut self, rate: f64) {
        match self {
            Hyper::Sgd { alpha } => *alpha = rate,
            Hyper::RmsProp(p) => p.alpha = rate,
            Hyper::Adam(p) => p.alpha = rate,
            Hyper::SdPropDiag(p) => p.rho = rate,
            Hyper::SdPropFull(p) => p.rho = rate,
        }
    }
}

fn check_inputs(theta: &[f64], g: &[f64]) -> Result<()> {
    ensure_len(theta.len(), g.len())?;
    ensure_finite("gradient", g)?;
    ensure_finite("parameters", theta)
}

/// `θ ← θ − α g`.
pub fn sgd_step(theta: &mut [f64], g: &[f64], alpha: f64) -> Result<()> {
    check_inputs(theta, g)?;
    for (p, gi) in theta.iter_mut().zip(g) {
        *p -= alpha * gi;
    }
    Ok(())
}

/// Uncentred second moment `v`, zero before the first step.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsPropState {
    pub t: u64,
    pub v: Vec<f64>,
}

impl RmsPropState {
    pub fn new(dim: usize) -> Self {
        Self {
            t: 0,
            v: vec![0.0; dim],
        }
    }
}

/// `v ← βv + (1−β)g²`, then `θ ← θ − α g / (√v + ε)`.
pub fn rmsprop_step(
    theta: &mut [f64],
    g: &[f64],
    state: &mut RmsPropState,
    p: &RmsPropParams,
) -> Result<()> {
    check_inputs(theta, g)?;
    ensure_len(theta.len(), state.v.len())?;
    for ((th, v), &gi) in theta.iter_mut().zip(state.v.iter_mut()).zip(g) {
        *v = p.beta * *v + (1.0 - p.beta) * gi * gi;
        *th -= p.alpha * gi / (v.sqrt() + p.epsilon);
    }
    state.t += 1;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        Self {
            t: 0,
            m1: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }
}

/// Adam with the usual `1 − βᵗ` moment corrections.
pub fn adam_step(
    theta: &mut [f64],
    g: &[f64],
    state: &mut AdamState,
    p: &AdamParams,
) -> Result<()> {
    check_inputs(theta, g)?;
    ensure_len(theta.len(), state.m1.len())?;
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - p.beta1.powi(t);
    let c2 = 1.0 - p.beta2.powi(t);
    for (((th, m1), m2), &gi) in theta
        .iter_mut()
        .zip(state.m1.iter_mut())
        .zip(state.m2.iter_mut())
        .zip(g)
    {
        *m1 = p.beta1 * *m1 + (1.0 - p.beta1) * gi;
        *m2 = p.beta2 * *m2 + (1.0 - p.beta2) * gi * gi;
        let m1_hat = *m1 / c1;
        let m2_hat = *m2 / c2;
        *th -= p.alpha * m1_hat / (m2_hat.sqrt() + p.epsilon);
    }
    Ok(())
}

/// Diagonal SDProp: update `(μ, c²)` with `g`, then
/// `θ_i ← θ_i − ρ g_i / (√c²_i + ε)`.
///
/// The very first step divides by `ε` alone because `c²₁ = 0`; the
/// statistics-only warmup in [`SdPropParams::warmup_steps`] avoids it when
/// requested.
pub fn sdprop_diag_step(
    theta: &mut [f64],
    g: &[f64],
    cov: &mut DiagCovState,
    p: &SdPropParams,
) -> Result<()> {
    ensure_len(theta.len(), g.len())?;
    ensure_finite("parameters", theta)?;
    cov.observe(g)?;
    if cov.t() <= p.warmup_steps {
        return Ok(());
    }
    let correction = if p.bias_correction {
        1.0 / (1.0 - cov.gamma().powf(cov.t() as f64))
    } else {
        1.0
    };
    for ((th, &c2), &gi) in theta.iter_mut().zip(cov.c2()).zip(g) {
        *th -= p.rho * gi / ((c2 * correction).sqrt() + p.epsilon);
    }
    Ok(())
}

/// Full-matrix SDProp: update `(μ, C)` with `g`, then
/// `θ ← θ − ρ C^{-1/2} g` with eigenvalues of `C` floored at
/// `eigen_floor`. The floor plays the role `ε` plays in the diagonal rule.
pub fn sdprop_full_step(
    theta: &mut [f64],
    g: &[f64],
    cov: &mut FullCovState,
    p: &SdPropFullParams,
) -> Result<()> {
    if theta.len() > MAX_FULL_DIM {
        return Err(Error::config(format!(
            "full-matrix SDProp supports at most {MAX_FULL_DIM} parameters, got {}",
            theta.len()
        )));
    }
    ensure_len(theta.len(), g.len())?;
    ensure_finite("parameters", theta)?;
    cov.observe(g)?;
    if cov.t() <= p.warmup_steps {
        return Ok(());
    }
    let floor = p.eigen_floor;
    let precond = spectral_map(cov.cov(), |l| 1.0 / l.max(floor).sqrt())?;
    let step = precond.mul_vec(g)?;
    for (th, s) in theta.iter_mut().zip(step) {
        *th -= p.rho * s;
    }
    Ok(())
}

/// Accumulator state of one optimizer instance.
#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    Sgd { t: u64 },
    RmsProp(RmsPropState),
    Adam(AdamState),
    SdPropDiag(DiagCovState),
    SdPropFull(FullCovState),
}

impl OptimizerState {
    pub fn t(&self) -> u64 {
        match self {
            OptimizerState::Sgd { t } => *t,
            OptimizerState::RmsProp(s) => s.t,
            OptimizerState::Adam(s) => s.t,
            OptimizerState::SdPropDiag(s) => s.t(),
            OptimizerState::SdPropFull(s) => s.t(),
        }
    }
}

/// Hyperparameters plus state; what the training loop drives.
#[derive(Debug, Clone)]
pub struct Optimizer {
    hyper: Hyper,
    state: OptimizerState,
}

impl Optimizer {
    pub fn new(cfg: &OptimizerConfig, dim: usize) -> Result<Self> {
        let hyper = cfg.resolve()?;
        let state = match &hyper {
            Hyper::Sgd { .. } => OptimizerState::Sgd { t: 0 },
            Hyper::RmsProp(_) => OptimizerState::RmsProp(RmsPropState::new(dim)),
            Hyper::Adam(_) => OptimizerState::Adam(AdamState::new(dim)),
            Hyper::SdPropDiag(p) => OptimizerState::SdPropDiag(DiagCovState::new(dim, p.gamma)?),
            Hyper::SdPropFull(p) => {
                if dim > MAX_FULL_DIM {
                    return Err(Error::config(format!(
                        "full-matrix SDProp supports at most {MAX_FULL_DIM} parameters, got {dim}"
                    )));
                }
                OptimizerState::SdPropFull(FullCovState::new(dim, p.gamma)?)
            }
        };
        Ok(Self { hyper, state })
    }

    pub fn hyper(&self) -> &Hyper {
        &self.hyper
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    /// Current (possibly decayed) rate.
    pub fn rate(&self) -> f64 {
        self.hyper.rate()
    }

    pub fn set_rate(&mut self, rate: f64) {
        self.hyper.set_rate(rate);
    }

    pub fn step(&mut self, theta: &mut [f64], g: &[f64]) -> Result<()> {
        match (&self.hyper, &mut self.state) {
            (Hyper::Sgd { alpha }, OptimizerState::Sgd { t }) => {
                sgd_step(theta, g, *alpha)?;
                *t += 1;
                Ok(())
            }
            (Hyper::RmsProp(p), OptimizerState::RmsProp(s)) => rmsprop_step(theta, g, s, p),
            (Hyper::Adam(p), OptimizerState::Adam(s)) => adam_step(theta, g, s, p),
            (Hyper::SdPropDiag(p), OptimizerState::SdPropDiag(s)) => {
                sdprop_diag_step(theta, g, s, p)
            }
            (Hyper::SdPropFull(p), OptimizerState::SdPropFull(s)) => {
                sdprop_full_step(theta, g, s, p)
            }
            _ => unreachable!("optimizer state always matches its hyperparameters"),
        }
    }
}
