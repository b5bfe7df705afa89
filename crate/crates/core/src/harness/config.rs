//! Experiment description. [`Settings`] is the flat, all-optional form that
//! config files and command-line flags share; [`ExperimentConfig`] is the
//! validated form the runner consumes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{DecaySchedule, OptimizerConfig, OptimizerKind};

/// Overrides the default output directory.
pub const OUT_DIR_ENV: &str = "SDPROP_OUT_DIR";
/// Overrides the default MNIST directory.
pub const MNIST_DIR_ENV: &str = "SDPROP_MNIST_DIR";

pub const DEFAULT_OUT_DIR: &str = "sdprop-out";
pub const DEFAULT_MNIST_DIR: &str = "data/mnist-10k";

const DEFAULT_DECAY_FACTOR: f64 = 0.97;

/// When metrics records are emitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Cadence {
    #[default]
    Epoch,
    Step,
}

/// What to train.
#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSpec {
    Quadratic {
        curvature: Vec<f64>,
        noise: Vec<f64>,
        start: Vec<f64>,
        steps_per_epoch: usize,
    },
    Rosenbrock {
        noise_std: f64,
        steps_per_epoch: usize,
    },
    Mnist {
        data_dir: PathBuf,
        samples: Option<usize>,
        net: NetSpec,
    },
    Synthetic {
        samples: usize,
        features: usize,
        classes: usize,
        separation: f64,
        net: NetSpec,
    },
}

impl ProblemSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemSpec::Quadratic { .. } => "quadratic",
            ProblemSpec::Rosenbrock { .. } => "rosenbrock",
            ProblemSpec::Mnist { .. } => "mnist",
            ProblemSpec::Synthetic { .. } => "synthetic",
        }
    }

    pub fn is_classification(&self) -> bool {
        matches!(self, ProblemSpec::Mnist { .. } | ProblemSpec::Synthetic { .. })
    }
}

/// Fully-connected network shape and initialisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetSpec {
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub init_std: f64,
}

impl Default for NetSpec {
    fn default() -> Self {
        Self {
            hidden_layers: 20,
            hidden_units: 50,
            init_std: 0.01,
        }
    }
}

/// Validated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub optimizer: OptimizerConfig,
    /// Mini-batch size; classification problems only.
    pub batch_size: usize,
    pub epochs: u32,
    pub seed: u64,
    /// Repeat count; run `r` uses seed `seed + r`.
    pub runs: u32,
    pub cadence: Cadence,
    pub out_dir: PathBuf,
    /// Record real elapsed time. Off by default so that metrics files are
    /// reproducible byte for byte.
    pub wall_clock: bool,
}

impl ExperimentConfig {
    pub fn new(problem: ProblemSpec, optimizer: OptimizerConfig) -> Self {
        Self {
            problem,
            optimizer,
            batch_size: 128,
            epochs: 50,
            seed: 0,
            runs: 1,
            cadence: Cadence::Epoch,
            out_dir: PathBuf::from(DEFAULT_OUT_DIR),
            wall_clock: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.resolve()?;
        if self.runs == 0 {
            return Err(Error::config("runs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        match &self.problem {
            ProblemSpec::Quadratic {
                curvature,
                noise,
                start,
                steps_per_epoch,
            } => {
                if curvature.is_empty() || curvature.len() != noise.len() || curvature.len() != start.len() {
                    return Err(Error::config(
                        "curvature, noise and start must be non-empty and of equal length",
                    ));
                }
                if *steps_per_epoch == 0 {
                    return Err(Error::config("steps per epoch must be positive"));
                }
            }
            ProblemSpec::Rosenbrock {
                noise_std,
                steps_per_epoch,
            } => {
                if noise_std.is_nan() || *noise_std < 0.0 {
                    return Err(Error::config("noise std must be non-negative"));
                }
                if *steps_per_epoch == 0 {
                    return Err(Error::config("steps per epoch must be positive"));
                }
            }
            ProblemSpec::Mnist { samples, net, .. } => {
                if *samples == Some(0) {
                    return Err(Error::config("samples must be positive"));
                }
                validate_net(net)?;
            }
            ProblemSpec::Synthetic {
                samples,
                features,
                classes,
                separation,
                net,
            } => {
                if *samples == 0 || *features == 0 || *classes == 0 {
                    return Err(Error::config("samples, features and classes must be positive"));
                }
                if separation.is_nan() || *separation < 0.0 {
                    return Err(Error::config("separation must be non-negative"));
                }
                validate_net(net)?;
            }
        }
        Ok(())
    }
}

fn validate_net(net: &NetSpec) -> Result<()> {
    if net.hidden_layers > 0 && net.hidden_units == 0 {
        return Err(Error::config("hidden units must be positive"));
    }
    if !(net.init_std >= 0.0 && net.init_std.is_finite()) {
        return Err(Error::config("init std must be non-negative"));
    }
    Ok(())
}

/// Flat key-value settings. Keys mirror the command-line flags; every field
/// is optional so that two sources can be layered with [`Settings::or`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Settings {
    pub problem: Option<String>,
    pub optimizer: Option<String>,
    pub alpha: Option<f64>,
    pub rho: Option<f64>,
    pub beta: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub gamma: Option<f64>,
    pub epsilon: Option<f64>,
    pub bias_correction: Option<bool>,
    pub warmup: Option<u64>,
    pub eigen_floor: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<u32>,
    pub seed: Option<u64>,
    pub runs: Option<u32>,
    pub clip: Option<f64>,
    pub decay_every: Option<u32>,
    pub decay_factor: Option<f64>,
    pub cadence: Option<Cadence>,
    pub out: Option<PathBuf>,
    pub wall_clock: Option<bool>,
    pub curvature: Option<Vec<f64>>,
    pub noise: Option<Vec<f64>>,
    pub start: Option<Vec<f64>>,
    pub noise_std: Option<f64>,
    pub steps_per_epoch: Option<usize>,
    pub data_dir: Option<PathBuf>,
    pub samples: Option<usize>,
    pub features: Option<usize>,
    pub classes: Option<usize>,
    pub separation: Option<f64>,
    pub hidden_layers: Option<usize>,
    pub hidden_units: Option<usize>,
    pub init_std: Option<f64>,
}

macro_rules! layer {
    ($hi:ident, $lo:ident; $($f:ident),* $(,)?) => {
        Settings { $($f: $hi.$f.or($lo.$f)),* }
    };
}

impl Settings {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        Ok(toml::from_str(s)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Field-wise `self` if set, otherwise `fallback`.
    pub fn or(self, fallback: Settings) -> Settings {
        let hi = self;
        let lo = fallback;
        layer!(hi, lo;
            problem, optimizer, alpha, rho, beta, beta1, beta2, gamma, epsilon,
            bias_correction, warmup, eigen_floor, batch_size, epochs, seed, runs,
            clip, decay_every, decay_factor, cadence, out, wall_clock, curvature,
            noise, start, noise_std, steps_per_epoch, data_dir, samples, features,
            classes, separation, hidden_layers, hidden_units, init_std,
        )
    }

    /// Validates and fills defaults.
    pub fn to_config(&self) -> Result<ExperimentConfig> {
        let problem = self.problem_spec()?;
        let optimizer = self.optimizer_config()?;
        if self.batch_size.is_some() && !problem.is_classification() {
            return Err(Error::config(format!(
                "`batch-size` does not apply to the {} problem",
                problem.name()
            )));
        }
        let defaults = ExperimentConfig::new(problem.clone(), optimizer.clone());
        let out_dir = self
            .out
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or(defaults.out_dir);
        let cfg = ExperimentConfig {
            problem,
            optimizer,
            batch_size: self.batch_size.unwrap_or(defaults.batch_size),
            epochs: self.epochs.unwrap_or(defaults.epochs),
            seed: self.seed.unwrap_or(defaults.seed),
            runs: self.runs.unwrap_or(defaults.runs),
            cadence: self.cadence.unwrap_or(defaults.cadence),
            out_dir,
            wall_clock: self.wall_clock.unwrap_or(false),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The fully explicit settings that reproduce `cfg`.
    pub fn from_config(cfg: &ExperimentConfig) -> Settings {
        let o = &cfg.optimizer;
        let mut s = Settings {
            optimizer: Some(o.kind.name().to_string()),
            alpha: o.alpha,
            rho: o.rho,
            beta: o.beta,
            beta1: o.beta1,
            beta2: o.beta2,
            gamma: o.gamma,
            epsilon: o.epsilon,
            bias_correction: o.bias_correction.then_some(true),
            warmup: (o.warmup_steps > 0).then_some(o.warmup_steps),
            eigen_floor: o.eigen_floor,
            clip: o.clip_threshold,
            decay_every: o.decay.map(|d| d.every_n_epochs),
            decay_factor: o.decay.map(|d| d.factor),
            epochs: Some(cfg.epochs),
            seed: Some(cfg.seed),
            runs: Some(cfg.runs),
            cadence: Some(cfg.cadence),
            out: Some(cfg.out_dir.clone()),
            wall_clock: cfg.wall_clock.then_some(true),
            problem: Some(cfg.problem.name().to_string()),
            ..Settings::default()
        };
        match &cfg.problem {
            ProblemSpec::Quadratic {
                curvature,
                noise,
                start,
                steps_per_epoch,
            } => {
                s.curvature = Some(curvature.clone());
                s.noise = Some(noise.clone());
                s.start = Some(start.clone());
                s.steps_per_epoch = Some(*steps_per_epoch);
            }
            ProblemSpec::Rosenbrock {
                noise_std,
                steps_per_epoch,
            } => {
                s.noise_std = Some(*noise_std);
                s.steps_per_epoch = Some(*steps_per_epoch);
            }
            ProblemSpec::Mnist {
                data_dir,
                samples,
                net,
            } => {
                s.batch_size = Some(cfg.batch_size);
                s.data_dir = Some(data_dir.clone());
                s.samples = *samples;
                s.set_net(net);
            }
            ProblemSpec::Synthetic {
                samples,
                features,
                classes,
                separation,
                net,
            } => {
                s.batch_size = Some(cfg.batch_size);
                s.samples = Some(*samples);
                s.features = Some(*features);
                s.classes = Some(*classes);
                s.separation = Some(*separation);
                s.set_net(net);
            }
        }
        s
    }

    fn set_net(&mut self, net: &NetSpec) {
        self.hidden_layers = Some(net.hidden_layers);
        self.hidden_units = Some(net.hidden_units);
        self.init_std = Some(net.init_std);
    }

    fn net_spec(&self) -> NetSpec {
        let d = NetSpec::default();
        NetSpec {
            hidden_layers: self.hidden_layers.unwrap_or(d.hidden_layers),
            hidden_units: self.hidden_units.unwrap_or(d.hidden_units),
            init_std: self.init_std.unwrap_or(d.init_std),
        }
    }

    fn problem_spec(&self) -> Result<ProblemSpec> {
        let name = self.problem.as_deref().unwrap_or("quadratic");
        let allowed: &[&str] = match name {
            "quadratic" => &["curvature", "noise", "start", "steps-per-epoch"],
            "rosenbrock" => &["noise-std", "steps-per-epoch"],
            "mnist" => &["data-dir", "samples", "hidden-layers", "hidden-units", "init-std"],
            "synthetic" => &[
                "samples",
                "features",
                "classes",
                "separation",
                "hidden-layers",
                "hidden-units",
                "init-std",
            ],
            other => {
                return Err(Error::config(format!(
                    "unknown problem `{other}` (expected quadratic, rosenbrock, mnist or synthetic)"
                )))
            }
        };
        for key in self.problem_keys_set() {
            if !allowed.contains(&key) {
                return Err(Error::config(format!("`{key}` does not apply to the {name} problem")));
            }
        }
        Ok(match name {
            "quadratic" => ProblemSpec::Quadratic {
                curvature: self.curvature.clone().unwrap_or_else(|| vec![1.0, 100.0]),
                noise: self.noise.clone().unwrap_or_else(|| vec![1.0, 1.0]),
                start: self.start.clone().unwrap_or_else(|| vec![1.0, 1.0]),
                steps_per_epoch: self.steps_per_epoch.unwrap_or(100),
            },
            "rosenbrock" => ProblemSpec::Rosenbrock {
                noise_std: self.noise_std.unwrap_or(0.1),
                steps_per_epoch: self.steps_per_epoch.unwrap_or(100),
            },
            "mnist" => ProblemSpec::Mnist {
                data_dir: self
                    .data_dir
                    .clone()
                    .or_else(|| std::env::var_os(MNIST_DIR_ENV).map(PathBuf::from))
                    .unwrap_or_else(|| PathBuf::from(DEFAULT_MNIST_DIR)),
                samples: self.samples,
                net: self.net_spec(),
            },
            _ => ProblemSpec::Synthetic {
                samples: self.samples.unwrap_or(1000),
                features: self.features.unwrap_or(2),
                classes: self.classes.unwrap_or(2),
                separation: self.separation.unwrap_or(4.0),
                net: self.net_spec(),
            },
        })
    }

    fn problem_keys_set(&self) -> Vec<&'static str> {
        let mut keys = Vec::new();
        let mut note = |set: bool, key: &'static str| {
            if set {
                keys.push(key);
            }
        };
        note(self.curvature.is_some(), "curvature");
        note(self.noise.is_some(), "noise");
        note(self.start.is_some(), "start");
        note(self.noise_std.is_some(), "noise-std");
        note(self.steps_per_epoch.is_some(), "steps-per-epoch");
        note(self.data_dir.is_some(), "data-dir");
        note(self.samples.is_some(), "samples");
        note(self.features.is_some(), "features");
        note(self.classes.is_some(), "classes");
        note(self.separation.is_some(), "separation");
        note(self.hidden_layers.is_some(), "hidden-layers");
        note(self.hidden_units.is_some(), "hidden-units");
        note(self.init_std.is_some(), "init-std");
        keys
    }

    fn optimizer_config(&self) -> Result<OptimizerConfig> {
        let kind: OptimizerKind = self.optimizer.as_deref().unwrap_or("sdprop").parse()?;
        let mut o = OptimizerConfig::new(kind);
        o.alpha = self.alpha;
        o.rho = self.rho;
        o.beta = self.beta;
        o.beta1 = self.beta1;
        o.beta2 = self.beta2;
        o.gamma = self.gamma;
        o.epsilon = self.epsilon;
        o.bias_correction = self.bias_correction.unwrap_or(false);
        o.warmup_steps = self.warmup.unwrap_or(0);
        o.eigen_floor = self.eigen_floor;
        o.clip_threshold = self.clip;
        if o.base_rate().is_none() {
            o.set_base_rate(default_rate(kind));
        }
        o.decay = match (self.decay_every, self.decay_factor) {
            (Some(every), factor) => Some(DecaySchedule {
                every_n_epochs: every,
                factor: factor.unwrap_or(DEFAULT_DECAY_FACTOR),
            }),
            (None, Some(_)) => {
                return Err(Error::config("`decay-factor` requires `decay-every`"));
            }
            (None, None) => None,
        };
        o.resolve()?;
        Ok(o)
    }
}

fn default_rate(kind: OptimizerKind) -> f64 {
    match kind {
        OptimizerKind::Sgd => 0.01,
        _ => 0.001,
    }
}
