//! The training loop and repeated-run driver.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{Cadence, ExperimentConfig, NetSpec, ProblemSpec};
use super::metrics::{write_csv, write_jsonl, MetricsRecord, METRICS_SCHEMA_VERSION};
use super::summary::{summarize_runs, AccuracySummary};
use super::Settings;
use crate::autodiff::{build_mlp, Activation, InitSpec};
use crate::data::{load_mnist_dir, synthetic_classification, BatchSampler, Dataset};
use crate::error::{Error, Result};
use crate::optim::{apply_decay, clip_gradient, Optimizer, OptimizerConfig};
use crate::problems::{
    make_rosenbrock, ClassificationProblem, Evaluation, NoisyQuadratic, StochasticProblem,
};

/// Mixed into the run seed so the batch order is independent of the
/// initial weights.
const SAMPLER_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum RunStatus {
    Completed,
    /// A non-finite gradient, parameter or loss appeared after `step`
    /// optimizer steps.
    Diverged { epoch: u32, step: u64 },
}

/// One training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub run: u32,
    pub seed: u64,
    pub status: RunStatus,
    pub records: Vec<MetricsRecord>,
}

impl RunResult {
    pub fn completed(&self) -> bool {
        self.status == RunStatus::Completed
    }

    pub fn final_record(&self) -> Option<&MetricsRecord> {
        self.records.last()
    }

    /// Final loss, or `+∞` for a diverged run.
    pub fn final_loss(&self) -> f64 {
        match (self.completed(), self.final_record()) {
            (true, Some(r)) => r.loss,
            _ => f64::INFINITY,
        }
    }
}

/// Every run of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub runs: Vec<RunResult>,
}

#[derive(Serialize)]
struct RunLine {
    run: u32,
    seed: u64,
    #[serde(flatten)]
    status: RunStatus,
    final_loss: Option<f64>,
    final_accuracy: Option<f64>,
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    schema_version: u32,
    problem: &'a str,
    optimizer: &'a str,
    runs: Vec<RunLine>,
    mean_final_loss: Option<f64>,
    accuracy: Option<AccuracySummary>,
}

impl ExperimentResult {
    /// All records, run by run.
    pub fn records(&self) -> Vec<MetricsRecord> {
        self.runs.iter().flat_map(|r| r.records.iter().copied()).collect()
    }

    /// Mean final loss over all runs; `+∞` if any run diverged.
    pub fn mean_final_loss(&self) -> f64 {
        self.runs.iter().map(RunResult::final_loss).sum::<f64>() / self.runs.len() as f64
    }

    pub fn accuracy_summary(&self) -> Result<AccuracySummary> {
        summarize_runs(&self.runs)
    }

    pub fn metrics_csv(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        write_csv(&mut buf, &self.records())?;
        Ok(buf)
    }

    /// Writes `metrics.csv`, `metrics.jsonl`, `config.toml` and
    /// `summary.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, bytes: &[u8]| {
            let p = dir.join(name);
            std::fs::write(&p, bytes).map_err(|e| Error::io(p, e))
        };
        write("metrics.csv", &self.metrics_csv()?)?;
        let mut jsonl = Vec::new();
        write_jsonl(&mut jsonl, &self.records())?;
        write("metrics.jsonl", &jsonl)?;
        write(
            "config.toml",
            Settings::from_config(&self.config).to_toml_string()?.as_bytes(),
        )?;
        let completed: Vec<f64> = self
            .runs
            .iter()
            .filter(|r| r.completed())
            .map(RunResult::final_loss)
            .collect();
        let summary = SummaryFile {
            schema_version: METRICS_SCHEMA_VERSION,
            problem: self.config.problem.name(),
            optimizer: self.config.optimizer.kind.name(),
            runs: self
                .runs
                .iter()
                .map(|r| RunLine {
                    run: r.run,
                    seed: r.seed,
                    status: r.status,
                    final_loss: r.final_record().map(|m| m.loss),
                    final_accuracy: r.final_record().and_then(|m| m.accuracy),
                })
                .collect(),
            mean_final_loss: (!completed.is_empty())
                .then(|| completed.iter().sum::<f64>() / completed.len() as f64),
            accuracy: self.accuracy_summary().ok(),
        };
        write("summary.json", &serde_json::to_vec_pretty(&summary)?)?;
        Ok(())
    }
}

/// Knobs of a single training loop.
#[derive(Debug, Clone)]
pub struct TrainSpec<'a> {
    pub optimizer: &'a OptimizerConfig,
    pub epochs: u32,
    pub cadence: Cadence,
    pub run: u32,
    pub wall_clock: bool,
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::NonFinite { .. })
}

/// Trains `problem` from its initial parameters. Non-finite values end the
/// run with [`RunStatus::Diverged`] instead of an error.
pub fn train(problem: &mut dyn StochasticProblem, spec: &TrainSpec<'_>) -> Result<(RunStatus, Vec<MetricsRecord>)> {
    let mut theta = problem.initial_params();
    let mut opt = Optimizer::new(spec.optimizer, problem.dim())?;
    let base_rate = opt.rate();
    let clip = spec.optimizer.clip_threshold;
    let decay = spec.optimizer.decay;
    let steps_per_epoch = problem.steps_per_epoch();
    let clock = Instant::now();
    let mut records = Vec::new();

    let record = |records: &mut Vec<MetricsRecord>, eval: Evaluation, epoch: u32, step: u64, rate: f64| {
        records.push(MetricsRecord {
            run: spec.run,
            epoch,
            step,
            loss: eval.loss,
            accuracy: eval.accuracy,
            elapsed_ms: if spec.wall_clock {
                clock.elapsed().as_millis() as u64
            } else {
                0
            },
            rate,
        });
    };

    macro_rules! guard {
        ($e:expr, $epoch:expr, $step:expr) => {
            match $e {
                Ok(v) => v,
                Err(err) if is_divergence(&err) => {
                    return Ok((
                        RunStatus::Diverged {
                            epoch: $epoch,
                            step: $step,
                        },
                        records,
                    ))
                }
                Err(err) => return Err(err),
            }
        };
    }

    let eval = guard!(problem.evaluate(&theta), 0, 0);
    if !eval.loss.is_finite() {
        return Ok((RunStatus::Diverged { epoch: 0, step: 0 }, records));
    }
    record(&mut records, eval, 0, 0, base_rate);

    let mut step: u64 = 0;
    for epoch in 0..spec.epochs {
        if let Some(schedule) = &decay {
            opt.set_rate(apply_decay(base_rate, epoch, schedule));
        }
        for s in 0..steps_per_epoch {
            let sample = guard!(problem.sample_gradient(&theta, epoch, s), epoch, step);
            let mut g = sample.grad;
            if let Some(threshold) = clip {
                guard!(clip_gradient(&mut g, threshold), epoch, step);
            }
            guard!(opt.step(&mut theta, &g), epoch, step);
            step += 1;
            if theta.iter().any(|v| !v.is_finite()) {
                return Ok((RunStatus::Diverged { epoch, step }, records));
            }
            let last = s + 1 == steps_per_epoch;
            if spec.cadence == Cadence::Step || last {
                let eval = guard!(problem.evaluate(&theta), epoch, step);
                if !eval.loss.is_finite() {
                    return Ok((RunStatus::Diverged { epoch, step }, records));
                }
                let completed = if last { epoch + 1 } else { epoch };
                record(&mut records, eval, completed, step, opt.rate());
            }
        }
    }
    Ok((RunStatus::Completed, records))
}

/// Loads the dataset a classification problem needs, once per experiment.
pub fn load_dataset(problem: &ProblemSpec, seed: u64) -> Result<Option<Arc<Dataset>>> {
    Ok(match problem {
        ProblemSpec::Mnist {
            data_dir, samples, ..
        } => {
            let full = load_mnist_dir(data_dir)?;
            Some(Arc::new(match samples {
                Some(n) => full.head(*n),
                None => full,
            }))
        }
        ProblemSpec::Synthetic {
            samples,
            features,
            classes,
            separation,
            ..
        } => Some(Arc::new(synthetic_classification(
            *samples,
            *features,
            *classes,
            *separation,
            seed,
        )?)),
        _ => None,
    })
}

fn mlp_problem(
    net: &NetSpec,
    data: Arc<Dataset>,
    batch_size: usize,
    seed: u64,
) -> Result<ClassificationProblem> {
    let mut sizes = vec![data.dim()];
    sizes.extend(std::iter::repeat_n(net.hidden_units, net.hidden_layers));
    sizes.push(data.num_classes());
    let mlp = build_mlp(
        &sizes,
        Activation::Relu,
        InitSpec {
            mean: 0.0,
            stddev: net.init_std,
            seed,
        },
    )?;
    let sampler = BatchSampler::new(batch_size, seed ^ SAMPLER_SEED_SALT)?;
    ClassificationProblem::new(mlp, data, sampler)
}

/// Instantiates the problem for one run.
pub fn build_problem(
    cfg: &ExperimentConfig,
    data: Option<&Arc<Dataset>>,
    seed: u64,
) -> Result<Box<dyn StochasticProblem>> {
    let missing = || Error::config("classification problem needs a loaded dataset");
    Ok(match &cfg.problem {
        ProblemSpec::Quadratic {
            curvature,
            noise,
            start,
            steps_per_epoch,
        } => Box::new(
            NoisyQuadratic::diagonal(curvature, noise, start.clone(), seed)?
                .with_steps_per_epoch(*steps_per_epoch)?,
        ),
        ProblemSpec::Rosenbrock {
            noise_std,
            steps_per_epoch,
        } => Box::new(make_rosenbrock(*noise_std, seed)?.with_steps_per_epoch(*steps_per_epoch)?),
        ProblemSpec::Mnist { net, .. } | ProblemSpec::Synthetic { net, .. } => Box::new(mlp_problem(
            net,
            data.ok_or_else(missing)?.clone(),
            cfg.batch_size,
            seed,
        )?),
    })
}

/// Runs `cfg.runs` repeats; run `r` is seeded with `cfg.seed + r`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let data = load_dataset(&cfg.problem, cfg.seed)?;
    run_experiment_with_data(cfg, data.as_ref())
}

/// As [`run_experiment`] with a dataset that is already in memory.
pub fn run_experiment_with_data(cfg: &ExperimentConfig, data: Option<&Arc<Dataset>>) -> Result<ExperimentResult> {
    cfg.validate()?;
    let mut runs = Vec::with_capacity(cfg.runs as usize);
    for r in 0..cfg.runs {
        let seed = cfg.seed.wrapping_add(u64::from(r));
        let mut problem = build_problem(cfg, data, seed)?;
        let (status, records) = train(
            problem.as_mut(),
            &TrainSpec {
                optimizer: &cfg.optimizer,
                epochs: cfg.epochs,
                cadence: cfg.cadence,
                run: r,
                wall_clock: cfg.wall_clock,
            },
        )?;
        runs.push(RunResult {
            run: r,
            seed,
            status,
            records,
        });
    }
    Ok(ExperimentResult {
        config: cfg.clone(),
        runs,
    })
}
