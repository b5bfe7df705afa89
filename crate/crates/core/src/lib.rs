//! Covariance-matrix based preconditioning of stochastic gradients (SDProp),
//! together with SGD, RMSProp and Adam baselines, a small reverse-mode
//! autodiff engine for fully-connected classifiers, benchmark problems and
//! an experiment harness.
//!
//! The crate is organised bottom-up:
//!
//! - [`linalg`]: dense square matrices and a Jacobi symmetric eigensolver.
//! - [`covstat`]: online mean / (co)variance estimates of a gradient stream.
//! - [`optim`]: parameter-update rules, gradient clipping and rate decay.
//! - [`autodiff`]: tensors, a computation graph and MLP construction.
//! - [`data`]: IDX ingestion, synthetic datasets and the batch sampler.
//! - [`problems`]: stochastic-gradient oracles (noisy quadratic, Rosenbrock,
//!   MLP classification).
//! - [`harness`]: experiment configuration, runner, grid search, metrics.
//! - [`verify`]: the executable property suite behind `sdprop verify`.

pub mod autodiff;
pub mod covstat;
pub mod data;
mod error;
pub mod harness;
pub mod linalg;
pub mod optim;
pub mod problems;
pub mod verify;

pub use error::{Error, Result};

pub use autodiff::{build_mlp, Activation, Graph, InitSpec, Mlp, NodeId, Tensor};
pub use covstat::{bias_correct, diag_update, full_update, inv_sqrt, DiagCovState, FullCovState};
pub use data::{load_idx, synthetic_classification, BatchSampler, Dataset};
pub use harness::{
    grid_search, run_experiment, summarize_runs, AccuracySummary, ExperimentConfig, Grid,
    MetricsRecord, RunStatus, Settings,
};
pub use linalg::Matrix;
pub use optim::{
    apply_decay, clip_gradient, DecaySchedule, Optimizer, OptimizerConfig, OptimizerKind,
    OptimizerState,
};
pub use problems::{GradSample, StochasticProblem};

/// Flat vector of model parameters; the unit every optimizer updates.
pub type ParamVector = Vec<f64>;
