use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand};
use sdprop_core::harness::{
    grid_search, read_csv, run_experiment, write_curve_table, Cadence, ExperimentResult, Grid,
    RunStatus, Settings, DEFAULT_MNIST_DIR, MNIST_DIR_ENV,
};
use sdprop_core::verify::{self, MlpStudyOptions};
use sdprop_core::{data::load_mnist_dir, Error};

#[derive(Parser)]
#[command(name = "sdprop", version, about = "SDProp optimizer experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration (optionally several seeds) and write metrics.
    Run(ExperimentArgs),
    /// Sweep optimizer hyperparameters and report the lowest final loss.
    Grid {
        #[command(flatten)]
        experiment: ExperimentArgs,
        /// Axes as `name=v1,v2;name=v3`; defaults to the standard grid of
        /// the chosen optimizer.
        #[arg(long)]
        grid: Option<String>,
    },
    /// Run the acceptance property suite; exits non-zero on any failure.
    Verify(VerifyArgs),
    /// Turn metrics CSV files into loss-curve tables for plotting.
    EmitPlots {
        /// `metrics.csv` files or directories containing one.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Output directory; defaults to each input's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Default)]
struct ExperimentArgs {
    /// quadratic, rosenbrock, mnist or synthetic.
    #[arg(long)]
    problem: Option<String>,
    /// sgd, rmsprop, adam, sdprop or sdprop-full.
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    bias_correction: bool,
    /// SDProp statistics-only steps before the first update.
    #[arg(long)]
    warmup: Option<u64>,
    #[arg(long)]
    eigen_floor: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<u32>,
    /// Gradient-norm clipping threshold.
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    decay_every: Option<u32>,
    #[arg(long)]
    decay_factor: Option<f64>,
    /// Record metrics every `epoch` (default) or every `step`.
    #[arg(long, value_parser = parse_cadence)]
    cadence: Option<Cadence>,
    /// TOML file with the same keys as these flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record real elapsed time (makes metrics non-reproducible).
    #[arg(long)]
    wall_clock: bool,
    #[arg(long, value_delimiter = ',')]
    curvature: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    noise: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    start: Option<Vec<f64>>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    steps_per_epoch: Option<usize>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    features: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long)]
    hidden_layers: Option<usize>,
    #[arg(long)]
    hidden_units: Option<usize>,
    #[arg(long)]
    init_std: Option<f64>,
}

fn parse_cadence(s: &str) -> std::result::Result<Cadence, String> {
    match s {
        "epoch" => Ok(Cadence::Epoch),
        "step" => Ok(Cadence::Step),
        other => Err(format!("expected `epoch` or `step`, got `{other}`")),
    }
}

impl ExperimentArgs {
    fn settings(&self) -> Settings {
        Settings {
            problem: self.problem.clone(),
            optimizer: self.optimizer.clone(),
            alpha: self.alpha,
            rho: self.rho,
            beta: self.beta,
            beta1: self.beta1,
            beta2: self.beta2,
            gamma: self.gamma,
            epsilon: self.epsilon,
            bias_correction: self.bias_correction.then_some(true),
            warmup: self.warmup,
            eigen_floor: self.eigen_floor,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            runs: self.runs,
            clip: self.clip,
            decay_every: self.decay_every,
            decay_factor: self.decay_factor,
            cadence: self.cadence,
            out: self.out.clone(),
            wall_clock: self.wall_clock.then_some(true),
            curvature: self.curvature.clone(),
            noise: self.noise.clone(),
            start: self.start.clone(),
            noise_std: self.noise_std,
            steps_per_epoch: self.steps_per_epoch,
            data_dir: self.data_dir.clone(),
            samples: self.samples,
            features: self.features,
            classes: self.classes,
            separation: self.separation,
            hidden_layers: self.hidden_layers,
            hidden_units: self.hidden_units,
            init_std: self.init_std,
        }
    }

    /// Command line first, then the config file.
    fn resolve(&self) -> Result<sdprop_core::ExperimentConfig> {
        let file = match &self.config {
            Some(path) => Settings::load(path)?,
            None => Settings::default(),
        };
        Ok(self.settings().or(file).to_config()?)
    }
}

#[derive(Args)]
struct VerifyArgs {
    /// Also train the deep-MLP study behind criteria 6 and 7 (slow).
    #[arg(long)]
    full: bool,
    /// MNIST directory for the full study and the IDX round trip.
    #[arg(long)]
    mnist_dir: Option<PathBuf>,
    /// Repeat runs per MLP configuration.
    #[arg(long, default_value_t = 5)]
    runs: u32,
    #[arg(long, default_value_t = 50)]
    epochs: u32,
}

fn mnist_dir(explicit: Option<PathBuf>) -> PathBuf {
    explicit
        .or_else(|| std::env::var_os(MNIST_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_MNIST_DIR))
}

fn report_runs(result: &ExperimentResult) {
    for run in &result.runs {
        let last = run.final_record();
        let status = match run.status {
            RunStatus::Completed => "completed".to_string(),
            RunStatus::Diverged { epoch, step } => format!("diverged at epoch {epoch}, step {step}"),
        };
        match last {
            Some(m) => println!(
                "run {} (seed {}): {status}; loss {:.6}{}",
                run.run,
                run.seed,
                m.loss,
                m.accuracy.map(|a| format!(", accuracy {:.4}", a)).unwrap_or_default()
            ),
            None => println!("run {} (seed {}): {status}", run.run, run.seed),
        }
    }
    if let Ok(s) = result.accuracy_summary() {
        println!("accuracy avg {:.4} best {:.4} worst {:.4}", s.avg, s.best, s.worst);
    }
}

fn cmd_run(args: &ExperimentArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let result = run_experiment(&cfg)?;
    result.write(&cfg.out_dir)?;
    report_runs(&result);
    println!("metrics written to {}", cfg.out_dir.join("metrics.csv").display());
    Ok(())
}

fn cmd_grid(args: &ExperimentArgs, grid: Option<&str>) -> Result<()> {
    let cfg = args.resolve()?;
    let grid = match grid {
        Some(spec) => Grid::parse(spec)?,
        None => Grid::default_for(cfg.optimizer.kind),
    };
    let outcome = grid_search(&cfg, &grid)?;
    std::fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    let table = cfg.out_dir.join("grid.csv");
    outcome.write_table(std::fs::File::create(&table).with_context(|| table.display().to_string())?)?;
    for (i, cell) in outcome.cells.iter().enumerate() {
        cell.result.write(cfg.out_dir.join(format!("cell-{i:02}")))?;
        let point: Vec<String> = grid
            .axes()
            .iter()
            .zip(&cell.point)
            .map(|((p, _), v)| format!("{p}={v}"))
            .collect();
        println!(
            "cell {i:02} {}: mean final loss {:.6}, diverged runs {}",
            point.join(" "),
            cell.result.mean_final_loss(),
            cell.diverged_runs()
        );
    }
    match outcome.best {
        Some(i) => println!("best: cell {i:02}"),
        None => println!("best: none (every cell had a diverged run)"),
    }
    println!("grid table written to {}", table.display());
    Ok(())
}

fn cmd_verify(args: &VerifyArgs) -> Result<bool> {
    let dir = mnist_dir(args.mnist_dir.clone());
    let have_mnist = dir.join("train-images-idx3-ubyte").exists();
    let mut reports = Vec::new();
    for r in verify::fast_suite(have_mnist.then_some(dir.as_path())) {
        println!("{r}");
        reports.push(r);
    }
    if args.full {
        let data = Arc::new(load_mnist_dir(&dir).with_context(|| format!("loading MNIST from {}", dir.display()))?);
        let opts = MlpStudyOptions {
            runs: args.runs,
            epochs: args.epochs,
            ..MlpStudyOptions::default()
        };
        let clock = Instant::now();
        let study = verify::mlp_study(data, &opts, &mut |line| eprintln!("  {line}"))?;
        let secs = clock.elapsed().as_secs_f64();
        for r in [
            verify::deep_mlp_report(&study, secs),
            verify::batch_sensitivity_report(&study, secs),
        ] {
            println!("{r}");
            reports.push(r);
        }
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    println!("{} of {} criteria passed", reports.len() - failed, reports.len());
    Ok(failed == 0)
}

fn metrics_path(input: &Path) -> PathBuf {
    if input.is_dir() {
        input.join("metrics.csv")
    } else {
        input.to_path_buf()
    }
}

fn cmd_emit_plots(inputs: &[PathBuf], out: Option<&Path>) -> Result<()> {
    for (i, input) in inputs.iter().enumerate() {
        let path = metrics_path(input);
        let records = read_csv(&path)?;
        let dir = match out {
            Some(o) => o.to_path_buf(),
            None => path.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let name = if out.is_some() && inputs.len() > 1 {
            format!("loss_curve_{i}.csv")
        } else {
            "loss_curve.csv".to_string()
        };
        let target = dir.join(name);
        write_curve_table(
            std::fs::File::create(&target).with_context(|| target.display().to_string())?,
            &records,
        )?;
        println!("{} -> {}", path.display(), target.display());
    }
    Ok(())
}

/// Configuration mistakes are usage errors, like unknown flags.
fn is_usage_error(e: &anyhow::Error) -> bool {
    matches!(
        e.downcast_ref::<Error>(),
        Some(Error::Config(_) | Error::ConfigParse(_))
    )
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(args) => cmd_run(args).map(|_| true),
        Command::Grid { experiment, grid } => cmd_grid(experiment, grid.as_deref()).map(|_| true),
        Command::Verify(args) => cmd_verify(args),
        Command::EmitPlots { inputs, out } => cmd_emit_plots(inputs, out.as_deref()).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) if is_usage_error(&e) => {
            let mut cmd = Cli::command();
            cmd.error(clap::error::ErrorKind::ArgumentConflict, format!("{e:#}")).exit()
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
