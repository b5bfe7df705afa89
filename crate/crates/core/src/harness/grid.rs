//! Exhaustive hyperparameter search.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use super::config::ExperimentConfig;
use super::runner::{load_dataset, run_experiment_with_data, ExperimentResult};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::optim::{OptimizerConfig, OptimizerKind};

/// An optimizer hyperparameter that a grid can sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridParam {
    Alpha,
    Rho,
    Beta,
    Beta1,
    Beta2,
    Gamma,
    Epsilon,
}

impl GridParam {
    pub fn name(self) -> &'static str {
        match self {
            GridParam::Alpha => "alpha",
            GridParam::Rho => "rho",
            GridParam::Beta => "beta",
            GridParam::Beta1 => "beta1",
            GridParam::Beta2 => "beta2",
            GridParam::Gamma => "gamma",
            GridParam::Epsilon => "epsilon",
        }
    }

    fn apply(self, cfg: &mut OptimizerConfig, v: f64) {
        let slot = match self {
            GridParam::Alpha => &mut cfg.alpha,
            GridParam::Rho => &mut cfg.rho,
            GridParam::Beta => &mut cfg.beta,
            GridParam::Beta1 => &mut cfg.beta1,
            GridParam::Beta2 => &mut cfg.beta2,
            GridParam::Gamma => &mut cfg.gamma,
            GridParam::Epsilon => &mut cfg.epsilon,
        };
        *slot = Some(v);
    }
}

impl fmt::Display for GridParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GridParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "alpha" => GridParam::Alpha,
            "rho" => GridParam::Rho,
            "beta" => GridParam::Beta,
            "beta1" => GridParam::Beta1,
            "beta2" => GridParam::Beta2,
            "gamma" => GridParam::Gamma,
            "epsilon" => GridParam::Epsilon,
            other => return Err(Error::config(format!("unknown grid parameter `{other}`"))),
        })
    }
}

/// Cartesian product of value lists; the first axis varies slowest.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Grid {
    axes: Vec<(GridParam, Vec<f64>)>,
}

impl Grid {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn axis(mut self, param: GridParam, values: Vec<f64>) -> Self {
        self.axes.push((param, values));
        self
    }

    pub fn axes(&self) -> &[(GridParam, Vec<f64>)] {
        &self.axes
    }

    /// The search space used in the reference experiments: `γ × ρ` for
    /// SDProp, `β × α` for RMSProp, and `α` alone otherwise.
    pub fn default_for(kind: OptimizerKind) -> Grid {
        let rates = vec![0.1, 0.01, 0.001];
        match kind {
            OptimizerKind::SdPropDiag | OptimizerKind::SdPropFull => Grid::new()
                .axis(GridParam::Gamma, vec![0.9, 0.99])
                .axis(GridParam::Rho, rates),
            OptimizerKind::RmsProp => Grid::new()
                .axis(GridParam::Beta, vec![0.9, 0.99])
                .axis(GridParam::Alpha, rates),
            OptimizerKind::Sgd | OptimizerKind::Adam => Grid::new().axis(GridParam::Alpha, rates),
        }
    }

    /// Parses `name=v1,v2;name=v3`.
    pub fn parse(s: &str) -> Result<Grid> {
        let mut grid = Grid::new();
        for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, values) = part
                .split_once('=')
                .ok_or_else(|| Error::config(format!("grid axis `{part}` is not `name=v1,v2,...`")))?;
            let param: GridParam = name.trim().parse()?;
            let values = values
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::config(format!("grid value `{v}`: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            grid = grid.axis(param, values);
        }
        Ok(grid)
    }

    pub fn len(&self) -> usize {
        if self.axes.is_empty() {
            0
        } else {
            self.axes.iter().map(|(_, v)| v.len()).product()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every combination applied on top of `base`, with its axis values.
    pub fn cells(&self, base: &OptimizerConfig) -> Vec<(Vec<f64>, OptimizerConfig)> {
        let mut out = vec![(Vec::new(), base.clone())];
        for (param, values) in &self.axes {
            out = out
                .into_iter()
                .flat_map(|(point, cfg)| {
                    values.iter().map(move |&v| {
                        let mut cfg = cfg.clone();
                        param.apply(&mut cfg, v);
                        let mut point = point.clone();
                        point.push(v);
                        (point, cfg)
                    })
                })
                .collect();
        }
        out
    }
}

/// One evaluated grid point.
#[derive(Debug, Clone)]
pub struct GridCell {
    pub point: Vec<f64>,
    pub result: ExperimentResult,
}

impl GridCell {
    pub fn diverged_runs(&self) -> usize {
        self.result.runs.iter().filter(|r| !r.completed()).count()
    }
}

/// Every cell plus the index of the winner, if any cell had no divergence.
#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub grid: Grid,
    pub cells: Vec<GridCell>,
    pub best: Option<usize>,
}

impl GridOutcome {
    pub fn best_cell(&self) -> Option<&GridCell> {
        self.best.map(|i| &self.cells[i])
    }

    /// CSV with one row per cell.
    pub fn write_table<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = self.grid.axes.iter().map(|(p, _)| p.name().to_string()).collect();
        header.extend(["mean_final_loss", "completed", "diverged", "best"].map(String::from));
        w.write_record(&header)?;
        for (i, cell) in self.cells.iter().enumerate() {
            let mut row: Vec<String> = cell.point.iter().map(|v| format!("{v:?}")).collect();
            row.push(format!("{:?}", cell.result.mean_final_loss()));
            row.push((cell.result.runs.len() - cell.diverged_runs()).to_string());
            row.push(cell.diverged_runs().to_string());
            row.push((self.best == Some(i)).to_string());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Runs every grid point. The winner has the lowest mean final training
/// loss among cells in which no run diverged.
pub fn grid_search(base: &ExperimentConfig, grid: &Grid) -> Result<GridOutcome> {
    let data = load_dataset(&base.problem, base.seed)?;
    grid_search_with_data(base, grid, data.as_ref())
}

pub fn grid_search_with_data(
    base: &ExperimentConfig,
    grid: &Grid,
    data: Option<&Arc<Dataset>>,
) -> Result<GridOutcome> {
    if grid.is_empty() {
        return Err(Error::config("grid has no points"));
    }
    let points = grid.cells(&base.optimizer);
    for (_, opt) in &points {
        opt.resolve()?;
    }
    let mut cells = Vec::with_capacity(points.len());
    for (point, optimizer) in points {
        let cfg = ExperimentConfig {
            optimizer,
            ..base.clone()
        };
        cells.push(GridCell {
            point,
            result: run_experiment_with_data(&cfg, data)?,
        });
    }
    let best = cells
        .iter()
        .enumerate()
        .filter(|(_, c)| c.diverged_runs() == 0)
        .min_by(|(_, a), (_, b)| a.result.mean_final_loss().total_cmp(&b.result.mean_final_loss()))
        .map(|(i, _)| i);
    Ok(GridOutcome {
        grid: grid.clone(),
        cells,
        best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ProblemSpec;

    #[test]
    fn default_sdprop_grid_has_six_cells() {
        let g = Grid::default_for(OptimizerKind::SdPropDiag);
        assert_eq!(g.len(), 6);
        let cells = g.cells(&OptimizerConfig::new(OptimizerKind::SdPropDiag));
        assert_eq!(cells[0].0, vec![0.9, 0.1]);
        assert_eq!(cells[5].1.gamma, Some(0.99));
        assert_eq!(cells[5].1.rho, Some(0.001));
    }

    #[test]
    fn parse_round_trip() {
        let g = Grid::parse("rho=0.1, 0.01; gamma=0.9").unwrap();
        assert_eq!(
            g,
            Grid::new()
                .axis(GridParam::Rho, vec![0.1, 0.01])
                .axis(GridParam::Gamma, vec![0.9])
        );
        assert!(Grid::parse("lr=0.1").is_err());
        assert!(Grid::parse("rho").is_err());
    }

    fn quad(opt: OptimizerConfig) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(
            ProblemSpec::Quadratic {
                curvature: vec![1.0, 4.0],
                noise: vec![0.01, 0.01],
                start: vec![1.0, 1.0],
                steps_per_epoch: 20,
            },
            opt,
        );
        cfg.epochs = 2;
        cfg
    }

    #[test]
    fn diverging_cell_is_never_best() {
        let grid = Grid::new().axis(GridParam::Alpha, vec![1e200, 0.1]);
        let out = grid_search(&quad(OptimizerConfig::sgd(0.1)), &grid).unwrap();
        assert_eq!(out.cells[0].diverged_runs(), 1);
        assert_eq!(out.best, Some(1));
    }

    #[test]
    fn single_cell_grid_matches_run_experiment() {
        let base = quad(OptimizerConfig::sgd(0.05));
        let out = grid_search(&base, &Grid::new().axis(GridParam::Alpha, vec![0.05])).unwrap();
        let direct = crate::harness::run_experiment(&base).unwrap();
        assert_eq!(out.cells[0].result.records(), direct.records());
    }

    #[test]
    fn irrelevant_axis_is_rejected_before_running() {
        let grid = Grid::new().axis(GridParam::Beta, vec![0.9]);
        let err = grid_search(&quad(OptimizerConfig::sdprop(0.01, 0.9)), &grid);
        assert!(matches!(err, Err(Error::Config(_))));
    }
}
