//! Repeat-run statistics and loss-curve tables.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use super::metrics::MetricsRecord;
use super::runner::RunResult;
use crate::error::{Error, Result};

/// Final-epoch training accuracy over repeat runs, as fractions in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AccuracySummary {
    pub avg: f64,
    pub best: f64,
    pub worst: f64,
    /// Runs that finished.
    pub completed: usize,
    /// Runs that diverged and are excluded from the statistics.
    pub diverged: usize,
}

impl AccuracySummary {
    pub fn spread(&self) -> f64 {
        self.best - self.worst
    }
}

/// Average, best and worst final accuracy of the completed runs.
pub fn summarize_runs(runs: &[RunResult]) -> Result<AccuracySummary> {
    let accs: Vec<f64> = runs
        .iter()
        .filter(|r| r.completed())
        .filter_map(|r| r.final_record().and_then(|m| m.accuracy))
        .collect();
    summarize_accuracies(&accs, runs.len() - runs.iter().filter(|r| r.completed()).count())
}

/// Statistics of bare accuracy values.
pub fn summarize_accuracies(accs: &[f64], diverged: usize) -> Result<AccuracySummary> {
    if accs.is_empty() {
        return Err(Error::NoCompletedRuns);
    }
    Ok(AccuracySummary {
        avg: accs.iter().sum::<f64>() / accs.len() as f64,
        best: accs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        worst: accs.iter().copied().fold(f64::INFINITY, f64::min),
        completed: accs.len(),
        diverged,
    })
}

/// One row of a loss-curve table: the per-run losses at an `(epoch, step)`
/// key, `None` where a run has no record.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub epoch: u32,
    pub step: u64,
    pub losses: Vec<Option<f64>>,
}

impl CurvePoint {
    fn present(&self) -> impl Iterator<Item = f64> + '_ {
        self.losses.iter().flatten().copied()
    }

    pub fn mean(&self) -> Option<f64> {
        let n = self.present().count();
        (n > 0).then(|| self.present().sum::<f64>() / n as f64)
    }
}

/// Aligns the records of every run on their `(epoch, step)` keys.
pub fn loss_curves(records: &[MetricsRecord]) -> Vec<CurvePoint> {
    let runs: Vec<u32> = {
        let mut r: Vec<u32> = records.iter().map(|m| m.run).collect();
        r.sort_unstable();
        r.dedup();
        r
    };
    let column: BTreeMap<u32, usize> = runs.iter().enumerate().map(|(i, &r)| (r, i)).collect();
    let mut table: BTreeMap<(u32, u64), Vec<Option<f64>>> = BTreeMap::new();
    for m in records {
        table.entry((m.epoch, m.step)).or_insert_with(|| vec![None; runs.len()])[column[&m.run]] =
            Some(m.loss);
    }
    table
        .into_iter()
        .map(|((epoch, step), losses)| CurvePoint {
            epoch,
            step,
            losses,
        })
        .collect()
}

/// Writes `epoch,step,mean,min,max,run_<id>...` for external plotting.
pub fn write_curve_table<W: Write>(writer: W, records: &[MetricsRecord]) -> Result<()> {
    let mut runs: Vec<u32> = records.iter().map(|m| m.run).collect();
    runs.sort_unstable();
    runs.dedup();
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["epoch".to_string(), "step".into(), "mean".into(), "min".into(), "max".into()];
    header.extend(runs.iter().map(|r| format!("run_{r}")));
    w.write_record(&header)?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    for p in loss_curves(records) {
        let min = p.present().reduce(f64::min);
        let max = p.present().reduce(f64::max);
        let mut row = vec![p.epoch.to_string(), p.step.to_string(), fmt(p.mean()), fmt(min), fmt(max)];
        row.extend(p.losses.iter().map(|&l| fmt(l)));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
