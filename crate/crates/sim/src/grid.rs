//! Experiment grids and the summary tables reduced from their CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use v2xfl_core::fl::Dataset;
use v2xfl_core::selection::Strategy;

use crate::config::{ExperimentConfig, Seeds};
use crate::harness::{run_experiment, RunSummary};
use crate::output::CsvRow;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub strategy: Strategy,
    pub connection_rate: f64,
    pub classes_per_client: usize,
    pub seed: u64,
}

impl GridCell {
    pub fn run_id(&self) -> String {
        format!("{}-cr{}-cpc{}-s{}", self.strategy, self.connection_rate, self.classes_per_client, self.seed)
    }

    /// `base` with this cell's coordinates applied.
    pub fn config(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut c = base.clone();
        c.experiment.strategy = self.strategy;
        c.experiment.connection_rate = self.connection_rate;
        c.partition.classes_per_client = self.classes_per_client;
        c.seeds = Seeds::uniform(self.seed);
        c.experiment.run_id = self.run_id();
        c
    }
}

/// Gossip once at full connectivity, then every other non-greedy strategy at
/// each connection rate.
pub fn connection_rate_grid(rates: &[f64], classes_per_client: usize, seed: u64) -> Vec<GridCell> {
    let cell = |strategy, connection_rate| GridCell { strategy, connection_rate, classes_per_client, seed };
    let mut cells = vec![cell(Strategy::Gossip, 1.0)];
    for &cr in rates {
        for s in [Strategy::DataBased, Strategy::NetworkBased, Strategy::Contextual] {
            cells.push(cell(s, cr));
        }
    }
    cells
}

pub const TABLE_RATES: [f64; 3] = [1.0, 0.5, 0.2];
pub const CLASS_RATIOS: [usize; 6] = [1, 2, 4, 6, 8, 10];

/// Every strategy at every class ratio and seed, full connectivity.
pub fn class_ratio_grid(ratios: &[usize], seeds: &[u64]) -> Vec<GridCell> {
    let mut cells = Vec::new();
    for &classes_per_client in ratios {
        for &seed in seeds {
            for strategy in Strategy::ALL {
                cells.push(GridCell { strategy, connection_rate: 1.0, classes_per_client, seed });
            }
        }
    }
    cells
}

#[derive(Debug)]
pub struct CellOutcome {
    pub cell: GridCell,
    /// The failure message when the cell could not run.
    pub result: Result<RunSummary, String>,
}

/// Runs every cell independently. A failing cell is recorded and the rest
/// still run.
pub fn run_grid(base: &ExperimentConfig, cells: &[GridCell], train: &Dataset, test: &Dataset) -> Vec<CellOutcome> {
    cells
        .par_iter()
        .map(|cell| {
            let cfg = cell.config(base);
            let result = run_experiment(&cfg, train, test, |_| Ok(())).map_err(|e| e.to_string());
            if let Err(e) = &result {
                log::error!("cell {} failed: {e}", cell.run_id());
            }
            CellOutcome { cell: *cell, result }
        })
        .collect()
}

/// One run's time to the target, as read back from a results CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTime {
    pub run_id: String,
    pub strategy: String,
    pub connection_rate: f64,
    pub classes_per_client: usize,
    pub time: Option<f64>,
}

/// The time-to-target column of each run's last row, in first-seen order.
pub fn run_times(rows: &[CsvRow]) -> Vec<RunTime> {
    let mut order = Vec::new();
    let mut last: BTreeMap<&str, &CsvRow> = BTreeMap::new();
    for r in rows {
        if last.insert(&r.run_id, r).is_none() {
            order.push(r.run_id.as_str());
        }
    }
    order
        .into_iter()
        .map(|id| {
            let r = last[id];
            RunTime {
                run_id: r.run_id.clone(),
                strategy: r.strategy.clone(),
                connection_rate: r.connection_rate,
                classes_per_client: r.classes_per_client,
                time: r.time_to_half_acc_s,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReductionRow {
    pub connection_rate: f64,
    pub strategy: String,
    pub time: Option<f64>,
    /// Gossip time over this strategy's time, rounded to 4 places.
    pub reduction: Option<f64>,
}

pub fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// Reduction of each run's time against the gossip baseline. The baseline is
/// the gossip run at the highest connection rate present.
pub fn reduction_table(rows: &[CsvRow]) -> Vec<ReductionRow> {
    let runs = run_times(rows);
    let gossip = runs
        .iter()
        .filter(|r| r.strategy == Strategy::Gossip.name())
        .max_by(|a, b| a.connection_rate.total_cmp(&b.connection_rate))
        .and_then(|r| r.time);
    runs.iter()
        .map(|r| ReductionRow {
            connection_rate: r.connection_rate,
            strategy: r.strategy.clone(),
            time: r.time,
            reduction: gossip.zip(r.time).filter(|&(_, t)| t > 0.0).map(|(g, t)| round4(g / t)),
        })
        .collect()
}

pub fn render_reduction_table(table: &[ReductionRow]) -> String {
    let mut out = String::from("cr\tstrategy\ttime_s\treduction\n");
    for r in table {
        let time = r.time.map_or_else(|| "not reached".to_string(), |t| format!("{t:.2}"));
        let red = r.reduction.map_or_else(|| "-".to_string(), |x| format!("{x:.2}x"));
        let _ = writeln!(out, "{}\t{}\t{time}\t{red}", r.connection_rate, r.strategy);
    }
    out
}

/// Last evaluated accuracy at or before `budget`, per (class ratio, strategy),
/// as the median over the runs in that group.
pub fn accuracy_at_budget(rows: &[CsvRow], budget: f64) -> BTreeMap<(usize, String), f64> {
    let mut per_run: BTreeMap<&str, (&CsvRow, Option<f64>)> = BTreeMap::new();
    for r in rows {
        let entry = per_run.entry(&r.run_id).or_insert((r, None));
        if r.sim_time_s <= budget && r.test_accuracy.is_some() {
            entry.1 = r.test_accuracy;
        }
    }
    let mut groups: BTreeMap<(usize, String), Vec<f64>> = BTreeMap::new();
    for (r, acc) in per_run.into_values() {
        groups.entry((r.classes_per_client, r.strategy.clone())).or_default().push(acc.unwrap_or(0.0));
    }
    groups.into_iter().map(|(k, v)| (k, median(v))).collect()
}

pub fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}
