//! Round-by-round results CSV.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::harness::{RoundRecord, RunSummary};

/// One CSV line. Column order is part of the file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub run_id: String,
    pub strategy: String,
    pub connection_rate: f64,
    pub classes_per_client: usize,
    pub round: u64,
    pub sim_time_s: f64,
    pub round_latency_s: f64,
    pub num_selected: usize,
    pub test_accuracy: Option<f64>,
    /// Only filled on a run's last row, and only if the target was reached.
    pub time_to_half_acc_s: Option<f64>,
}

pub const HEADER: [&str; 10] = [
    "run_id",
    "strategy",
    "connection_rate",
    "classes_per_client",
    "round",
    "sim_time_s",
    "round_latency_s",
    "num_selected",
    "test_accuracy",
    "time_to_half_acc_s",
];

/// Identifies the run a row belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLabel {
    pub run_id: String,
    pub strategy: String,
    pub connection_rate: f64,
    pub classes_per_client: usize,
}

impl RunLabel {
    pub fn row(&self, r: &RoundRecord) -> CsvRow {
        CsvRow {
            run_id: self.run_id.clone(),
            strategy: self.strategy.clone(),
            connection_rate: self.connection_rate,
            classes_per_client: self.classes_per_client,
            round: r.round_index,
            sim_time_s: r.sim_time_end,
            round_latency_s: r.round_latency,
            num_selected: r.selected.len(),
            test_accuracy: r.test_accuracy,
            time_to_half_acc_s: None,
        }
    }
}

impl From<&RunSummary> for RunLabel {
    fn from(s: &RunSummary) -> Self {
        Self {
            run_id: s.run_id.clone(),
            strategy: s.strategy.name().to_string(),
            connection_rate: s.connection_rate,
            classes_per_client: s.classes_per_client,
        }
    }
}

/// Writes rows as they arrive. The header goes out immediately so an empty
/// run still produces a valid file. Each row is held back by one so the
/// final row of a run can carry the time-to-target column.
pub struct ResultsWriter<W: Write> {
    csv: csv::Writer<W>,
    pending: Option<CsvRow>,
}

impl<W: Write> ResultsWriter<W> {
    pub fn new(inner: W) -> csv::Result<Self> {
        let mut csv = csv::WriterBuilder::new().has_headers(false).from_writer(inner);
        csv.write_record(HEADER)?;
        csv.flush()?;
        Ok(Self { csv, pending: None })
    }

    pub fn push(&mut self, row: CsvRow) -> csv::Result<()> {
        if let Some(prev) = self.pending.replace(row) {
            self.csv.serialize(prev)?;
        }
        Ok(())
    }

    /// Closes the current run, stamping its last row with `time_to_target`.
    pub fn finish_run(&mut self, time_to_target: Option<f64>) -> csv::Result<()> {
        if let Some(mut last) = self.pending.take() {
            last.time_to_half_acc_s = time_to_target;
            self.csv.serialize(last)?;
        }
        self.csv.flush()?;
        Ok(())
    }

    /// Writes a whole finished run.
    pub fn write_run(&mut self, summary: &RunSummary) -> csv::Result<()> {
        let label = RunLabel::from(summary);
        for r in &summary.records {
            self.push(label.row(r))?;
        }
        self.finish_run(summary.time_to_target)
    }

    pub fn into_inner(mut self) -> csv::Result<W> {
        self.finish_run(None)?;
        self.csv.into_inner().map_err(|e| e.into_error().into())
    }
}

pub fn read_rows(r: impl std::io::Read) -> csv::Result<Vec<CsvRow>> {
    csv::Reader::from_reader(r).deserialize().collect()
}
