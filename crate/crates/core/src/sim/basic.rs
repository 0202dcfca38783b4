//! Demand of the node's basic service over time.

use std::io::Read;

use serde::Deserialize;
use thiserror::Error;

use crate::model::ResourceVector;

pub const CSV_HEADER: [&str; 3] = ["time_s", "cpu_cores", "memory_mb"];

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("expected header time_s,cpu_cores,memory_mb, found {0}")]
    Header(String),
    #[error("row {row}: {reason}")]
    Row { row: usize, reason: String },
    #[error("trace has no rows")]
    Empty,
}

/// A burst of demand over `[start_s, end_s)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Burst {
    pub start_s: f64,
    pub end_s: f64,
    pub demand: ResourceVector,
}

/// Piecewise-constant demand. The first step holds from time zero and the
/// last holds forever.
#[derive(Clone, Debug, PartialEq)]
pub struct BasicServiceTrace {
    steps: Vec<(f64, ResourceVector)>,
}

#[derive(Deserialize)]
struct Row {
    time_s: f64,
    cpu_cores: u32,
    memory_mb: u32,
}

impl BasicServiceTrace {
    pub fn flat(level: ResourceVector) -> Self {
        Self { steps: vec![(0.0, level)] }
    }

    /// Baseline demand with square bursts. Where bursts overlap the one
    /// listed last wins.
    pub fn bursty(baseline: ResourceVector, bursts: &[Burst]) -> Self {
        let mut cuts: Vec<f64> = bursts.iter().flat_map(|b| [b.start_s, b.end_s]).collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let level_at =
            |t: f64| bursts.iter().rev().find(|b| b.start_s <= t && t < b.end_s).map_or(baseline, |b| b.demand);
        let mut steps = vec![(0.0, level_at(0.0))];
        for t in cuts.into_iter().filter(|&t| t > 0.0) {
            let level = level_at(t);
            if steps.last().is_some_and(|&(_, prev)| prev != level) {
                steps.push((t, level));
            }
        }
        Self { steps }
    }

    /// Reads a `time_s,cpu_cores,memory_mb` CSV with non-decreasing times.
    pub fn from_csv(reader: impl Read) -> Result<Self, TraceError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers().map_err(|e| TraceError::Header(e.to_string()))?;
        if header.iter().map(str::trim).ne(CSV_HEADER) {
            return Err(TraceError::Header(header.iter().collect::<Vec<_>>().join(",")));
        }
        let mut steps: Vec<(f64, ResourceVector)> = Vec::new();
        for (i, row) in rdr.deserialize::<Row>().enumerate() {
            let row = row.map_err(|e| TraceError::Row { row: i + 1, reason: e.to_string() })?;
            if row.time_s.is_nan() || row.time_s < 0.0 || steps.last().is_some_and(|&(t, _)| row.time_s < t) {
                return Err(TraceError::Row {
                    row: i + 1,
                    reason: "times must be non-negative and non-decreasing".into(),
                });
            }
            steps.push((row.time_s, ResourceVector::new(row.cpu_cores, row.memory_mb)));
        }
        if steps.is_empty() {
            return Err(TraceError::Empty);
        }
        Ok(Self { steps })
    }

    pub fn demand(&self, t: f64) -> ResourceVector {
        let idx = self.steps.partition_point(|&(start, _)| start <= t);
        self.steps[idx.saturating_sub(1)].1
    }

    /// Change points in time order.
    pub fn steps(&self) -> &[(f64, ResourceVector)] {
        &self.steps
    }

    pub fn peak(&self) -> ResourceVector {
        let cpu = self.steps.iter().map(|s| s.1.cpu_cores).max().unwrap_or(0);
        let mb = self.steps.iter().map(|s| s.1.memory_mb).max().unwrap_or(0);
        ResourceVector::new(cpu, mb)
    }
}
