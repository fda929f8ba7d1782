//! Per-round metrics records, the CSV emitter, and the end-of-run summary.
//!
//! One CSV row is appended and flushed per completed round, so a killed run
//! leaves a valid file for every round it finished. Rows contain only
//! seed-determined quantities; wall time lives in the run summary and
//! manifest so identical seeds produce byte-identical CSVs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bumped whenever the CSV header or row layout changes.
pub const METRICS_FORMAT_VERSION: u32 = 1;

/// Everything recorded about one communication round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    /// 1-based round index.
    pub round: u64,
    pub global_loss: f64,
    pub per_task_loss: Vec<f64>,
    pub participants: Vec<usize>,
    /// Round-wise gradient dissimilarity at the round-start model.
    pub grad_dissimilarity: f64,
    pub participation_inflation: f64,
    /// Frobenius norm of the bank refresh this round.
    pub bank_path_len: f64,
    /// Mean inter-task centroid distance after the round's update.
    pub collapse_score: f64,
    /// Not serialized to the CSV; see module docs.
    pub wall_time_ms: f64,
}

/// Fixed CSV header for a run over `m` tasks.
pub fn csv_header(m: usize) -> String {
    let mut cols = vec![
        "round".to_string(),
        "global_loss".to_string(),
        "participants".to_string(),
        "grad_dissimilarity".to_string(),
        "participation_inflation".to_string(),
        "bank_path_len".to_string(),
        "collapse_score".to_string(),
    ];
    for t in 0..m {
        cols.push(format!("task_loss_{t}"));
    }
    cols.join(",")
}

/// Serialize one round as a CSV row matching [`csv_header`].
pub fn csv_row(metrics: &RoundMetrics) -> String {
    let participants = metrics
        .participants
        .iter()
        .map(|id| id.to_string())
        .collect::<Vec<_>>()
        .join(";");
    let mut cols = vec![
        metrics.round.to_string(),
        metrics.global_loss.to_string(),
        participants,
        metrics.grad_dissimilarity.to_string(),
        metrics.participation_inflation.to_string(),
        metrics.bank_path_len.to_string(),
        metrics.collapse_score.to_string(),
    ];
    for loss in &metrics.per_task_loss {
        cols.push(loss.to_string());
    }
    cols.join(",")
}

/// Append-per-round CSV writer.
pub struct MetricsWriter {
    writer: BufWriter<File>,
    path: String,
}

impl MetricsWriter {
    /// Create the file and write the header immediately.
    pub fn create(path: &Path, m: usize) -> Result<MetricsWriter> {
        let display = path.display().to_string();
        let file = File::create(path).map_err(|e| Error::io(display.clone(), e))?;
        let mut writer = BufWriter::new(file);
        writeln!(writer, "{}", csv_header(m)).map_err(|e| Error::io(display.clone(), e))?;
        writer.flush().map_err(|e| Error::io(display.clone(), e))?;
        Ok(MetricsWriter {
            writer,
            path: display,
        })
    }

    /// Write one row and flush it to disk.
    pub fn append(&mut self, metrics: &RoundMetrics) -> Result<()> {
        writeln!(self.writer, "{}", csv_row(metrics))
            .map_err(|e| Error::io(self.path.clone(), e))?;
        self.writer
            .flush()
            .map_err(|e| Error::io(self.path.clone(), e))
    }
}

/// Final JSON summary written next to the metrics CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub format_version: u32,
    pub config: String,
    pub rounds_completed: u64,
    pub initial_global_loss: f64,
    pub final_global_loss: f64,
    pub final_per_task_loss: Vec<f64>,
    pub final_collapse_score: f64,
    pub mean_grad_dissimilarity: f64,
    pub total_bank_path_length: f64,
    pub participation_inflation: f64,
    pub total_wall_time_ms: f64,
}

pub fn write_summary(path: &Path, summary: &RunSummary) -> Result<()> {
    let display = path.display().to_string();
    let json = serde_json::to_string_pretty(summary)?;
    std::fs::write(path, json).map_err(|e| Error::io(display, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_metrics(round: u64) -> RoundMetrics {
        RoundMetrics {
            round,
            global_loss: 0.5,
            per_task_loss: vec![0.25, 0.75],
            participants: vec![0, 2],
            grad_dissimilarity: 0.1,
            participation_inflation: 0.0,
            bank_path_len: 0.01,
            collapse_score: 1.2,
            wall_time_ms: 3.4,
        }
    }

    #[test]
    fn header_and_row_align() {
        let header = csv_header(2);
        let row = csv_row(&sample_metrics(1));
        assert_eq!(header.split(',').count(), row.split(',').count());
        assert!(header.starts_with("round,global_loss,participants"));
        assert!(row.starts_with("1,0.5,0;2,"));
    }

    #[test]
    fn wall_time_not_in_csv() {
        let row = csv_row(&sample_metrics(1));
        assert!(!row.contains("3.4"));
    }

    #[test]
    fn partial_file_is_valid_per_round() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let mut writer = MetricsWriter::create(&path, 2).unwrap();
        for round in 1..=3 {
            writer.append(&sample_metrics(round)).unwrap();
            // Simulate a crash: read the file back mid-run without dropping
            // the writer.
            let content = std::fs::read_to_string(&path).unwrap();
            let lines: Vec<&str> = content.lines().collect();
            assert_eq!(lines.len(), 1 + round as usize);
            assert!(lines
                .iter()
                .skip(1)
                .all(|l| l.split(',').count() == csv_header(2).split(',').count()));
        }
    }
}
