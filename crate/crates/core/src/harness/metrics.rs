//! Per-epoch and per-reallocation metric logs, written as CSV.
//!
//! `metrics.csv` columns, in order:
//! `epoch, method, seed, train_loss, test_acc, wall_seconds, lr,
//! global_sparsity, active_count, threshold`, then one `sparsity:<tensor>`
//! column per sparse tensor.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::realloc::StepReport;

pub const FIXED_COLUMNS: [&str; 10] = [
    "epoch",
    "method",
    "seed",
    "train_loss",
    "test_acc",
    "wall_seconds",
    "lr",
    "global_sparsity",
    "active_count",
    "threshold",
];

pub const REALLOC_COLUMNS: [&str; 13] = [
    "step",
    "epoch",
    "iteration",
    "tensor",
    "active_before",
    "pruned",
    "surviving",
    "grown",
    "active_after",
    "threshold_before",
    "threshold_after",
    "overflow_redistributed",
    "dead",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub method: String,
    pub seed: u64,
    pub train_loss: f64,
    /// Fraction in [0, 1].
    pub test_acc: f64,
    /// Time spent in training iterations (evaluation excluded).
    pub wall_seconds: f64,
    pub lr: f64,
    pub global_sparsity: f64,
    /// Trainable scalars in all tensors.
    pub active_count: usize,
    pub threshold: Option<f64>,
    pub tensor_sparsity: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRow {
    pub epoch: usize,
    pub iteration: u64,
    pub report: StepReport,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricLog {
    pub tensor_names: Vec<String>,
    pub epochs: Vec<EpochRow>,
    pub steps: Vec<StepRow>,
}

impl MetricLog {
    pub fn new(tensor_names: Vec<String>) -> Self {
        Self {
            tensor_names,
            ..Self::default()
        }
    }

    pub fn last(&self) -> Option<&EpochRow> {
        self.epochs.last()
    }

    pub fn final_accuracy(&self) -> f64 {
        self.last().map_or(0.0, |r| r.test_acc)
    }

    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
        h.extend(self.tensor_names.iter().map(|n| format!("sparsity:{n}")));
        h
    }

    pub fn metrics_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header())?;
        for r in &self.epochs {
            let mut rec = vec![
                r.epoch.to_string(),
                r.method.clone(),
                r.seed.to_string(),
                r.train_loss.to_string(),
                r.test_acc.to_string(),
                r.wall_seconds.to_string(),
                r.lr.to_string(),
                r.global_sparsity.to_string(),
                r.active_count.to_string(),
                r.threshold.map_or(String::new(), |h| h.to_string()),
            ];
            rec.extend(r.tensor_sparsity.iter().map(f64::to_string));
            w.write_record(rec)?;
        }
        Ok(w.into_inner().map_err(|e| e.into_error())?)
    }

    pub fn realloc_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(REALLOC_COLUMNS)?;
        for s in &self.steps {
            let r = &s.report;
            for (i, t) in r.tensors.iter().enumerate() {
                w.write_record([
                    r.step.to_string(),
                    s.epoch.to_string(),
                    s.iteration.to_string(),
                    self.tensor_names.get(i).cloned().unwrap_or_else(|| i.to_string()),
                    t.active_before.to_string(),
                    t.pruned.to_string(),
                    t.surviving.to_string(),
                    t.grown.to_string(),
                    t.active_after.to_string(),
                    r.threshold_before.to_string(),
                    r.threshold_after.to_string(),
                    r.overflow_redistributed.to_string(),
                    r.dead_tensors.contains(&i).to_string(),
                ])?;
            }
        }
        Ok(w.into_inner().map_err(|e| e.into_error())?)
    }

    /// Rewrites `metrics.csv` and `realloc.csv` in `dir` via rename, so a
    /// reader never sees a partial file.
    pub fn flush(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_atomic(&dir.join("metrics.csv"), &self.metrics_csv()?)?;
        if !self.steps.is_empty() {
            write_atomic(&dir.join("realloc.csv"), &self.realloc_csv()?)?;
        }
        Ok(())
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads back the fixed columns of a `metrics.csv`.
pub fn read_metrics(path: &Path) -> Result<(Vec<String>, Vec<EpochRow>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let names: Vec<String> = header[FIXED_COLUMNS.len()..]
        .iter()
        .map(|h| h.trim_start_matches("sparsity:").to_string())
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| f(i).parse::<f64>().unwrap_or(f64::NAN);
        rows.push(EpochRow {
            epoch: f(0).parse().unwrap_or(0),
            method: f(1).to_string(),
            seed: f(2).parse().unwrap_or(0),
            train_loss: num(3),
            test_acc: num(4),
            wall_seconds: num(5),
            lr: num(6),
            global_sparsity: num(7),
            active_count: f(8).parse().unwrap_or(0),
            threshold: f(9).parse().ok(),
            tensor_sparsity: (FIXED_COLUMNS.len()..rec.len()).map(num).collect(),
        });
    }
    Ok((names, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(epoch: usize) -> EpochRow {
        EpochRow {
            epoch,
            method: "static_sparse".into(),
            seed: 3,
            train_loss: 0.5,
            test_acc: 0.9,
            wall_seconds: 1.25,
            lr: 0.1,
            global_sparsity: 0.9,
            active_count: 120,
            threshold: None,
            tensor_sparsity: vec![0.9, 0.8],
        }
    }

    #[test]
    fn header_order_is_stable() {
        let log = MetricLog::new(vec!["l0.weight".into(), "l2.weight".into()]);
        let h = log.header();
        assert_eq!(&h[..10], FIXED_COLUMNS.map(String::from).as_slice());
        assert_eq!(h[10], "sparsity:l0.weight");
    }

    #[test]
    fn flush_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let mut log = MetricLog::new(vec!["a".into(), "b".into()]);
        log.epochs.push(row(1));
        log.epochs.push(row(2));
        log.flush(dir.path()).unwrap();
        let (names, rows) = read_metrics(&dir.path().join("metrics.csv")).unwrap();
        assert_eq!(names, vec!["a", "b"]);
        assert_eq!(rows, log.epochs);
        assert!(!dir.path().join("metrics.tmp").exists());
    }
}
