//! Per-epoch wall time of reallocating methods relative to a sparse run
//! with a fixed mask.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::{Method, RunConfig};
use crate::harness::metrics::write_atomic;
use crate::harness::train::{Datasets, Trainer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadRow {
    pub method: Method,
    pub median_epoch_seconds: f64,
    /// Median epoch time over the baseline's median epoch time.
    pub ratio: f64,
    /// Standard deviation of the per-epoch time ratios.
    pub ratio_std: f64,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Trains `baseline` and every entry of `methods` for `epochs` epochs,
/// interleaved epoch by epoch so that machine load affects all alike.
/// The first row is the baseline itself.
pub fn measure_overhead(baseline: &RunConfig, methods: &[RunConfig], epochs: usize, data: &Datasets) -> Result<Vec<OverheadRow>> {
    if epochs == 0 {
        return Err(Error::Config("overhead needs at least one epoch".into()));
    }
    let mut runs = vec![Trainer::new(baseline.clone())?];
    for m in methods {
        runs.push(Trainer::new(m.clone())?);
    }
    let mut times = vec![Vec::with_capacity(epochs); runs.len()];
    for _ in 0..epochs {
        for (t, times) in runs.iter_mut().zip(times.iter_mut()) {
            times.push(t.run_epoch(data)?.wall_seconds);
        }
    }
    let base = median(&times[0]);
    Ok(runs
        .iter()
        .zip(&times)
        .map(|(t, ts)| {
            let ratios: Vec<f64> = ts.iter().zip(&times[0]).map(|(a, b)| a / b).collect();
            let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
            let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / ratios.len() as f64;
            OverheadRow {
                method: t.cfg.method,
                median_epoch_seconds: median(ts),
                ratio: median(ts) / base,
                ratio_std: var.sqrt(),
            }
        })
        .collect())
}

pub fn write_overhead(rows: &[OverheadRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    write_atomic(path, &w.into_inner().map_err(|e| e.into_error())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
