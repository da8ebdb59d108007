//! Reallocation switched off after a given epoch while training continues.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::{Method, RunConfig};
use crate::harness::metrics::write_atomic;
use crate::harness::train::{train, Datasets};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopRow {
    pub stop_epoch: usize,
    pub final_test_acc: f64,
    pub realloc_steps: usize,
}

/// One dynamic run per stop epoch, all with the same total length.
pub fn run_earlystop_sweep(base: &RunConfig, stops: &[usize], data: &Datasets, out_dir: Option<&Path>) -> Result<Vec<EarlyStopRow>> {
    if base.method != Method::DynamicSparse {
        return Err(Error::Config("early-stop sweeps need a dynamic_sparse config".into()));
    }
    let mut rows = Vec::new();
    for &stop in stops {
        let mut cfg = base.clone();
        cfg.realloc.as_mut().expect("validated").stop_epoch = Some(stop);
        let dir = out_dir.map(|d| d.join(format!("stop{stop}")));
        let t = train(cfg, data, dir.as_deref())?;
        rows.push(EarlyStopRow {
            stop_epoch: stop,
            final_test_acc: t.log.final_accuracy(),
            realloc_steps: t.log.steps.len(),
        });
    }
    if let Some(d) = out_dir {
        write_atomic(&d.join("earlystop.csv"), &earlystop_csv(&rows)?)?;
    }
    Ok(rows)
}

pub fn earlystop_csv(rows: &[EarlyStopRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}
