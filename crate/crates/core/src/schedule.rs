//! Piecewise-constant schedules over 1-based inclusive epoch ranges.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRange<T> {
    /// `[first, last]`, 1-based and inclusive.
    pub epochs: [usize; 2],
    pub value: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EpochSchedule<T> {
    pub ranges: Vec<EpochRange<T>>,
}

impl<T: Clone> EpochSchedule<T> {
    pub fn new(ranges: Vec<([usize; 2], T)>) -> Self {
        Self {
            ranges: ranges
                .into_iter()
                .map(|(epochs, value)| EpochRange { epochs, value })
                .collect(),
        }
    }

    pub fn constant(epochs: usize, value: T) -> Self {
        Self::new(vec![([1, epochs.max(1)], value)])
    }

    /// Value in effect during `epoch` (1-based). Epochs past the last range
    /// keep the last value.
    pub fn at(&self, epoch: usize) -> &T {
        for r in &self.ranges {
            if epoch >= r.epochs[0] && epoch <= r.epochs[1] {
                return &r.value;
            }
        }
        &self.ranges.last().expect("validated non-empty").value
    }

    /// The ranges must be contiguous and cover exactly `[1, epochs]`.
    pub fn validate_tiles(&self, epochs: usize, what: &str) -> Result<()> {
        if self.ranges.is_empty() {
            return Err(Error::Config(format!("{what}: empty schedule")));
        }
        let mut next = 1;
        for r in &self.ranges {
            if r.epochs[0] != next || r.epochs[1] < r.epochs[0] {
                return Err(Error::Config(format!(
                    "{what}: range {:?} does not continue from epoch {next}",
                    r.epochs
                )));
            }
            next = r.epochs[1] + 1;
        }
        if next != epochs + 1 {
            return Err(Error::Config(format!(
                "{what}: ranges end at epoch {}, run has {epochs}",
                next - 1
            )));
        }
        Ok(())
    }

    /// Every range scaled by an integer factor (used for 2x-epoch baselines).
    pub fn stretched(&self, factor: usize) -> Self {
        Self {
            ranges: self
                .ranges
                .iter()
                .map(|r| EpochRange {
                    epochs: [(r.epochs[0] - 1) * factor + 1, r.epochs[1] * factor],
                    value: r.value.clone(),
                })
                .collect(),
        }
    }

    /// Ranges rescaled proportionally so the schedule covers `[1, epochs]`
    /// instead of `[1, from_epochs]`.
    pub fn rescaled(&self, from_epochs: usize, epochs: usize) -> Self {
        let map = |e: usize| ((e as f64) * epochs as f64 / from_epochs as f64).round() as usize;
        let mut ranges: Vec<EpochRange<T>> = Vec::new();
        let mut start = 1;
        for r in &self.ranges {
            let end = map(r.epochs[1]).max(start).min(epochs);
            if start > epochs {
                break;
            }
            ranges.push(EpochRange {
                epochs: [start, end],
                value: r.value.clone(),
            });
            start = end + 1;
        }
        if let Some(last) = ranges.last_mut() {
            last.epochs[1] = epochs;
        }
        Self { ranges }
    }
}
