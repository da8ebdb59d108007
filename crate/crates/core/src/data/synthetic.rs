//! Gaussian class blobs for dataset-free runs.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Normalization, Split};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub train: usize,
    pub test: usize,
    pub features: usize,
    pub classes: usize,
    /// Distance of every class center from the origin, in noise standard deviations.
    pub margin: f64,
}

/// `n` points in `d` dimensions, `classes` balanced classes. Class `c` is
/// centered at `margin * u_c` for random unit vectors `u_c`; points add
/// standard normal noise.
pub fn synthetic_classification(n: usize, d: usize, classes: usize, margin: f64, seed: u64) -> Result<Dataset> {
    let (train, _) = synthetic_split(n, 0, d, classes, margin, seed)?;
    Ok(train)
}

/// Train and test sets drawn from the same blobs.
pub fn synthetic_split(
    train: usize,
    test: usize,
    d: usize,
    classes: usize,
    margin: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if classes < 2 || d == 0 {
        return Err(Error::InvalidArgument("need at least 2 classes and 1 feature".into()));
    }
    let mut rng = stream_rng(seed ^ 0x5EED_DA7A, Stream::Init);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v.into_iter().map(|x| margin * x / norm).collect()
        })
        .collect();
    let mut make = |n: usize, split: Split| -> Result<Dataset> {
        let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        labels.shuffle(&mut rng);
        let mut data = Vec::with_capacity(n * d);
        for &c in &labels {
            for j in 0..d {
                let z: f64 = rng.sample(StandardNormal);
                data.push(centers[c][j] + z);
            }
        }
        Dataset::new(Tensor::new(vec![n, d], data)?, labels, classes, split, Normalization::identity())
    };
    let tr = make(train, Split::Train)?;
    let te = make(test, Split::Test)?;
    Ok((tr, te))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let a = synthetic_classification(50, 4, 3, 3.0, 1).unwrap();
        let b = synthetic_classification(50, 4, 3, 3.0, 1).unwrap();
        assert_eq!(a.images, b.images);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn balanced_classes() {
        let ds = synthetic_classification(101, 4, 3, 3.0, 2).unwrap();
        let mut counts = [0usize; 3];
        for &l in &ds.labels {
            counts[l] += 1;
        }
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1);
    }
}
