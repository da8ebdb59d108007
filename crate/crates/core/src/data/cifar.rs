//! CIFAR-10 binary batches: 3073-byte records of one label byte followed by
//! 1024 red, 1024 green and 1024 blue pixels.

use std::fs;
use std::path::Path;

use crate::data::{Dataset, Normalization, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const RECORD_BYTES: usize = 3073;

pub fn cifar_normalization() -> Normalization {
    Normalization {
        mean: vec![0.4914, 0.4822, 0.4465],
        std: vec![0.2470, 0.2435, 0.2616],
    }
}

pub fn parse_batch(path: &Path, bytes: &[u8], images: &mut Vec<f64>, labels: &mut Vec<usize>, norm: &Normalization) -> Result<()> {
    if bytes.is_empty() || bytes.len() % RECORD_BYTES != 0 {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            detail: format!("{} bytes is not a whole number of {RECORD_BYTES}-byte records", bytes.len()),
        });
    }
    for rec in bytes.chunks(RECORD_BYTES) {
        if rec[0] > 9 {
            return Err(Error::Dataset(format!("{}: label {}", path.display(), rec[0])));
        }
        labels.push(rec[0] as usize);
        for (i, &p) in rec[1..].iter().enumerate() {
            let ch = i / 1024;
            images.push((p as f64 / 255.0 - norm.mean[ch]) / norm.std[ch]);
        }
    }
    Ok(())
}

/// Concatenates binary batch files into one `[n, 3, 32, 32]` dataset.
pub fn load_cifar_batches(paths: &[&Path], split: Split) -> Result<Dataset> {
    let norm = cifar_normalization();
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for p in paths {
        parse_batch(p, &fs::read(p)?, &mut images, &mut labels, &norm)?;
    }
    let n = labels.len();
    Dataset::new(Tensor::new(vec![n, 3, 32, 32], images)?, labels, 10, split, norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_record() {
        let mut rec = vec![3u8];
        rec.extend(std::iter::repeat_n(255u8, 3072));
        let (mut im, mut lb) = (Vec::new(), Vec::new());
        parse_batch(Path::new("b"), &rec, &mut im, &mut lb, &cifar_normalization()).unwrap();
        assert_eq!(lb, vec![3]);
        assert_eq!(im.len(), 3072);
        assert!((im[0] - (1.0 - 0.4914) / 0.2470).abs() < 1e-12);
    }

    #[test]
    fn partial_record() {
        let (mut im, mut lb) = (Vec::new(), Vec::new());
        assert!(parse_batch(Path::new("b"), &[0u8; 100], &mut im, &mut lb, &cifar_normalization()).is_err());
    }
}
