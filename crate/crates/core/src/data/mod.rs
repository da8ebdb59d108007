//! Datasets, normalization and batching.

pub mod augment;
#[cfg(feature = "cifar")]
pub mod cifar;
pub mod idx;
pub mod synthetic;

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use augment::{augment_batch, AugmentConfig};
pub use synthetic::{synthetic_classification, synthetic_split, SyntheticConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Per-channel affine standardization applied after scaling bytes to [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn identity() -> Self {
        Self {
            mean: vec![0.0],
            std: vec![1.0],
        }
    }

    pub fn mnist() -> Self {
        Self {
            mean: vec![0.1307],
            std: vec![0.3081],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `[count, features...]`.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: Split,
    pub normalization: Normalization,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize, split: Split, normalization: Normalization) -> Result<Self> {
        if images.rows() != labels.len() {
            return Err(Error::Dataset(format!(
                "{} images but {} labels",
                images.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Dataset(format!("label {bad} outside [0, {classes})")));
        }
        images.ensure_finite("dataset images")?;
        Ok(Self {
            images,
            labels,
            classes,
            split,
            normalization,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows `idx` as one batch.
    pub fn batch(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        let x = self.images.gather_rows(idx);
        let y = idx.iter().map(|&i| self.labels[i]).collect();
        (x, y)
    }

    /// First `n` items (for quick runs).
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        let idx: Vec<usize> = (0..n).collect();
        let (images, labels) = self.batch(&idx);
        Self {
            images,
            labels,
            classes: self.classes,
            split: self.split,
            normalization: self.normalization.clone(),
        }
    }
}

/// A seeded permutation of `0..n` cut into batches of `batch_size`. The last
/// batch may be smaller.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut ChaCha20Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Loads an image file and its label file.
pub fn load_mnist_idx(images: &Path, labels: &Path, split: Split, norm: &Normalization) -> Result<Dataset> {
    let im = idx::read_images(images)?;
    let lb = idx::read_labels(labels)?;
    if im.count != lb.len() {
        return Err(Error::Dataset(format!(
            "{} has {} images, {} has {} labels",
            images.display(),
            im.count,
            labels.display(),
            lb.len()
        )));
    }
    let (mean, std) = (norm.mean[0], norm.std[0]);
    let data = im
        .pixels
        .iter()
        .map(|&p| (p as f64 / 255.0 - mean) / std)
        .collect();
    let images = Tensor::new(vec![im.count, 1, im.rows, im.cols], data)?;
    let labels = lb.into_iter().map(usize::from).collect();
    Dataset::new(images, labels, 10, split, norm.clone())
}

pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

/// Train and test sets from the four standard IDX files in `dir`.
pub fn load_mnist_dir(dir: &Path, norm: &Normalization) -> Result<(Dataset, Dataset)> {
    let f = |i: usize| dir.join(MNIST_FILES[i]);
    let train = load_mnist_idx(&f(0), &f(1), Split::Train, norm)?;
    let test = load_mnist_idx(&f(2), &f(3), Split::Test, norm)?;
    Ok((train, test))
}

/// `$SPARSETRAIN_DATA_DIR`, else `data/mnist` under the workspace root, if
/// it holds the MNIST files.
pub fn find_mnist_dir() -> Option<PathBuf> {
    let mut candidates = Vec::new();
    if let Ok(d) = std::env::var("SPARSETRAIN_DATA_DIR") {
        let d = PathBuf::from(d);
        candidates.push(d.join("mnist"));
        candidates.push(d);
    }
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    candidates.push(root.join("data/mnist"));
    candidates
        .into_iter()
        .find(|d| MNIST_FILES.iter().all(|f| d.join(f).is_file()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    #[test]
    fn batches_cover_everything_once() {
        let mut rng = stream_rng(1, Stream::Shuffle);
        let b = epoch_batches(10, 3, &mut rng);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 3, 1]);
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn label_count_mismatch() {
        let e = Dataset::new(Tensor::zeros(&[3, 2]), vec![0, 1], 2, Split::Train, Normalization::identity());
        assert!(matches!(e, Err(Error::Dataset(_))));
    }
}
