//! Mild image augmentation: random translation with zero padding and
//! horizontal flips.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    #[serde(default)]
    pub enabled: bool,
    /// Maximum shift in pixels along each axis.
    #[serde(default = "default_pad")]
    pub pad: usize,
    #[serde(default = "default_true")]
    pub flip: bool,
}

fn default_pad() -> usize {
    4
}

fn default_true() -> bool {
    true
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            pad: 4,
            flip: true,
        }
    }
}

/// Mirrors one `[c, h, w]` image left to right in place.
pub fn hflip(img: &mut [f64], c: usize, h: usize, w: usize) {
    for ch in 0..c {
        for y in 0..h {
            img[(ch * h + y) * w..(ch * h + y + 1) * w].reverse();
        }
    }
}

/// Shifts one `[c, h, w]` image by `(dy, dx)`, filling uncovered pixels with 0.
pub fn translate(img: &[f64], c: usize, h: usize, w: usize, dy: isize, dx: isize) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    for ch in 0..c {
        for y in 0..h as isize {
            let sy = y - dy;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            for x in 0..w as isize {
                let sx = x - dx;
                if sx < 0 || sx >= w as isize {
                    continue;
                }
                out[(ch * h + y as usize) * w + x as usize] = img[(ch * h + sy as usize) * w + sx as usize];
            }
        }
    }
    out
}

/// Augments a `[b, c, h, w]` batch in place. A disabled config leaves it
/// untouched and draws nothing from `rng`.
pub fn augment_batch(batch: &mut Tensor, cfg: &AugmentConfig, rng: &mut ChaCha20Rng) {
    if !cfg.enabled || batch.shape().len() != 4 {
        return;
    }
    let (c, h, w) = (batch.shape()[1], batch.shape()[2], batch.shape()[3]);
    let per = c * h * w;
    let p = cfg.pad as i64;
    for img in batch.data_mut().chunks_mut(per) {
        let dy = rng.random_range(-p..=p) as isize;
        let dx = rng.random_range(-p..=p) as isize;
        let mut moved = translate(img, c, h, w, dy, dx);
        if cfg.flip && rng.random::<bool>() {
            hflip(&mut moved, c, h, w);
        }
        img.copy_from_slice(&moved);
    }
}
