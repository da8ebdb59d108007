//! Run configuration (TOML) and its validation.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{CompressionSchedule, DeepRConfig, HashedConfig, SetConfig};
use crate::data::{AugmentConfig, Normalization, SyntheticConfig};
use crate::error::{Error, Result};
use crate::nn::NetworkSpec;
use crate::optim::SgdConfig;
use crate::realloc::ReallocConfig;
use crate::schedule::EpochSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    DynamicSparse,
    StaticSparse,
    ThinDense,
    CompressedSparse,
    Set,
    Deepr,
    Hashed,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::DynamicSparse,
        Method::StaticSparse,
        Method::ThinDense,
        Method::CompressedSparse,
        Method::Set,
        Method::Deepr,
        Method::Hashed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::DynamicSparse => "dynamic_sparse",
            Method::StaticSparse => "static_sparse",
            Method::ThinDense => "thin_dense",
            Method::CompressedSparse => "compressed_sparse",
            Method::Set => "set",
            Method::Deepr => "deepr",
            Method::Hashed => "hashed",
        }
    }

    /// Methods whose structure never changes train for more epochs.
    pub fn is_static(self) -> bool {
        matches!(self, Method::StaticSparse | Method::ThinDense)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Mnist,
    Synthetic,
    Cifar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub kind: DataKind,
    /// Directory holding the dataset files; `SPARSETRAIN_DATA_DIR` and
    /// `data/` are searched when unset.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub normalization: Option<Normalization>,
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default)]
    pub augment: AugmentConfig,
    /// Use only the first `n` training items.
    #[serde(default)]
    pub train_limit: Option<usize>,
    #[serde(default)]
    pub test_limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    pub net: String,
    /// Global sparsity `s` of the sparse tensors.
    pub sparsity: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr_schedule: EpochSchedule<f64>,
    pub optimizer: SgdConfig,
    /// Epoch multiplier for methods with fixed structure.
    #[serde(default = "default_multiplier")]
    pub static_epoch_multiplier: usize,
    pub data: DataConfig,
    #[serde(default)]
    pub realloc: Option<ReallocConfig>,
    #[serde(default)]
    pub set: Option<SetConfig>,
    #[serde(default)]
    pub deepr: Option<DeepRConfig>,
    #[serde(default)]
    pub compression: Option<CompressionSchedule>,
    #[serde(default)]
    pub hashed: Option<HashedConfig>,
}

fn default_multiplier() -> usize {
    2
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        NetworkSpec::by_name(&self.net)?.shapes()?;
        if !(self.sparsity >= 0.0 && self.sparsity < 1.0) {
            return Err(Error::Config(format!("sparsity must lie in [0, 1), got {}", self.sparsity)));
        }
        let sparse_method = !matches!(self.method, Method::ThinDense | Method::CompressedSparse | Method::Hashed);
        if sparse_method && self.sparsity == 0.0 {
            return Err(Error::Config(format!("{} needs sparsity > 0", self.method)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be >= 1".into()));
        }
        if self.static_epoch_multiplier == 0 {
            return Err(Error::Config("static_epoch_multiplier must be >= 1".into()));
        }
        if self.lr_schedule.ranges.iter().any(|r| !(r.value >= 0.0)) {
            return Err(Error::Config("learning rates must be >= 0".into()));
        }
        self.lr_schedule.validate_tiles(self.epochs, "lr_schedule")?;
        let need = |present: bool, wanted: bool, section: &str| -> Result<()> {
            match (present, wanted) {
                (false, true) => Err(Error::Config(format!("method {} needs a [{section}] section", self.method))),
                (true, false) => Err(Error::Config(format!(
                    "[{section}] does not apply to method {}",
                    self.method
                ))),
                _ => Ok(()),
            }
        };
        need(self.realloc.is_some(), self.method == Method::DynamicSparse, "realloc")?;
        need(self.set.is_some(), self.method == Method::Set, "set")?;
        need(self.deepr.is_some(), self.method == Method::Deepr, "deepr")?;
        need(self.compression.is_some(), self.method == Method::CompressedSparse, "compression")?;
        need(self.hashed.is_some(), self.method == Method::Hashed, "hashed")?;
        if let Some(r) = &self.realloc {
            r.validate()?;
            r.period_schedule.validate_tiles(self.epochs, "realloc.period_schedule")?;
        }
        if let Some(s) = &self.set {
            if s.prune_count == 0 || s.period_schedule.ranges.iter().any(|r| r.value == 0) {
                return Err(Error::Config("set needs prune_count >= 1 and periods >= 1".into()));
            }
            s.period_schedule.validate_tiles(self.epochs, "set.period_schedule")?;
        }
        if let Some(d) = &self.deepr {
            d.validate()?;
            d.temperature_schedule.validate_tiles(self.epochs, "deepr.temperature_schedule")?;
        }
        if let Some(c) = &self.compression {
            c.validate()?;
        }
        if self.data.kind == DataKind::Synthetic && self.data.synthetic.is_none() {
            return Err(Error::Config("synthetic data needs a [data.synthetic] section".into()));
        }
        Ok(())
    }

    /// Epochs actually trained (after the fixed-structure multiplier and any
    /// post-training phase).
    pub fn total_epochs(&self) -> usize {
        match self.method {
            m if m.is_static() => self.epochs * self.static_epoch_multiplier,
            Method::CompressedSparse => {
                self.epochs + self.compression.as_ref().map_or(0, CompressionSchedule::phase_epochs)
            }
            _ => self.epochs,
        }
    }

    /// Learning rate in effect during `epoch` (1-based, over `total_epochs`).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.method {
            m if m.is_static() => *self.lr_schedule.stretched(self.static_epoch_multiplier).at(epoch),
            Method::CompressedSparse if epoch > self.epochs => {
                let c = self.compression.as_ref().expect("validated");
                *c.lr_schedule.at(epoch - self.epochs)
            }
            _ => *self.lr_schedule.at(epoch),
        }
    }

    /// Same run under another method: sections the new method does not use
    /// are dropped. Sections it needs must already be present (or are
    /// filled from `template`).
    pub fn with_method(&self, method: Method, template: Option<&RunConfig>) -> RunConfig {
        fn keep<T: Clone>(own: &Option<T>, tmpl: Option<&Option<T>>, wanted: bool) -> Option<T> {
            if wanted {
                own.clone().or_else(|| tmpl.and_then(Clone::clone))
            } else {
                None
            }
        }
        let mut c = self.clone();
        c.method = method;
        c.realloc = keep(&self.realloc, template.map(|t| &t.realloc), method == Method::DynamicSparse);
        c.set = keep(&self.set, template.map(|t| &t.set), method == Method::Set);
        c.deepr = keep(&self.deepr, template.map(|t| &t.deepr), method == Method::Deepr);
        c.compression = keep(
            &self.compression,
            template.map(|t| &t.compression),
            method == Method::CompressedSparse,
        );
        c.hashed = keep(&self.hashed, template.map(|t| &t.hashed), method == Method::Hashed);
        c
    }

    /// Schedules rescaled from `epochs` to `new_epochs` (for shortened runs).
    pub fn rescaled(&self, new_epochs: usize) -> RunConfig {
        let mut c = self.clone();
        let from = self.epochs;
        c.epochs = new_epochs;
        c.lr_schedule = self.lr_schedule.rescaled(from, new_epochs);
        if let Some(r) = &mut c.realloc {
            r.period_schedule = r.period_schedule.rescaled(from, new_epochs);
        }
        if let Some(s) = &mut c.set {
            s.period_schedule = s.period_schedule.rescaled(from, new_epochs);
        }
        if let Some(d) = &mut c.deepr {
            d.temperature_schedule = d.temperature_schedule.rescaled(from, new_epochs);
        }
        c
    }
}

/// Preset configurations shipped with the crate.
pub mod presets {
    use super::*;

    pub const MNIST_DYNAMIC: &str = include_str!("../../presets/mnist_dynamic_sparse.toml");
    pub const MNIST_STATIC: &str = include_str!("../../presets/mnist_static_sparse.toml");
    pub const MNIST_SET: &str = include_str!("../../presets/mnist_set.toml");
    pub const MNIST_DEEPR: &str = include_str!("../../presets/mnist_deepr.toml");
    pub const MNIST_COMPRESSED: &str = include_str!("../../presets/mnist_compressed_sparse.toml");
    pub const MNIST_THIN: &str = include_str!("../../presets/mnist_thin_dense.toml");
    pub const MNIST_HASHED: &str = include_str!("../../presets/mnist_hashed.toml");

    /// LeNet-300-100 on MNIST with the reference hyperparameters for `method`.
    pub fn mnist(method: Method) -> RunConfig {
        let text = match method {
            Method::DynamicSparse => MNIST_DYNAMIC,
            Method::StaticSparse => MNIST_STATIC,
            Method::Set => MNIST_SET,
            Method::Deepr => MNIST_DEEPR,
            Method::CompressedSparse => MNIST_COMPRESSED,
            Method::ThinDense => MNIST_THIN,
            Method::Hashed => MNIST_HASHED,
        };
        RunConfig::from_toml(text).expect("shipped presets are valid")
    }

    /// Small synthetic blob task for quick runs and tests.
    pub fn synthetic(method: Method, epochs: usize) -> RunConfig {
        let base = mnist(method).rescaled(epochs);
        let mut c = base;
        c.net = "mlp:20-32-16-4".into();
        c.batch_size = 32;
        c.data = DataConfig {
            kind: DataKind::Synthetic,
            dir: None,
            normalization: None,
            synthetic: Some(SyntheticConfig {
                train: 512,
                test: 256,
                features: 20,
                classes: 4,
                margin: 3.0,
            }),
            augment: AugmentConfig::default(),
            train_limit: None,
            test_limit: None,
        };
        if let Some(r) = &mut c.realloc {
            r.prune_target = 20;
            r.period_schedule = EpochSchedule::constant(epochs, 4);
        }
        if let Some(s) = &mut c.set {
            s.prune_count = 20;
            s.period_schedule = EpochSchedule::constant(epochs, 4);
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::presets::*;
    use super::*;

    #[test]
    fn presets_load_and_validate() {
        for m in Method::ALL {
            let c = mnist(m);
            assert_eq!(c.method, m);
            c.validate().unwrap();
        }
    }

    #[test]
    fn mnist_preset_values() {
        let c = mnist(Method::DynamicSparse);
        assert_eq!((c.epochs, c.batch_size), (100, 100));
        assert_eq!(*c.lr_schedule.at(30), 0.02);
        assert_eq!(*c.lr_schedule.at(60), 0.04);
        assert_eq!(c.optimizer.momentum, 0.9);
        assert_eq!(c.optimizer.l1, 0.0001);
        let r = c.realloc.unwrap();
        assert_eq!((r.prune_target, r.tolerance, r.initial_threshold), (600, 0.1, 0.001));
        assert_eq!(*r.period_schedule.at(1), 100);
        assert_eq!(*r.period_schedule.at(100), 800);
        let d = mnist(Method::Deepr).deepr.unwrap();
        assert_eq!(d.alpha, 1e-4);
        assert_eq!(*d.temperature_schedule.at(80), 1e-6);
    }

    #[test]
    fn static_runs_twice_as_long() {
        let c = mnist(Method::StaticSparse);
        assert_eq!(c.total_epochs(), 200);
        assert_eq!(c.lr_at(50), 0.1);
        assert_eq!(c.lr_at(51), 0.02);
        let c = mnist(Method::CompressedSparse);
        assert_eq!(c.total_epochs(), 140);
        assert_eq!(c.lr_at(101), 0.02);
        assert_eq!(c.lr_at(140), 0.0008);
    }

    #[test]
    fn unknown_field_rejected() {
        let mut t = MNIST_STATIC.to_string();
        t.push_str("\nbogus = 1\n");
        assert!(RunConfig::from_toml(&t).is_err());
    }

    #[test]
    fn extra_section_rejected() {
        let mut c = mnist(Method::StaticSparse);
        c.realloc = mnist(Method::DynamicSparse).realloc;
        assert!(c.validate().is_err());
        let c2 = c.with_method(Method::StaticSparse, None);
        c2.validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let c = mnist(Method::Set);
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn synthetic_presets_validate() {
        for m in Method::ALL {
            synthetic(m, 5).validate().unwrap();
        }
    }
}
