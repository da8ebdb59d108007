//! Ticket replays: the final mask of a finished run retrained with frozen
//! structure, from the original initial values or from fresh ones.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::checkpoint::{load_tensors, Checkpoint};
use crate::harness::config::{Method, RunConfig};
use crate::harness::train::{Datasets, Trainer};
use crate::nn::NetworkSpec;
use crate::param::{init_params, InitGranularity, Param};
use crate::rng::{splitmix64, stream_rng, SeedStreams, Stream};
use crate::sparse::MaskedTensor;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitSource {
    /// The values the source run started from.
    OriginalSnapshot,
    /// New draws from the same initializer.
    FreshRandom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TicketSpec {
    pub init: InitSource,
    /// Training length relative to the source run.
    pub epoch_multiplier: usize,
}

impl Default for TicketSpec {
    fn default() -> Self {
        Self {
            init: InitSource::OriginalSnapshot,
            epoch_multiplier: 2,
        }
    }
}

/// Seed for fresh initial values, distinct from the source run's.
pub fn fresh_init_seed(seed: u64) -> u64 {
    splitmix64(seed ^ 0x7C4E_7E11)
}

/// A static-sparse trainer on the masks of `final_params`, ready to run.
pub fn ticket_trainer(
    source_cfg: &RunConfig,
    final_params: &[Param],
    dense_init: &[Tensor],
    spec: &TicketSpec,
) -> Result<Trainer> {
    if spec.epoch_multiplier == 0 {
        return Err(Error::Config("ticket epoch multiplier must be >= 1".into()));
    }
    let mut cfg = source_cfg.with_method(Method::StaticSparse, None);
    cfg.static_epoch_multiplier = spec.epoch_multiplier;
    let net = NetworkSpec::by_name(&cfg.net)?;
    let values: Vec<Tensor> = match spec.init {
        InitSource::OriginalSnapshot => dense_init.to_vec(),
        InitSource::FreshRandom => {
            let mut rng = stream_rng(fresh_init_seed(cfg.seed), Stream::Init);
            init_params(&net, None, InitGranularity::Weight, &mut rng)?.dense_init
        }
    };
    if values.len() != final_params.len() {
        return Err(Error::Shape("init snapshot does not match the source parameters".into()));
    }
    let mut params = Vec::with_capacity(final_params.len());
    for (p, v) in final_params.iter().zip(&values) {
        params.push(match p {
            Param::Sparse(t) => Param::Sparse(MaskedTensor::new(
                t.shape().to_vec(),
                v.data().to_vec(),
                t.mask().clone(),
            )?),
            Param::Dense(_) => Param::Dense(v.clone()),
            Param::Hashed(_) => return Err(Error::Config("tickets need sparse or dense sources".into())),
        });
    }
    Trainer::with_params(cfg.clone(), net, params, values, SeedStreams::new(cfg.seed))
}

/// Runs a ticket on an in-memory source run.
pub fn run_ticket(source: &Trainer, spec: &TicketSpec, data: &Datasets, out_dir: Option<&Path>) -> Result<Trainer> {
    let mut t = ticket_trainer(&source.cfg, &source.params, &source.dense_init, spec)?;
    if let Some(d) = out_dir {
        t.set_out_dir(d)?;
    }
    t.run(data)?;
    Ok(t)
}

/// Runs a ticket on a finished run directory (`final.ckpt` and `init.bin`).
pub fn run_ticket_from_dir(source_dir: &Path, spec: &TicketSpec, data: &Datasets, out_dir: Option<&Path>) -> Result<Trainer> {
    let ck = Checkpoint::load(&source_dir.join("final.ckpt"))?;
    let init = load_tensors(&source_dir.join("init.bin"))?;
    let mut t = ticket_trainer(&ck.meta.config, &ck.params, &init, spec)?;
    if let Some(d) = out_dir {
        t.set_out_dir(d)?;
    }
    t.run(data)?;
    Ok(t)
}
