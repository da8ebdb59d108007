//! The training loop shared by every method.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::compress::{prune_global_magnitude, prune_per_layer_magnitude};
use crate::baselines::{build_thin_dense, deepr_tensor_step, init_hashed, set_step, Signs};
use crate::data::{self, augment_batch, epoch_batches, Dataset, Normalization, Split};
use crate::error::{Error, Result};
use crate::harness::checkpoint::{save_tensors, Checkpoint, CheckpointMeta};
use crate::harness::config::{DataConfig, DataKind, Method, RunConfig};
use crate::harness::metrics::{write_atomic, EpochRow, MetricLog, StepRow};
use crate::nn::layers::softmax_cross_entropy;
use crate::nn::{backward, forward, predict, BnState, GradMode, Mode, NetworkSpec, ParamRole};
use crate::optim::Sgd;
use crate::param::{init_params, total_free_params, InitGranularity, Param};
use crate::realloc::{realloc_step, Granularity, ReallocState};
use crate::rng::SeedStreams;
use crate::sizing::descriptive_length;
use crate::sparse::MaskedTensor;
use crate::tensor::Tensor;

/// Train and test splits.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub train: Dataset,
    pub test: Dataset,
}

/// Loads the data a config asks for. `dir` overrides the configured path.
pub fn load_data(cfg: &DataConfig, seed: u64, dir: Option<&Path>) -> Result<Datasets> {
    let dir: Option<PathBuf> = dir.map(Path::to_path_buf).or_else(|| cfg.dir.clone());
    let (train, test) = match cfg.kind {
        DataKind::Mnist => {
            let dir = match dir {
                Some(d) if d.join(data::MNIST_FILES[0]).is_file() => d,
                Some(d) if d.join("mnist").join(data::MNIST_FILES[0]).is_file() => d.join("mnist"),
                Some(d) => {
                    return Err(Error::Dataset(format!("no MNIST IDX files in {}", d.display())));
                }
                None => data::find_mnist_dir().ok_or_else(|| {
                    Error::Dataset("MNIST not found; pass --data-dir or set SPARSETRAIN_DATA_DIR".into())
                })?,
            };
            let norm = cfg.normalization.clone().unwrap_or_else(Normalization::mnist);
            data::load_mnist_dir(&dir, &norm)?
        }
        DataKind::Synthetic => {
            let s = cfg
                .synthetic
                .ok_or_else(|| Error::Config("synthetic data needs [data.synthetic]".into()))?;
            data::synthetic_split(s.train, s.test, s.features, s.classes, s.margin, seed)?
        }
        DataKind::Cifar => load_cifar(dir)?,
    };
    let train = match cfg.train_limit {
        Some(n) => train.truncated(n),
        None => train,
    };
    let test = match cfg.test_limit {
        Some(n) => test.truncated(n),
        None => test,
    };
    Ok(Datasets { train, test })
}

#[cfg(feature = "cifar")]
fn load_cifar(dir: Option<PathBuf>) -> Result<(Dataset, Dataset)> {
    let dir = dir
        .or_else(|| std::env::var("SPARSETRAIN_DATA_DIR").ok().map(|d| PathBuf::from(d).join("cifar")))
        .ok_or_else(|| Error::Dataset("CIFAR-10 needs --data-dir".into()))?;
    let train: Vec<PathBuf> = (1..=5).map(|i| dir.join(format!("data_batch_{i}.bin"))).collect();
    let refs: Vec<&Path> = train.iter().map(PathBuf::as_path).collect();
    let tr = data::cifar::load_cifar_batches(&refs, Split::Train)?;
    let te = data::cifar::load_cifar_batches(&[&dir.join("test_batch.bin")], Split::Test)?;
    Ok((tr, te))
}

#[cfg(not(feature = "cifar"))]
fn load_cifar(_dir: Option<PathBuf>) -> Result<(Dataset, Dataset)> {
    Err(Error::Config("built without the `cifar` feature".into()))
}

/// Classification accuracy of `params` on `ds`, evaluated in chunks.
pub fn evaluate(net: &NetworkSpec, params: &[Param], bn: &BnState, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Ok(0.0);
    }
    let classes = net.num_classes()?;
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(1000) {
        let (x, y) = ds.batch(chunk);
        let logits = predict(net, params, bn, &x)?;
        for (r, &label) in y.iter().enumerate() {
            let row = &logits.data()[r * classes..(r + 1) * classes];
            let mut best = 0;
            for c in 1..classes {
                if row[c] > row[best] {
                    best = c;
                }
            }
            correct += usize::from(best == label);
        }
    }
    Ok(correct as f64 / ds.len() as f64)
}

/// Final summary of a run, written as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: Method,
    pub net: String,
    pub seed: u64,
    pub sparsity: f64,
    pub epochs: usize,
    pub final_test_acc: f64,
    /// Trainable scalars: sparse nonzeros plus every dense tensor.
    pub param_count: usize,
    /// Dense positions of the sparse(-eligible) tensors.
    pub sparse_dense_count: usize,
    /// Trainable scalars in those tensors.
    pub sparse_active_count: usize,
    pub descriptive_length_bits: f64,
    pub tensor_names: Vec<String>,
    pub tensor_sparsity: Vec<f64>,
}

/// A training run in progress.
pub struct Trainer {
    pub cfg: RunConfig,
    pub net: NetworkSpec,
    pub params: Vec<Param>,
    pub bn: BnState,
    pub opt: Sgd,
    pub streams: SeedStreams,
    pub realloc: Option<ReallocState>,
    /// DeepR signs, one per entry of `tracked`.
    pub signs: Vec<Signs>,
    /// Completed epochs.
    pub epoch: usize,
    pub iteration: u64,
    pub since_realloc: usize,
    pub log: MetricLog,
    /// Values drawn by the initializer before masking.
    pub dense_init: Vec<Tensor>,
    /// Parameter indices reported per tensor (the sparse-eligible weights).
    pub tracked: Vec<usize>,
    pub compression_events: Vec<CompressionEvent>,
    out_dir: Option<PathBuf>,
}

/// One magnitude pruning event of a compressed run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionEvent {
    pub event: usize,
    pub epoch: usize,
    pub scheduled_sparsity: f64,
    /// Active entries over the tracked tensors after the event.
    pub active: usize,
    pub dense: usize,
}

fn penalized(net: &NetworkSpec) -> Vec<bool> {
    net.param_infos().iter().map(|i| i.role == ParamRole::Weight).collect()
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let base = NetworkSpec::by_name(&cfg.net)?;
        let mut streams = SeedStreams::new(cfg.seed);
        let (net, params, dense_init) = match cfg.method {
            Method::ThinDense => {
                let thin = build_thin_dense(&base, cfg.sparsity)?;
                let init = init_params(&thin.net, None, InitGranularity::Weight, &mut streams.init)?;
                (thin.net, init.params, init.dense_init)
            }
            Method::CompressedSparse => {
                let init = init_params(&base, None, InitGranularity::Weight, &mut streams.init)?;
                (base, init.params, init.dense_init)
            }
            Method::Hashed => {
                let hc = cfg.hashed.expect("validated");
                let params = init_hashed(&base, cfg.sparsity, &hc, &mut streams.init)?;
                let dense = params.iter().map(Param::to_dense).collect();
                (base, params, dense)
            }
            _ => {
                let gran = match cfg.realloc.as_ref().map(|r| r.granularity) {
                    Some(Granularity::Kernel3x3) => InitGranularity::Kernel3x3,
                    _ => InitGranularity::Weight,
                };
                let init = init_params(&base, Some(cfg.sparsity), gran, &mut streams.init)?;
                (base, init.params, init.dense_init)
            }
        };
        Self::with_params(cfg, net, params, dense_init, streams)
    }

    /// A run starting from given parameters (e.g. ticket replays).
    pub fn with_params(
        cfg: RunConfig,
        net: NetworkSpec,
        params: Vec<Param>,
        dense_init: Vec<Tensor>,
        mut streams: SeedStreams,
    ) -> Result<Self> {
        let infos = net.param_infos();
        if infos.len() != params.len() {
            return Err(Error::Shape("parameter list does not match the network".into()));
        }
        let mut opt = Sgd::new(cfg.optimizer, &params, penalized(&net));
        let tracked: Vec<usize> = infos
            .iter()
            .enumerate()
            .filter(|(_, i)| i.sparse && i.role == ParamRole::Weight)
            .map(|(k, _)| k)
            .collect();
        let mut signs = Vec::new();
        if cfg.method == Method::Deepr {
            for &k in &tracked {
                let t = params[k]
                    .as_sparse()
                    .ok_or_else(|| Error::Config("deepr needs sparse tensors".into()))?;
                signs.push(Signs::from_tensor(t, &mut streams.realloc));
                opt.set_frozen(k, true);
            }
        }
        let realloc = cfg.realloc.as_ref().map(ReallocState::new);
        let names = tracked.iter().map(|&k| infos[k].name.clone()).collect();
        Ok(Self {
            bn: BnState::new(&net),
            log: MetricLog::new(names),
            cfg,
            net,
            params,
            opt,
            streams,
            realloc,
            signs,
            epoch: 0,
            iteration: 0,
            since_realloc: 0,
            dense_init,
            tracked,
            compression_events: Vec::new(),
            out_dir: None,
        })
    }

    /// Writes metrics, checkpoints and the init snapshot under `dir`.
    pub fn set_out_dir(&mut self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_atomic(&dir.join("config.toml"), self.cfg.to_toml().as_bytes())?;
        save_tensors(&dir.join("init.bin"), &self.dense_init)?;
        self.out_dir = Some(dir.to_path_buf());
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.cfg.total_epochs()
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.total_epochs()
    }

    /// Sparse tensors among the tracked parameters.
    fn tracked_sparse_mut(&mut self) -> Vec<&mut MaskedTensor> {
        let tracked = &self.tracked;
        self.params
            .iter_mut()
            .enumerate()
            .filter(|(k, _)| tracked.contains(k))
            .filter_map(|(_, p)| p.as_sparse_mut())
            .collect()
    }

    /// Converts the tracked dense tensors to fully active masked tensors.
    fn sparsify_tracked(&mut self) {
        for &k in &self.tracked {
            if let Param::Dense(t) = &self.params[k] {
                self.params[k] = Param::Sparse(MaskedTensor::full(t.clone()));
            }
        }
        self.opt.resize_for(&self.params);
    }

    fn compression_event(&mut self, epoch: usize) -> Result<()> {
        if self.cfg.method != Method::CompressedSparse || epoch <= self.cfg.epochs {
            return Ok(());
        }
        let c = self.cfg.compression.clone().expect("validated");
        let Some(t) = c.event_at_epoch(epoch - self.cfg.epochs) else {
            return Ok(());
        };
        self.sparsify_tracked();
        let s = c.sparsity_at(t, self.cfg.sparsity);
        let mut ts = self.tracked_sparse_mut();
        if c.per_layer {
            prune_per_layer_magnitude(&mut ts, s)?;
        } else {
            prune_global_magnitude(&mut ts, s)?;
        }
        self.opt.reset_inactive(&self.params);
        let dense = self.tracked.iter().map(|&k| self.params[k].dense_len()).sum();
        let active = self.tracked.iter().map(|&k| self.params[k].free_count()).sum();
        self.compression_events.push(CompressionEvent {
            event: t,
            epoch,
            scheduled_sparsity: s,
            active,
            dense,
        });
        log::info!("compression event {t}: sparsity {s:.4}");
        Ok(())
    }

    fn after_step(&mut self, epoch: usize, lr: f64, grads: &[Tensor]) -> Result<()> {
        match self.cfg.method {
            Method::DynamicSparse => {
                let rc = self.cfg.realloc.clone().expect("validated");
                if !rc.active_in(epoch) {
                    return Ok(());
                }
                self.since_realloc += 1;
                if self.since_realloc < *rc.period_schedule.at(epoch) {
                    return Ok(());
                }
                self.since_realloc = 0;
                let mut state = self.realloc.expect("dynamic run has state");
                let mut rng = self.streams.realloc.clone();
                let report = {
                    let mut ts = self.tracked_sparse_mut();
                    realloc_step(&mut ts, &mut state, &rc, &mut rng)?
                };
                self.streams.realloc = rng;
                self.realloc = Some(state);
                self.opt.reset_inactive(&self.params);
                self.log.steps.push(StepRow {
                    epoch,
                    iteration: self.iteration,
                    report,
                });
            }
            Method::Set => {
                let sc = self.cfg.set.clone().expect("validated");
                self.since_realloc += 1;
                if self.since_realloc < *sc.period_schedule.at(epoch) {
                    return Ok(());
                }
                self.since_realloc = 0;
                let mut rng = self.streams.realloc.clone();
                {
                    let mut ts = self.tracked_sparse_mut();
                    set_step(&mut ts, sc.prune_count, &mut rng)?;
                }
                self.streams.realloc = rng;
                self.opt.reset_inactive(&self.params);
            }
            Method::Deepr => {
                let dc = self.cfg.deepr.clone().expect("validated");
                let temp = *dc.temperature_schedule.at(epoch);
                for (j, &k) in self.tracked.iter().enumerate() {
                    let Param::Sparse(t) = &mut self.params[k] else {
                        continue;
                    };
                    deepr_tensor_step(
                        t,
                        &mut self.signs[j],
                        grads[k].data(),
                        lr,
                        dc.alpha,
                        temp,
                        &mut self.streams.noise,
                        &mut self.streams.realloc,
                    )?;
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Trains one epoch and evaluates on `data.test`.
    pub fn run_epoch(&mut self, data: &Datasets) -> Result<EpochRow> {
        let epoch = self.epoch + 1;
        self.compression_event(epoch)?;
        let lr = self.cfg.lr_at(epoch);
        let classes = self.net.num_classes()?;
        let start = Instant::now();
        let batches = epoch_batches(data.train.len(), self.cfg.batch_size, &mut self.streams.shuffle);
        let mut loss_sum = 0.0;
        for idx in &batches {
            let (mut x, y) = data.train.batch(idx);
            augment_batch(&mut x, &self.cfg.data.augment, &mut self.streams.shuffle);
            let (logits, cache) = forward(&self.net, &self.params, &mut self.bn, &x, Mode::Train)?;
            let (loss, grad) = softmax_cross_entropy(logits.data(), &y, classes);
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    iteration: self.iteration,
                    loss,
                });
            }
            loss_sum += loss * idx.len() as f64;
            let grad = Tensor::new(logits.shape().to_vec(), grad)?;
            let grads = backward(&self.net, &self.params, &cache, &grad, GradMode::ActiveOnly)?;
            self.opt.step(&mut self.params, &grads, lr)?;
            self.iteration += 1;
            self.after_step(epoch, lr, &grads)?;
        }
        let wall_seconds = start.elapsed().as_secs_f64();
        let test_acc = evaluate(&self.net, &self.params, &self.bn, &data.test)?;
        self.epoch = epoch;
        let (global_sparsity, tensor_sparsity) = self.tracked_sparsity();
        let row = EpochRow {
            epoch,
            method: self.cfg.method.name().to_string(),
            seed: self.cfg.seed,
            train_loss: loss_sum / data.train.len().max(1) as f64,
            test_acc,
            wall_seconds,
            lr,
            global_sparsity,
            active_count: total_free_params(&self.params),
            threshold: self.realloc.map(|r| r.threshold),
            tensor_sparsity,
        };
        log::info!(
            "{} seed {} epoch {epoch}/{}: loss {:.4} acc {:.4} ({:.1}s)",
            row.method,
            row.seed,
            self.total_epochs(),
            row.train_loss,
            row.test_acc,
            row.wall_seconds
        );
        self.log.epochs.push(row.clone());
        if let Some(dir) = &self.out_dir {
            self.log.flush(dir)?;
        }
        Ok(row)
    }

    /// Global and per-tensor sparsity of the tracked tensors.
    pub fn tracked_sparsity(&self) -> (f64, Vec<f64>) {
        let mut dense = 0usize;
        let mut free = 0usize;
        let mut per = Vec::with_capacity(self.tracked.len());
        for &k in &self.tracked {
            let p = &self.params[k];
            dense += p.dense_len();
            free += p.free_count();
            per.push(1.0 - p.free_count() as f64 / p.dense_len() as f64);
        }
        let global = if dense == 0 { 0.0 } else { 1.0 - free as f64 / dense as f64 };
        (global, per)
    }

    /// Runs the remaining epochs.
    pub fn run(&mut self, data: &Datasets) -> Result<()> {
        while !self.is_done() {
            self.run_epoch(data)?;
        }
        if let Some(dir) = self.out_dir.clone() {
            self.checkpoint().save(&dir.join("final.ckpt"))?;
            let s = serde_json::to_vec_pretty(&self.summary())?;
            write_atomic(&dir.join("summary.json"), &s)?;
        }
        Ok(())
    }

    pub fn summary(&self) -> RunSummary {
        let sparse_dense_count: usize = self.tracked.iter().map(|&k| self.params[k].dense_len()).sum();
        let sparse_active_count: usize = self.tracked.iter().map(|&k| self.params[k].free_count()).sum();
        let (global, per) = self.tracked_sparsity();
        RunSummary {
            method: self.cfg.method,
            net: self.net.name.clone(),
            seed: self.cfg.seed,
            sparsity: global,
            epochs: self.epoch,
            final_test_acc: self.log.final_accuracy(),
            param_count: total_free_params(&self.params),
            sparse_dense_count,
            sparse_active_count,
            descriptive_length_bits: descriptive_length(sparse_dense_count, global).descriptive_length_bits,
            tensor_names: self.log.tensor_names.clone(),
            tensor_sparsity: per,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            meta: CheckpointMeta {
                config: self.cfg.clone(),
                epoch: self.epoch,
                iteration: self.iteration,
                since_realloc: self.since_realloc,
            },
            params: self.params.clone(),
            rng: self.streams.states(),
            realloc: self.realloc,
            momentum: self.opt.velocity().to_vec(),
            bn: self.bn.clone(),
            signs: self.signs.clone(),
        }
    }

    /// Continues a run from a checkpoint. The metric log restarts empty.
    pub fn resume(ck: &Checkpoint, dense_init: Vec<Tensor>) -> Result<Self> {
        let cfg = ck.meta.config.clone();
        let net = match cfg.method {
            Method::ThinDense => build_thin_dense(&NetworkSpec::by_name(&cfg.net)?, cfg.sparsity)?.net,
            _ => NetworkSpec::by_name(&cfg.net)?,
        };
        let streams = SeedStreams::restore(&ck.rng, cfg.seed);
        let mut t = Self::with_params(cfg, net, ck.params.clone(), dense_init, streams)?;
        // replace the signs drawn by with_params and the fresh optimizer state
        t.streams = SeedStreams::restore(&ck.rng, t.cfg.seed);
        t.signs = ck.signs.clone();
        t.opt.resize_for(&t.params);
        t.opt.set_velocity(ck.momentum.clone())?;
        t.bn = ck.bn.clone();
        t.realloc = ck.realloc;
        t.epoch = ck.meta.epoch;
        t.iteration = ck.meta.iteration;
        t.since_realloc = ck.meta.since_realloc;
        Ok(t)
    }
}

/// Runs `cfg` to completion.
pub fn train(cfg: RunConfig, data: &Datasets, out_dir: Option<&Path>) -> Result<Trainer> {
    let mut t = Trainer::new(cfg)?;
    if let Some(d) = out_dir {
        t.set_out_dir(d)?;
    }
    t.run(data)?;
    Ok(t)
}

/// Pruning phase of a compressed run whose dense pretraining is finished:
/// every scheduled event followed by fine-tuning. Returns the events.
pub fn compress_iterative(run: &mut Trainer, data: &Datasets) -> Result<Vec<CompressionEvent>> {
    if run.cfg.method != Method::CompressedSparse {
        return Err(Error::Config("compress_iterative needs a compressed_sparse run".into()));
    }
    if run.epoch < run.cfg.epochs {
        return Err(Error::InvalidArgument(format!(
            "dense pretraining incomplete: {} of {} epochs",
            run.epoch, run.cfg.epochs
        )));
    }
    let first = run.compression_events.len();
    run.run(data)?;
    Ok(run.compression_events[first..].to_vec())
}
