//! Binary checkpoints of a training run.
//!
//! Layout (little-endian):
//!
//! ```text
//! "SPRSCKPT" u32 version
//! u32 tensors, each:
//!     u8 kind (0 dense, 1 masked, 2 hashed), u32 rank, u64 dims[rank]
//!     dense:  f64 values[N]
//!     masked: u8 mask[ceil(N/8)] (bit i = byte i/8, bit i%8), u64 M, f64 active values[M]
//!     hashed: u64 M, u64 slots[N], f64 shared values[M]
//! u32 rng streams, each: u8 stream, u8 key[32], u64 stream id, u128 word position
//! u8 has_realloc, [f64 H, u64 step]
//! u32 momentum buffers, each: u64 len, f64[len]
//! u32 batchnorm layers, each: u64 len, f64 mean[len], f64 var[len]
//! u32 sign tensors, each: u64 len, i8[len]
//! u64 len, JSON metadata
//! ```

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::baselines::{HashedTensor, Signs};
use crate::error::{Error, Result};
use crate::harness::config::RunConfig;
use crate::nn::BnState;
use crate::param::Param;
use crate::realloc::ReallocState;
use crate::rng::{RngState, Stream};
use crate::sparse::{Mask, MaskedTensor};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SPRSCKPT";
pub const VERSION: u32 = 1;

/// Run position and settings stored as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: RunConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub iteration: u64,
    pub since_realloc: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: Vec<Param>,
    pub rng: Vec<(Stream, RngState)>,
    pub realloc: Option<ReallocState>,
    pub momentum: Vec<Vec<f64>>,
    pub bn: BnState,
    pub signs: Vec<Signs>,
}

fn write_f64s(w: &mut Vec<u8>, v: &[f64]) {
    for &x in v {
        w.write_f64::<LE>(x).expect("vec write");
    }
}

fn write_vec(w: &mut Vec<u8>, v: &[f64]) {
    w.write_u64::<LE>(v.len() as u64).expect("vec write");
    write_f64s(w, v);
}

fn write_param(w: &mut Vec<u8>, p: &Param) {
    let kind = match p {
        Param::Dense(_) => 0u8,
        Param::Sparse(_) => 1,
        Param::Hashed(_) => 2,
    };
    w.push(kind);
    w.write_u32::<LE>(p.shape().len() as u32).expect("vec write");
    for &d in p.shape() {
        w.write_u64::<LE>(d as u64).expect("vec write");
    }
    match p {
        Param::Dense(t) => write_f64s(w, t.data()),
        Param::Sparse(t) => {
            w.extend_from_slice(&t.mask().to_bytes());
            w.write_u64::<LE>(t.active_count() as u64).expect("vec write");
            for &k in t.active_indices() {
                w.write_f64::<LE>(t.values()[k]).expect("vec write");
            }
        }
        Param::Hashed(h) => {
            w.write_u64::<LE>(h.unique_count() as u64).expect("vec write");
            for &s in h.slots() {
                w.write_u64::<LE>(s as u64).expect("vec write");
            }
            write_f64s(w, h.unique());
        }
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Vec::new();
        w.extend_from_slice(MAGIC);
        w.write_u32::<LE>(VERSION)?;
        w.write_u32::<LE>(self.params.len() as u32)?;
        for p in &self.params {
            write_param(&mut w, p);
        }
        w.write_u32::<LE>(self.rng.len() as u32)?;
        for (s, st) in &self.rng {
            let idx = Stream::ALL.iter().position(|x| x == s).expect("known stream");
            w.push(idx as u8);
            w.extend_from_slice(&st.key);
            w.write_u64::<LE>(st.stream)?;
            w.write_u128::<LE>(st.word_pos)?;
        }
        match self.realloc {
            Some(r) => {
                w.push(1);
                w.write_f64::<LE>(r.threshold)?;
                w.write_u64::<LE>(r.step)?;
            }
            None => w.push(0),
        }
        w.write_u32::<LE>(self.momentum.len() as u32)?;
        for v in &self.momentum {
            write_vec(&mut w, v);
        }
        w.write_u32::<LE>(self.bn.running_mean.len() as u32)?;
        for (m, v) in self.bn.running_mean.iter().zip(&self.bn.running_var) {
            w.write_u64::<LE>(m.len() as u64)?;
            write_f64s(&mut w, m);
            write_f64s(&mut w, v);
        }
        w.write_u32::<LE>(self.signs.len() as u32)?;
        for s in &self.signs {
            w.write_u64::<LE>(s.0.len() as u64)?;
            for &x in &s.0 {
                w.write_i8(x)?;
            }
        }
        let meta = serde_json::to_vec(&self.meta)?;
        w.write_u64::<LE>(meta.len() as u64)?;
        w.write_all(&meta)?;
        Ok(w)
    }

    pub fn from_bytes(path: &Path, bytes: &[u8]) -> Result<Self> {
        let trunc = |e: std::io::Error| Error::Truncated {
            path: path.to_path_buf(),
            detail: e.to_string(),
        };
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(trunc)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!("{}: not a checkpoint", path.display())));
        }
        let version = r.read_u32::<LE>().map_err(trunc)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut inner = || -> std::io::Result<std::result::Result<Checkpoint, Error>> {
            let mut params = Vec::new();
            for _ in 0..r_u32(&mut r)? {
                let kind = r.read_u8()?;
                let rank = r_u32(&mut r)? as usize;
                let mut shape = Vec::with_capacity(rank);
                for _ in 0..rank {
                    shape.push(r.read_u64::<LE>()? as usize);
                }
                let n: usize = shape.iter().product();
                let p = match kind {
                    0 => match Tensor::new(shape, read_f64s(&mut r, n)?) {
                        Ok(t) => Param::Dense(t),
                        Err(e) => return Ok(Err(e)),
                    },
                    1 => {
                        let mut mb = vec![0u8; n.div_ceil(8)];
                        r.read_exact(&mut mb)?;
                        let mask = match Mask::from_bytes(n, &mb) {
                            Ok(m) => m,
                            Err(e) => return Ok(Err(e)),
                        };
                        let m = r.read_u64::<LE>()? as usize;
                        if m != mask.count_ones() {
                            return Ok(Err(Error::Checkpoint(format!(
                                "active count {m} disagrees with mask popcount {}",
                                mask.count_ones()
                            ))));
                        }
                        let vals = read_f64s(&mut r, m)?;
                        let mut values = vec![0.0; n];
                        for (&k, v) in mask.ones().iter().zip(vals) {
                            values[k] = v;
                        }
                        match MaskedTensor::new(shape, values, mask) {
                            Ok(t) => Param::Sparse(t),
                            Err(e) => return Ok(Err(e)),
                        }
                    }
                    2 => {
                        let m = r.read_u64::<LE>()? as usize;
                        let mut slots = Vec::with_capacity(n);
                        for _ in 0..n {
                            slots.push(r.read_u64::<LE>()? as usize);
                        }
                        match HashedTensor::with_mapping(shape, slots, read_f64s(&mut r, m)?) {
                            Ok(h) => Param::Hashed(h),
                            Err(e) => return Ok(Err(e)),
                        }
                    }
                    k => return Ok(Err(Error::Checkpoint(format!("unknown tensor kind {k}")))),
                };
                params.push(p);
            }
            let mut rng = Vec::new();
            for _ in 0..r_u32(&mut r)? {
                let idx = r.read_u8()? as usize;
                let Some(&s) = Stream::ALL.get(idx) else {
                    return Ok(Err(Error::Checkpoint(format!("unknown stream {idx}"))));
                };
                let mut key = [0u8; 32];
                r.read_exact(&mut key)?;
                let stream = r.read_u64::<LE>()?;
                let word_pos = r.read_u128::<LE>()?;
                rng.push((s, RngState { key, stream, word_pos }));
            }
            let realloc = match r.read_u8()? {
                0 => None,
                _ => Some(ReallocState {
                    threshold: r.read_f64::<LE>()?,
                    step: r.read_u64::<LE>()?,
                }),
            };
            let mut momentum = Vec::new();
            for _ in 0..r_u32(&mut r)? {
                let n = r.read_u64::<LE>()? as usize;
                momentum.push(read_f64s(&mut r, n)?);
            }
            let mut bn = BnState {
                running_mean: Vec::new(),
                running_var: Vec::new(),
            };
            for _ in 0..r_u32(&mut r)? {
                let n = r.read_u64::<LE>()? as usize;
                bn.running_mean.push(read_f64s(&mut r, n)?);
                bn.running_var.push(read_f64s(&mut r, n)?);
            }
            let mut signs = Vec::new();
            for _ in 0..r_u32(&mut r)? {
                let n = r.read_u64::<LE>()? as usize;
                let mut s = vec![0i8; n];
                r.read_i8_into(&mut s)?;
                signs.push(Signs(s));
            }
            let n = r.read_u64::<LE>()? as usize;
            let mut meta = vec![0u8; n];
            r.read_exact(&mut meta)?;
            let meta: CheckpointMeta = match serde_json::from_slice(&meta) {
                Ok(m) => m,
                Err(e) => return Ok(Err(e.into())),
            };
            Ok(Ok(Checkpoint {
                meta,
                params,
                rng,
                realloc,
                momentum,
                bn,
                signs,
            }))
        };
        inner().map_err(trunc)?
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(d) = path.parent() {
            fs::create_dir_all(d)?;
        }
        crate::harness::metrics::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(path, &fs::read(path)?)
    }
}

fn r_u32(r: &mut Cursor<&[u8]>) -> std::io::Result<u32> {
    r.read_u32::<LE>()
}

fn read_f64s(r: &mut Cursor<&[u8]>, n: usize) -> std::io::Result<Vec<f64>> {
    let remaining = r.get_ref().len() as u64 - r.position();
    if (n as u64).saturating_mul(8) > remaining {
        return Err(std::io::Error::new(
            std::io::ErrorKind::UnexpectedEof,
            format!("{n} values do not fit in {remaining} remaining bytes"),
        ));
    }
    let mut v = vec![0.0; n];
    r.read_f64_into::<LE>(&mut v)?;
    Ok(v)
}

/// Dense parameter snapshot (used for ticket replays), reusing the tensor
/// record format.
pub fn save_tensors(path: &Path, tensors: &[Tensor]) -> Result<()> {
    let mut w = Vec::new();
    w.extend_from_slice(b"SPRSINIT");
    w.write_u32::<LE>(VERSION)?;
    w.write_u32::<LE>(tensors.len() as u32)?;
    for t in tensors {
        write_param(&mut w, &Param::Dense(t.clone()));
    }
    if let Some(d) = path.parent() {
        fs::create_dir_all(d)?;
    }
    crate::harness::metrics::write_atomic(path, &w)
}

pub fn load_tensors(path: &Path) -> Result<Vec<Tensor>> {
    let bytes = fs::read(path)?;
    let trunc = |e: std::io::Error| Error::Truncated {
        path: path.to_path_buf(),
        detail: e.to_string(),
    };
    let mut r = Cursor::new(bytes.as_slice());
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(trunc)?;
    if &magic != b"SPRSINIT" {
        return Err(Error::Checkpoint(format!("{}: not an init snapshot", path.display())));
    }
    let version = r.read_u32::<LE>().map_err(trunc)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r_u32(&mut r).map_err(trunc)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let kind = r.read_u8().map_err(trunc)?;
        if kind != 0 {
            return Err(Error::Checkpoint("init snapshot holds a non-dense record".into()));
        }
        let rank = r_u32(&mut r).map_err(trunc)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.read_u64::<LE>().map_err(trunc)? as usize);
        }
        let n = shape.iter().product();
        out.push(Tensor::new(shape, read_f64s(&mut r, n).map_err(trunc)?)?);
    }
    Ok(out)
}
