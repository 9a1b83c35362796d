//! Little-endian checkpoint container.
//!
//! Layout: magic `VGAN`, version u32, config hash u64, tensor table, two
//! optimizer states, RNG state, data-stream position, counters, CRC32 of
//! everything before it.

use std::path::Path;

use diffcore::{DType, Module, Real, Tensor};
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use super::{Adam, Trainer};
use crate::error::{io_err, Result, VganError};

pub const MAGIC: &[u8; 4] = b"VGAN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimState<T> {
    pub t: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointState<T> {
    pub config_hash: u64,
    /// Generator parameters prefixed `g.`, discriminator parameters `d.`.
    pub tensors: Vec<(String, Tensor<T>)>,
    pub g_opt: OptimState<T>,
    pub d_opt: OptimState<T>,
    pub rng: RngState,
    pub data_epoch: u64,
    pub data_position: u64,
    pub step: u64,
    pub images_seen: u64,
}

fn put_tensor<T: Real>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(T::DTYPE.code());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &e in t.shape() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    T::to_le_bytes_vec(t.data(), out);
}

fn put_opt<T: Real>(out: &mut Vec<u8>, o: &OptimState<T>) {
    out.extend_from_slice(&o.t.to_le_bytes());
    out.extend_from_slice(&(o.m.len() as u32).to_le_bytes());
    for (i, (m, v)) in o.m.iter().zip(&o.v).enumerate() {
        put_tensor(out, &format!("m{i}"), m);
        put_tensor(out, &format!("v{i}"), v);
    }
}

pub fn encode<T: Real>(s: &CheckpointState<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&s.config_hash.to_le_bytes());
    out.extend_from_slice(&(s.tensors.len() as u32).to_le_bytes());
    for (name, t) in &s.tensors {
        put_tensor(&mut out, name, t);
    }
    put_opt(&mut out, &s.g_opt);
    put_opt(&mut out, &s.d_opt);
    out.extend_from_slice(&s.rng.seed);
    out.extend_from_slice(&s.rng.stream.to_le_bytes());
    out.extend_from_slice(&s.rng.word_pos.to_le_bytes());
    for v in [s.data_epoch, s.data_position, s.step, s.images_seen] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(VganError::Truncated(what));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn tensor<T: Real>(&mut self) -> Result<(String, Tensor<T>)> {
        let len = self.u32("tensor name length")? as usize;
        let name = String::from_utf8(self.take(len, "tensor name")?.to_vec())
            .map_err(|_| VganError::Checkpoint("tensor name is not UTF-8".into()))?;
        let code = self.take(1, "dtype")?[0];
        let dtype = DType::from_code(code).ok_or_else(|| VganError::Checkpoint(format!("unknown dtype code {code}")))?;
        if dtype != T::DTYPE {
            return Err(VganError::Checkpoint(format!("tensor {name} stored as {dtype:?}, expected {:?}", T::DTYPE)));
        }
        let rank = self.u32("rank")? as usize;
        if rank > 8 {
            return Err(VganError::Checkpoint(format!("tensor {name} has rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64("extent")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &e| a.checked_mul(e))
            .and_then(|n| n.checked_mul(dtype.size_of()))
            .ok_or_else(|| VganError::Checkpoint(format!("tensor {name} is too large")))?;
        let values = T::from_le_bytes_slice(self.take(n, "tensor values")?);
        let t = Tensor::new(shape, values).map_err(|e| VganError::Checkpoint(e.to_string()))?;
        Ok((name, t))
    }

    fn opt<T: Real>(&mut self) -> Result<OptimState<T>> {
        let t = self.u64("optimizer step")?;
        let n = self.u32("optimizer slots")? as usize;
        let mut m = Vec::new();
        let mut v = Vec::new();
        for _ in 0..n {
            m.push(self.tensor()?.1);
            v.push(self.tensor()?.1);
        }
        Ok(OptimState { t, m, v })
    }
}

fn parse<T: Real>(bytes: &[u8]) -> Result<CheckpointState<T>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(VganError::BadMagic);
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(VganError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let config_hash = r.u64("config hash")?;
    let n = r.u32("tensor count")? as usize;
    let mut tensors = Vec::new();
    for _ in 0..n {
        tensors.push(r.tensor()?);
    }
    let g_opt = r.opt()?;
    let d_opt = r.opt()?;
    let seed: [u8; 32] = r.take(32, "rng seed")?.try_into().expect("32 bytes");
    let stream = r.u64("rng stream")?;
    let word_pos = u128::from_le_bytes(r.take(16, "rng position")?.try_into().expect("16 bytes"));
    let data_epoch = r.u64("data epoch")?;
    let data_position = r.u64("data position")?;
    let step = r.u64("step")?;
    let images_seen = r.u64("images seen")?;
    let body = r.pos;
    let stored = r.u32("checksum")?;
    let computed = crc32fast::hash(&bytes[..body]);
    if stored != computed {
        return Err(VganError::CrcMismatch { stored, computed });
    }
    if r.pos != bytes.len() {
        return Err(VganError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(CheckpointState {
        config_hash,
        tensors,
        g_opt,
        d_opt,
        rng: RngState { seed, stream, word_pos },
        data_epoch,
        data_position,
        step,
        images_seen,
    })
}

/// Decodes a checkpoint. Corruption that derails parsing is reported as a
/// checksum mismatch when the trailing CRC disagrees with the content.
pub fn decode<T: Real>(bytes: &[u8], expected_hash: Option<u64>) -> Result<CheckpointState<T>> {
    let state = match parse(bytes) {
        Ok(s) => s,
        Err(e @ (VganError::BadMagic | VganError::VersionMismatch { .. } | VganError::CrcMismatch { .. })) => return Err(e),
        Err(e) => {
            if bytes.len() >= 8 {
                let (body, tail) = bytes.split_at(bytes.len() - 4);
                let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
                let computed = crc32fast::hash(body);
                if stored != computed && !matches!(e, VganError::Truncated(_)) {
                    return Err(VganError::CrcMismatch { stored, computed });
                }
            }
            return Err(e);
        }
    };
    if let Some(expected) = expected_hash {
        if state.config_hash != expected {
            return Err(VganError::HashMismatch {
                found: state.config_hash,
                expected,
            });
        }
    }
    Ok(state)
}

pub fn save_checkpoint<T: Real>(state: &CheckpointState<T>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode(state)).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn load_checkpoint<T: Real>(path: &Path, expected_hash: Option<u64>) -> Result<CheckpointState<T>> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode(&bytes, expected_hash)
}

fn load_params<T: Real, M: Module<T>>(module: &mut M, prefix: &str, tensors: &[(String, Tensor<T>)]) -> Result<()> {
    let mut it = tensors.iter().filter(|(n, _)| n.starts_with(prefix));
    let mut err = None;
    module.visit_mut(prefix.trim_end_matches('.'), &mut |name, p| {
        if err.is_some() {
            return;
        }
        match it.next() {
            Some((n, t)) if n == name && t.shape() == p.shape() => p.set(t.clone()),
            Some((n, t)) => err = Some(format!("expected {name} {:?}, found {n} {:?}", p.shape(), t.shape())),
            None => err = Some(format!("missing tensor {name}")),
        }
    });
    if err.is_none() && it.next().is_some() {
        err = Some(format!("unexpected extra tensors under {prefix}"));
    }
    err.map_or(Ok(()), |e| Err(VganError::Checkpoint(e)))
}

fn restore_opt<T: Real>(opt: &mut Adam<T>, s: &OptimState<T>) -> Result<()> {
    let shapes_ok = s.m.len() == opt.m.len()
        && s.v.len() == opt.v.len()
        && s.m.iter().zip(&opt.m).all(|(a, b)| a.shape() == b.shape())
        && s.v.iter().zip(&opt.v).all(|(a, b)| a.shape() == b.shape());
    if !shapes_ok {
        return Err(VganError::Checkpoint("optimizer state does not match the model".into()));
    }
    opt.t = s.t;
    opt.m = s.m.clone();
    opt.v = s.v.clone();
    Ok(())
}

impl<T: Real> Trainer<T> {
    pub fn state(&self, data_epoch: u64, data_position: u64) -> CheckpointState<T> {
        let mut tensors = Vec::new();
        self.g.visit("g", &mut |n, p| tensors.push((n.to_string(), p.value().clone())));
        self.d.visit("d", &mut |n, p| tensors.push((n.to_string(), p.value().clone())));
        let opt = |o: &Adam<T>| OptimState {
            t: o.t,
            m: o.m.clone(),
            v: o.v.clone(),
        };
        CheckpointState {
            config_hash: self.config_hash,
            tensors,
            g_opt: opt(&self.g_opt),
            d_opt: opt(&self.d_opt),
            rng: RngState::capture(&self.rng),
            data_epoch,
            data_position,
            step: self.step,
            images_seen: self.images_seen,
        }
    }

    /// Loads weights, optimizer moments, counters and the RNG. Returns the
    /// stored data-stream position `(epoch, position)`.
    pub fn restore(&mut self, s: &CheckpointState<T>) -> Result<(u64, u64)> {
        if s.config_hash != self.config_hash {
            return Err(VganError::HashMismatch {
                found: s.config_hash,
                expected: self.config_hash,
            });
        }
        load_params(&mut self.g, "g.", &s.tensors)?;
        load_params(&mut self.d, "d.", &s.tensors)?;
        restore_opt(&mut self.g_opt, &s.g_opt)?;
        restore_opt(&mut self.d_opt, &s.d_opt)?;
        self.rng = s.rng.restore();
        self.step = s.step;
        self.images_seen = s.images_seen;
        Ok((s.data_epoch, s.data_position))
    }
}

/// Loads only the generator weights from a checkpoint state.
pub fn load_generator<T: Real>(g: &mut crate::generator::Generator<T>, s: &CheckpointState<T>) -> Result<()> {
    load_params(g, "g.", &s.tensors)
}
