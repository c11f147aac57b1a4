//! Binary checkpoint: magic `TVQE`, u32 version, u32-length-prefixed JSON
//! config, tensor table, optional Adam block, trailing FNV-1a 64 checksum
//! over every preceding byte. All integers little-endian.
//!
//! Tensor table: u32 count, then per tensor u16 path length, path bytes,
//! u8 dtype tag, u8 rank, u64 extents, payload.

use std::collections::BTreeSet;
use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;

use crate::error::{Error, Result};
use crate::model::{param_shapes, ModelConfig};
use crate::params::ModelParams;
use crate::tensor::{DType, Real, Tensor};
use crate::train::OptimState;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TVQE";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub config: ModelConfig,
    pub params: ModelParams<T>,
    pub optim: Option<OptimState<T>>,
}

pub fn fnv64(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

fn write_table<T: Real>(out: &mut Vec<u8>, params: &ModelParams<T>) -> Result<()> {
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (path, t) in params.iter() {
        let pb = path.as_bytes();
        let len = u16::try_from(pb.len()).map_err(|_| Error::Checkpoint(format!("path too long: {path}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(pb);
        out.push(T::DTYPE.tag());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(out);
        }
    }
    Ok(())
}

pub fn encode_checkpoint<T: Real>(config: &ModelConfig, params: &ModelParams<T>, optim: Option<&OptimState<T>>) -> Result<Vec<u8>> {
    if config.dtype != T::DTYPE {
        return Err(Error::Checkpoint(format!(
            "config dtype {:?} does not match parameter dtype {:?}",
            config.dtype,
            T::DTYPE
        )));
    }
    let mut out = Vec::with_capacity(64 + params.num_elements() * T::DTYPE.size());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(config).map_err(|e| Error::Checkpoint(format!("config encode: {e}")))?;
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    write_table(&mut out, params)?;
    match optim {
        None => out.push(0),
        Some(o) => {
            out.push(1);
            out.extend_from_slice(&o.step.to_le_bytes());
            for v in [o.lr, o.beta1, o.beta2, o.eps] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            write_table(&mut out, &o.m)?;
            write_table(&mut out, &o.v)?;
        }
    }
    let sum = fnv64(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
}

/// Validates magic, checksum and version; returns the config and a reader positioned after it.
fn open_payload(bytes: &[u8]) -> Result<(ModelConfig, Reader<'_>)> {
    if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    let actual = fnv64(body);
    if stored != actual {
        return Err(Error::Checkpoint(format!(
            "checksum mismatch: stored {stored:016x}, computed {actual:016x}"
        )));
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let n = r.u32()? as usize;
    let config: ModelConfig =
        serde_json::from_slice(r.take(n)?).map_err(|e| Error::Checkpoint(format!("config decode: {e}")))?;
    Ok((config, r))
}

fn read_table<T: Real>(r: &mut Reader<'_>, config: &ModelConfig, what: &str) -> Result<ModelParams<T>> {
    let expected: std::collections::BTreeMap<String, Vec<usize>> = param_shapes(config).into_iter().collect();
    let count = r.u32()? as usize;
    let mut params = ModelParams::new();
    let mut seen = BTreeSet::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let path = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint(format!("{what}: non-UTF-8 parameter path")))?
            .to_string();
        let tag = r.u8()?;
        let dtype = DType::from_tag(tag).ok_or_else(|| Error::Checkpoint(format!("{what}: {path}: unknown dtype tag {tag}")))?;
        if dtype != T::DTYPE {
            return Err(Error::Checkpoint(format!("{what}: {path}: dtype {dtype:?}, expected {:?}", T::DTYPE)));
        }
        let rank = r.u8()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        match expected.get(&path) {
            None => return Err(Error::Checkpoint(format!("{what}: unknown parameter path {path}"))),
            Some(s) if *s != shape => {
                return Err(Error::Checkpoint(format!("{what}: {path}: shape {shape:?}, config expects {s:?}")))
            }
            Some(_) => {}
        }
        let numel: usize = shape.iter().product();
        let size = dtype.size();
        let raw = r.take(numel * size)?;
        let data = raw.chunks_exact(size).map(T::read_le).collect();
        if !seen.insert(path.clone()) {
            return Err(Error::Checkpoint(format!("{what}: duplicate parameter path {path}")));
        }
        params.insert(path, Tensor::new(&shape, data)?);
    }
    if let Some(missing) = expected.keys().find(|k| !seen.contains(*k)) {
        return Err(Error::Checkpoint(format!("{what}: missing parameter {missing}")));
    }
    Ok(params)
}

pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let (config, mut r) = open_payload(bytes)?;
    config.validate()?;
    if config.dtype != T::DTYPE {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {:?} parameters, requested {:?}",
            config.dtype,
            T::DTYPE
        )));
    }
    let params = read_table(&mut r, &config, "params")?;
    let optim = match r.u8()? {
        0 => None,
        1 => {
            let step = r.u64()?;
            let (lr, beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
            let m = read_table(&mut r, &config, "adam.m")?;
            let v = read_table(&mut r, &config, "adam.v")?;
            Some(OptimState { step, lr, beta1, beta2, eps, m, v })
        }
        f => return Err(Error::Checkpoint(format!("bad optimizer flag {f}"))),
    };
    if r.pos != r.buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", r.buf.len() - r.pos)));
    }
    Ok(Checkpoint { config, params, optim })
}

/// Writes to a sibling temporary file and renames it into place.
pub fn save_checkpoint<T: Real>(
    path: impl AsRef<Path>,
    config: &ModelConfig,
    params: &ModelParams<T>,
    optim: Option<&OptimState<T>>,
) -> Result<u64> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(config, params, optim)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(fnv64(&bytes[..bytes.len() - 8]))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    decode_checkpoint(&read_file(path.as_ref())?)
}

/// Loads and rejects checkpoints whose config differs from `expected`.
pub fn load_checkpoint_for<T: Real>(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<Checkpoint<T>> {
    let ck = load_checkpoint::<T>(path)?;
    if ck.config != *expected {
        return Err(Error::Checkpoint(format!(
            "config mismatch: checkpoint has {}, run expects {}",
            serde_json::to_string(&ck.config).unwrap_or_default(),
            serde_json::to_string(expected).unwrap_or_default()
        )));
    }
    Ok(ck)
}

/// Config of a checkpoint after integrity checks, without decoding tensors.
pub fn checkpoint_config(path: impl AsRef<Path>) -> Result<ModelConfig> {
    Ok(open_payload(&read_file(path.as_ref())?)?.0)
}
