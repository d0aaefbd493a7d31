//! Binary container: magic, format version, JSON config block, then every
//! tensor as `(name, shape, little-endian f64 payload)`; values first, then
//! momentum buffers under a `momentum/` prefix.

use std::path::Path;

use super::{ModelState, NetConfig, Param};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"LNDVCKPT";
const VERSION: u32 = 1;
const MOMENTUM_PREFIX: &str = "momentum/";

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, shape.len() as u32);
    for &d in shape {
        put_u64(out, d as u64);
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn write_checkpoint(state: &ModelState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    let cfg = serde_json::to_vec(state.config()).expect("config serializes");
    put_u64(&mut out, cfg.len() as u64);
    out.extend_from_slice(&cfg);
    put_u32(&mut out, 2 * state.params.len() as u32);
    for p in &state.params {
        put_tensor(&mut out, &p.name, &p.shape, &p.value);
    }
    for p in &state.params {
        put_tensor(&mut out, &format!("{MOMENTUM_PREFIX}{}", p.name), &p.shape, &p.momentum);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated: need {n} bytes at offset {}, file has {}", self.pos, self.bytes.len()))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflows usize".into()))
    }

    fn tensor(&mut self) -> Result<(String, Vec<usize>, Vec<f64>)> {
        let n = self.u32()? as usize;
        let name = String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let ndim = self.u32()? as usize;
        let shape = (0..ndim).map(|_| self.len()).collect::<Result<Vec<_>>>()?;
        let count = shape
            .iter()
            .try_fold(1usize, |a, d| a.checked_mul(*d))
            .and_then(|c| c.checked_mul(8))
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name} is impossibly large")))?;
        let data = self.take(count)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        Ok((name, shape, data))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<ModelState> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}, expected {VERSION}")));
    }
    let n = r.len()?;
    let config: NetConfig = serde_json::from_slice(r.take(n)?).map_err(|e| Error::Checkpoint(format!("config block: {e}")))?;
    let count = r.u32()? as usize;
    if count % 2 != 0 {
        return Err(Error::Checkpoint(format!("odd tensor count {count}")));
    }
    let tensors = (0..count).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let (values, moms) = tensors.split_at(count / 2);
    let mut params = Vec::with_capacity(values.len());
    for ((name, shape, value), (mname, mshape, momentum)) in values.iter().zip(moms) {
        if mname.strip_prefix(MOMENTUM_PREFIX) != Some(name.as_str()) || mshape != shape {
            return Err(Error::ShapeMismatch(format!("momentum tensor {mname} does not pair with {name}")));
        }
        params.push(Param { name: name.clone(), shape: shape.clone(), value: value.clone(), momentum: momentum.clone() });
    }
    ModelState::from_params(config, params)
}

pub fn save_checkpoint(state: &ModelState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_checkpoint(state)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelState> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}
