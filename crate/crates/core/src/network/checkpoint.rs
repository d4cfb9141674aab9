//! Binary checkpoint format.
//!
//! ```text
//! "IRC1"                     4 ASCII bytes
//! u32 version = 1            little-endian, as is everything below
//! u32 tensor count
//! per tensor:
//!   u32 name length, UTF-8 name
//!   u32 rank, rank x u64 dims
//!   raw f32 data
//! ```
//!
//! The first tensor is named `arch:<tag>` and holds
//! `[channels, height, width, num_classes]`; the rest are the parameters in
//! network order.

use std::path::Path;

use super::{Architecture, Network, Param};
use crate::error::{CheckpointError, Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"IRC1";
pub const CHECKPOINT_VERSION: u32 = 1;

const ARCH_PREFIX: &str = "arch:";

fn write_tensor<T: Scalar>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_f32_bits().to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CheckpointError::Truncated(what.to_string()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn tensor<T: Scalar>(&mut self) -> Result<(String, Tensor<T>)> {
        let len = self.u32("name length")? as usize;
        let name = std::str::from_utf8(self.take(len, "tensor name")?)
            .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = self.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(self.u64("dims")? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| CheckpointError::Malformed(format!("dims of `{name}` overflow")))?;
        let bytes = count
            .checked_mul(4)
            .ok_or_else(|| CheckpointError::Malformed(format!("dims of `{name}` overflow")))?;
        let raw = self.take(bytes, &format!("data of `{name}`"))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| T::from_f64_lossy(f32::from_le_bytes(c.try_into().unwrap()) as f64))
            .collect();
        let t = Tensor::new(shape, data)
            .map_err(|e| CheckpointError::Malformed(format!("tensor `{name}`: {e}")))?;
        Ok((name, t))
    }
}

impl<T: Scalar> Network<T> {
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&((self.params.len() + 1) as u32).to_le_bytes());
        let [c, h, w] = self.input_shape;
        let meta = Tensor::<f32>::from_parts(
            vec![4],
            vec![c as f32, h as f32, w as f32, self.num_classes as f32],
        );
        write_tensor(&mut out, &format!("{ARCH_PREFIX}{}", self.arch), &meta);
        for p in &self.params {
            write_tensor(&mut out, &p.name, &p.value);
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
        if magic != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic(magic).into());
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(version).into());
        }
        let count = r.u32("tensor count")? as usize;
        if count == 0 {
            return Err(CheckpointError::Malformed("no tensors".into()).into());
        }
        let (name, meta) = r.tensor::<f64>()?;
        let tag = name
            .strip_prefix(ARCH_PREFIX)
            .ok_or_else(|| CheckpointError::Malformed(format!("first tensor `{name}` is not arch metadata")))?;
        let arch: Architecture = tag
            .parse()
            .map_err(|e: Error| CheckpointError::Malformed(e.to_string()))?;
        let m = meta.data();
        if m.len() != 4 {
            return Err(CheckpointError::Malformed("arch metadata must hold 4 values".into()).into());
        }
        let input = [m[0] as usize, m[1] as usize, m[2] as usize];
        let mut params = Vec::with_capacity(count - 1);
        for _ in 1..count {
            let (name, value) = r.tensor::<T>()?;
            params.push(Param { name, value });
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Malformed("trailing bytes".into()).into());
        }
        Network::from_params(arch, input, m[3] as usize, params)
            .map_err(|e| CheckpointError::Malformed(e.to_string()).into())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_checkpoint_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes)
    }
}
