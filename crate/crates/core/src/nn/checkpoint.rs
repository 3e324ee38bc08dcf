//! Flat named-tensor container.
//!
//! Layout (little endian): magic `MGCKPT\0\0`, `u32` version, `u32` tensor
//! count, then per tensor: `u32` name length, UTF-8 name, `u32` rank,
//! `u64` extents, row-major `f64` values.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::{Real, Tensor};

const MAGIC: &[u8; 8] = b"MGCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl NamedTensor {
    pub fn from_tensor<F: Real>(name: &str, t: &Tensor<F>) -> Self {
        Self {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            values: t.data().iter().map(|v| v.as_f64()).collect(),
        }
    }

    pub fn to_tensor<F: Real>(&self) -> Result<Tensor<F>> {
        Tensor::from_vec(
            &self.shape,
            self.values.iter().map(|&v| F::lit(v)).collect(),
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = bytes;
        let bad = |msg: &str| Error::format(origin, msg);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint"));
        }
        let version = read_u32(&mut r).ok_or_else(|| bad("truncated header"))?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let count = read_u32(&mut r).ok_or_else(|| bad("truncated header"))?;
        let mut tensors = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let len = read_u32(&mut r).ok_or_else(|| bad("truncated name"))? as usize;
            if r.len() < len {
                return Err(bad("truncated name"));
            }
            let name = std::str::from_utf8(&r[..len])
                .map_err(|_| bad("name is not UTF-8"))?
                .to_string();
            r = &r[len..];
            let rank = read_u32(&mut r).ok_or_else(|| bad("truncated shape"))? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                r.read_exact(&mut b).map_err(|_| bad("truncated shape"))?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            if r.len() < n * 8 {
                return Err(bad(&format!("truncated values for {name}")));
            }
            let values = r[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            r = &r[n * 8..];
            tensors.push(NamedTensor {
                name,
                shape,
                values,
            });
        }
        if !r.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path.to_path_buf()));
        }
        Self::from_bytes(&fs::read(path)?, path)
    }
}

fn read_u32(r: &mut &[u8]) -> Option<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).ok()?;
    Some(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn bytes_round_trip(
            names in proptest::collection::vec("[a-z_.0-9]{1,12}", 0..4),
            seed in any::<u64>(),
        ) {
            let tensors = names.iter().enumerate().map(|(i, n)| {
                let shape = vec![i + 1, 2];
                let values = (0..2 * (i + 1))
                    .map(|k| (seed.wrapping_mul(k as u64 + 1) % 1000) as f64 / 7.0)
                    .collect();
                NamedTensor { name: n.clone(), shape, values }
            }).collect();
            let ck = Checkpoint { tensors };
            let back = Checkpoint::from_bytes(&ck.to_bytes(), Path::new("mem")).unwrap();
            prop_assert_eq!(ck, back);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::from_bytes(b"nope", Path::new("x")).is_err());
        let mut bytes = Checkpoint::default().to_bytes();
        bytes[8] = 9;
        assert!(Checkpoint::from_bytes(&bytes, Path::new("x")).is_err());
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            Checkpoint::load(Path::new("/nonexistent/ck.bin")),
            Err(Error::MissingCheckpoint(_))
        ));
    }
}
