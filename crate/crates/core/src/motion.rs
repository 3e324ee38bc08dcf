//! Per-cell velocity and dynamic-probability grids, for both predictions and
//! ground truth.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::GridSpec;
use crate::nn::Tensor;

const MAGIC: &[u8; 8] = b"MGGRID\0\0";

#[derive(Debug, Clone, PartialEq)]
pub struct MotionGrid {
    /// `[2, ny, nx]` velocity in m/s, local frame.
    pub velocity: Tensor<f64>,
    /// `[1, ny, nx]` dynamic probability (prediction) or 0/1 label (ground truth).
    pub dynamic: Tensor<f64>,
    /// `[1, ny, nx]` velocity-known mask; ground truth only.
    pub known: Option<Tensor<f64>>,
}

impl MotionGrid {
    /// All-static, zero-velocity ground truth with every cell unknown.
    pub fn empty_truth(g: &GridSpec) -> Self {
        Self {
            velocity: Tensor::zeros(&[2, g.ny, g.nx]),
            dynamic: Tensor::zeros(&[1, g.ny, g.nx]),
            known: Some(Tensor::zeros(&[1, g.ny, g.nx])),
        }
    }

    pub fn prediction(velocity: Tensor<f64>, dynamic: Tensor<f64>) -> Result<Self> {
        let (_, ny, nx) = velocity.dims3()?;
        velocity.ensure_shape(&[2, ny, nx], "velocity")?;
        dynamic.ensure_shape(&[1, ny, nx], "dynamic probability")?;
        Ok(Self {
            velocity,
            dynamic,
            known: None,
        })
    }

    pub fn ny(&self) -> usize {
        self.velocity.shape()[1]
    }

    pub fn nx(&self) -> usize {
        self.velocity.shape()[2]
    }

    pub fn num_cells(&self) -> usize {
        self.nx() * self.ny()
    }

    pub fn velocity_at(&self, cell: usize) -> [f64; 2] {
        let n = self.num_cells();
        [self.velocity.data()[cell], self.velocity.data()[n + cell]]
    }

    pub fn set_velocity(&mut self, cell: usize, v: [f64; 2]) {
        let n = self.num_cells();
        self.velocity.data_mut()[cell] = v[0];
        self.velocity.data_mut()[n + cell] = v[1];
    }

    pub fn dynamic_at(&self, cell: usize) -> f64 {
        self.dynamic.data()[cell]
    }

    pub fn is_known(&self, cell: usize) -> bool {
        self.known.as_ref().is_some_and(|k| k.data()[cell] > 0.5)
    }

    pub fn num_known(&self) -> usize {
        (0..self.num_cells()).filter(|&c| self.is_known(c)).count()
    }

    fn channels(&self) -> usize {
        if self.known.is_some() {
            4
        } else {
            3
        }
    }

    /// Little-endian header `(magic, nx, ny, channels)` followed by f32 values
    /// channel-major: vx, vy, dynamic and, for ground truth, known.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 4 * self.channels() * self.num_cells());
        out.extend_from_slice(MAGIC);
        for v in [self.nx(), self.ny(), self.channels()] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        let mut planes: Vec<&[f64]> = vec![self.velocity.data(), self.dynamic.data()];
        if let Some(k) = &self.known {
            planes.push(k.data());
        }
        for plane in planes {
            for &v in plane {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(Error::format(origin, "not a motion grid file"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[8 + 4 * i..12 + 4 * i].try_into().unwrap());
        let (nx, ny, ch) = (word(0) as usize, word(1) as usize, word(2) as usize);
        if !(ch == 3 || ch == 4) {
            return Err(Error::format(
                origin,
                format!("unsupported channel count {ch}"),
            ));
        }
        let n = nx * ny;
        if bytes.len() != 20 + 4 * ch * n {
            return Err(Error::format(origin, "truncated grid payload"));
        }
        let values: Vec<f64> = bytes[20..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        Ok(Self {
            velocity: Tensor::from_vec(&[2, ny, nx], values[..2 * n].to_vec())?,
            dynamic: Tensor::from_vec(&[1, ny, nx], values[2 * n..3 * n].to_vec())?,
            known: if ch == 4 {
                Some(Tensor::from_vec(&[1, ny, nx], values[3 * n..].to_vec())?)
            } else {
                None
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes, path)
    }
}

/// Zeroes the velocity of cells whose dynamic probability is below `tau`.
pub fn mask_velocity(pred: &MotionGrid, tau: f64) -> Result<MotionGrid> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Config(format!(
            "mask threshold {tau} outside (0, 1)"
        )));
    }
    let mut out = pred.clone();
    for cell in 0..pred.num_cells() {
        if pred.dynamic_at(cell) < tau {
            out.set_velocity(cell, [0.0, 0.0]);
        }
    }
    Ok(out)
}
