use crate::error::{Error, Result};

use super::Real;

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![F::zero(); shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: F) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<F>) -> Result<Self> {
        let want: usize = shape.iter().product();
        if want != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {want} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(channels, height, width)` of a rank-3 tensor.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape.as_slice() {
            &[c, h, w] => Ok((c, h, w)),
            s => Err(Error::ShapeMismatch(format!("expected rank 3, got {s:?}"))),
        }
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            s => Err(Error::ShapeMismatch(format!("expected rank 2, got {s:?}"))),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {:?} to {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn ensure_shape(&self, shape: &[usize], what: &str) -> Result<()> {
        if self.shape != shape {
            return Err(Error::ShapeMismatch(format!(
                "{what}: expected {shape:?}, got {:?}",
                self.shape
            )));
        }
        Ok(())
    }

    pub fn fill(&mut self, v: F) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor<F>) -> Result<()> {
        other.ensure_shape(&self.shape, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: F, other: &Tensor<F>) -> Result<()> {
        other.ensure_shape(&self.shape, "axpy")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: F) {
        self.data.iter_mut().for_each(|x| *x *= alpha);
    }

    pub fn dot(&self, other: &Tensor<F>) -> F {
        self.data
            .iter()
            .zip(&other.data)
            .fold(F::zero(), |acc, (&a, &b)| acc + a * b)
    }

    pub fn max_abs(&self) -> F {
        self.data.iter().fold(F::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|&x| G::from_f64(x.as_f64()).expect("cast"))
                .collect(),
        }
    }

    /// Channel slice `c` of a rank-3 tensor.
    pub fn channel(&self, c: usize) -> &[F] {
        let plane = self.shape[1] * self.shape[2];
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [F] {
        let plane = self.shape[1] * self.shape[2];
        &mut self.data[c * plane..(c + 1) * plane]
    }
}

/// Concatenates rank-3 tensors along the channel axis.
pub fn concat_channels<F: Real>(parts: &[&Tensor<F>]) -> Result<Tensor<F>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::ShapeMismatch("concat of nothing".into()))?;
    let (_, h, w) = first.dims3()?;
    let mut channels = 0;
    let mut data = Vec::new();
    for p in parts {
        let (c, ph, pw) = p.dims3()?;
        if (ph, pw) != (h, w) {
            return Err(Error::ShapeMismatch(format!(
                "concat: spatial {ph}x{pw} vs {h}x{w}"
            )));
        }
        channels += c;
        data.extend_from_slice(p.data());
    }
    Tensor::from_vec(&[channels, h, w], data)
}

/// Splits a rank-3 tensor into consecutive channel groups.
pub fn split_channels<F: Real>(t: &Tensor<F>, sizes: &[usize]) -> Result<Vec<Tensor<F>>> {
    let (c, h, w) = t.dims3()?;
    if sizes.iter().sum::<usize>() != c {
        return Err(Error::ShapeMismatch(format!(
            "split {sizes:?} of {c} channels"
        )));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &s in sizes {
        out.push(Tensor::from_vec(
            &[s, h, w],
            t.data()[start * plane..(start + s) * plane].to_vec(),
        )?);
        start += s;
    }
    Ok(out)
}
