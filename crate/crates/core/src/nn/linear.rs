use crate::error::{Error, Result};

use super::{gemm, Real, Tensor};

/// Row-wise affine map: `[n, d_in] -> [n, d_out]` with `[d_out, d_in]` weights.
pub fn linear<F: Real>(
    input: &Tensor<F>,
    weight: &Tensor<F>,
    bias: Option<&Tensor<F>>,
) -> Result<Tensor<F>> {
    let (n, d_in) = input.dims2()?;
    let (d_out, w_in) = weight.dims2()?;
    if w_in != d_in {
        return Err(Error::ShapeMismatch(format!(
            "linear expects {w_in} input features, got {d_in}"
        )));
    }
    let mut out = vec![F::zero(); n * d_out];
    gemm(
        false,
        true,
        n,
        d_out,
        d_in,
        F::one(),
        input.data(),
        weight.data(),
        F::zero(),
        &mut out,
    );
    if let Some(b) = bias {
        b.ensure_shape(&[d_out], "linear bias")?;
        for row in out.chunks_mut(d_out) {
            for (v, &bv) in row.iter_mut().zip(b.data()) {
                *v += bv;
            }
        }
    }
    Tensor::from_vec(&[n, d_out], out)
}

#[derive(Debug, Clone)]
pub struct LinearGrads<F> {
    pub input: Tensor<F>,
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
}

pub fn linear_backward<F: Real>(
    input: &Tensor<F>,
    weight: &Tensor<F>,
    grad_out: &Tensor<F>,
) -> Result<LinearGrads<F>> {
    let (n, d_in) = input.dims2()?;
    let (d_out, _) = weight.dims2()?;
    grad_out.ensure_shape(&[n, d_out], "linear grad_out")?;
    let mut dx = vec![F::zero(); n * d_in];
    gemm(
        false,
        false,
        n,
        d_in,
        d_out,
        F::one(),
        grad_out.data(),
        weight.data(),
        F::zero(),
        &mut dx,
    );
    let mut dw = vec![F::zero(); d_out * d_in];
    gemm(
        true,
        false,
        d_out,
        d_in,
        n,
        F::one(),
        grad_out.data(),
        input.data(),
        F::zero(),
        &mut dw,
    );
    let mut db = vec![F::zero(); d_out];
    for row in grad_out.data().chunks(d_out.max(1)) {
        for (acc, &g) in db.iter_mut().zip(row) {
            *acc += g;
        }
    }
    Ok(LinearGrads {
        input: Tensor::from_vec(&[n, d_in], dx)?,
        weight: Tensor::from_vec(&[d_out, d_in], dw)?,
        bias: Tensor::from_vec(&[d_out], db)?,
    })
}
