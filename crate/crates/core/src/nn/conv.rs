use std::borrow::Cow;

use crate::error::{Error, Result};

use super::{gemm, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvOpts {
    pub stride: usize,
    pub pad: usize,
}

impl ConvOpts {
    /// Stride 1 with padding that preserves spatial size for odd `kernel`.
    pub fn same(kernel: usize) -> Self {
        Self {
            stride: 1,
            pad: kernel / 2,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn new<F: Real>(input: &Tensor<F>, weight: &Tensor<F>, opts: ConvOpts) -> Result<Self> {
        let (c_in, h, w) = input.dims3()?;
        let (c_out, wc, kh, kw) = match weight.shape() {
            &[a, b, c, d] => (a, b, c, d),
            s => {
                return Err(Error::ShapeMismatch(format!(
                    "conv weight must be rank 4, got {s:?}"
                )))
            }
        };
        if wc != c_in {
            return Err(Error::ShapeMismatch(format!(
                "conv expects {wc} input channels, got {c_in}"
            )));
        }
        if opts.stride == 0 || h + 2 * opts.pad < kh || w + 2 * opts.pad < kw {
            return Err(Error::ShapeMismatch(format!(
                "kernel {kh}x{kw} does not fit {h}x{w} with pad {}",
                opts.pad
            )));
        }
        Ok(Self {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            ho: (h + 2 * opts.pad - kh) / opts.stride + 1,
            wo: (w + 2 * opts.pad - kw) / opts.stride + 1,
            stride: opts.stride,
            pad: opts.pad,
        })
    }

    fn k(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn n(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col<'a, F: Real>(g: &Geometry, input: &'a [F]) -> Cow<'a, [F]> {
    if g.is_pointwise() {
        return Cow::Borrowed(input);
    }
    let n = g.n();
    let mut cols = vec![F::zero(); g.k() * n];
    for c in 0..g.c_in {
        let plane = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let out = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if g.stride == 1 {
                        // contiguous run of valid columns
                        let lo = g.pad.saturating_sub(kx);
                        let hi =
                            ((g.w + g.pad) as isize - kx as isize).clamp(0, g.wo as isize) as usize;
                        if lo < hi {
                            let s0 = lo + kx - g.pad;
                            out[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                        }
                    } else {
                        for (ox, o) in out.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                *o = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Cow::Owned(cols)
}

fn col2im<F: Real>(g: &Geometry, cols: &[F], grad_in: &mut [F]) {
    let n = g.n();
    for c in 0..g.c_in {
        let plane = &mut grad_in[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// 2D cross-correlation of a `[c_in, h, w]` input with `[c_out, c_in, kh, kw]`
/// weights and an optional `[c_out]` bias.
pub fn conv2d<F: Real>(
    input: &Tensor<F>,
    weight: &Tensor<F>,
    bias: Option<&Tensor<F>>,
    opts: ConvOpts,
) -> Result<Tensor<F>> {
    let g = Geometry::new(input, weight, opts)?;
    if let Some(b) = bias {
        b.ensure_shape(&[g.c_out], "conv bias")?;
    }
    let cols = im2col(&g, input.data());
    let n = g.n();
    let mut out = vec![F::zero(); g.c_out * n];
    gemm(
        false,
        false,
        g.c_out,
        n,
        g.k(),
        F::one(),
        weight.data(),
        &cols,
        F::zero(),
        &mut out,
    );
    if let Some(b) = bias {
        for (co, row) in out.chunks_mut(n).enumerate() {
            let bv = b.data()[co];
            row.iter_mut().for_each(|v| *v += bv);
        }
    }
    Tensor::from_vec(&[g.c_out, g.ho, g.wo], out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads<F> {
    pub input: Tensor<F>,
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward<F: Real>(
    input: &Tensor<F>,
    weight: &Tensor<F>,
    grad_out: &Tensor<F>,
    opts: ConvOpts,
) -> Result<ConvGrads<F>> {
    let g = Geometry::new(input, weight, opts)?;
    grad_out.ensure_shape(&[g.c_out, g.ho, g.wo], "conv grad_out")?;
    let n = g.n();
    let k = g.k();
    let cols = im2col(&g, input.data());

    let mut dw = vec![F::zero(); g.c_out * k];
    gemm(
        false,
        true,
        g.c_out,
        k,
        n,
        F::one(),
        grad_out.data(),
        &cols,
        F::zero(),
        &mut dw,
    );
    drop(cols);

    let bias: Vec<F> = grad_out
        .data()
        .chunks(n)
        .map(|row| row.iter().copied().sum())
        .collect();

    let mut dcols = vec![F::zero(); k * n];
    gemm(
        true,
        false,
        k,
        n,
        g.c_out,
        F::one(),
        weight.data(),
        grad_out.data(),
        F::zero(),
        &mut dcols,
    );
    let dinput = if g.is_pointwise() {
        dcols
    } else {
        let mut d = vec![F::zero(); g.c_in * g.h * g.w];
        col2im(&g, &dcols, &mut d);
        d
    };

    Ok(ConvGrads {
        input: Tensor::from_vec(&[g.c_in, g.h, g.w], dinput)?,
        weight: Tensor::from_vec(weight.shape(), dw)?,
        bias: Tensor::from_vec(&[g.c_out], bias)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check::{check_gradient, GradCheck};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    // Direct quadruple loop, independent of im2col/gemm.
    fn naive(input: &Tensor<f64>, weight: &Tensor<f64>, opts: ConvOpts) -> Tensor<f64> {
        let (ci, h, w) = input.dims3().unwrap();
        let s = weight.shape();
        let (co, kh, kw) = (s[0], s[2], s[3]);
        let ho = (h + 2 * opts.pad - kh) / opts.stride + 1;
        let wo = (w + 2 * opts.pad - kw) / opts.stride + 1;
        let mut out = Tensor::zeros(&[co, ho, wo]);
        for o in 0..co {
            for y in 0..ho {
                for x in 0..wo {
                    let mut acc = 0.0;
                    for c in 0..ci {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * opts.stride + ky) as isize - opts.pad as isize;
                                let ix = (x * opts.stride + kx) as isize - opts.pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += input.data()[(c * h + iy as usize) * w + ix as usize]
                                    * weight.data()[((o * ci + c) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out.data_mut()[(o * ho + y) * wo + x] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn identity_pointwise_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[3, 4, 5], &mut rng);
        let mut w = Tensor::zeros(&[3, 3, 1, 1]);
        for c in 0..3 {
            w.data_mut()[c * 3 + c] = 1.0;
        }
        let y = conv2d(&x, &w, None, ConvOpts { stride: 1, pad: 0 }).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn averaging_kernel_on_constant() {
        let x = Tensor::<f64>::full(&[1, 6, 6], 2.5);
        let w = Tensor::full(&[1, 1, 3, 3], 1.0 / 9.0);
        let y = conv2d(&x, &w, None, ConvOpts::same(3)).unwrap();
        for iy in 1..5 {
            for ix in 1..5 {
                assert!((y.data()[iy * 6 + ix] - 2.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_naive_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (opts, k) in [
            (ConvOpts { stride: 1, pad: 1 }, 3),
            (ConvOpts { stride: 2, pad: 1 }, 3),
            (ConvOpts { stride: 1, pad: 0 }, 1),
            (ConvOpts { stride: 2, pad: 0 }, 2),
        ] {
            let x = random(&[2, 7, 6], &mut rng);
            let w = random(&[3, 2, k, k], &mut rng);
            let got = conv2d(&x, &w, None, opts).unwrap();
            let want = naive(&x, &w, opts);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let x = Tensor::<f64>::zeros(&[2, 4, 4]);
        let w = Tensor::<f64>::zeros(&[1, 3, 3, 3]);
        assert!(matches!(
            conv2d(&x, &w, None, ConvOpts::same(3)),
            Err(Error::ShapeMismatch(_))
        ));
        let big = Tensor::<f64>::zeros(&[1, 2, 7, 7]);
        assert!(conv2d(&x, &big, None, ConvOpts { stride: 1, pad: 0 }).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for opts in [
            ConvOpts { stride: 1, pad: 1 },
            ConvOpts { stride: 2, pad: 1 },
        ] {
            let x = random(&[2, 4, 4], &mut rng);
            let w = random(&[3, 2, 3, 3], &mut rng);
            let b = random(&[3], &mut rng);
            let probe = conv2d(&x, &w, Some(&b), opts).unwrap();
            let g = random(probe.shape(), &mut rng);
            let loss = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
                conv2d(x, w, Some(b), opts).unwrap().dot(&g)
            };
            let grads = conv2d_backward(&x, &w, &g, opts).unwrap();
            let check = GradCheck::default();

            let r = check_gradient(&check, x.data(), grads.input.data(), |v| {
                loss(&Tensor::from_vec(x.shape(), v.to_vec()).unwrap(), &w, &b)
            });
            assert!(r.max_rel_error < 1e-4, "input {r:?}");
            let r = check_gradient(&check, w.data(), grads.weight.data(), |v| {
                loss(&x, &Tensor::from_vec(w.shape(), v.to_vec()).unwrap(), &b)
            });
            assert!(r.max_rel_error < 1e-4, "weight {r:?}");
            let r = check_gradient(&check, b.data(), grads.bias.data(), |v| {
                loss(&x, &w, &Tensor::from_vec(b.shape(), v.to_vec()).unwrap())
            });
            assert!(r.max_rel_error < 1e-4, "bias {r:?}");
        }
    }

    #[test]
    fn shift_equivariant_in_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&[2, 8, 8], &mut rng);
        let w = random(&[2, 2, 3, 3], &mut rng);
        let mut shifted = Tensor::zeros(&[2, 8, 8]);
        for c in 0..2 {
            for y in 0..8 {
                for xx in 1..8 {
                    shifted.data_mut()[(c * 8 + y) * 8 + xx] = x.data()[(c * 8 + y) * 8 + xx - 1];
                }
            }
        }
        let a = conv2d(&x, &w, None, ConvOpts::same(3)).unwrap();
        let b = conv2d(&shifted, &w, None, ConvOpts::same(3)).unwrap();
        for c in 0..2 {
            for y in 1..7 {
                for xx in 2..7 {
                    let want = a.data()[(c * 8 + y) * 8 + xx - 1];
                    let got = b.data()[(c * 8 + y) * 8 + xx];
                    assert!((want - got).abs() < 1e-12);
                }
            }
        }
    }
}
