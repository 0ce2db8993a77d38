//! Stride-1 2D convolution with symmetric zero padding, via im2col + gemm.

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::scalar::{matmul_into, MatRef, Scalar};
use crate::tensor::Tensor;

/// Upper bound on the im2col scratch buffer, in elements.
const COLS_BUDGET: usize = 1 << 21;

#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn new<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, pad: usize) -> Result<Self> {
        let (n, cin, h, w) = x.dims4()?;
        let (cout, wc, kh, kw) = weight.dims4()?;
        if wc != cin || kh != kw {
            return Err(Error::shape(format!(
                "conv weight {:?} against input {:?}",
                weight.shape(),
                x.shape()
            )));
        }
        let k = kh;
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::shape(format!(
                "kernel {k} larger than padded input {h}x{w}"
            )));
        }
        Ok(Self {
            n,
            cin,
            h,
            w,
            cout,
            k,
            pad,
            ho: h + 2 * pad + 1 - k,
            wo: w + 2 * pad + 1 - k,
        })
    }

    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn pointwise(&self) -> bool {
        self.k == 1 && self.pad == 0
    }

    fn rows_per_chunk(&self) -> usize {
        (COLS_BUDGET / (self.patch() * self.wo).max(1)).clamp(1, self.ho)
    }

    /// Output columns `lo..hi` whose tap `kx` lands inside the image.
    fn valid_columns(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kx).min(self.wo);
        let hi = (self.w + self.pad).saturating_sub(kx).clamp(lo, self.wo);
        (lo, hi)
    }

    /// Fills `cols` (`patch × (rows·wo)`) for output rows `r0..r0+rows`.
    fn im2col<T: Scalar>(&self, img: &[T], r0: usize, rows: usize, cols: &mut [T]) {
        let npix = rows * self.wo;
        let mut row = 0;
        for c in 0..self.cin {
            let plane = &img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let dst = &mut cols[row * npix..(row + 1) * npix];
                    for oy in 0..rows {
                        let iy = (r0 + oy + ky) as isize - self.pad as isize;
                        let line = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            line.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let (lo, hi) = self.valid_columns(kx);
                        line[..lo].fill(T::zero());
                        line[hi..].fill(T::zero());
                        line[lo..hi].copy_from_slice(&src[lo + kx - self.pad..hi + kx - self.pad]);
                    }
                    row += 1;
                }
            }
        }
    }

    /// Scatter-adds `cols` back into an image gradient.
    fn col2im<T: Scalar>(&self, cols: &[T], r0: usize, rows: usize, img: &mut [T]) {
        let npix = rows * self.wo;
        let mut row = 0;
        for c in 0..self.cin {
            let plane = &mut img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let src = &cols[row * npix..(row + 1) * npix];
                    for oy in 0..rows {
                        let iy = (r0 + oy + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let line = &src[oy * self.wo..(oy + 1) * self.wo];
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let (lo, hi) = self.valid_columns(kx);
                        let dst = &mut dst[lo + kx - self.pad..hi + kx - self.pad];
                        for (d, &v) in dst.iter_mut().zip(&line[lo..hi]) {
                            *d += v;
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// `y[n, o] = b[o] + Σ_c w[o, c] ⋆ x[n, c]` with `pad` zeros on every side.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = Geometry::new(x, weight, pad)?;
    if let Some(b) = bias {
        if b.shape() != [g.cout] {
            return Err(Error::shape(format!("conv bias {:?}", b.shape())));
        }
    }
    let out_plane = g.ho * g.wo;
    let mut out = Tensor::zeros(&[g.n, g.cout, g.ho, g.wo]);
    let wmat = MatRef::new(weight.data(), g.cout, g.patch());
    let in_len = g.cin * g.h * g.w;
    let chunk_rows = g.rows_per_chunk();
    let mut cols = if g.pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); g.patch() * chunk_rows * g.wo]
    };
    for b in 0..g.n {
        let img = &x.data()[b * in_len..(b + 1) * in_len];
        let dst = &mut out.data_mut()[b * g.cout * out_plane..(b + 1) * g.cout * out_plane];
        if g.pointwise() {
            matmul_into(wmat, MatRef::new(img, g.cin, out_plane), T::zero(), dst, out_plane);
        } else {
            let mut r0 = 0;
            while r0 < g.ho {
                let rows = chunk_rows.min(g.ho - r0);
                let npix = rows * g.wo;
                let cols = &mut cols[..g.patch() * npix];
                g.im2col(img, r0, rows, cols);
                matmul_into(
                    wmat,
                    MatRef::new(cols, g.patch(), npix),
                    T::zero(),
                    &mut dst[r0 * g.wo..],
                    out_plane,
                );
                r0 += rows;
            }
        }
        if let Some(bias) = bias {
            for (o, &bv) in bias.data().iter().enumerate() {
                for v in &mut dst[o * out_plane..(o + 1) * out_plane] {
                    *v += bv;
                }
            }
        }
    }
    Ok(out)
}

struct ConvGrads<T> {
    input: Option<Tensor<T>>,
    weight: Option<Tensor<T>>,
    bias: Option<Tensor<T>>,
}

fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    pad: usize,
    want: [bool; 3],
) -> ConvGrads<T> {
    let g = Geometry::new(x, weight, pad).expect("validated in forward");
    let out_plane = g.ho * g.wo;
    let in_len = g.cin * g.h * g.w;
    let mut dx = want[0].then(|| Tensor::zeros(x.shape()));
    let mut dw = want[1].then(|| Tensor::zeros(weight.shape()));
    let mut db = want[2].then(|| Tensor::zeros(&[g.cout]));
    let wmat = MatRef::new(weight.data(), g.cout, g.patch());
    let chunk_rows = g.rows_per_chunk();
    let scratch = if g.pointwise() { 0 } else { g.patch() * chunk_rows * g.wo };
    let mut cols = vec![T::zero(); scratch];
    let mut dcols = vec![T::zero(); if want[0] { scratch } else { 0 }];

    for b in 0..g.n {
        let img = &x.data()[b * in_len..(b + 1) * in_len];
        let gout = &grad_out.data()[b * g.cout * out_plane..(b + 1) * g.cout * out_plane];
        if let Some(db) = db.as_mut() {
            for (o, v) in db.data_mut().iter_mut().enumerate() {
                *v += gout[o * out_plane..(o + 1) * out_plane].iter().copied().sum::<T>();
            }
        }
        if g.pointwise() {
            if let Some(dw) = dw.as_mut() {
                matmul_into(
                    MatRef::new(gout, g.cout, out_plane),
                    MatRef::new(img, g.cin, out_plane).t(),
                    T::one(),
                    dw.data_mut(),
                    g.cin,
                );
            }
            if let Some(dx) = dx.as_mut() {
                matmul_into(
                    wmat.t(),
                    MatRef::new(gout, g.cout, out_plane),
                    T::zero(),
                    &mut dx.data_mut()[b * in_len..(b + 1) * in_len],
                    out_plane,
                );
            }
            continue;
        }
        let mut r0 = 0;
        while r0 < g.ho {
            let rows = chunk_rows.min(g.ho - r0);
            let npix = rows * g.wo;
            let gchunk = MatRef::strided(&gout[r0 * g.wo..], g.cout, npix, out_plane);
            if let Some(dw) = dw.as_mut() {
                let cols = &mut cols[..g.patch() * npix];
                g.im2col(img, r0, rows, cols);
                matmul_into(
                    gchunk,
                    MatRef::new(cols, g.patch(), npix).t(),
                    T::one(),
                    dw.data_mut(),
                    g.patch(),
                );
            }
            if let Some(dx) = dx.as_mut() {
                let dcols = &mut dcols[..g.patch() * npix];
                matmul_into(wmat.t(), gchunk, T::zero(), dcols, npix);
                g.col2im(dcols, r0, rows, &mut dx.data_mut()[b * in_len..(b + 1) * in_len]);
            }
            r0 += rows;
        }
    }
    ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    }
}

/// Differentiable [`conv2d_forward`].
pub fn conv2d<'t, T: Scalar>(
    x: Var<'t, T>,
    weight: Var<'t, T>,
    bias: Option<Var<'t, T>>,
    pad: usize,
) -> Result<Var<'t, T>> {
    let xv = x.value();
    let wv = weight.value();
    let bv = bias.map(|b| b.value());
    let out = conv2d_forward(&xv, &wv, bv.as_deref(), pad)?;
    let has_bias = bias.is_some();
    let mut parents = vec![x, weight];
    parents.extend(bias);
    Ok(x.tape().record(
        out,
        &parents,
        Box::new(move |grad, wants| {
            let want_bias = has_bias && wants[2];
            let grads = conv2d_backward(&xv, &wv, grad, pad, [wants[0], wants[1], want_bias]);
            let mut res = vec![grads.input, grads.weight];
            if has_bias {
                res.push(grads.bias);
            }
            res
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradients, GradCheck};

    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, pad: usize) -> Tensor<f64> {
        let (n, cin, h, wd) = x.dims4().unwrap();
        let (cout, _, k, _) = w.dims4().unwrap();
        let ho = h + 2 * pad + 1 - k;
        let wo = wd + 2 * pad + 1 - k;
        let mut out = Tensor::zeros(&[n, cout, ho, wo]);
        for bi in 0..n {
            for o in 0..cout {
                for y in 0..ho {
                    for xo in 0..wo {
                        let mut acc = b.data()[o];
                        for c in 0..cin {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (y + ky) as isize - pad as isize;
                                    let ix = (xo + kx) as isize - pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                        acc += w.data()[((o * cin + c) * k + ky) * k + kx]
                                            * x.data()[((bi * cin + c) * h + iy as usize) * wd + ix as usize];
                                    }
                                }
                            }
                        }
                        out.data_mut()[((bi * cout + o) * ho + y) * wo + xo] = acc;
                    }
                }
            }
        }
        out
    }

    fn wave(shape: &[usize], seed: f64) -> Tensor<f64> {
        Tensor::from_fn(shape, |i| ((i as f64 + seed) * 0.731).sin())
    }

    #[test]
    fn matches_direct_summation() {
        for (k, pad) in [(3, 1), (1, 0), (3, 0), (5, 2)] {
            let x = wave(&[2, 3, 7, 6], 0.3);
            let w = wave(&[4, 3, k, k], 1.7);
            let b = wave(&[4], 2.9);
            let fast = conv2d_forward(&x, &w, Some(&b), pad).unwrap();
            let slow = naive_conv(&x, &w, &b, pad);
            assert!(fast.max_abs_diff(&slow).unwrap() < 1e-12, "k={k} pad={pad}");
        }
    }

    #[test]
    fn rejects_channel_mismatch() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let w = Tensor::<f32>::zeros(&[3, 5, 3, 3]);
        assert!(conv2d_forward(&x, &w, None, 1).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (k, pad) in [(3, 1), (1, 0)] {
            let inputs = vec![wave(&[2, 3, 5, 4], 0.1), wave(&[2, 3, k, k], 0.9), wave(&[2], 0.4)];
            let report = check_gradients(&inputs, GradCheck::default(), |vars| {
                conv2d(vars[0], vars[1], Some(vars[2]), pad)
            })
            .unwrap();
            assert!(report.max_rel_error < 1e-6, "{report:?}");
        }
    }
}
