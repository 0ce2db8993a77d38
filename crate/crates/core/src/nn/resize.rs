//! Separable bilinear resizing with half-pixel centers and edge clamping.
//!
//! Output pixel `i` of an axis resized from `n_in` to `n_out` samples source
//! coordinate `(i + 0.5) · n_in / n_out − 0.5`, clamped to `[0, n_in − 1]`.
//! A 2× reduction therefore averages each 2×2 block, and constants are
//! preserved in both directions.

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
struct AxisTaps<T> {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<T>,
}

impl<T: Scalar> AxisTaps<T> {
    fn new(n_in: usize, n_out: usize) -> Self {
        let ratio = n_in as f64 / n_out as f64;
        let mut taps = Self {
            lo: Vec::with_capacity(n_out),
            hi: Vec::with_capacity(n_out),
            frac: Vec::with_capacity(n_out),
        };
        for i in 0..n_out {
            let src = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (n_in - 1) as f64);
            let lo = (src.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            taps.lo.push(lo);
            taps.hi.push(hi);
            taps.frac.push(T::from_f64(src - lo as f64));
        }
        taps
    }
}

struct Plan<T> {
    n: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    rows: AxisTaps<T>,
    cols: AxisTaps<T>,
}

impl<T: Scalar> Plan<T> {
    fn new(shape: &[usize], ho: usize, wo: usize) -> Result<Self> {
        let [n, c, h, w] = shape[..] else {
            return Err(Error::shape(format!("resize needs rank 4, got {shape:?}")));
        };
        if h == 0 || w == 0 || ho == 0 || wo == 0 {
            return Err(Error::shape("resize of an empty image"));
        }
        Ok(Self {
            n: n * c,
            h,
            w,
            ho,
            wo,
            rows: AxisTaps::new(h, ho),
            cols: AxisTaps::new(w, wo),
        })
    }

    fn forward(&self, src: &[T]) -> Vec<T> {
        let mut tmp = vec![T::zero(); self.n * self.h * self.wo];
        for p in 0..self.n * self.h {
            let line = &src[p * self.w..(p + 1) * self.w];
            let dst = &mut tmp[p * self.wo..(p + 1) * self.wo];
            for (j, d) in dst.iter_mut().enumerate() {
                let f = self.cols.frac[j];
                *d = line[self.cols.lo[j]] * (T::one() - f) + line[self.cols.hi[j]] * f;
            }
        }
        let mut out = vec![T::zero(); self.n * self.ho * self.wo];
        for p in 0..self.n {
            for i in 0..self.ho {
                let f = self.rows.frac[i];
                let a = (p * self.h + self.rows.lo[i]) * self.wo;
                let b = (p * self.h + self.rows.hi[i]) * self.wo;
                let o = (p * self.ho + i) * self.wo;
                for j in 0..self.wo {
                    out[o + j] = tmp[a + j] * (T::one() - f) + tmp[b + j] * f;
                }
            }
        }
        out
    }

    fn backward(&self, grad: &[T]) -> Vec<T> {
        let mut tmp = vec![T::zero(); self.n * self.h * self.wo];
        for p in 0..self.n {
            for i in 0..self.ho {
                let f = self.rows.frac[i];
                let a = (p * self.h + self.rows.lo[i]) * self.wo;
                let b = (p * self.h + self.rows.hi[i]) * self.wo;
                let o = (p * self.ho + i) * self.wo;
                for j in 0..self.wo {
                    tmp[a + j] += grad[o + j] * (T::one() - f);
                    tmp[b + j] += grad[o + j] * f;
                }
            }
        }
        let mut out = vec![T::zero(); self.n * self.h * self.w];
        for p in 0..self.n * self.h {
            let g = &tmp[p * self.wo..(p + 1) * self.wo];
            let dst = &mut out[p * self.w..(p + 1) * self.w];
            for (j, &gv) in g.iter().enumerate() {
                let f = self.cols.frac[j];
                dst[self.cols.lo[j]] += gv * (T::one() - f);
                dst[self.cols.hi[j]] += gv * f;
            }
        }
        out
    }
}

pub fn resize_bilinear_forward<T: Scalar>(x: &Tensor<T>, ho: usize, wo: usize) -> Result<Tensor<T>> {
    let plan = Plan::new(x.shape(), ho, wo)?;
    let shape = [x.shape()[0], x.shape()[1], ho, wo];
    Tensor::from_vec(&shape, plan.forward(x.data()))
}

pub fn resize_bilinear<'t, T: Scalar>(x: Var<'t, T>, ho: usize, wo: usize) -> Result<Var<'t, T>> {
    let xv = x.value();
    let plan = Plan::new(xv.shape(), ho, wo)?;
    let out = Tensor::from_vec(&[xv.shape()[0], xv.shape()[1], ho, wo], plan.forward(xv.data()))?;
    let in_shape = xv.shape().to_vec();
    Ok(x.tape().record(
        out,
        &[x],
        Box::new(move |g, _| {
            vec![Some(Tensor::from_vec(&in_shape, plan.backward(g.data())).expect("shape"))]
        }),
    ))
}

/// Bilinear 2× enlargement.
pub fn upsample2x<'t, T: Scalar>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    let (_, _, h, w) = x.value().dims4()?;
    resize_bilinear(x, 2 * h, 2 * w)
}

/// Bilinear 2× reduction (a 2×2 box average).
pub fn downsample2x_forward<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, _, h, w) = x.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!("cannot halve {h}x{w}")));
    }
    resize_bilinear_forward(x, h / 2, w / 2)
}
