//! Fractional image lookup and the deformable convolution built on it.
//!
//! Coordinates outside `[0, W−1] × [0, H−1]` are clamped to the border before
//! interpolating, so the derivative with respect to a clamped coordinate is
//! zero.
//!
//! The deformable convolution evaluates, per output pixel `(x, y)` and per
//! color channel,
//!
//! ```text
//! O(x, y) = Σ_n W(n, x, y) · I(x + α(n, x, y), y + β(n, x, y))
//! ```
//!
//! with absolute per-tap displacements `α` (horizontal) and `β` (vertical)
//! and no implicit base grid.

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// The four neighbors of a fractional location, their bilinear weights, and
/// the derivatives of those weights with respect to `x` and `y`.
#[derive(Debug, Clone, Copy)]
pub struct BilinearTap<T> {
    pub index: [usize; 4],
    pub weight: [T; 4],
    pub dweight_dx: [T; 4],
    pub dweight_dy: [T; 4],
}

fn axis_split<T: Scalar>(coord: T, len: usize) -> (usize, usize, T, bool) {
    let hi = T::from_f64((len - 1) as f64);
    let inside = coord >= T::zero() && coord <= hi;
    let c = coord.max(T::zero()).min(hi);
    let mut i0 = c.floor().to_usize().unwrap_or(0);
    if len >= 2 {
        i0 = i0.min(len - 2);
    } else {
        i0 = 0;
    }
    let i1 = (i0 + 1).min(len - 1);
    let frac = c - T::from_f64(i0 as f64);
    (i0, i1, frac, inside)
}

impl<T: Scalar> BilinearTap<T> {
    /// Tap at `(x, y)` in an `h × w` plane.
    pub fn new(x: T, y: T, h: usize, w: usize) -> Self {
        let (x0, x1, fx, in_x) = axis_split(x, w);
        let (y0, y1, fy, in_y) = axis_split(y, h);
        let (gx, gy) = (T::one() - fx, T::one() - fy);
        let zero4 = [T::zero(); 4];
        let dweight_dx = if in_x { [-gy, gy, -fy, fy] } else { zero4 };
        let dweight_dy = if in_y { [-gx, -fx, gx, fx] } else { zero4 };
        Self {
            index: [y0 * w + x0, y0 * w + x1, y1 * w + x0, y1 * w + x1],
            weight: [gx * gy, fx * gy, gx * fy, fx * fy],
            dweight_dx,
            dweight_dy,
        }
    }

    #[inline]
    pub fn sample(&self, plane: &[T]) -> T {
        (0..4).map(|i| self.weight[i] * plane[self.index[i]]).sum()
    }

    /// `(∂s/∂x, ∂s/∂y)` of [`Self::sample`].
    #[inline]
    pub fn slope(&self, plane: &[T]) -> (T, T) {
        let mut dx = T::zero();
        let mut dy = T::zero();
        for i in 0..4 {
            let v = plane[self.index[i]];
            dx += self.dweight_dx[i] * v;
            dy += self.dweight_dy[i] * v;
        }
        (dx, dy)
    }
}

/// Samples `image` (`N×C×H×W`) at points `xs`, `ys` (`N×P`), giving
/// `N×C×P`.
pub fn bilinear_sample_forward<T: Scalar>(
    image: &Tensor<T>,
    xs: &Tensor<T>,
    ys: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = image.dims4()?;
    let p = point_count(xs, ys, n)?;
    let mut out = Tensor::zeros(&[n, c, p]);
    for b in 0..n {
        for i in 0..p {
            let tap = BilinearTap::new(xs.data()[b * p + i], ys.data()[b * p + i], h, w);
            for ch in 0..c {
                let plane = &image.data()[(b * c + ch) * h * w..(b * c + ch + 1) * h * w];
                out.data_mut()[(b * c + ch) * p + i] = tap.sample(plane);
            }
        }
    }
    Ok(out)
}

fn point_count<T: Scalar>(xs: &Tensor<T>, ys: &Tensor<T>, n: usize) -> Result<usize> {
    xs.expect_same_shape(ys)?;
    match xs.shape() {
        [xn, p] if *xn == n => Ok(*p),
        other => Err(Error::shape(format!("sample coordinates {other:?} for batch {n}"))),
    }
}

/// Differentiable [`bilinear_sample_forward`] in image values and
/// coordinates.
pub fn bilinear_sample<'t, T: Scalar>(
    image: Var<'t, T>,
    xs: Var<'t, T>,
    ys: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let (iv, xv, yv) = (image.value(), xs.value(), ys.value());
    let out = bilinear_sample_forward(&iv, &xv, &yv)?;
    Ok(image.tape().record(
        out,
        &[image, xs, ys],
        Box::new(move |grad, _| {
            let (n, c, h, w) = iv.dims4().expect("validated");
            let p = xv.shape()[1];
            let mut di = Tensor::zeros(iv.shape());
            let mut dx = Tensor::zeros(xv.shape());
            let mut dy = Tensor::zeros(yv.shape());
            for b in 0..n {
                for i in 0..p {
                    let tap = BilinearTap::new(xv.data()[b * p + i], yv.data()[b * p + i], h, w);
                    for ch in 0..c {
                        let g = grad.data()[(b * c + ch) * p + i];
                        let off = (b * c + ch) * h * w;
                        let (sx, sy) = tap.slope(&iv.data()[off..off + h * w]);
                        dx.data_mut()[b * p + i] += g * sx;
                        dy.data_mut()[b * p + i] += g * sy;
                        for k in 0..4 {
                            di.data_mut()[off + tap.index[k]] += g * tap.weight[k];
                        }
                    }
                }
            }
            vec![Some(di), Some(dx), Some(dy)]
        }),
    ))
}

fn check_kernel_shapes<T: Scalar>(
    image: &Tensor<T>,
    weights: &Tensor<T>,
    offsets_x: &Tensor<T>,
    offsets_y: &Tensor<T>,
) -> Result<(usize, usize, usize, usize, usize)> {
    let (n, c, h, w) = image.dims4()?;
    let (wn, k, wh, ww) = weights.dims4()?;
    if (wn, wh, ww) != (n, h, w) {
        return Err(Error::shape(format!(
            "kernel weights {:?} against image {:?}",
            weights.shape(),
            image.shape()
        )));
    }
    weights.expect_same_shape(offsets_x)?;
    weights.expect_same_shape(offsets_y)?;
    Ok((n, c, h, w, k))
}

/// Deformable convolution of `image` (`N×C×H×W`) with per-pixel kernels
/// `weights`, `offsets_x`, `offsets_y` (each `N×K×H×W`), shared across
/// channels.
pub fn deformable_conv_forward<T: Scalar>(
    image: &Tensor<T>,
    weights: &Tensor<T>,
    offsets_x: &Tensor<T>,
    offsets_y: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, c, h, w, k) = check_kernel_shapes(image, weights, offsets_x, offsets_y)?;
    let plane = h * w;
    let mut out = Tensor::zeros(image.shape());
    let od = out.data_mut();
    for b in 0..n {
        let img = &image.data()[b * c * plane..(b + 1) * c * plane];
        for tap_i in 0..k {
            let kbase = (b * k + tap_i) * plane;
            for y in 0..h {
                for x in 0..w {
                    let p = y * w + x;
                    let wt = weights.data()[kbase + p];
                    let sx = T::from_f64(x as f64) + offsets_x.data()[kbase + p];
                    let sy = T::from_f64(y as f64) + offsets_y.data()[kbase + p];
                    let tap = BilinearTap::new(sx, sy, h, w);
                    for ch in 0..c {
                        let s = tap.sample(&img[ch * plane..(ch + 1) * plane]);
                        od[(b * c + ch) * plane + p] += wt * s;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Differentiable [`deformable_conv_forward`] in the image, the weights and
/// both offset fields.
pub fn deformable_conv<'t, T: Scalar>(
    image: Var<'t, T>,
    weights: Var<'t, T>,
    offsets_x: Var<'t, T>,
    offsets_y: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let (iv, wv, av, bv) = (image.value(), weights.value(), offsets_x.value(), offsets_y.value());
    let out = deformable_conv_forward(&iv, &wv, &av, &bv)?;
    Ok(image.tape().record(
        out,
        &[image, weights, offsets_x, offsets_y],
        Box::new(move |grad, wants| {
            let (n, c, h, w, k) = check_kernel_shapes(&iv, &wv, &av, &bv).expect("validated");
            let plane = h * w;
            let mut di = wants[0].then(|| Tensor::zeros(iv.shape()));
            let mut dw = Tensor::zeros(wv.shape());
            let mut da = Tensor::zeros(wv.shape());
            let mut db = Tensor::zeros(wv.shape());
            let gd = grad.data();
            for b in 0..n {
                let img = &iv.data()[b * c * plane..(b + 1) * c * plane];
                for tap_i in 0..k {
                    let kbase = (b * k + tap_i) * plane;
                    for y in 0..h {
                        for x in 0..w {
                            let p = y * w + x;
                            let wt = wv.data()[kbase + p];
                            let sx = T::from_f64(x as f64) + av.data()[kbase + p];
                            let sy = T::from_f64(y as f64) + bv.data()[kbase + p];
                            let tap = BilinearTap::new(sx, sy, h, w);
                            let (mut gw, mut gx, mut gy) = (T::zero(), T::zero(), T::zero());
                            for ch in 0..c {
                                let g = gd[(b * c + ch) * plane + p];
                                let src = &img[ch * plane..(ch + 1) * plane];
                                gw += g * tap.sample(src);
                                let (slx, sly) = tap.slope(src);
                                gx += g * slx;
                                gy += g * sly;
                                if let Some(di) = di.as_mut() {
                                    let dst = &mut di.data_mut()[(b * c + ch) * plane..(b * c + ch + 1) * plane];
                                    for q in 0..4 {
                                        dst[tap.index[q]] += g * wt * tap.weight[q];
                                    }
                                }
                            }
                            dw.data_mut()[kbase + p] = gw;
                            da.data_mut()[kbase + p] = wt * gx;
                            db.data_mut()[kbase + p] = wt * gy;
                        }
                    }
                }
            }
            vec![di, wants[1].then_some(dw), wants[2].then_some(da), wants[3].then_some(db)]
        }),
    ))
}
