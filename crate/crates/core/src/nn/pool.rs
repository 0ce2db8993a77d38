//! Polarity-preserving max pooling by absolute value.
//!
//! Each window yields the element of largest magnitude, with its sign. Ties
//! go to the first element in scan order (temporal index first, then
//! row-major over the spatial window).

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolAxis {
    /// Pools axis 1 of a tensor shaped `G × T × …` (the time-bin axis).
    Temporal,
    /// Pools `window × window` patches over the last two axes of `N×C×H×W`.
    Spatial,
}

fn pooled_len(len: usize, window: usize, stride: usize) -> Result<usize> {
    if window == 0 || stride == 0 {
        return Err(Error::config("pool window and stride must be positive"));
    }
    if len < window {
        return Err(Error::shape(format!("pool window {window} exceeds axis length {len}")));
    }
    Ok((len - window) / stride + 1)
}

/// Forward pass; also returns, for every output element, the flat index of
/// the input element it copied.
pub fn abs_max_pool_forward<T: Scalar>(
    x: &Tensor<T>,
    axis: PoolAxis,
    window: usize,
    stride: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let xd = x.data();
    match axis {
        PoolAxis::Temporal => {
            let shape = x.shape();
            if shape.len() < 2 {
                return Err(Error::shape(format!("temporal pool needs rank ≥ 2, got {shape:?}")));
            }
            let (g, t) = (shape[0], shape[1]);
            let rest: usize = shape[2..].iter().product();
            let to = pooled_len(t, window, stride)?;
            let mut out_shape = shape.to_vec();
            out_shape[1] = to;
            let mut out = Tensor::zeros(&out_shape);
            let mut arg = vec![0usize; out.numel()];
            let od = out.data_mut();
            for gi in 0..g {
                for o in 0..to {
                    let dst = (gi * to + o) * rest;
                    for r in 0..rest {
                        let mut best = (gi * t + o * stride) * rest + r;
                        for j in 1..window {
                            let cand = (gi * t + o * stride + j) * rest + r;
                            if xd[cand].abs() > xd[best].abs() {
                                best = cand;
                            }
                        }
                        od[dst + r] = xd[best];
                        arg[dst + r] = best;
                    }
                }
            }
            Ok((out, arg))
        }
        PoolAxis::Spatial => {
            let (n, c, h, w) = x.dims4()?;
            let ho = pooled_len(h, window, stride)?;
            let wo = pooled_len(w, window, stride)?;
            let mut out = Tensor::zeros(&[n, c, ho, wo]);
            let mut arg = vec![0usize; out.numel()];
            let od = out.data_mut();
            for plane in 0..n * c {
                let base = plane * h * w;
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut best = base + oy * stride * w + ox * stride;
                        for dy in 0..window {
                            for dx in 0..window {
                                let cand = base + (oy * stride + dy) * w + ox * stride + dx;
                                if xd[cand].abs() > xd[best].abs() {
                                    best = cand;
                                }
                            }
                        }
                        let o = (plane * ho + oy) * wo + ox;
                        od[o] = xd[best];
                        arg[o] = best;
                    }
                }
            }
            Ok((out, arg))
        }
    }
}

/// Differentiable abs-max pooling; the gradient routes to the selected
/// element of each window.
pub fn abs_max_pool<'t, T: Scalar>(
    x: Var<'t, T>,
    axis: PoolAxis,
    window: usize,
    stride: usize,
) -> Result<Var<'t, T>> {
    let xv = x.value();
    let (out, arg) = abs_max_pool_forward(&xv, axis, window, stride)?;
    let in_shape = xv.shape().to_vec();
    Ok(x.tape().record(
        out,
        &[x],
        Box::new(move |grad, _| {
            let mut dx = Tensor::zeros(&in_shape);
            let dd = dx.data_mut();
            for (&src, &g) in arg.iter().zip(grad.data()) {
                dd[src] += g;
            }
            vec![Some(dx)]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradients, GradCheck};
    use proptest::prelude::*;

    fn temporal(values: &[f64]) -> f64 {
        let x = Tensor::from_vec(&[1, values.len()], values.to_vec()).unwrap();
        let (y, _) = abs_max_pool_forward(&x, PoolAxis::Temporal, values.len(), 1).unwrap();
        y.data()[0]
    }

    #[test]
    fn keeps_sign_of_largest_magnitude() {
        assert_eq!(temporal(&[-3.0, 2.0]), -3.0);
        assert_eq!(temporal(&[0.0, 0.0]), 0.0);
    }

    /// Scalar reference: first index whose magnitude is maximal.
    fn first_abs_max(values: &[f64]) -> f64 {
        let m = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
        *values.iter().find(|v| v.abs() == m).unwrap()
    }

    #[test]
    fn ties_go_to_first_in_scan_order() {
        assert_eq!(temporal(&[-2.0, 2.0]), first_abs_max(&[-2.0, 2.0]));
        assert_eq!(temporal(&[-2.0, 2.0]), -2.0);
        assert_eq!(temporal(&[2.0, -2.0]), 2.0);
        // spatial: window [[1, -4], [4, 0]] -> -4 (row-major first)
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0f64, -4.0, 4.0, 0.0]).unwrap();
        let (y, _) = abs_max_pool_forward(&x, PoolAxis::Spatial, 2, 2).unwrap();
        assert_eq!(y.data(), &[-4.0]);
    }

    #[test]
    fn window_larger_than_axis_is_an_error() {
        let x = Tensor::<f32>::zeros(&[1, 3, 4]);
        assert!(abs_max_pool_forward(&x, PoolAxis::Temporal, 4, 1).is_err());
        let x = Tensor::<f32>::zeros(&[1, 1, 1, 5]);
        assert!(abs_max_pool_forward(&x, PoolAxis::Spatial, 2, 2).is_err());
    }

    #[test]
    fn temporal_pool_keeps_trailing_layout() {
        let x = Tensor::from_fn(&[2, 4, 3, 2, 2], |i| (i as f64 * 0.91).sin());
        let (y, _) = abs_max_pool_forward(&x, PoolAxis::Temporal, 2, 2).unwrap();
        assert_eq!(y.shape(), &[2, 2, 3, 2, 2]);
        for g in 0..2 {
            for o in 0..2 {
                for r in 0..12 {
                    let a = x.data()[(g * 4 + 2 * o) * 12 + r];
                    let b = x.data()[(g * 4 + 2 * o + 1) * 12 + r];
                    assert_eq!(y.data()[(g * 2 + o) * 12 + r], first_abs_max(&[a, b]));
                }
            }
        }
    }

    proptest! {
        #[test]
        fn magnitude_is_plain_max_of_abs(values in proptest::collection::vec(-5.0f64..5.0, 16)) {
            let x = Tensor::from_vec(&[1, 1, 4, 4], values).unwrap();
            let (y, _) = abs_max_pool_forward(&x, PoolAxis::Spatial, 2, 2).unwrap();
            let absx = x.map(f64::abs);
            for oy in 0..2 {
                for ox in 0..2 {
                    let mut m = 0.0f64;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            m = m.max(absx.data()[(2 * oy + dy) * 4 + 2 * ox + dx]);
                        }
                    }
                    let out = y.data()[oy * 2 + ox];
                    prop_assert_eq!(out.abs(), m);
                    // the sign comes from an element that is actually present
                    prop_assert!(x.data().contains(&out));
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        // distinct magnitudes keep every window away from ties
        let x = Tensor::from_fn(&[2, 4, 3, 4, 4], |i| {
            let v = 0.1 + (i as f64) * 0.013;
            if i % 3 == 0 { -v } else { v }
        });
        let report = check_gradients(&[x.clone()], GradCheck::default(), |v| {
            abs_max_pool(v[0], PoolAxis::Temporal, 2, 2)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");
        let x = x.reshape(&[2, 12, 4, 4]).unwrap();
        let report = check_gradients(&[x], GradCheck::default(), |v| {
            abs_max_pool(v[0], PoolAxis::Spatial, 2, 2)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{report:?}");
    }
}
