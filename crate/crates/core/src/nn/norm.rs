//! Layer normalization over the channel axis of `N×C×H×W` tensors.

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Normalizes each pixel's channel vector to zero mean and unit variance,
/// then applies a per-channel affine map.
pub fn layer_norm_channels<'t, T: Scalar>(
    x: Var<'t, T>,
    gamma: Var<'t, T>,
    beta: Var<'t, T>,
) -> Result<Var<'t, T>> {
    let xv = x.value();
    let gv = gamma.value();
    let bv = beta.value();
    let (n, c, h, w) = xv.dims4()?;
    if gv.shape() != [c] || bv.shape() != [c] {
        return Err(Error::shape(format!(
            "layer norm affine {:?}/{:?} for {c} channels",
            gv.shape(),
            bv.shape()
        )));
    }
    let plane = h * w;
    let eps = T::from_f64(LAYER_NORM_EPS);
    let inv_c = T::from_f64(1.0 / c as f64);
    let mut xhat = Tensor::zeros(xv.shape());
    let mut inv_std = vec![T::zero(); n * plane];
    {
        let xd = xv.data();
        let hd = xhat.data_mut();
        for b in 0..n {
            let base = b * c * plane;
            for p in 0..plane {
                let mut mean = T::zero();
                for k in 0..c {
                    mean += xd[base + k * plane + p];
                }
                mean *= inv_c;
                let mut var = T::zero();
                for k in 0..c {
                    let d = xd[base + k * plane + p] - mean;
                    var += d * d;
                }
                var *= inv_c;
                let is = T::one() / (var + eps).sqrt();
                inv_std[b * plane + p] = is;
                for k in 0..c {
                    let i = base + k * plane + p;
                    hd[i] = (xd[i] - mean) * is;
                }
            }
        }
    }
    let mut out = Tensor::zeros(xv.shape());
    for b in 0..n {
        for k in 0..c {
            let off = (b * c + k) * plane;
            let (g, be) = (gv.data()[k], bv.data()[k]);
            for p in 0..plane {
                out.data_mut()[off + p] = g * xhat.data()[off + p] + be;
            }
        }
    }
    Ok(x.tape().record(
        out,
        &[x, gamma, beta],
        Box::new(move |grad, wants| {
            let gd = grad.data();
            let hd = xhat.data();
            let dgamma = wants[1].then(|| {
                let mut dg = Tensor::zeros(&[c]);
                for b in 0..n {
                    for k in 0..c {
                        let off = (b * c + k) * plane;
                        let s: T = (0..plane).map(|p| gd[off + p] * hd[off + p]).sum();
                        dg.data_mut()[k] += s;
                    }
                }
                dg
            });
            let dbeta = wants[2].then(|| {
                let mut db = Tensor::zeros(&[c]);
                for b in 0..n {
                    for k in 0..c {
                        let off = (b * c + k) * plane;
                        let s: T = gd[off..off + plane].iter().copied().sum();
                        db.data_mut()[k] += s;
                    }
                }
                db
            });
            let dx = wants[0].then(|| {
                let mut dx = Tensor::zeros(&[n, c, h, w]);
                let dd = dx.data_mut();
                let gam = gv.data();
                for b in 0..n {
                    let base = b * c * plane;
                    for p in 0..plane {
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for k in 0..c {
                            let i = base + k * plane + p;
                            let dh = gd[i] * gam[k];
                            m1 += dh;
                            m2 += dh * hd[i];
                        }
                        m1 *= inv_c;
                        m2 *= inv_c;
                        let is = inv_std[b * plane + p];
                        for k in 0..c {
                            let i = base + k * plane + p;
                            dd[i] = is * (gd[i] * gam[k] - m1 - hd[i] * m2);
                        }
                    }
                }
                dx
            });
            vec![dx, dgamma, dbeta]
        }),
    ))
}
