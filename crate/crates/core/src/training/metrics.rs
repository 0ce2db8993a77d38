use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn check_pair<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<()> {
    pred.expect_same_shape(target)?;
    if pred.numel() == 0 {
        return Err(Error::shape("metrics need at least one pixel"));
    }
    Ok(())
}

/// `10·log10(1 / MSE)` over every element, for values in `[0, 1]`.
/// Identical inputs give `+∞`.
pub fn psnr<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    check_pair(pred, target)?;
    let se: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| (a.as_f64() - b.as_f64()).powi(2))
        .sum();
    let mse = se / pred.numel() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut g: [f64; SSIM_WINDOW] = std::array::from_fn(|i| {
        let d = i as f64 - r;
        (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
    });
    let s: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= s);
    g
}

/// Separable Gaussian filter without padding: `h × w` in,
/// `(h − 10) × (w − 10)` out.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ho, wo) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for xo in 0..wo {
            rows[y * wo + xo] = g.iter().zip(&x[y * w + xo..]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for yo in 0..ho {
        for (k, gk) in g.iter().enumerate() {
            let src = &rows[(yo + k) * wo..(yo + k + 1) * wo];
            for (o, s) in out[yo * wo..(yo + 1) * wo].iter_mut().zip(src) {
                *o += gk * s;
            }
        }
    }
    out
}

/// Structural similarity with an 11×11 Gaussian window (σ = 1.5) on the
/// valid region, averaged over every `H × W` plane (channels and batch).
pub fn ssim<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    check_pair(pred, target)?;
    let s = pred.shape();
    if s.len() < 2 || s[s.len() - 2] < SSIM_WINDOW || s[s.len() - 1] < SSIM_WINDOW {
        return Err(Error::shape(format!(
            "SSIM needs planes of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {s:?}"
        )));
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let g = gaussian_window();
    let planes = pred.numel() / (h * w);
    let mut total = 0.0;
    for p in 0..planes {
        let range = p * h * w..(p + 1) * h * w;
        let x: Vec<f64> = pred.data()[range.clone()].iter().map(|v| v.as_f64()).collect();
        let y: Vec<f64> = target.data()[range].iter().map(|v| v.as_f64()).collect();
        let prod = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(u, v)| u * v).collect() };
        let mx = filter_valid(&x, h, w, &g);
        let my = filter_valid(&y, h, w, &g);
        let mxx = filter_valid(&prod(&x, &x), h, w, &g);
        let myy = filter_valid(&prod(&y, &y), h, w, &g);
        let mxy = filter_valid(&prod(&x, &y), h, w, &g);
        let mut sum = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cxy = mxy[i] - ux * uy;
            sum += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
        }
        total += sum / mx.len() as f64;
    }
    Ok(total / planes as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(seed: f64, h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_fn(&[3, h, w], |i| 0.5 + 0.45 * ((i as f64) * seed).sin() * ((i as f64) * 0.013).cos())
    }

    #[test]
    fn psnr_edge_cases() {
        let a = image(0.37, 12, 12);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let zeros = Tensor::<f64>::zeros(&[3, 4, 4]);
        let ones = Tensor::full(&[3, 4, 4], 1.0);
        assert_eq!(psnr(&zeros, &ones).unwrap(), 0.0);
        let tenth = Tensor::full(&[3, 4, 4], 0.1);
        assert!((psnr(&zeros, &tenth).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&zeros, &a).is_err());
    }

    #[test]
    fn ssim_identity_and_size_limit() {
        let a = image(0.37, 16, 13);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let small = image(0.37, 10, 16);
        assert!(ssim(&small, &small).is_err());
    }

    /// Direct evaluation with an explicit 2-D window at every valid position.
    fn ssim_reference(x: &Tensor<f64>, y: &Tensor<f64>) -> f64 {
        let s = x.shape();
        let (c, h, w) = (s[0], s[1], s[2]);
        let mut win = [[0.0; 11]; 11];
        let mut norm = 0.0;
        for (i, row) in win.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
                *v = (-(di * di + dj * dj) / 4.5).exp();
                norm += *v;
            }
        }
        let mut per_channel = 0.0;
        for ch in 0..c {
            let px = |img: &Tensor<f64>, yy: usize, xx: usize| img.data()[ch * h * w + yy * w + xx];
            let mut acc = 0.0;
            for oy in 0..=h - 11 {
                for ox in 0..=w - 11 {
                    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            let k = win[i][j] / norm;
                            let (a, b) = (px(x, oy + i, ox + j), px(y, oy + i, ox + j));
                            mx += k * a;
                            my += k * b;
                            sxx += k * a * a;
                            syy += k * b * b;
                            sxy += k * a * b;
                        }
                    }
                    let (vx, vy, cv) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                    acc += ((2.0 * mx * my + 1e-4) * (2.0 * cv + 9e-4))
                        / ((mx * mx + my * my + 1e-4) * (vx + vy + 9e-4));
                }
            }
            per_channel += acc / ((h - 10) * (w - 10)) as f64;
        }
        per_channel / c as f64
    }

    #[test]
    fn metrics_match_scalar_references() {
        let a = image(0.37, 17, 14);
        let b = image(0.41, 17, 14);
        let got = ssim(&a, &b).unwrap();
        assert!((got - ssim_reference(&a, &b)).abs() < 1e-9, "{got}");
        let mse: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.numel() as f64;
        assert!((psnr(&a, &b).unwrap() - 10.0 * (1.0 / mse).log10()).abs() < 1e-9);
    }
}
