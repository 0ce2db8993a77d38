//! Scaled dot-product attention along the temporal token axis, run
//! independently at every spatial site.
//!
//! Queries, keys and values are laid out as `(G·T) × C × H × W`: each group of
//! `T` consecutive batch entries is one token sequence (the time bins of one
//! event interval), and every pixel is a separate site. Channels are split
//! into `heads` contiguous blocks of `C / heads`.

use crate::autograd::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
struct Layout {
    groups: usize,
    tokens: usize,
    channels: usize,
    head_dim: usize,
    heads: usize,
    sites: usize,
}

impl Layout {
    fn new<T: Scalar>(q: &Tensor<T>, tokens: usize, heads: usize) -> Result<Self> {
        let (nt, c, h, w) = q.dims4()?;
        if tokens == 0 || nt % tokens != 0 {
            return Err(Error::shape(format!(
                "{nt} entries do not split into sequences of {tokens} tokens"
            )));
        }
        if heads == 0 || c % heads != 0 {
            return Err(Error::config(format!(
                "{c} channels are not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            groups: nt / tokens,
            tokens,
            channels: c,
            head_dim: c / heads,
            heads,
            sites: h * w,
        })
    }

    #[inline]
    fn at(&self, g: usize, t: usize, c: usize) -> usize {
        ((g * self.tokens + t) * self.channels + c) * self.sites
    }

    /// Site ranges small enough that one head's weights stay in L1.
    fn tiles(&self) -> impl Iterator<Item = (usize, usize)> {
        let sites = self.sites;
        let tile = (512 * 16 / (self.tokens * self.tokens)).clamp(8, 4096);
        (0..sites).step_by(tile).map(move |s0| (s0, tile.min(sites - s0)))
    }

    /// Softmax-normalized attention weights `P[i][j][s]` for one group/head
    /// over the sites `s0..s0 + s`. `mx` is scratch space of `s` elements.
    #[allow(clippy::too_many_arguments)]
    fn probabilities<T: Scalar>(
        &self,
        q: &[T],
        k: &[T],
        g: usize,
        head: usize,
        s0: usize,
        p: &mut [T],
        mx: &mut [T],
    ) {
        let (tn, s) = (self.tokens, mx.len());
        let scale = T::from_f64(1.0 / (self.head_dim as f64).sqrt());
        p.fill(T::zero());
        for i in 0..tn {
            let block = &mut p[i * tn * s..(i + 1) * tn * s];
            for j in 0..tn {
                let row = &mut block[j * s..(j + 1) * s];
                for d in 0..self.head_dim {
                    let c = head * self.head_dim + d;
                    let qi = &q[self.at(g, i, c) + s0..][..s];
                    let kj = &k[self.at(g, j, c) + s0..][..s];
                    for ((r, &a), &b) in row.iter_mut().zip(qi).zip(kj) {
                        *r += a * b;
                    }
                }
            }
            // softmax over j, vectorized across sites
            mx.copy_from_slice(&block[..s]);
            for row in block.chunks_exact(s).skip(1) {
                for (m, &v) in mx.iter_mut().zip(row) {
                    *m = m.max(v);
                }
            }
            for row in block.chunks_exact_mut(s) {
                for (r, &m) in row.iter_mut().zip(mx.iter()) {
                    *r = (*r - m) * scale;
                }
                T::exp_in_place(row);
            }
            mx.fill(T::zero());
            for row in block.chunks_exact(s) {
                for (z, &v) in mx.iter_mut().zip(row) {
                    *z += v;
                }
            }
            for z in mx.iter_mut() {
                *z = T::one() / *z;
            }
            for row in block.chunks_exact_mut(s) {
                for (r, &z) in row.iter_mut().zip(mx.iter()) {
                    *r *= z;
                }
            }
        }
    }
}

/// Forward attention without recording on a tape.
pub fn temporal_attention_forward<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
    tokens: usize,
    heads: usize,
) -> Result<Tensor<T>> {
    q.expect_same_shape(k)?;
    q.expect_same_shape(v)?;
    let l = Layout::new(q, tokens, heads)?;
    let tn = l.tokens;
    let mut out = Tensor::zeros(q.shape());
    let od = out.data_mut();
    let mut p = Vec::new();
    let mut mx = Vec::new();
    for g in 0..l.groups {
        for head in 0..l.heads {
            for (s0, s) in l.tiles() {
                p.resize(tn * tn * s, T::zero());
                mx.resize(s, T::zero());
                l.probabilities(q.data(), k.data(), g, head, s0, &mut p, &mut mx);
                for i in 0..tn {
                    for d in 0..l.head_dim {
                        let c = head * l.head_dim + d;
                        let dst = &mut od[l.at(g, i, c) + s0..][..s];
                        for j in 0..tn {
                            let vj = &v.data()[l.at(g, j, c) + s0..][..s];
                            let pij = &p[(i * tn + j) * s..(i * tn + j + 1) * s];
                            for ((o, &a), &b) in dst.iter_mut().zip(pij).zip(vj) {
                                *o += a * b;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Differentiable attention; the backward pass recomputes the attention
/// weights rather than storing them.
pub fn temporal_attention<'t, T: Scalar>(
    q: Var<'t, T>,
    k: Var<'t, T>,
    v: Var<'t, T>,
    tokens: usize,
    heads: usize,
) -> Result<Var<'t, T>> {
    let (qv, kv, vv) = (q.value(), k.value(), v.value());
    let out = temporal_attention_forward(&qv, &kv, &vv, tokens, heads)?;
    let l = Layout::new(&qv, tokens, heads)?;
    Ok(q.tape().record(
        out,
        &[q, k, v],
        Box::new(move |grad, _| {
            let tn = l.tokens;
            let scale = T::from_f64(1.0 / (l.head_dim as f64).sqrt());
            let (qd, kd, vd, gd) = (qv.data(), kv.data(), vv.data(), grad.data());
            let mut dq = Tensor::zeros(qv.shape());
            let mut dk = Tensor::zeros(qv.shape());
            let mut dv = Tensor::zeros(qv.shape());
            let (dqd, dkd, dvd) = (dq.data_mut(), dk.data_mut(), dv.data_mut());
            let mut p = Vec::new();
            let mut dp = Vec::new();
            let mut dot = Vec::new();
            for g in 0..l.groups {
                for head in 0..l.heads {
                    for (s0, s) in l.tiles() {
                        p.resize(tn * tn * s, T::zero());
                        dp.resize(tn * tn * s, T::zero());
                        dot.resize(s, T::zero());
                        l.probabilities(qd, kd, g, head, s0, &mut p, &mut dot);
                        dp.fill(T::zero());
                        for i in 0..tn {
                            for j in 0..tn {
                                let pij = &p[(i * tn + j) * s..(i * tn + j + 1) * s];
                                let dpij = &mut dp[(i * tn + j) * s..(i * tn + j + 1) * s];
                                for d in 0..l.head_dim {
                                    let c = head * l.head_dim + d;
                                    let (oi, oj) = (l.at(g, i, c) + s0, l.at(g, j, c) + s0);
                                    let go = &gd[oi..oi + s];
                                    for ((dst, &a), &b) in dpij.iter_mut().zip(go).zip(&vd[oj..oj + s]) {
                                        *dst += a * b;
                                    }
                                    for ((dst, &a), &b) in dvd[oj..oj + s].iter_mut().zip(pij).zip(go) {
                                        *dst += a * b;
                                    }
                                }
                            }
                        }
                        // dS = P ⊙ (dP − Σ_j P dP), stored back into dp
                        for i in 0..tn {
                            let pb = &p[i * tn * s..(i + 1) * tn * s];
                            let db = &mut dp[i * tn * s..(i + 1) * tn * s];
                            dot.fill(T::zero());
                            for (pr, dr) in pb.chunks_exact(s).zip(db.chunks_exact(s)) {
                                for ((acc, &a), &b) in dot.iter_mut().zip(pr).zip(dr) {
                                    *acc += a * b;
                                }
                            }
                            for (pr, dr) in pb.chunks_exact(s).zip(db.chunks_exact_mut(s)) {
                                for ((dv, &pv), &t) in dr.iter_mut().zip(pr).zip(dot.iter()) {
                                    *dv = pv * (*dv - t) * scale;
                                }
                            }
                        }
                        for i in 0..tn {
                            for j in 0..tn {
                                let ds = &dp[(i * tn + j) * s..(i * tn + j + 1) * s];
                                for d in 0..l.head_dim {
                                    let c = head * l.head_dim + d;
                                    let (oi, oj) = (l.at(g, i, c) + s0, l.at(g, j, c) + s0);
                                    for ((dst, &a), &b) in dqd[oi..oi + s].iter_mut().zip(ds).zip(&kd[oj..oj + s]) {
                                        *dst += a * b;
                                    }
                                    for ((dst, &a), &b) in dkd[oj..oj + s].iter_mut().zip(ds).zip(&qd[oi..oi + s]) {
                                        *dst += a * b;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            vec![Some(dq), Some(dk), Some(dv)]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradients, GradCheck};

    fn wave(shape: &[usize], phase: f64) -> Tensor<f64> {
        Tensor::from_fn(shape, |i| ((i as f64) * 0.618 + phase).sin())
    }

    /// Direct per-site, per-head evaluation of softmax(q kᵀ/√d) v.
    fn reference(q: &Tensor<f64>, k: &Tensor<f64>, v: &Tensor<f64>, t: usize, heads: usize) -> Tensor<f64> {
        let (nt, c, h, w) = q.dims4().unwrap();
        let s = h * w;
        let dh = c / heads;
        let at = |g: usize, i: usize, ch: usize, site: usize| ((g * t + i) * c + ch) * s + site;
        let mut out = Tensor::zeros(q.shape());
        for g in 0..nt / t {
            for head in 0..heads {
                for site in 0..s {
                    for i in 0..t {
                        let scores: Vec<f64> = (0..t)
                            .map(|j| {
                                (0..dh)
                                    .map(|d| q.data()[at(g, i, head * dh + d, site)] * k.data()[at(g, j, head * dh + d, site)])
                                    .sum::<f64>()
                                    / (dh as f64).sqrt()
                            })
                            .collect();
                        let mx = scores.iter().cloned().fold(f64::MIN, f64::max);
                        let z: f64 = scores.iter().map(|x| (x - mx).exp()).sum();
                        for d in 0..dh {
                            let ch = head * dh + d;
                            out.data_mut()[at(g, i, ch, site)] = (0..t)
                                .map(|j| (scores[j] - mx).exp() / z * v.data()[at(g, j, ch, site)])
                                .sum();
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn matches_reference() {
        let shape = [6, 4, 2, 3];
        let (q, k, v) = (wave(&shape, 0.0), wave(&shape, 1.0), wave(&shape, 2.0));
        let fast = temporal_attention_forward(&q, &k, &v, 3, 2).unwrap();
        let slow = reference(&q, &k, &v, 3, 2);
        assert!(fast.max_abs_diff(&slow).unwrap() < 1e-12);
    }

    #[test]
    fn rejects_indivisible_heads() {
        let q = Tensor::<f32>::zeros(&[4, 6, 2, 2]);
        assert!(matches!(
            temporal_attention_forward(&q, &q, &q, 4, 4),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let shape = [4, 4, 2, 2];
        let inputs = vec![wave(&shape, 0.2), wave(&shape, 1.3), wave(&shape, 2.1)];
        let report = check_gradients(&inputs, GradCheck::default(), |v| {
            temporal_attention(v[0], v[1], v[2], 2, 2)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }
}
