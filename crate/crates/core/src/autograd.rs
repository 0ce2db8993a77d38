//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records every operation applied to [`Var`]s during one forward
//! pass. [`Tape::backward`] then walks the records in reverse, handing each
//! operation's closure the gradient of its output and collecting the
//! gradients of its inputs. A tape is built per forward pass and dropped
//! afterwards.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Given the output gradient and which parents want gradients, returns one
/// entry per parent (`None` where not requested).
pub type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Rc<Tensor<T>>,
    needs_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Clone, Copy)]
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}", self.id)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// A leaf whose gradient is tracked (parameters, probed inputs).
    pub fn var(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Rc::new(value), true, Vec::new(), None)
    }

    /// A leaf with no gradient (data).
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(Rc::new(value), false, Vec::new(), None)
    }

    /// Records an operation's output. The closure is kept only if some
    /// parent needs a gradient.
    pub fn record(
        &self,
        value: Tensor<T>,
        parents: &[Var<'_, T>],
        backward: BackwardFn<T>,
    ) -> Var<'_, T> {
        let ids: Vec<usize> = parents.iter().map(|p| p.id).collect();
        let needs_grad = {
            let nodes = self.nodes.borrow();
            ids.iter().any(|&i| nodes[i].needs_grad)
        };
        let backward = needs_grad.then_some(backward);
        self.push(Rc::new(value), needs_grad, ids, backward)
    }

    fn push(
        &self,
        value: Rc<Tensor<T>>,
        needs_grad: bool,
        parents: Vec<usize>,
        backward: Option<BackwardFn<T>>,
    ) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            needs_grad,
            parents,
            backward,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Gradients of a single-element `loss` with respect to every tracked
    /// node it depends on.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Grads<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar, got {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(root.value.shape(), T::one()));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let wants: Vec<bool> = node.parents.iter().map(|&p| nodes[p].needs_grad).collect();
            let parent_grads = backward(&grad, &wants);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, g), &want) in node.parents.iter().zip(parent_grads).zip(&wants) {
                let (Some(g), true) = (g, want) else { continue };
                debug_assert_eq!(g.shape(), nodes[p].value.shape());
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&g)?,
                    slot @ None => *slot = Some(g),
                }
            }
            // keep gradients of leaves only
            grads[id] = None;
        }
        Ok(Grads { grads })
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, or zeros when it did not influence the loss.
    pub fn get_or_zeros(&self, var: Var<'_, T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.value().shape()))
    }

    pub fn take(&mut self, var: Var<'_, T>) -> Option<Tensor<T>> {
        self.grads.get_mut(var.id).and_then(|g| g.take())
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let out = self.value().zip_map(&other.value(), |a, b| a + b)?;
        Ok(self.tape.record(
            out,
            &[self, other],
            Box::new(|g, _| vec![Some(g.clone()), Some(g.clone())]),
        ))
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let out = self.value().zip_map(&other.value(), |a, b| a - b)?;
        Ok(self.tape.record(
            out,
            &[self, other],
            Box::new(|g, _| vec![Some(g.clone()), Some(g.map(|v| -v))]),
        ))
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let a = self.value();
        let b = other.value();
        let out = a.zip_map(&b, |x, y| x * y)?;
        Ok(self.tape.record(
            out,
            &[self, other],
            Box::new(move |g, wants| {
                vec![
                    wants[0].then(|| g.zip_map(&b, |gv, bv| gv * bv).expect("shape")),
                    wants[1].then(|| g.zip_map(&a, |gv, av| gv * av).expect("shape")),
                ]
            }),
        ))
    }

    pub fn scale(self, s: T) -> Var<'t, T> {
        let out = self.value().map(|v| v * s);
        self.tape
            .record(out, &[self], Box::new(move |g, _| vec![Some(g.map(|v| v * s))]))
    }

    /// Sums a list of equally shaped variables.
    pub fn sum_all(vars: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let (first, rest) = vars
            .split_first()
            .ok_or_else(|| Error::shape("sum of zero terms"))?;
        let mut out = (*first.value()).clone();
        for v in rest {
            out.add_assign(&v.value())?;
        }
        let n = vars.len();
        Ok(first
            .tape
            .record(out, vars, Box::new(move |g, _| vec![Some(g.clone()); n])))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let old = self.shape();
        let out = (*self.value()).clone().reshape(shape)?;
        Ok(self.tape.record(
            out,
            &[self],
            Box::new(move |g, _| vec![Some(g.clone().reshape(&old).expect("numel"))]),
        ))
    }

    /// Mean over all elements, as a one-element tensor.
    pub fn mean(self) -> Var<'t, T> {
        let v = self.value();
        let n = v.numel();
        let shape = v.shape().to_vec();
        let out = Tensor::scalar(v.sum() / T::from_f64(n as f64));
        self.tape.record(
            out,
            &[self],
            Box::new(move |g, _| {
                let d = g.data()[0] / T::from_f64(n as f64);
                vec![Some(Tensor::full(&shape, d))]
            }),
        )
    }

    pub fn narrow_channels(self, start: usize, len: usize) -> Result<Var<'t, T>> {
        let v = self.value();
        let out = v.narrow_channels(start, len)?;
        let (n, c, h, w) = v.dims4()?;
        Ok(self.tape.record(
            out,
            &[self],
            Box::new(move |g, _| {
                let plane = h * w;
                let mut full = Tensor::zeros(&[n, c, h, w]);
                let fd = full.data_mut();
                for b in 0..n {
                    let dst = (b * c + start) * plane;
                    let src = b * len * plane;
                    fd[dst..dst + len * plane].copy_from_slice(&g.data()[src..src + len * plane]);
                }
                vec![Some(full)]
            }),
        ))
    }

    pub fn concat_channels(parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat of zero tensors"))?;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor<T>> = values.iter().map(|v| v.as_ref()).collect();
        let out = Tensor::concat_channels(&refs)?;
        let channels: Vec<usize> = values.iter().map(|v| v.shape()[1]).collect();
        Ok(first.tape.record(
            out,
            parts,
            Box::new(move |g, wants| {
                let mut start = 0;
                channels
                    .iter()
                    .zip(wants)
                    .map(|(&c, &want)| {
                        let piece = want.then(|| g.narrow_channels(start, c).expect("shape"));
                        start += c;
                        piece
                    })
                    .collect()
            }),
        ))
    }

    /// `x * sigmoid(x)`.
    pub fn silu(self) -> Var<'t, T> {
        let x = self.value();
        let out = x.map(|v| v * sigmoid(v));
        self.tape.record(
            out,
            &[self],
            Box::new(move |g, _| {
                let dx = g
                    .zip_map(&x, |gv, xv| {
                        let s = sigmoid(xv);
                        gv * (s + xv * s * (T::one() - s))
                    })
                    .expect("shape");
                vec![Some(dx)]
            }),
        )
    }

    /// Softmax across the channel axis of a rank-4 tensor, independently at
    /// every pixel.
    pub fn softmax_channels(self) -> Result<Var<'t, T>> {
        let x = self.value();
        let (n, c, h, w) = x.dims4()?;
        let plane = h * w;
        let mut out = Tensor::zeros(x.shape());
        {
            let xd = x.data();
            let od = out.data_mut();
            for b in 0..n {
                let base = b * c * plane;
                for p in 0..plane {
                    let mut mx = T::neg_infinity();
                    for k in 0..c {
                        mx = mx.max(xd[base + k * plane + p]);
                    }
                    let mut z = T::zero();
                    for k in 0..c {
                        let e = (xd[base + k * plane + p] - mx).exp();
                        od[base + k * plane + p] = e;
                        z += e;
                    }
                    for k in 0..c {
                        od[base + k * plane + p] /= z;
                    }
                }
            }
        }
        let y = Rc::new(out.clone());
        Ok(self.tape.record(
            out,
            &[self],
            Box::new(move |g, _| {
                let mut dx = Tensor::zeros(y.shape());
                let yd = y.data();
                let gd = g.data();
                let dd = dx.data_mut();
                for b in 0..n {
                    let base = b * c * plane;
                    for p in 0..plane {
                        let mut dot = T::zero();
                        for k in 0..c {
                            let i = base + k * plane + p;
                            dot += gd[i] * yd[i];
                        }
                        for k in 0..c {
                            let i = base + k * plane + p;
                            dd[i] = yd[i] * (gd[i] - dot);
                        }
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Multiplies every channel of `self` (`N×C×H×W`) by a single-channel
    /// map (`N×1×H×W`).
    pub fn mul_channel_broadcast(self, mask: Var<'t, T>) -> Result<Var<'t, T>> {
        let x = self.value();
        let m = mask.value();
        let (n, c, h, w) = x.dims4()?;
        if m.shape() != [n, 1, h, w] {
            return Err(Error::shape(format!(
                "mask {:?} does not broadcast over {:?}",
                m.shape(),
                x.shape()
            )));
        }
        let plane = h * w;
        let mut out = Tensor::zeros(x.shape());
        for b in 0..n {
            let md = &m.data()[b * plane..(b + 1) * plane];
            for k in 0..c {
                let off = (b * c + k) * plane;
                let xs = &x.data()[off..off + plane];
                for ((o, &xv), &mv) in out.data_mut()[off..off + plane].iter_mut().zip(xs).zip(md) {
                    *o = xv * mv;
                }
            }
        }
        Ok(self.tape.record(
            out,
            &[self, mask],
            Box::new(move |g, wants| {
                let gd = g.data();
                let dx = wants[0].then(|| {
                    let mut dx = Tensor::zeros(x.shape());
                    for b in 0..n {
                        let md = &m.data()[b * plane..(b + 1) * plane];
                        for k in 0..c {
                            let off = (b * c + k) * plane;
                            for p in 0..plane {
                                dx.data_mut()[off + p] = gd[off + p] * md[p];
                            }
                        }
                    }
                    dx
                });
                let dm = wants[1].then(|| {
                    let mut dm = Tensor::zeros(m.shape());
                    for b in 0..n {
                        for k in 0..c {
                            let off = (b * c + k) * plane;
                            for p in 0..plane {
                                dm.data_mut()[b * plane + p] += gd[off + p] * x.data()[off + p];
                            }
                        }
                    }
                    dm
                });
                vec![dx, dm]
            }),
        ))
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}
