//! Named trainable tensors and their binding onto a tape.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Grads, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named parameters. Insertion order is the
/// serialization order.
#[derive(Debug, Clone)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    by_name: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    /// Panics on a duplicate name; names are fixed by the architecture.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        let id = self.tensors.len();
        assert!(
            self.by_name.insert(name.clone(), id).is_none(),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.tensors.push(value);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// Replaces every tensor, checking shapes against the current ones.
    pub fn set_all(&mut self, values: Vec<Tensor<T>>) -> Result<()> {
        if values.len() != self.tensors.len() {
            return Err(Error::shape(format!(
                "expected {} parameter tensors, got {}",
                self.tensors.len(),
                values.len()
            )));
        }
        for (i, v) in values.iter().enumerate() {
            if v.shape() != self.tensors[i].shape() {
                return Err(Error::shape(format!(
                    "parameter {} has shape {:?}, got {:?}",
                    self.names[i],
                    self.tensors[i].shape(),
                    v.shape()
                )));
            }
        }
        self.tensors = values;
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            by_name: self.by_name.clone(),
        }
    }

    /// Puts every parameter on `tape` as a tracked leaf.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        Bound {
            vars: self.tensors.iter().map(|t| tape.var(t.clone())).collect(),
        }
    }

    /// Like [`bind`](Self::bind) but without gradient tracking.
    pub fn bind_constant<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        Bound {
            vars: self.tensors.iter().map(|t| tape.constant(t.clone())).collect(),
        }
    }
}

/// Parameters of one store placed on a tape, indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound<'t, T> {
    vars: Vec<Var<'t, T>>,
}

impl<'t, T: Scalar> Bound<'t, T> {
    /// Uses externally created vars, in store order.
    pub fn from_vars(vars: Vec<Var<'t, T>>) -> Self {
        Self { vars }
    }

    pub fn get(&self, id: ParamId) -> Var<'t, T> {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'t, T>] {
        &self.vars
    }

    /// One gradient per parameter, zeros where none flowed.
    pub fn gradients(&self, grads: &mut Grads<T>) -> Vec<Tensor<T>> {
        self.vars
            .iter()
            .map(|&v| grads.take(v).unwrap_or_else(|| Tensor::zeros(&v.shape())))
            .collect()
    }
}

/// Deterministic double-precision initializer; models of either precision
/// are initialized in `f64` and cast, so they start from identical values.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self, shape: &[usize], bound: f64) -> Tensor<f64> {
        if bound == 0.0 {
            return Tensor::zeros(shape);
        }
        Tensor::from_fn(shape, |_| self.rng.random_range(-bound..bound))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn store_tracks_names_and_counts() {
        let mut s = ParamStore::<f64>::new();
        let a = s.add("a", Tensor::zeros(&[2, 3]));
        let b = s.add("b", Tensor::full(&[4], 1.0));
        assert_eq!(s.numel(), 10);
        assert_eq!(s.find("b"), Some(b));
        assert_eq!(s.name(a), "a");
        assert!(s.set_all(vec![Tensor::zeros(&[3, 2]), Tensor::zeros(&[4])]).is_err());
        let f = s.cast::<f32>();
        assert_eq!(f.get(b).data(), &[1.0f32; 4]);
    }

    #[test]
    #[should_panic(expected = "duplicate")]
    fn duplicate_names_panic() {
        let mut s = ParamStore::<f32>::new();
        s.add("w", Tensor::zeros(&[1]));
        s.add("w", Tensor::zeros(&[1]));
    }

    #[test]
    fn bound_gradients_default_to_zero() {
        let mut s = ParamStore::<f64>::new();
        let a = s.add("a", Tensor::full(&[2], 3.0));
        s.add("unused", Tensor::full(&[3], 1.0));
        let tape = Tape::new();
        let p = s.bind(&tape);
        let loss = p.get(a).mul(p.get(a)).unwrap().mean();
        let mut g = tape.backward(loss).unwrap();
        let grads = p.gradients(&mut g);
        assert_eq!(grads[0].data(), &[3.0, 3.0]);
        assert_eq!(grads[1].data(), &[0.0; 3]);
    }

    #[test]
    fn init_is_seeded() {
        let a = Init::new(3).uniform(&[5], 0.5);
        let b = Init::new(3).uniform(&[5], 0.5);
        assert_eq!(a.data(), b.data());
        assert!(a.data().iter().all(|v| v.abs() < 0.5));
    }
}
