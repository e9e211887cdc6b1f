use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tape::{Grads, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamRef(usize);

/// Named, ordered collection of trainable tensors owned by one network.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet<S> {
    names: Vec<String>,
    values: Vec<Tensor<S>>,
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<S>) -> ParamRef {
        self.names.push(name.into());
        self.values.push(value);
        ParamRef(self.values.len() - 1)
    }

    /// Gaussian tensor with standard deviation `std`, sampled in f64 so that
    /// f32 and f64 networks built from the same seed agree up to rounding.
    pub fn add_normal<R: Rng>(&mut self, name: impl Into<String>, shape: &[usize], std: f64, rng: &mut R) -> ParamRef {
        let normal = Normal::new(0.0, std).expect("finite std");
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| S::lit(normal.sample(rng))).collect();
        self.add(name, Tensor::new(shape.to_vec(), data).expect("shape matches"))
    }

    pub fn get(&self, p: ParamRef) -> &Tensor<S> {
        &self.values[p.0]
    }

    pub fn get_mut(&mut self, p: ParamRef) -> &mut Tensor<S> {
        &mut self.values[p.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<S>] {
        &self.values
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.values
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Place every tensor on the tape as a leaf.
    pub fn bind(&self, tape: &mut Tape<S>, trainable: bool) -> Bound {
        Bound {
            vars: self
                .values
                .iter()
                .map(|t| tape.leaf(t.clone(), trainable))
                .collect(),
        }
    }

    /// Replace all values with those of `other`, which must have identical names and shapes.
    pub fn load_from(&mut self, other: &ParamSet<S>) -> Result<()> {
        if self.names != other.names {
            return Err(NnError::Params("parameter names differ".into()));
        }
        for (dst, src) in self.values.iter_mut().zip(&other.values) {
            if dst.shape() != src.shape() {
                return Err(NnError::Params(format!(
                    "shape {:?} vs {:?}",
                    dst.shape(),
                    src.shape()
                )));
            }
            *dst = src.clone();
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> ParamSet<T> {
        ParamSet {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
        }
    }

    /// Scalar at flat position `i` across all tensors.
    pub fn flat_get(&self, mut i: usize) -> S {
        for t in &self.values {
            if i < t.numel() {
                return t.data()[i];
            }
            i -= t.numel();
        }
        panic!("flat index out of range")
    }

    pub fn flat_set(&mut self, mut i: usize, v: S) {
        for t in &mut self.values {
            if i < t.numel() {
                t.data_mut()[i] = v;
                return;
            }
            i -= t.numel();
        }
        panic!("flat index out of range")
    }
}

/// Tape handles of one bound [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, p: ParamRef) -> Var {
        self.vars[p.0]
    }

    /// Gradients in parameter order; parameters that received none get zeros.
    pub fn grads<S: Scalar>(&self, grads: &Grads<S>, params: &ParamSet<S>) -> Vec<Tensor<S>> {
        self.vars
            .iter()
            .zip(params.tensors())
            .map(|(&v, t)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    }
}

/// Element-wise sum of two gradient lists.
pub fn add_grads<S: Scalar>(acc: &mut [Tensor<S>], other: &[Tensor<S>]) {
    for (a, b) in acc.iter_mut().zip(other) {
        a.add_assign(b);
    }
}

pub fn flatten_grads<S: Scalar>(grads: &[Tensor<S>]) -> Vec<S> {
    grads.iter().flat_map(|g| g.data().iter().copied()).collect()
}
