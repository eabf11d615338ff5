//! Named parameter collections and their deterministic initialization.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::tensor::{Scalar, Tensor};

/// Ordered map from parameter name to tensor.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self { tensors: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors.get(name).ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self { tensors: self.tensors.iter().map(|(k, v)| (k.clone(), Tensor::zeros(v.shape()))).collect() }
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet { tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::all_finite)
    }

    /// Shapes by name, for architecture audits.
    pub fn shapes(&self) -> BTreeMap<String, Vec<usize>> {
        self.tensors.iter().map(|(k, v)| (k.clone(), v.shape().to_vec())).collect()
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (k, v) in self.tensors.iter_mut() {
            if let Some(o) = other.tensors.get(k) {
                v.add_assign(o);
            }
        }
    }

    pub fn scale_assign(&mut self, s: T) {
        self.tensors.values_mut().for_each(|t| t.scale_assign(s));
    }

    /// Registers every tensor in `g`, differentiable when `trainable`.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(k, v)| {
                let var = if trainable { g.param(v.clone()) } else { g.input(v.clone()) };
                (k.clone(), var)
            })
            .collect();
        Bound { vars }
    }

    /// Extracts the gradient of every bound parameter; untouched ones are zero.
    pub fn collect_grads(&self, bound: &Bound, grads: &Gradients<T>) -> Self {
        let tensors = self
            .tensors
            .iter()
            .map(|(k, v)| {
                let g = bound.vars.get(k).and_then(|&var| grads.get(var)).cloned();
                (k.clone(), g.unwrap_or_else(|| Tensor::zeros(v.shape())))
            })
            .collect();
        Self { tensors }
    }
}

/// Graph handles for a bound [`ParamSet`].
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        *self.vars.get(name).unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    pub fn try_var(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    /// Merges another binding; names must be disjoint.
    pub fn merge(mut self, other: Bound) -> Self {
        for (k, v) in other.vars {
            let prev = self.vars.insert(k, v);
            debug_assert!(prev.is_none());
        }
        self
    }
}

/// Fan-in scaled uniform initialization: weights and biases drawn from
/// `U(−1/√fan_in, 1/√fan_in)` from a ChaCha8 stream.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn uniform<T: Scalar>(&mut self, shape: &[usize], bound: f64) -> Tensor<T> {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::cst(self.rng.gen_range(-bound..bound))).collect::<Vec<_>>();
        Tensor::from_vec(shape, data).expect("shape")
    }

    /// Adds `{prefix}.w` with shape `[out, inp, k, k]` and `{prefix}.b` with shape `[out]`.
    pub fn conv<T: Scalar>(&mut self, set: &mut ParamSet<T>, prefix: &str, out: usize, inp: usize, k: usize) {
        let bound = 1.0 / num_traits::Float::sqrt((inp * k * k) as f64);
        set.insert(alloc::format!("{prefix}.w"), self.uniform(&[out, inp, k, k], bound));
        set.insert(alloc::format!("{prefix}.b"), self.uniform(&[out], bound));
    }

    /// Adds a transposed-convolution kernel `[inp, out, k, k]` plus bias `[out]`.
    pub fn conv_transpose<T: Scalar>(&mut self, set: &mut ParamSet<T>, prefix: &str, inp: usize, out: usize, k: usize) {
        // fan-in is taken over the trailing [out, k, k] kernel slice
        let bound = 1.0 / num_traits::Float::sqrt((out * k * k) as f64);
        set.insert(alloc::format!("{prefix}.w"), self.uniform(&[inp, out, k, k], bound));
        set.insert(alloc::format!("{prefix}.b"), self.uniform(&[out], bound));
    }

    /// Adds `name` with standard-normal entries.
    pub fn normal<T: Scalar>(&mut self, set: &mut ParamSet<T>, name: &str, shape: &[usize]) {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::cst(self.rng.sample(StandardNormal))).collect::<Vec<_>>();
        set.insert(name, Tensor::from_vec(shape, data).expect("shape"));
    }

    /// Adds a dense `[inp, out]` matrix (applied as `x · W`) plus a `[out]` bias.
    pub fn linear<T: Scalar>(&mut self, set: &mut ParamSet<T>, prefix: &str, inp: usize, out: usize) {
        let bound = 1.0 / num_traits::Float::sqrt(inp as f64);
        set.insert(alloc::format!("{prefix}.w"), self.uniform(&[inp, out], bound));
        set.insert(alloc::format!("{prefix}.b"), self.uniform(&[out], bound));
    }
}
