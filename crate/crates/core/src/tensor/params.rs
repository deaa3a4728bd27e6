use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Graph, Gradients, Scalar, Tensor};
use crate::error::{Error, Result};

static NEXT_STORE_UID: AtomicU64 = AtomicU64::new(1);

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Initialization scheme for a freshly registered parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    /// Uniform on `(-1/sqrt(fan_in), 1/sqrt(fan_in))`, `fan_in` being the last dimension.
    FanIn,
    Uniform(f64),
    Normal(f64),
}

impl Init {
    fn sample<S: Scalar, R: Rng + ?Sized>(self, shape: &[usize], rng: &mut R) -> Tensor<S> {
        let numel: usize = shape.iter().product();
        let data = match self {
            Init::Zeros => vec![S::zero(); numel],
            Init::FanIn => {
                let fan_in = *shape.last().unwrap_or(&1) as f64;
                let bound = 1.0 / fan_in.sqrt();
                (0..numel)
                    .map(|_| S::lit(rng.random_range(-bound..bound)))
                    .collect()
            }
            Init::Uniform(bound) => (0..numel)
                .map(|_| S::lit(rng.random_range(-bound..=bound)))
                .collect(),
            Init::Normal(std) => {
                let normal = Normal::new(0.0, std).expect("finite std");
                (0..numel).map(|_| S::lit(normal.sample(rng))).collect()
            }
        };
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Parameter<S> {
    pub name: String,
    pub value: Arc<Tensor<S>>,
    pub grad: Option<Tensor<S>>,
    pub frozen: bool,
}

/// Named parameters of one or more models, in registration order.
///
/// Registration is idempotent: asking for a name that already exists returns
/// the existing parameter (after a shape check), so the same model-building
/// code serves for fresh initialization and for checkpoints.
#[derive(Debug, Clone)]
pub struct ParamStore<S> {
    uid: u64,
    params: Vec<Parameter<S>>,
    by_name: HashMap<String, ParamId>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            uid: NEXT_STORE_UID.fetch_add(1, Ordering::Relaxed),
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub(crate) fn uid(&self) -> u64 {
        self.uid
    }

    /// Returns the parameter called `name`, creating it with `init` if absent.
    pub fn param<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        shape: &[usize],
        init: Init,
        rng: &mut R,
    ) -> Result<ParamId> {
        if let Some(&id) = self.by_name.get(name) {
            let existing = self.params[id.0].value.shape();
            if existing != shape {
                return Err(Error::shape(
                    "param",
                    existing,
                    shape,
                ));
            }
            return Ok(id);
        }
        let value = init.sample(shape, rng);
        Ok(self.insert(name, value))
    }

    /// Inserts or replaces a parameter value.
    pub fn insert(&mut self, name: &str, value: Tensor<S>) -> ParamId {
        if let Some(&id) = self.by_name.get(name) {
            self.params[id.0].value = Arc::new(value);
            self.params[id.0].grad = None;
            return id;
        }
        let id = ParamId(self.params.len());
        self.params.push(Parameter {
            name: name.to_string(),
            value: Arc::new(value),
            grad: None,
            frozen: false,
        });
        self.by_name.insert(name.to_string(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<S> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].value
    }

    pub(crate) fn value_arc(&self, id: ParamId) -> Arc<Tensor<S>> {
        Arc::clone(&self.params[id.0].value)
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        Arc::make_mut(&mut self.params[id.0].value)
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor<S>> {
        self.params[id.0].grad.as_ref()
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.params[id.0].frozen = frozen;
    }

    pub fn freeze_prefix(&mut self, prefix: &str) {
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.frozen = true;
        }
    }

    /// Freezes every parameter whose name starts with none of `prefixes`
    /// and returns the previous flags for [`ParamStore::set_frozen_flags`].
    pub fn freeze_all_except(&mut self, prefixes: &[&str]) -> Vec<bool> {
        let saved = self.params.iter().map(|p| p.frozen).collect();
        for p in &mut self.params {
            if !prefixes.iter().any(|x| p.name.starts_with(x)) {
                p.frozen = true;
            }
        }
        saved
    }

    pub fn set_frozen_flags(&mut self, flags: &[bool]) {
        for (p, &f) in self.params.iter_mut().zip(flags) {
            p.frozen = f;
        }
    }

    pub fn is_frozen(&self, id: ParamId) -> bool {
        self.params[id.0].frozen
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<S>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Parameter<S>] {
        &mut self.params
    }

    pub fn num_trainable(&self) -> usize {
        self.params
            .iter()
            .filter(|p| !p.frozen)
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Adds the gradients of a backward pass into the stored gradient buffers.
    ///
    /// Every trainable parameter ends up with a buffer, zero when the loss
    /// did not reach it.
    pub fn accumulate(&mut self, graph: &Graph<S>, grads: &Gradients<S>) {
        for p in self.params.iter_mut().filter(|p| !p.frozen) {
            if p.grad.is_none() {
                p.grad = Some(Tensor::zeros(p.value.shape()));
            }
        }
        for (id, g) in graph.param_grads(self.uid, grads) {
            let p = &mut self.params[id.0];
            if p.frozen {
                continue;
            }
            let acc = p.grad.as_mut().expect("buffer allocated above");
            for (a, &b) in acc.data.iter_mut().zip(g.data()) {
                *a += b;
            }
        }
    }

    pub fn scale_grads(&mut self, factor: S) {
        for g in self.params.iter_mut().filter_map(|p| p.grad.as_mut()) {
            for v in &mut g.data {
                *v *= factor;
            }
        }
    }

    /// Copy with every value converted to another element type.
    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for p in &self.params {
            let id = out.insert(&p.name, p.value.cast());
            out.set_frozen(id, p.frozen);
        }
        out
    }

    /// Copies every parameter of `other` into this store under `prefix`.
    pub fn import(&mut self, other: &ParamStore<S>, prefix: &str) {
        for p in &other.params {
            let name = format!("{prefix}{}", p.name);
            let id = self.insert(&name, (*p.value).clone());
            self.set_frozen(id, p.frozen);
        }
    }

    /// Overwrites every parameter of this store with the same-named value
    /// from `other`. Missing names and shape differences are errors.
    pub fn load_from(&mut self, other: &ParamStore<S>) -> Result<()> {
        self.load_prefix(other, "")
    }

    /// [`ParamStore::load_from`] restricted to names starting with `prefix`.
    pub fn load_prefix(&mut self, other: &ParamStore<S>, prefix: &str) -> Result<()> {
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            let src = other
                .id(&p.name)
                .map(|id| other.value_arc(id))
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{}`", p.name)))?;
            if src.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` has shape {:?}, checkpoint has {:?}",
                    p.name,
                    p.value.shape(),
                    src.shape()
                )));
            }
            p.value = src;
            p.grad = None;
        }
        Ok(())
    }

    /// Extracts the parameters whose names start with `prefix`, stripping it.
    pub fn extract(&self, prefix: &str) -> ParamStore<S> {
        let mut out = ParamStore::new();
        for p in self.params.iter().filter(|p| p.name.starts_with(prefix)) {
            let id = out.insert(&p.name[prefix.len()..], (*p.value).clone());
            out.set_frozen(id, p.frozen);
        }
        out
    }
}
