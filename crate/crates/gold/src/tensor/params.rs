//! Parameter storage, forward-pass binding and the Adam optimizer.

use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Tape, Var};

/// Which part of the model a parameter belongs to. Training stages update
/// disjoint groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    /// Global bank, DSA and GOCL parameters (stage one).
    ObjectModel,
    /// Patch encoder (warm start only; frozen afterwards).
    CodecEncoder,
    /// Patch-to-image decoder (warm start and stage two).
    CodecDecoder,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Array2<f64>,
    pub m: Array2<f64>,
    pub v: Array2<f64>,
    pub t: u64,
}

/// Flat registry of all learnable parameters of a model.
#[derive(Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        group: ParamGroup,
        init: Array2<f64>,
    ) -> ParamId {
        let dim = init.dim();
        self.params.push(Param {
            name: name.into(),
            group,
            value: init,
            m: Array2::zeros(dim),
            v: Array2::zeros(dim),
            t: 0,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.params[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Array2<f64>) {
        assert_eq!(self.params[id.0].value.dim(), value.dim());
        self.params[id.0].value = value;
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Concatenated copy of all values in a group, for gating assertions.
    pub fn group_vector(&self, group: ParamGroup) -> Vec<f64> {
        self.params
            .iter()
            .filter(|p| p.group == group)
            .flat_map(|p| p.value.iter().copied())
            .collect()
    }
}

/// Binds parameters onto a tape during a forward pass, remembering which
/// tape node corresponds to which parameter so gradients can be collected
/// afterwards.
pub struct Binding {
    bound: HashMap<ParamId, Var>,
}

impl Binding {
    pub fn new() -> Self {
        Self {
            bound: HashMap::new(),
        }
    }

    pub fn get(&mut self, tape: &mut Tape, store: &ParamStore, id: ParamId) -> Var {
        *self
            .bound
            .entry(id)
            .or_insert_with(|| tape.leaf(store.value(id).clone()))
    }

    /// Collect per-parameter gradients from a finished backward pass.
    pub fn gradients(
        &self,
        grads: &[Option<Array2<f64>>],
    ) -> HashMap<ParamId, Array2<f64>> {
        self.bound
            .iter()
            .filter_map(|(&id, &var)| grads[var.0].clone().map(|g| (id, g)))
            .collect()
    }

    pub fn var(&self, id: ParamId) -> Option<Var> {
        self.bound.get(&id).copied()
    }
}

impl Default for Binding {
    fn default() -> Self {
        Self::new()
    }
}

/// Adam with optional global-norm gradient clipping.
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
        }
    }
}

impl Adam {
    /// Apply one update to every parameter in `groups` that received a
    /// gradient. Parameters outside `groups` are untouched.
    pub fn step(
        &self,
        store: &mut ParamStore,
        grads: &HashMap<ParamId, Array2<f64>>,
        lr: f64,
        groups: &[ParamGroup],
    ) {
        let active: Vec<ParamId> = store
            .ids()
            .filter(|&id| groups.contains(&store.param(id).group) && grads.contains_key(&id))
            .collect();
        let scale = match self.clip_norm {
            Some(max) => {
                let sq: f64 = active
                    .iter()
                    .map(|id| grads[id].iter().map(|g| g * g).sum::<f64>())
                    .sum();
                let norm = sq.sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        for id in active {
            let g = &grads[&id];
            let p = store.param_mut(id);
            p.t += 1;
            let t = p.t as i32;
            p.m.zip_mut_with(g, |m, &gv| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * gv * scale
            });
            p.v.zip_mut_with(g, |v, &gv| {
                let gs = gv * scale;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gs * gs
            });
            let bc1 = 1.0 - self.beta1.powi(t);
            let bc2 = 1.0 - self.beta2.powi(t);
            ndarray::Zip::from(&mut p.value)
                .and(&p.m)
                .and(&p.v)
                .for_each(|w, &m, &v| {
                    *w -= lr * (m / bc1) / ((v / bc2).sqrt() + self.eps);
                });
        }
    }
}

/// Gaussian init scaled by fan-in, the usual choice for small MLPs.
pub fn xavier_init(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    let std = (2.0 / (rows + cols) as f64).sqrt();
    let dist = Normal::new(0.0, std).unwrap();
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

/// Standard normal init.
pub fn normal_init(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    let dist = Normal::new(0.0, std).unwrap();
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}
