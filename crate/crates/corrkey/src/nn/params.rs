//! Named parameter tensors with gradient accumulators and Adam state.

use std::rc::Rc;

use indexmap::IndexMap;
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Grads, NodeId, Tape};
use super::tensor::{NnError, Tensor};

pub const INIT_RANGE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: Vec<usize>) -> Self {
        ParamSpec {
            name: name.into(),
            shape,
        }
    }
}

struct Entry {
    value: Rc<Tensor>,
    grad: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// All learned tensors of a model plus per-parameter gradient and Adam
/// moment buffers. Iteration order is the registration order, which keeps
/// checkpoints and updates deterministic.
pub struct ParamStore {
    entries: IndexMap<String, Entry>,
    step: u64,
}

impl ParamStore {
    /// Uniform [-0.1, 0.1] initialization of every tensor in `specs`,
    /// deterministic for a given seed.
    pub fn init(specs: &[ParamSpec], seed: u64) -> Result<Self, NnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Uniform::new_inclusive(-INIT_RANGE, INIT_RANGE);
        let mut entries = IndexMap::new();
        for spec in specs {
            let n: usize = spec.shape.iter().product();
            let data: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
            let prev = entries.insert(
                spec.name.clone(),
                Entry {
                    value: Rc::new(Tensor::new(spec.shape.clone(), data)),
                    grad: vec![0.0; n],
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                },
            );
            if prev.is_some() {
                return Err(NnError::DuplicateName(spec.name.clone()));
            }
        }
        Ok(ParamStore { entries, step: 0 })
    }

    /// Build a store around existing tensors (checkpoint loading).
    pub fn from_tensors(
        tensors: Vec<(String, Tensor)>,
        adam: Option<Vec<(Vec<f64>, Vec<f64>)>>,
        step: u64,
    ) -> Result<Self, NnError> {
        let mut entries = IndexMap::new();
        for (i, (name, t)) in tensors.into_iter().enumerate() {
            let n = t.numel();
            let (m, v) = match &adam {
                Some(states) => states[i].clone(),
                None => (vec![0.0; n], vec![0.0; n]),
            };
            let prev = entries.insert(
                name.clone(),
                Entry {
                    value: Rc::new(t),
                    grad: vec![0.0; n],
                    m,
                    v,
                },
            );
            if prev.is_some() {
                return Err(NnError::DuplicateName(name));
            }
        }
        Ok(ParamStore { entries, step })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, NnError> {
        self.entries
            .get(name)
            .map(|e| e.value.as_ref())
            .ok_or_else(|| NnError::UnknownName(name.to_string()))
    }

    pub fn get_rc(&self, name: &str) -> Result<Rc<Tensor>, NnError> {
        self.entries
            .get(name)
            .map(|e| Rc::clone(&e.value))
            .ok_or_else(|| NnError::UnknownName(name.to_string()))
    }

    pub fn grad(&self, name: &str) -> Result<&[f64], NnError> {
        self.entries
            .get(name)
            .map(|e| e.grad.as_slice())
            .ok_or_else(|| NnError::UnknownName(name.to_string()))
    }

    pub fn adam_state(&self, name: &str) -> Result<(&[f64], &[f64]), NnError> {
        self.entries
            .get(name)
            .map(|e| (e.m.as_slice(), e.v.as_slice()))
            .ok_or_else(|| NnError::UnknownName(name.to_string()))
    }

    /// Overwrite one tensor's values in place (tests and oracles).
    pub fn set(&mut self, name: &str, values: &[f64]) -> Result<(), NnError> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| NnError::UnknownName(name.to_string()))?;
        assert_eq!(entry.value.numel(), values.len());
        Rc::make_mut(&mut entry.value)
            .data_mut()
            .copy_from_slice(values);
        Ok(())
    }

    /// Insert every parameter as a leaf on `tape`; returns name -> node.
    pub fn bind(&self, tape: &mut Tape) -> Binding {
        let mut ids = IndexMap::new();
        for (name, e) in &self.entries {
            ids.insert(name.clone(), tape.leaf(Rc::clone(&e.value)));
        }
        Binding { ids }
    }

    /// Pull gradients of the bound parameters out of a backward pass,
    /// accumulating into the store.
    pub fn accumulate_grads(&mut self, grads: &Grads, binding: &Binding) {
        for (name, e) in self.entries.iter_mut() {
            let id = binding.ids[name.as_str()];
            if let Some(g) = grads.get_ref(id) {
                for (acc, d) in e.grad.iter_mut().zip(g) {
                    *acc += d;
                }
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|e| e.grad.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn grads_finite(&self) -> bool {
        self.entries
            .values()
            .all(|e| e.grad.iter().all(|g| g.is_finite()))
    }

    /// Rescale all gradients so the global L2 norm is at most `clip`.
    /// Returns the pre-clip norm.
    pub fn clip_gradients(&mut self, clip: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > clip && norm > 0.0 {
            let s = clip / norm;
            for e in self.entries.values_mut() {
                e.grad.iter_mut().for_each(|g| *g *= s);
            }
        }
        norm
    }

    /// One Adam update with bias correction; increments the step counter and
    /// clears gradients.
    pub fn adam_step(&mut self, lr: f64, beta1: f64, beta2: f64, eps: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for e in self.entries.values_mut() {
            let tensor = Rc::make_mut(&mut e.value);
            let data = tensor.data_mut();
            for i in 0..data.len() {
                let g = e.grad[i];
                e.m[i] = beta1 * e.m[i] + (1.0 - beta1) * g;
                e.v[i] = beta2 * e.v[i] + (1.0 - beta2) * g * g;
                let m_hat = e.m[i] / bc1;
                let v_hat = e.v[i] / bc2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                e.grad[i] = 0.0;
            }
        }
    }

    /// Deep copy, including Adam state and step counter.
    pub fn snapshot(&self) -> ParamStore {
        let mut entries = IndexMap::new();
        for (name, e) in &self.entries {
            entries.insert(
                name.clone(),
                Entry {
                    value: Rc::new(e.value.as_ref().clone()),
                    grad: e.grad.clone(),
                    m: e.m.clone(),
                    v: e.v.clone(),
                },
            );
        }
        ParamStore {
            entries,
            step: self.step,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.entries.values().all(|e| e.value.all_finite())
    }
}

/// Parameter name -> tape node mapping for one forward pass.
pub struct Binding {
    ids: IndexMap<String, NodeId>,
}

impl Binding {
    pub fn node(&self, name: &str) -> NodeId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("parameter {} not bound", name))
    }
}
