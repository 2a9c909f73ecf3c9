//! Named parameter store and the two optimizers used here: SGD with Nesterov
//! momentum for the ensemble members and RMSProp for the discriminator.
//!
//! Optimizer state lives next to each parameter so a `ParamSet` is the whole
//! mutable training state of a model. Updates are plain elementwise recurrences
//! and therefore deterministic given (params, grads, state).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

/// Denominator stabilizer in the RMSProp update (chosen constant; the update
/// is `p -= lr * g / sqrt(s + EPS)`).
pub const RMSPROP_EPS: f64 = 1e-8;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamEntry {
    pub value: Tensor,
    /// Momentum buffer for the Nesterov update; allocated lazily.
    pub velocity: Option<Tensor>,
    /// Squared-gradient average for RMSProp; allocated lazily.
    pub sq_avg: Option<Tensor>,
}

/// Named parameters with per-parameter optimizer state. Iteration order is
/// the sorted name order, which makes checkpoints and updates reproducible.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ParamSet {
    entries: BTreeMap<String, ParamEntry>,
}

/// Gradients keyed by parameter name.
pub type GradMap = BTreeMap<String, Tensor>;

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        let prev = self.entries.insert(
            name.to_string(),
            ParamEntry { value, velocity: None, sq_avg: None },
        );
        assert!(prev.is_none(), "duplicate parameter {name}");
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self.entries.get(name).unwrap_or_else(|| panic!("unknown parameter {name}")).value
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        &mut self.entries.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name}")).value
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    /// Names with a given prefix, e.g. `disc.` for the discriminator block.
    pub fn names_with_prefix(&self, prefix: &str) -> Vec<String> {
        self.entries.keys().filter(|k| k.starts_with(prefix)).cloned().collect()
    }

    /// SGD with Nesterov momentum. Weight decay enters as an additive L2
    /// gradient term before the momentum buffer update:
    ///   g   <- grad + wd * p
    ///   v   <- momentum * v + g
    ///   p   <- p - lr * (g + momentum * v)
    /// With momentum = 0 this reduces to plain gradient descent.
    /// Only parameters named in `grads` are touched.
    pub fn sgd_nesterov_step(
        &mut self,
        grads: &GradMap,
        lr: f64,
        momentum: f64,
        weight_decay: f64,
    ) {
        assert!(lr > 0.0, "lr must be positive");
        assert!((0.0..1.0).contains(&momentum), "momentum must be in [0,1)");
        for (name, grad) in grads {
            let entry =
                self.entries.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
            assert_eq!(entry.value.shape(), grad.shape(), "gradient shape mismatch for {name}");
            let velocity = entry
                .velocity
                .get_or_insert_with(|| Tensor::zeros(entry.value.shape()));
            let p = entry.value.values_mut();
            let v = velocity.values_mut();
            let g = grad.values();
            for i in 0..p.len() {
                let gi = g[i] + weight_decay * p[i];
                v[i] = momentum * v[i] + gi;
                p[i] -= lr * (gi + momentum * v[i]);
            }
        }
    }

    /// RMSProp:
    ///   s <- decay_rate * s + (1 - decay_rate) * g^2
    ///   p <- p - lr * g / sqrt(s + EPS)
    pub fn rmsprop_step(&mut self, grads: &GradMap, lr: f64, decay_rate: f64) {
        assert!(lr > 0.0, "lr must be positive");
        assert!((0.0..1.0).contains(&decay_rate) && decay_rate > 0.0, "decay_rate in (0,1)");
        for (name, grad) in grads {
            let entry =
                self.entries.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
            assert_eq!(entry.value.shape(), grad.shape(), "gradient shape mismatch for {name}");
            let sq_avg =
                entry.sq_avg.get_or_insert_with(|| Tensor::zeros(entry.value.shape()));
            let p = entry.value.values_mut();
            let s = sq_avg.values_mut();
            let g = grad.values();
            for i in 0..p.len() {
                s[i] = decay_rate * s[i] + (1.0 - decay_rate) * g[i] * g[i];
                p[i] -= lr * g[i] / (s[i] + RMSPROP_EPS).sqrt();
            }
        }
    }
}
