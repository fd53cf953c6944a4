use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

use super::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..AdamConfig::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Gradients keyed by parameter name.
pub type ParamGrads = BTreeMap<String, Tensor>;

#[derive(Clone, Debug, PartialEq)]
struct Slot {
    value: Tensor,
    m: Tensor,
    v: Tensor,
}

/// Named parameter tensors plus Adam moments.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    slots: BTreeMap<String, Slot>,
    steps: u64,
}

/// A view of a parameter set handed to model code while building a graph.
/// Frozen bindings enter the tape as constants, so no gradient is produced
/// for them (gradients still flow through them to other inputs).
#[derive(Clone, Copy)]
pub struct Binding<'a> {
    pub(crate) set: &'a ParamSet,
    pub(crate) trainable: bool,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.slots.contains_key(name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name {name}")));
        }
        let (r, c) = value.shape();
        self.slots.insert(
            name.to_string(),
            Slot {
                value,
                m: Tensor::zeros(r, c),
                v: Tensor::zeros(r, c),
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.slots.get(name).map(|s| &s.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.slots.get_mut(name).map(|s| &mut s.value)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.slots.iter().map(|(k, s)| (k.as_str(), &s.value))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.slots.values().map(|s| s.value.len()).sum()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn train(&self) -> Binding<'_> {
        Binding {
            set: self,
            trainable: true,
        }
    }

    pub fn frozen(&self) -> Binding<'_> {
        Binding {
            set: self,
            trainable: false,
        }
    }

    /// One Adam update. Parameters absent from `grads` see a zero gradient.
    /// Non-finite gradients abort before anything is modified.
    pub fn adam_step(&mut self, grads: &ParamGrads, cfg: &AdamConfig) -> Result<()> {
        for (name, g) in grads {
            let slot = self
                .slots
                .get(name)
                .ok_or_else(|| Error::InvalidArgument(format!("gradient for unknown parameter {name}")))?;
            if slot.value.shape() != g.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("{name}: parameter {:?} vs gradient {:?}", slot.value.shape(), g.shape()),
                ));
            }
            if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: "adam_step".into(),
                    detail: format!("gradient of {name}[{i}] = {}", g.data()[i]),
                });
            }
        }
        self.steps += 1;
        let t = self.steps as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (name, slot) in self.slots.iter_mut() {
            let g = grads.get(name);
            let Slot { value, m, v } = slot;
            let moments = m.data_mut().iter_mut().zip(v.data_mut().iter_mut());
            for (i, (w, (m, v))) in value.data_mut().iter_mut().zip(moments).enumerate() {
                let gi = g.map_or(0.0, |g| g.data()[i]);
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * gi;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * gi * gi;
                *w -= cfg.lr * (*m / bc1) / ((*v / bc2).sqrt() + cfg.eps);
            }
        }
        Ok(())
    }

    /// `self <- tau * source + (1 - tau) * self` on values (moments untouched).
    pub fn polyak_from(&mut self, source: &ParamSet, tau: f64) -> Result<()> {
        for (name, slot) in self.slots.iter_mut() {
            let src = source
                .get(name)
                .ok_or_else(|| Error::InvalidArgument(format!("polyak source lacks {name}")))?;
            if src.shape() != slot.value.shape() {
                return Err(Error::shape("polyak", name.clone()));
            }
            for (w, s) in slot.value.data_mut().iter_mut().zip(src.data()) {
                *w = tau * s + (1.0 - tau) * *w;
            }
        }
        Ok(())
    }

    /// Copy of the values with fresh (zero) optimizer moments.
    pub fn values_only(&self) -> ParamSet {
        let mut out = ParamSet::new();
        for (k, v) in self.iter() {
            out.insert(k, v.clone()).expect("names unique");
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        super::checkpoint::encode(self.iter())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ParamSet> {
        let mut out = ParamSet::new();
        for (name, t) in super::checkpoint::decode(bytes)? {
            out.insert(&name, t)?;
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ParamSet> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        ParamSet::from_bytes(&bytes)
    }
}
