use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale the joint gradient to this L2 norm when it is exceeded.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Slot {
    value: Tensor,
    m: Tensor,
    v: Tensor,
}

/// Named trainable arrays with Adam moment estimates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    slots: BTreeMap<String, Slot>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.slots.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        let (m, v) = (value.zeros_like(), value.zeros_like());
        self.slots.insert(name, Slot { value, m, v });
        Ok(())
    }

    /// Glorot-uniform `rows x cols` weights.
    pub fn insert_glorot(&mut self, name: &str, rows: usize, cols: usize, rng: &mut impl Rng) -> Result<()> {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect();
        self.insert(name, Tensor::new(rows, cols, data)?)
    }

    pub fn insert_normal(&mut self, name: &str, rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Result<()> {
        let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
        self.insert(name, Tensor::new(rows, cols, data)?)
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

    /// Total number of scalar parameters.
    pub fn size(&self) -> usize {
        self.slots.values().map(|s| s.value.len()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Copy of the values only, with fresh optimiser state.
    pub fn values_only(&self) -> Self {
        let mut out = Self::new();
        for (k, s) in &self.slots {
            out.insert(k.clone(), s.value.clone()).expect("names are unique");
        }
        out
    }

    /// One bias-corrected Adam update. Parameters without an entry in `grads`
    /// are left unchanged.
    pub fn adam_step(&mut self, grads: &BTreeMap<String, Tensor>, cfg: &AdamConfig) -> Result<()> {
        for (name, g) in grads {
            let slot = self
                .slots
                .get(name)
                .ok_or_else(|| Error::Config(format!("gradient for unknown parameter `{name}`")))?;
            if g.shape() != slot.value.shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    detail: format!("`{name}`: gradient {:?} vs value {:?}", g.shape(), slot.value.shape()),
                });
            }
            if !g.is_finite() {
                return Err(Error::TrainingDiverged(format!("non-finite gradient for `{name}`")));
            }
        }
        let norm = grads
            .values()
            .flat_map(|g| g.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        let factor = match cfg.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (name, g) in grads {
            let slot = self.slots.get_mut(name).expect("checked above");
            for i in 0..g.len() {
                let gi = g.data[i] * factor;
                slot.m.data[i] = cfg.beta1 * slot.m.data[i] + (1.0 - cfg.beta1) * gi;
                slot.v.data[i] = cfg.beta2 * slot.v.data[i] + (1.0 - cfg.beta2) * gi * gi;
                let mhat = slot.m.data[i] / bc1;
                let vhat = slot.v.data[i] / bc2;
                slot.value.data[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::new(1, 3, vec![1.0, -2.0, 0.5]).unwrap()).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_values() {
        let mut s = store();
        let before = s.get("w").unwrap().clone();
        let grads = BTreeMap::from([("w".to_string(), Tensor::zeros(1, 3))]);
        s.adam_step(&grads, &AdamConfig::default()).unwrap();
        assert_eq!(s.get("w").unwrap(), &before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = store();
        let grads = BTreeMap::from([("w".to_string(), Tensor::new(1, 3, vec![0.3, -5.0, 1e-3]).unwrap())]);
        let cfg = AdamConfig::default();
        s.adam_step(&grads, &cfg).unwrap();
        // m_hat = g and v_hat = g^2 at t = 1, so the step is lr * g / (|g| + eps).
        let expect = [
            1.0 - 1e-3 * 0.3 / (0.3 + 1e-8),
            -2.0 + 1e-3 * 5.0 / (5.0 + 1e-8),
            0.5 - 1e-3 * 1e-3 / (1e-3 + 1e-8),
        ];
        for (a, b) in s.get("w").unwrap().data.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut s = store();
        let grads = BTreeMap::from([("w".to_string(), Tensor::new(1, 3, vec![0.0, f64::NAN, 0.0]).unwrap())]);
        let err = s.adam_step(&grads, &AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("`w`"));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = store();
        assert!(s.insert("w", Tensor::scalar(0.0)).is_err());
    }
}
