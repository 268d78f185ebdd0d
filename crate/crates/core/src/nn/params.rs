use std::collections::HashMap;

use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub requires_grad: bool,
}

/// Named tensors: trainable weights plus non-trainable buffers
/// (running statistics, optimizer state, metadata).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces `name`; returns its index.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, requires_grad: bool) -> usize {
        let name = name.into();
        if let Some(&i) = self.index.get(&name) {
            self.entries[i].value = value;
            self.entries[i].requires_grad = requires_grad;
            return i;
        }
        self.entries.push(ParamEntry { name: name.clone(), value, requires_grad });
        self.index.insert(name, self.entries.len() - 1);
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.entries[i].value)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.entries[i].value)
    }

    pub fn entry(&self, i: usize) -> &ParamEntry {
        &self.entries[i]
    }

    pub fn value_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.entries[i].value
    }

    pub fn remove_prefix(&mut self, prefix: &str) {
        self.entries.retain(|e| !e.name.starts_with(prefix));
        self.index = self.entries.iter().enumerate().map(|(i, e)| (e.name.clone(), i)).collect();
    }

    pub fn trainable_count(&self) -> usize {
        self.entries.iter().filter(|e| e.requires_grad).map(|e| e.value.len()).sum()
    }

    pub fn meta(&self, name: &str) -> Option<f64> {
        self.get(&format!("meta.{name}")).map(Tensor::item)
    }

    pub fn set_meta(&mut self, name: &str, v: f64) {
        self.insert(format!("meta.{name}"), Tensor::scalar(v), false);
    }
}

/// Uniform Kaiming initialization: U(−b, b) with b = sqrt(6 / fan_in).
pub fn kaiming_uniform<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let b = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::from_vec(fan_in, fan_out, (0..fan_in * fan_out).map(|_| rng.gen_range(-b..b)).collect())
}

/// Per-parameter gradients aligned with store indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    pub grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, store: &ParamStore, name: &str) -> Option<&Tensor> {
        store.index_of(name).and_then(|i| self.grads.get(i)).and_then(Option::as_ref)
    }

    pub fn global_norm(&self) -> f64 {
        self.grads.iter().flatten().map(Tensor::sum_sq).sum::<f64>().sqrt()
    }

    /// Rescales so the global norm is at most `max_norm`; returns the pre-clip norm.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for g in self.grads.iter_mut().flatten() {
                g.scale_in_place(s);
            }
        }
        norm
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(Tensor::is_finite)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl Adam {
    /// One update. Moment estimates live in the store as `adam.m.*`/`adam.v.*`
    /// buffers so checkpoints resume exactly.
    pub fn step(&self, store: &mut ParamStore, grads: &Gradients, lr: f64) {
        let t = store.get("adam.step").map(Tensor::item).unwrap_or(0.0) + 1.0;
        store.insert("adam.step", Tensor::scalar(t), false);
        let c1 = 1.0 - self.beta1.powf(t);
        let c2 = 1.0 - self.beta2.powf(t);
        let n = store.len();
        for i in 0..n.min(grads.grads.len()) {
            let Some(g) = &grads.grads[i] else { continue };
            if !store.entry(i).requires_grad {
                continue;
            }
            let name = store.entry(i).name.clone();
            let (mk, vk) = (format!("adam.m.{name}"), format!("adam.v.{name}"));
            let mut m = store.get(&mk).cloned().unwrap_or_else(|| Tensor::zeros(g.rows, g.cols));
            let mut v = store.get(&vk).cloned().unwrap_or_else(|| Tensor::zeros(g.rows, g.cols));
            let w = store.value_mut(i);
            for j in 0..g.data.len() {
                let gj = g.data[j];
                m.data[j] = self.beta1 * m.data[j] + (1.0 - self.beta1) * gj;
                v.data[j] = self.beta2 * v.data[j] + (1.0 - self.beta2) * gj * gj;
                w.data[j] -= lr * (m.data[j] / c1) / ((v.data[j] / c2).sqrt() + self.eps);
            }
            store.insert(mk, m, false);
            store.insert(vk, v, false);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_rescales_to_max_norm() {
        let mut g = Gradients { grads: vec![Some(Tensor::from_vec(1, 2, vec![300.0, 400.0])), None] };
        assert_eq!(g.clip_global_norm(1.0), 500.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
        let mut small = Gradients { grads: vec![Some(Tensor::scalar(0.5))] };
        small.clip_global_norm(1.0);
        assert_eq!(small.global_norm(), 0.5);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::from_vec(1, 2, vec![1.0, -1.0]), true);
        s.insert("buf", Tensor::scalar(3.0), false);
        let g = Gradients { grads: vec![Some(Tensor::from_vec(1, 2, vec![2.0, -0.5])), Some(Tensor::scalar(1.0))] };
        Adam::default().step(&mut s, &g, 0.1);
        let w = s.get("w").unwrap();
        assert!((w.data[0] - 0.9).abs() < 1e-6);
        assert!((w.data[1] + 0.9).abs() < 1e-6);
        assert_eq!(s.get("buf").unwrap().item(), 3.0);
        assert_eq!(s.get("adam.step").unwrap().item(), 1.0);
    }

    #[test]
    fn insert_replaces_and_remove_prefix_reindexes() {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::scalar(1.0), true);
        s.insert("adam.m.a", Tensor::scalar(0.0), false);
        s.insert("b", Tensor::scalar(2.0), true);
        assert_eq!(s.insert("a", Tensor::scalar(5.0), true), 0);
        s.remove_prefix("adam.");
        assert_eq!(s.len(), 2);
        assert_eq!(s.index_of("b"), Some(1));
        assert_eq!(s.get("a").unwrap().item(), 5.0);
    }
}
