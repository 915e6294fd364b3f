//! Adam with per-tensor step counts, so partially trained stages keep
//! correct bias correction for the tensors they actually touch.

use crate::neural::params::ParamStore;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamSlot {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub state: BTreeMap<String, AdamSlot>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam { lr, beta1, beta2, eps, state: BTreeMap::new() }
    }

    /// Apply one update for every tensor present in `grads`.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Vec<f64>>) {
        for (name, g) in grads {
            let tensor = params.get_mut(name);
            assert_eq!(tensor.data.len(), g.len(), "grad shape for {name}");
            let slot = self.state.entry(name.clone()).or_insert_with(|| AdamSlot {
                m: vec![0.0; g.len()],
                v: vec![0.0; g.len()],
                t: 0,
            });
            slot.t += 1;
            let bc1 = 1.0 - self.beta1.powi(slot.t as i32);
            let bc2 = 1.0 - self.beta2.powi(slot.t as i32);
            for i in 0..g.len() {
                slot.m[i] = self.beta1 * slot.m[i] + (1.0 - self.beta1) * g[i];
                slot.v[i] = self.beta2 * slot.v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = slot.m[i] / bc1;
                let vhat = slot.v[i] / bc2;
                tensor.data[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, data: Vec<f64>) -> ParamStore {
        let mut ps = ParamStore::new();
        let n = data.len();
        ps.add_const(name, 1, n, 0.0);
        ps.get_mut(name).data = data;
        ps
    }

    #[test]
    fn first_step_has_closed_form() {
        // after one step: theta -= lr * g / (|g| + eps), independent of |g| scale
        let mut ps = store_with("w", vec![0.5, -0.25, 3.0]);
        let before = ps.get("w").data.clone();
        let g = vec![0.2, -0.01, 4.0];
        let mut opt = Adam::new(1e-4, 0.9, 0.999, 1e-8);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), g.clone());
        opt.step(&mut ps, &grads);
        for i in 0..3 {
            let expect = before[i] - 1e-4 * g[i] / (g[i].abs() + 1e-8);
            assert!((ps.get("w").data[i] - expect).abs() < 1e-15, "coord {i}");
        }
    }

    #[test]
    fn skipped_tensor_keeps_its_own_step_count() {
        let mut ps = store_with("a", vec![1.0]);
        ps.add_const("b", 1, 1, 1.0);
        let mut opt = Adam::new(1e-2, 0.9, 0.999, 1e-8);
        let mut only_a = BTreeMap::new();
        only_a.insert("a".to_string(), vec![1.0]);
        opt.step(&mut ps, &only_a);
        opt.step(&mut ps, &only_a);
        // first update of b must still behave like a first step
        let mut only_b = BTreeMap::new();
        only_b.insert("b".to_string(), vec![0.5]);
        opt.step(&mut ps, &only_b);
        let expect = 1.0 - 1e-2 * 0.5 / (0.5 + 1e-8);
        assert!((ps.get("b").data[0] - expect).abs() < 1e-12);
        assert_eq!(opt.state["a"].t, 2);
        assert_eq!(opt.state["b"].t, 1);
    }

    #[test]
    fn zero_grad_moves_nothing_on_fresh_state() {
        let mut ps = store_with("w", vec![2.0, -2.0]);
        let mut opt = Adam::new(1e-3, 0.9, 0.999, 1e-8);
        let mut grads = BTreeMap::new();
        grads.insert("w".to_string(), vec![0.0, 0.0]);
        opt.step(&mut ps, &grads);
        assert_eq!(ps.get("w").data, vec![2.0, -2.0]);
    }
}
