//! Named parameter tensors.

use crate::rng::{rng, subseed};
use rand::Rng;
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// All trainable tensors, keyed by dotted path. BTreeMap keeps iteration
/// order stable, which keeps checkpoints and gradient walks reproducible.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    pub tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Uniform init on [-1/sqrt(fan_in), 1/sqrt(fan_in)], seeded by the
    /// tensor's own name so layout changes elsewhere cannot shift it.
    pub fn add_uniform(&mut self, seed: u64, name: &str, rows: usize, cols: usize, fan_in: usize) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut r = rng(subseed(seed, name, &[]));
        let data = (0..rows * cols).map(|_| r.random_range(-bound..bound)).collect();
        let prev = self.tensors.insert(name.to_string(), Tensor { rows, cols, data });
        assert!(prev.is_none(), "duplicate parameter {name}");
    }

    pub fn add_const(&mut self, name: &str, rows: usize, cols: usize, v: f64) {
        let data = vec![v; rows * cols];
        let prev = self.tensors.insert(name.to_string(), Tensor { rows, cols, data });
        assert!(prev.is_none(), "duplicate parameter {name}");
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn total_values(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_depends_on_name_not_insertion_order() {
        let mut a = ParamStore::new();
        a.add_uniform(7, "x.w", 3, 4, 4);
        a.add_uniform(7, "y.w", 3, 4, 4);
        let mut b = ParamStore::new();
        b.add_uniform(7, "y.w", 3, 4, 4);
        b.add_uniform(7, "x.w", 3, 4, 4);
        assert_eq!(a.get("x.w"), b.get("x.w"));
        assert_eq!(a.get("y.w"), b.get("y.w"));
        assert_ne!(a.get("x.w"), a.get("y.w"));
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let mut s = ParamStore::new();
        s.add_uniform(1, "w", 10, 100, 400);
        let bound = 1.0 / 20.0;
        assert!(s.get("w").data.iter().all(|v| v.abs() < bound));
        // and actually uses the range rather than collapsing near zero
        assert!(s.get("w").data.iter().any(|v| v.abs() > bound * 0.5));
    }

    #[test]
    #[should_panic(expected = "duplicate parameter")]
    fn duplicate_name_panics() {
        let mut s = ParamStore::new();
        s.add_const("b", 1, 4, 0.0);
        s.add_const("b", 1, 4, 0.0);
    }
}
