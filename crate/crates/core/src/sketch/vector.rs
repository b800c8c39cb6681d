use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// A vector in R^n stored as key -> value with implicit zeros.
///
/// Keys are kept ordered so float sums over the support are reproducible.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    entries: BTreeMap<u64, f64>,
}

impl SparseVector {
    pub fn new() -> Self {
        SparseVector::default()
    }

    /// Sums duplicate keys and drops zeros.
    pub fn from_entries(it: impl IntoIterator<Item = (u64, f64)>) -> Self {
        let mut v = SparseVector::new();
        for (k, x) in it {
            v.add(k, x);
        }
        v
    }

    pub fn unit(key: u64, w: f64) -> Self {
        SparseVector::from_entries([(key, w)])
    }

    pub fn get(&self, key: u64) -> f64 {
        self.entries.get(&key).copied().unwrap_or(0.0)
    }

    pub fn set(&mut self, key: u64, x: f64) {
        if x == 0.0 {
            self.entries.remove(&key);
        } else {
            self.entries.insert(key, x);
        }
    }

    pub fn add(&mut self, key: u64, delta: f64) {
        let x = self.get(key) + delta;
        self.set(key, x);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.entries.iter().map(|(&k, &v)| (k, v))
    }

    pub fn keys(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.keys().copied()
    }

    pub fn contains(&self, key: u64) -> bool {
        self.entries.contains_key(&key)
    }

    pub fn max_key(&self) -> Option<u64> {
        self.entries.keys().next_back().copied()
    }

    pub fn norm_sq(&self) -> f64 {
        self.entries.values().map(|x| x * x).sum()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        SparseVector::from_entries(self.iter().map(|(k, x)| (k, alpha * x)))
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, other: &SparseVector, alpha: f64) {
        for (k, x) in other.iter() {
            self.add(k, alpha * x);
        }
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (small, large) = if self.len() <= other.len() { (self, other) } else { (other, self) };
        small.iter().map(|(k, x)| x * large.get(k)).sum()
    }

    pub fn is_integral(&self) -> bool {
        self.entries.values().all(|x| x.fract() == 0.0)
    }

    /// ||v_tail[k]||^2: squared norm after zeroing the k largest magnitudes.
    pub fn tail_norm_sq(&self, k: usize) -> f64 {
        let mut sq: Vec<f64> = self.entries.values().map(|x| x * x).collect();
        if k >= sq.len() {
            return 0.0;
        }
        sq.sort_by(|a, b| b.total_cmp(a));
        // Sum smallest first for accuracy.
        sq[k..].iter().rev().sum()
    }
}

impl FromIterator<(u64, f64)> for SparseVector {
    fn from_iter<I: IntoIterator<Item = (u64, f64)>>(iter: I) -> Self {
        SparseVector::from_entries(iter)
    }
}
