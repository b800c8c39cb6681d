//! Adaptivity budgets: lambda-number and flip number.

use std::collections::{BTreeMap, BTreeSet};

use crate::estimators::EstimatorConstants;

/// Per-key counts lambda_{Q,i} over a query sequence.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SequenceAccounting {
    pub counts: BTreeMap<u64, f64>,
    /// Sketch width b (the sum is normalized by C_a b).
    pub b: usize,
}

impl SequenceAccounting {
    pub fn new(b: usize) -> Self {
        SequenceAccounting {
            counts: BTreeMap::new(),
            b,
        }
    }

    /// Threshold variant: one more query in which each of `keys` is a suspect.
    pub fn record_suspects(&mut self, keys: impl IntoIterator<Item = u64>) {
        for k in keys.into_iter().collect::<BTreeSet<_>>() {
            *self.counts.entry(k).or_insert(0.0) += 1.0;
        }
    }

    pub fn set(&mut self, key: u64, count: f64) {
        self.counts.insert(key, count);
    }

    pub fn lambda(&self, constants: &EstimatorConstants) -> f64 {
        lambda_number(self, constants)
    }
}

/// lambda_Q = min(max_i lambda_{Q,i}, sum_i lambda_{Q,i} / (C_a b)).
pub fn lambda_number(acct: &SequenceAccounting, constants: &EstimatorConstants) -> f64 {
    if acct.counts.is_empty() {
        return 0.0;
    }
    let max = acct.counts.values().copied().fold(0.0, f64::max);
    let sum: f64 = acct.counts.values().sum();
    max.min(sum / (constants.c_a * acct.b as f64))
}

/// Low/high transitions of a p-trace, skipping steps that are neither.
pub fn flip_number(p_trace: &[f64], constants: &EstimatorConstants) -> usize {
    let (low, high) = (constants.flip_low(), constants.flip_high());
    let mut last: Option<bool> = None;
    let mut flips = 0;
    for &p in p_trace {
        let level = if p >= high {
            Some(true)
        } else if p <= low {
            Some(false)
        } else {
            None
        };
        if let Some(l) = level {
            if last.is_some_and(|prev| prev != l) {
                flips += 1;
            }
            last = Some(l);
        }
    }
    flips
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_examples() {
        let c = EstimatorConstants {
            c_a: 50.0,
            ..Default::default()
        };
        let mut a = SequenceAccounting::new(6);
        assert_eq!(lambda_number(&a, &c), 0.0);
        for q in 0..10 {
            a.record_suspects(if q < 7 { vec![1] } else { vec![] });
        }
        assert_eq!(a.counts[&1], 7.0);
        assert!((lambda_number(&a, &c) - 7.0 / 300.0).abs() < 1e-15);

        let b = 2;
        let mut all = SequenceAccounting::new(b);
        all.record_suspects(0..(50 * b as u64));
        assert_eq!(lambda_number(&all, &c), 1.0);
    }

    #[test]
    fn flip_examples() {
        let c = EstimatorConstants::relaxed(0.6, 0.9);
        let (lo, mid, hi) = (0.6, 0.75, 0.9);
        assert_eq!(flip_number(&[hi, hi, hi], &c), 0);
        assert_eq!(flip_number(&[lo, mid, hi, mid, lo], &c), 2);
        assert_eq!(flip_number(&[hi, hi, lo], &c), 1);
        assert_eq!(flip_number(&[], &c), 0);
        assert_eq!(flip_number(&[mid, mid], &c), 0);
    }
}
