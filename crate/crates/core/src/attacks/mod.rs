//! Adaptive attacks that build a biased tail from black-box answers, and their evaluation.

mod eval;
mod oracle;
mod strategy;

use std::io::Write;
use std::ops::Range;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sketch::SparseVector;

pub use eval::{build_final_vector, measure_bnr, median_final_vector, BnrTracker, FinalMode, MedianRoles};
pub use oracle::{
    MedianOracle, Oracle, OracleAnswer, RecordingOracle, ReplayOracle, RobustOracle, ThresholdOracle,
};
pub use strategy::{
    attack_basic_sign, attack_median, attack_robust, calibrate_borderline, pick_arm, run_attack, validation_frequency,
    Calibration, Observation, RoundObserver,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    #[default]
    Median,
    BasicSign,
    Robust,
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "median" => Ok(EstimatorKind::Median),
            "basic" | "basic_sign" => Ok(EstimatorKind::BasicSign),
            "robust" => Ok(EstimatorKind::Robust),
            other => Err(Error::param("estimator", format!("unknown estimator `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailDistribution {
    /// Independent uniform +-1 values.
    #[default]
    Sign,
    /// Standard normal values, rules out ties between median estimates.
    Gaussian,
}

/// Parameters of the attacker. Only public sketch parameters appear here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    /// The designated key h.
    pub target_key: u64,
    /// Bias-to-noise target; `with_bnr_target` turns it into a collection count.
    pub bnr: f64,
    /// Collection events r.
    pub collections: u64,
    /// Tail support size m per round.
    pub tail_size: usize,
    /// Output size of the median estimator.
    pub k_prime: usize,
    /// d/b of the attacked sketch; derived from the sketch, not serialized.
    #[serde(skip)]
    pub ell: usize,
    /// Bucket width b of the attacked sketch; derived, not serialized.
    #[serde(skip)]
    pub b: usize,
    /// Weight of h (and of the second borderline key) while probing.
    pub borderline_weight: f64,
    /// Weight of the k'-1 very heavy keys of the median attack.
    pub super_heavy_weight: f64,
    /// Attacked estimator; set from the experiment's estimator section.
    #[serde(skip)]
    pub estimator: EstimatorKind,
    /// Repeats per arm for the robust attack; 0 means ell.
    pub repeats: usize,
    pub tail: TailDistribution,
    /// Attacker randomness (tails).
    pub seed: u64,
    /// Hard cap on oracle queries.
    pub max_queries: u64,
    /// First key of the tail arena; must exceed every special key.
    pub arena_start: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            target_key: 1,
            bnr: 1.0,
            collections: 500,
            tail_size: 3000,
            k_prime: 10,
            ell: 100,
            b: 30,
            borderline_weight: 100.0,
            super_heavy_weight: 1000.0,
            estimator: EstimatorKind::Median,
            repeats: 0,
            tail: TailDistribution::Sign,
            seed: 0,
            max_queries: u64::MAX,
            arena_start: 1 << 20,
        }
    }
}

impl AttackConfig {
    /// r = ceil(5 BNR^2 ell).
    pub fn with_bnr_target(mut self, bnr: f64) -> Self {
        self.bnr = bnr;
        self.collections = (5.0 * bnr * bnr * self.ell as f64).ceil() as u64;
        self
    }

    /// Per-bucket standard deviation of one fresh tail, sqrt(m/b).
    pub fn tail_std(&self) -> f64 {
        (self.tail_size as f64 / self.b.max(1) as f64).sqrt()
    }

    pub fn repeats_per_arm(&self) -> usize {
        if self.repeats == 0 {
            self.ell.max(1)
        } else {
            self.repeats
        }
    }

    /// The second borderline key of the median attack.
    pub fn partner_key(&self) -> u64 {
        self.target_key + 1
    }

    /// The set H: h first, then (median) the partner and the very heavy keys.
    pub fn special_keys(&self) -> Vec<u64> {
        match self.estimator {
            EstimatorKind::Median => (0..self.k_prime as u64 + 1).map(|i| self.target_key + i).collect(),
            _ => vec![self.target_key],
        }
    }

    /// sum_{i in H} v[i] e_i with h at weight `w`.
    pub fn probe_base(&self, w: f64) -> SparseVector {
        let mut v = SparseVector::unit(self.target_key, w);
        if self.estimator == EstimatorKind::Median {
            v.set(self.partner_key(), self.borderline_weight);
            for k in self.special_keys().into_iter().skip(2) {
                v.set(k, self.super_heavy_weight);
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        if self.tail_size == 0 {
            return Err(Error::param("tail_size", "must be positive"));
        }
        if self.ell == 0 || self.b == 0 {
            return Err(Error::param("ell/b", "must be positive"));
        }
        if self.estimator == EstimatorKind::Median && self.k_prime == 0 {
            return Err(Error::param("k_prime", "must be positive"));
        }
        let top = *self.special_keys().iter().max().expect("H is never empty");
        if self.arena_start <= top {
            return Err(Error::param("arena_start", "tail arena overlaps the special keys"));
        }
        if !(self.borderline_weight >= 0.0 && self.super_heavy_weight >= 0.0) {
            return Err(Error::param("weights", "must be non-negative"));
        }
        Ok(())
    }
}

/// Hands out disjoint consecutive key blocks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyArena {
    next: u64,
}

impl KeyArena {
    pub fn new(start: u64) -> Self {
        KeyArena { next: start }
    }

    pub fn block(&mut self, len: usize) -> Result<Range<u64>> {
        let start = self.next;
        let end = start.checked_add(len as u64).ok_or(Error::Overflow)?;
        self.next = end;
        Ok(start..end)
    }

    pub fn next_key(&self) -> u64 {
        self.next
    }
}

/// A fresh random tail on `keys`.
pub fn sample_tail(keys: Range<u64>, dist: TailDistribution, rng: &mut ChaCha8Rng) -> SparseVector {
    keys.map(|k| {
        let x = match dist {
            TailDistribution::Sign => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            TailDistribution::Gaussian => StandardNormal.sample(rng),
        };
        (k, x)
    })
    .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    /// +1 collected z, -1 collected -z, 0 skipped.
    pub collected: i8,
    /// Cumulative squared norm of a.
    pub norm_sq: f64,
    /// Filled by an evaluation observer, never seen by the attacker.
    pub measured_bnr: Option<f64>,
    pub queries_used: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AttackResult {
    /// The attack tail.
    pub a: SparseVector,
    pub rounds: Vec<RoundRecord>,
    pub collections: u64,
    /// Includes `calibration_queries`.
    pub queries_used: u64,
    /// Queries spent calibrating on the attacked oracle.
    pub calibration_queries: u64,
    /// Weight of h used while probing.
    pub borderline_weight: f64,
    /// Last value reported by the observer.
    pub measured_bnr: Option<f64>,
    pub final_vector: Option<SparseVector>,
    pub success: Option<bool>,
}

impl AttackResult {
    pub fn collected(&self) -> impl Iterator<Item = i8> + '_ {
        self.rounds.iter().map(|r| r.collected)
    }

    /// Transcript CSV: round, collected, norm_sq, measured_bnr, queries_used.
    pub fn write_transcript<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["round", "collected", "norm_sq", "measured_bnr", "queries_used"])
            .map_err(csv_err)?;
        for r in &self.rounds {
            out.write_record([
                r.round.to_string(),
                r.collected.to_string(),
                r.norm_sq.to_string(),
                r.measured_bnr.map(|x| x.to_string()).unwrap_or_default(),
                r.queries_used.to_string(),
            ])
            .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn arena_blocks_are_disjoint() {
        let mut a = KeyArena::new(100);
        assert_eq!(a.block(5).unwrap(), 100..105);
        assert_eq!(a.block(3).unwrap(), 105..108);
        assert_eq!(a.next_key(), 108);
        let mut full = KeyArena::new(u64::MAX - 1);
        assert!(full.block(5).is_err());
    }

    #[test]
    fn special_keys_and_base() {
        let cfg = AttackConfig {
            k_prime: 4,
            ..Default::default()
        };
        assert_eq!(cfg.special_keys(), vec![1, 2, 3, 4, 5]);
        let base = cfg.probe_base(100.0);
        assert_eq!(base.get(1), 100.0);
        assert_eq!(base.get(2), 100.0);
        assert_eq!(base.get(5), 1000.0);
        let sign = AttackConfig {
            estimator: EstimatorKind::BasicSign,
            ..cfg
        };
        assert_eq!(sign.special_keys(), vec![1]);
        assert_eq!(sign.probe_base(3.0).len(), 1);
    }

    #[test]
    fn config_checks() {
        assert!(AttackConfig::default().validate().is_ok());
        let bad = AttackConfig {
            arena_start: 5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(AttackConfig::default().with_bnr_target(1.0).collections, 500);
        assert_eq!("basic".parse::<EstimatorKind>().unwrap(), EstimatorKind::BasicSign);
        assert!("x".parse::<EstimatorKind>().is_err());
    }

    #[test]
    fn tails_are_signs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = sample_tail(10..1010, TailDistribution::Sign, &mut rng);
        assert_eq!(z.len(), 1000);
        assert_eq!(z.norm_sq(), 1000.0);
        let sum: f64 = z.iter().map(|(_, x)| x).sum();
        assert!(sum.abs() < 150.0);
    }
}
