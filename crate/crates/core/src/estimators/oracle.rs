//! Ground-truth oracles: Monte Carlo p^sigma(v, i) and the heavy/suspect classification.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sketch::SparseVector;

use super::EstimatorConstants;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleEstimate {
    pub p_plus: f64,
    pub p_minus: f64,
    pub samples: usize,
}

impl OracleEstimate {
    pub fn p(&self, sigma: i8) -> f64 {
        if sigma > 0 {
            self.p_plus
        } else {
            self.p_minus
        }
    }

    pub fn p_max(&self) -> f64 {
        self.p_plus.max(self.p_minus)
    }

    pub fn std_err(&self, sigma: i8) -> f64 {
        let p = self.p(sigma);
        (p * (1.0 - p) / self.samples as f64).sqrt()
    }
}

/// Monte Carlo estimate of Pr[sigma <mu, v> mu[i] > 0 | mu[i] != 0] for a fresh bucket.
///
/// The bucket is fully random: key `i` is forced to participate and every other
/// support key participates independently with probability 1/b and a random sign.
/// Both signs are estimated from the same samples.
pub fn oracle_p(v: &SparseVector, i: u64, b: usize, num_samples: usize, seed: u64) -> Result<OracleEstimate> {
    if num_samples == 0 {
        return Err(Error::param("num_samples", "must be at least 1"));
    }
    if b == 0 {
        return Err(Error::param("b", "must be positive"));
    }
    let own = v.get(i);
    let others: Vec<f64> = v.iter().filter(|&(k, _)| k != i).map(|(_, x)| x).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = 1.0 / b as f64;
    let ln_miss = (1.0 - q).ln();
    let skip = |rng: &mut ChaCha8Rng| -> usize {
        if b == 1 {
            return 0;
        }
        let u: f64 = 1.0 - rng.random::<f64>();
        (u.ln() / ln_miss).floor() as usize
    };
    let (mut plus, mut minus) = (0usize, 0usize);
    for _ in 0..num_samples {
        let mut c = own;
        let mut j = skip(&mut rng);
        while j < others.len() {
            if rng.random::<bool>() {
                c += others[j];
            } else {
                c -= others[j];
            }
            j += 1 + skip(&mut rng);
        }
        if c > 0.0 {
            plus += 1;
        } else if c < 0.0 {
            minus += 1;
        }
    }
    Ok(OracleEstimate {
        p_plus: plus as f64 / num_samples as f64,
        p_minus: minus as f64 / num_samples as f64,
        samples: num_samples,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum HeavyLabel {
    Heavy,
    SuspectOnly,
    Neither,
}

/// Tail-norm classification of every support key.
#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    /// v[i]^2 above this is heavy.
    pub heavy_cut_sq: f64,
    /// v[i]^2 at or below this is neither.
    pub neither_cut_sq: f64,
    pub labels: BTreeMap<u64, HeavyLabel>,
}

impl Classification {
    pub fn label_of_value(&self, x: f64) -> HeavyLabel {
        let sq = x * x;
        if sq > self.heavy_cut_sq {
            HeavyLabel::Heavy
        } else if sq <= self.neither_cut_sq {
            HeavyLabel::Neither
        } else {
            HeavyLabel::SuspectOnly
        }
    }

    /// Label of any key; keys outside the support are `Neither`.
    pub fn label(&self, key: u64) -> HeavyLabel {
        self.labels.get(&key).copied().unwrap_or(HeavyLabel::Neither)
    }

    pub fn heavy_keys(&self) -> BTreeSet<u64> {
        self.labels
            .iter()
            .filter(|(_, &l)| l == HeavyLabel::Heavy)
            .map(|(&k, _)| k)
            .collect()
    }

    /// Every heavy key reported and no reported key labelled `Neither`.
    pub fn is_correct(&self, reported: &BTreeSet<u64>) -> bool {
        self.heavy_keys().is_subset(reported) && reported.iter().all(|&k| self.label(k) != HeavyLabel::Neither)
    }
}

/// heavy: v[i]^2 > (C_b^2/b) ||v_tail[b/C_b^2]||^2; neither: v[i]^2 <= (1/b) ||v_tail[C_a b]||^2.
/// Fractional tail indices are rounded down, but the heavy tail always drops at least
/// the top key (otherwise nothing is heavy below b = C_b^2).
pub fn classify_heavy_suspect(v: &SparseVector, constants: &EstimatorConstants, b: usize) -> Classification {
    let bf = b as f64;
    let k_heavy = ((bf / (constants.c_b * constants.c_b)).floor() as usize).max(1);
    let k_neither = (constants.c_a * bf).floor() as usize;
    let heavy_cut_sq = constants.c_b * constants.c_b / bf * v.tail_norm_sq(k_heavy);
    let neither_cut_sq = v.tail_norm_sq(k_neither) / bf;
    let mut c = Classification {
        heavy_cut_sq,
        neither_cut_sq,
        labels: BTreeMap::new(),
    };
    c.labels = v.iter().map(|(k, x)| (k, c.label_of_value(x))).collect();
    c
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProbabilityLabel {
    /// p >= tau_b: must be reported.
    Heavy,
    /// tau_a <= p < tau_b: may be reported.
    Suspect,
    /// p < tau_a: must not be reported.
    Neither,
}

/// Labels key `i` by p(v, i) = max(p+, p-) against (tau_a, tau_b).
pub fn classify_by_probability(
    v: &SparseVector,
    i: u64,
    constants: &EstimatorConstants,
    b: usize,
    num_samples: usize,
    seed: u64,
) -> Result<(ProbabilityLabel, OracleEstimate)> {
    let est = oracle_p(v, i, b, num_samples, seed)?;
    let p = est.p_max();
    let label = if p >= constants.tau_b {
        ProbabilityLabel::Heavy
    } else if p >= constants.tau_a {
        ProbabilityLabel::Suspect
    } else {
        ProbabilityLabel::Neither
    };
    Ok((label, est))
}
