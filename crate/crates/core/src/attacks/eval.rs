//! Ground-truth evaluation of an attack tail. Never called from attacker logic.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::median_in_place;
use crate::sketch::{Entry, SketchRandomness, SketchVariant, SparseVector};

use super::{AttackConfig, Observation, RoundObserver};

/// Median over t in T_h of <mu_t, a> mu_t[h], over sqrt(||a||^2 / b).
pub fn measure_bnr(rand: &SketchRandomness, h: u64, a: &SparseVector) -> Result<f64> {
    let mut t = BnrTracker::new(rand.replicate(), &[h])?;
    t.add(a, 1.0)?;
    t.bnr(h)
}

/// Running products <mu_t, a> on the buckets of a few tracked keys.
pub struct BnrTracker {
    rand: SketchRandomness,
    tracked: BTreeMap<u64, Vec<Entry>>,
    /// Bucket -> slot in `acc`.
    slot: Vec<Option<usize>>,
    buckets: Vec<usize>,
    acc: Vec<f64>,
    norm_sq: f64,
    stop_at: Option<(u64, f64)>,
}

impl BnrTracker {
    pub fn new(rand: SketchRandomness, keys: &[u64]) -> Result<Self> {
        let mut slot = vec![None; rand.d()];
        let mut buckets = Vec::new();
        let mut tracked = BTreeMap::new();
        for &k in keys {
            let e = rand.entries(k)?.to_vec();
            for x in &e {
                if slot[x.bucket].is_none() {
                    slot[x.bucket] = Some(buckets.len());
                    buckets.push(x.bucket);
                }
            }
            tracked.insert(k, e);
        }
        let acc = vec![0.0; buckets.len()];
        Ok(BnrTracker {
            rand,
            tracked,
            slot,
            buckets,
            acc,
            norm_sq: 0.0,
            stop_at: None,
        })
    }

    /// As an observer, ask to stop once `key` reaches `bnr`.
    pub fn stop_when(mut self, key: u64, bnr: f64) -> Self {
        self.stop_at = Some((key, bnr));
        self
    }

    /// a += sign * z.
    pub fn add(&mut self, z: &SparseVector, sign: f64) -> Result<()> {
        if sign == 0.0 {
            return Ok(());
        }
        for (j, x) in z.iter() {
            let w = sign * x;
            self.norm_sq += w * w;
            match self.rand.variant() {
                // One bucket per row: the column is cheap and covers every row.
                SketchVariant::CountSketch => {
                    for e in self.rand.entries(j)?.iter() {
                        if let Some(s) = self.slot[e.bucket] {
                            self.acc[s] += w * e.sign as f64;
                        }
                    }
                }
                SketchVariant::BCountSketch => {
                    for (s, &t) in self.buckets.iter().enumerate() {
                        let mu = self.rand.measurement_entry(t, j)?;
                        if mu != 0 {
                            self.acc[s] += w * mu as f64;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn norm_sq(&self) -> f64 {
        self.norm_sq
    }

    /// Signed bias <mu_t, a> mu_t[key] for t in T_key.
    pub fn biases(&self, key: u64) -> Result<Vec<f64>> {
        let e = self
            .tracked
            .get(&key)
            .ok_or_else(|| Error::param("key", format!("key {key} is not tracked")))?;
        Ok(e.iter()
            .map(|x| self.acc[self.slot[x.bucket].expect("tracked")] * x.sign as f64)
            .collect())
    }

    pub fn bnr(&self, key: u64) -> Result<f64> {
        let mut b = self.biases(key)?;
        if b.is_empty() {
            return Err(Error::EstimateUnavailable(key));
        }
        if self.norm_sq == 0.0 {
            return Ok(0.0);
        }
        let scale = (self.norm_sq / self.rand.b() as f64).sqrt();
        Ok(median_in_place(&mut b).expect("non-empty") / scale)
    }

    /// Median bias on T_key in absolute units.
    pub fn median_bias(&self, key: u64) -> Result<f64> {
        let mut b = self.biases(key)?;
        median_in_place(&mut b).ok_or(Error::EstimateUnavailable(key))
    }
}

impl RoundObserver for BnrTracker {
    fn observe(&mut self, collected: i8, tail: &SparseVector) -> Result<Observation> {
        self.add(tail, collected as f64)?;
        let Some(&first) = self.tracked.keys().next() else {
            return Ok(Observation::default());
        };
        let key = self.stop_at.map_or(first, |(k, _)| k);
        let bnr = self.bnr(key)?;
        Ok(Observation {
            measured_bnr: Some(bnr),
            stop: self.stop_at.is_some_and(|(_, target)| bnr >= target),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalMode {
    /// w e_h - a: h heavy, its buckets pushed down by the bias.
    MaskHeavy,
    /// a alone: h absent but biased up.
    FakeHeavy,
}

/// The attack tail is collected so that it biases h upward; masking subtracts it.
pub fn build_final_vector(a: &SparseVector, h: u64, w: f64, mode: FinalMode) -> SparseVector {
    match mode {
        FinalMode::MaskHeavy => {
            let mut v = a.scaled(-1.0);
            v.set(h, w);
            v
        }
        FinalMode::FakeHeavy => a.clone(),
    }
}

/// Roles of the other special keys in the final median query.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MedianRoles {
    /// The partner and very heavy keys keep their probing weights.
    #[default]
    Appendix,
    /// h is the single very heavy key; the other k' special keys sit at `weight`.
    Narrative { weight: f64 },
}

/// Final median query: mask_heavy plus the rest of H.
pub fn median_final_vector(a: &SparseVector, cfg: &AttackConfig, w: f64, roles: MedianRoles) -> SparseVector {
    let mut v = build_final_vector(a, cfg.target_key, w, FinalMode::MaskHeavy);
    match roles {
        MedianRoles::Appendix => {
            for (k, x) in cfg.probe_base(w).iter() {
                if k != cfg.target_key {
                    v.set(k, x);
                }
            }
        }
        MedianRoles::Narrative { weight } => {
            for k in cfg.special_keys().into_iter().skip(1) {
                v.set(k, weight);
            }
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::{sample_tail, TailDistribution};
    use crate::sketch::{init_sketch, SketchParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn direct_bnr(rand: &SketchRandomness, h: u64, a: &SparseVector) -> f64 {
        let mut b: Vec<f64> = rand
            .entries(h)
            .unwrap()
            .iter()
            .map(|e| {
                let dot: f64 = a.iter().map(|(j, x)| rand.measurement_entry(e.bucket, j).unwrap() as f64 * x).sum();
                dot * e.sign as f64
            })
            .collect();
        median_in_place(&mut b).unwrap() / (a.norm_sq() / rand.b() as f64).sqrt()
    }

    #[test]
    fn zero_tail_has_zero_bnr() {
        let r = init_sketch(SketchVariant::CountSketch, SketchParams::new(1 << 20, 100, 10).unwrap(), 1).unwrap();
        assert_eq!(measure_bnr(&r, 3, &SparseVector::new()).unwrap(), 0.0);
    }

    #[test]
    fn tracker_matches_direct_computation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for variant in [SketchVariant::CountSketch, SketchVariant::BCountSketch] {
            let r = init_sketch(variant, SketchParams::new(1 << 20, 200, 10).unwrap(), 3).unwrap();
            let mut t = BnrTracker::new(r.replicate(), &[1, 2]).unwrap();
            let mut a = SparseVector::new();
            for i in 0..5u64 {
                let z = sample_tail(100 + i * 50..150 + i * 50, TailDistribution::Sign, &mut rng);
                let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                t.add(&z, s).unwrap();
                a.add_scaled(&z, s);
            }
            assert_eq!(t.norm_sq(), a.norm_sq());
            for h in [1, 2] {
                assert!((t.bnr(h).unwrap() - direct_bnr(&r, h, &a)).abs() < 1e-9);
                assert!((measure_bnr(&r, h, &a).unwrap() - direct_bnr(&r, h, &a)).abs() < 1e-9);
            }
            assert!(t.bnr(9).is_err());
        }
    }

    #[test]
    fn empty_buckets_unavailable() {
        let r = init_sketch(SketchVariant::BCountSketch, SketchParams::new(10_000, 20, 10).unwrap(), 2).unwrap();
        let key = (0..10_000).find(|&k| r.entries(k).unwrap().is_empty()).unwrap();
        assert!(matches!(
            measure_bnr(&r, key, &SparseVector::unit(key + 1, 1.0)),
            Err(Error::EstimateUnavailable(_))
        ));
    }

    #[test]
    fn final_vectors() {
        let a = SparseVector::from_entries([(10, 1.0), (11, -1.0)]);
        let m = build_final_vector(&a, 1, 5.0, FinalMode::MaskHeavy);
        assert_eq!(m, SparseVector::from_entries([(1, 5.0), (10, -1.0), (11, 1.0)]));
        assert_eq!(build_final_vector(&a, 1, 5.0, FinalMode::FakeHeavy), a);
        assert_eq!(
            build_final_vector(&SparseVector::new(), 1, 5.0, FinalMode::MaskHeavy),
            SparseVector::unit(1, 5.0)
        );
        let cfg = AttackConfig {
            k_prime: 3,
            ..Default::default()
        };
        let v = median_final_vector(&a, &cfg, 7.0, MedianRoles::Appendix);
        assert_eq!((v.get(1), v.get(2), v.get(4)), (7.0, 100.0, 1000.0));
        let v = median_final_vector(&a, &cfg, 7.0, MedianRoles::Narrative { weight: 3.0 });
        assert_eq!((v.get(1), v.get(2), v.get(4)), (7.0, 3.0, 3.0));
    }
}
