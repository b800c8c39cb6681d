//! Continuous reporting over an update stream, charging the monitor only on membership changes.

use std::collections::{BTreeMap, BTreeSet};

use crate::dp::NoiseSource;
use crate::error::{Error, Result};
use crate::estimators::{MembershipChange, StableReportState};
use crate::sketch::{CounterKind, SketchRandomness, SketchState};

use super::{weight_estimate_fast, weight_estimate_naive, RobustConfig, RobustEstimatorState, WeightEstimatorParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StableEvent {
    pub step: u64,
    pub change: MembershipChange,
}

/// Robust stable estimator state: sketch, monitor, reported sets and optional weights.
///
/// The key loop runs over every key seen in the stream so far.
pub struct RobustStable {
    rs: RobustEstimatorState,
    state: SketchState,
    stable: StableReportState,
    seen: BTreeSet<u64>,
    weights: Option<(WeightEstimatorParams, BTreeMap<u64, i64>)>,
    step: u64,
    re_estimates: u64,
}

impl RobustStable {
    /// With `weights`, the access limit is doubled and exact integer counters are used.
    pub fn new(
        rand: SketchRandomness,
        mut config: RobustConfig,
        noise: Box<dyn NoiseSource>,
        weights: Option<WeightEstimatorParams>,
    ) -> Result<Self> {
        if weights.is_some() {
            config.limit = config.limit.checked_mul(2).ok_or(Error::Overflow)?;
        }
        let kind = if weights.is_some() { CounterKind::Exact } else { CounterKind::Float };
        let rand = rand.with_entry_cache(None);
        let state = rand.new_state(kind);
        let rs = RobustEstimatorState::new(rand, config, noise)?;
        Ok(RobustStable {
            rs,
            state,
            stable: StableReportState::new(),
            seen: BTreeSet::new(),
            weights: weights.map(|p| (p, BTreeMap::new())),
            step: 0,
            re_estimates: 0,
        })
    }

    pub fn estimator(&self) -> &RobustEstimatorState {
        &self.rs
    }

    pub fn sketch(&self) -> &SketchState {
        &self.state
    }

    pub fn reported(&self) -> &StableReportState {
        &self.stable
    }

    pub fn weights(&self) -> Option<&BTreeMap<u64, i64>> {
        self.weights.as_ref().map(|(_, w)| w)
    }

    /// Number of weight re-estimations triggered by failed validations.
    pub fn re_estimates(&self) -> u64 {
        self.re_estimates
    }

    fn estimate(&mut self, key: u64) -> Result<i64> {
        let params = self.weights.as_ref().expect("weights enabled").0;
        if self.rs.monitor().top_probability(0, 1, 0.0).is_some() {
            weight_estimate_fast(&mut self.rs, &self.state, key, &params)
        } else {
            weight_estimate_naive(&mut self.rs, &self.state, key, &params)
        }
    }

    /// Applies one update and runs the entry loop, then the exit loop.
    pub fn update(&mut self, key: u64, value: f64) -> Result<Vec<StableEvent>> {
        if let Some((_, w)) = &mut self.weights {
            if value.fract() != 0.0 {
                return Err(Error::NonIntegral(value));
            }
            if let Some(x) = w.get_mut(&key) {
                *x += value as i64;
            }
        }
        self.state.apply_update(self.rs.rand(), key, value)?;
        self.seen.insert(key);
        self.step += 1;

        let dob = self.rs.d_over_b();
        let c = *self.rs.constants();
        let (enter, exit) = (dob * c.tau_m2(), dob * c.tau_m1());
        let mut events = Vec::new();

        let outside: Vec<u64> = self.seen.iter().copied().filter(|&k| self.stable.sign_of(k).is_none()).collect();
        for k in outside {
            let entries = self.rs.rand().entries(k)?;
            for sigma in [1i8, -1] {
                if self.rs.query_alignment(&self.state, &entries, sigma, 1, enter)?.answer.is_top() {
                    self.stable.insert(k, sigma);
                    events.push(StableEvent {
                        step: self.step,
                        change: MembershipChange::Enter { key: k, sign: sigma },
                    });
                    if self.weights.is_some() {
                        let w = self.estimate(k)?;
                        self.weights.as_mut().unwrap().1.insert(k, w);
                    }
                    break;
                }
            }
        }

        for sigma in [1i8, -1] {
            let members: Vec<u64> = if sigma > 0 {
                self.stable.k_plus.iter().copied().collect()
            } else {
                self.stable.k_minus.iter().copied().collect()
            };
            for k in members {
                let entries = self.rs.rand().entries(k)?;
                if self.rs.query_alignment(&self.state, &entries, sigma, -1, exit)?.answer.is_top() {
                    self.stable.remove(k);
                    if let Some((_, w)) = &mut self.weights {
                        w.remove(&k);
                    }
                    events.push(StableEvent {
                        step: self.step,
                        change: MembershipChange::Exit { key: k, sign: sigma },
                    });
                }
            }
        }
        Ok(events)
    }

    /// Validates every maintained weight and re-estimates those that fail.
    ///
    /// An estimate fails when at most (d/b) tau_down bucket values lie at or below it,
    /// or at most that many lie at or above it.
    pub fn validated_weights(&mut self) -> Result<BTreeMap<u64, i64>> {
        let Some((params, w)) = &self.weights else {
            return Err(Error::param("weights", "weight reporting is disabled"));
        };
        let params = *params;
        let keys: Vec<(u64, i64)> = w.iter().map(|(&k, &x)| (k, x)).collect();
        let tau = self.rs.d_over_b() * params.tau_down;
        for (k, est) in keys {
            let entries = self.rs.rand().entries(k)?;
            let low = RobustEstimatorState::select(&self.state, &entries, |x| x <= est as f64);
            let high = RobustEstimatorState::select(&self.state, &entries, |x| x >= est as f64);
            let too_low = self.rs.monitor_mut().query(&low, -1, tau)?.answer.is_top();
            let invalid = too_low || self.rs.monitor_mut().query(&high, -1, tau)?.answer.is_top();
            if invalid {
                self.re_estimates += 1;
                let fresh = self.estimate(k)?;
                self.weights.as_mut().unwrap().1.insert(k, fresh);
            }
        }
        Ok(self.weights.as_ref().unwrap().1.clone())
    }
}
