//! DP-robust estimators built on the threshold monitor.

mod accounting;
mod fastquery;
mod stable;
mod weights;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dp::{solve_x_log_x, NoiseSource, PrivacyParams, QueryRecord, ThresholdMonitor};
use crate::error::{Error, Result};
use crate::estimators::EstimatorConstants;
use crate::sketch::{Entry, SketchRandomness, SketchState};

pub use accounting::{flip_number, lambda_number, SequenceAccounting};
pub use fastquery::{FastQueryConfig, FastQueryVariant};
pub use stable::{RobustStable, StableEvent};
pub use weights::{weight_estimate_fast, weight_estimate_naive, WeightEstimatorParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustConfig {
    pub constants: EstimatorConstants,
    /// Access limit L.
    pub limit: u64,
    /// Upper bound m on the number of queries.
    pub max_queries: u64,
    pub c1: f64,
    pub c2: f64,
}

impl RobustConfig {
    pub fn new(constants: EstimatorConstants, limit: u64, max_queries: u64) -> Self {
        RobustConfig {
            constants,
            limit,
            max_queries,
            c1: 1.0,
            c2: 1.0,
        }
    }

    /// eps = C1/sqrt(L), delta = C2/(n m b L).
    pub fn privacy(&self, n: u64, b: usize) -> Result<PrivacyParams> {
        let l = self.limit as f64;
        let eps = self.c1 / l.sqrt();
        let delta = self.c2 / (n as f64 * self.max_queries.max(1) as f64 * b as f64 * l);
        PrivacyParams::new(eps, delta, self.limit)
    }

    /// Chooses C1 so that Delta equals `target_delta` (C2 kept).
    pub fn with_target_big_delta(mut self, target_delta: f64, n: u64, b: usize) -> Result<Self> {
        if !(target_delta > 0.0) {
            return Err(Error::param("target_delta", "must be positive"));
        }
        let l = self.limit as f64;
        let delta = self.c2 / (n as f64 * self.max_queries.max(1) as f64 * b as f64 * l);
        let x = solve_x_log_x(target_delta);
        // x = log(1/delta)/eps and eps = C1/sqrt(L).
        self.c1 = (1.0 / delta).ln() / x * l.sqrt();
        Ok(self)
    }

    /// c1 * L with c1 = tau_delta/4: the adaptivity budget for lambda_Q.
    pub fn lambda_budget(&self) -> f64 {
        self.constants.tau_delta_threshold() / 4.0 * self.limit as f64
    }
}

/// Per-query diagnostics of the robust threshold estimator.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RobustReport {
    pub keys: BTreeSet<u64>,
    /// Fraction of inactive buckets in T_i, for candidates with at least one.
    pub inactive_fraction: BTreeMap<u64, f64>,
    /// Candidates with every bucket inactive.
    pub exhausted: Vec<u64>,
}

/// Sketch randomness plus the monitor over its d buckets.
pub struct RobustEstimatorState {
    rand: SketchRandomness,
    monitor: ThresholdMonitor,
    config: RobustConfig,
}

impl std::fmt::Debug for RobustEstimatorState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RobustEstimatorState")
            .field("rand", &self.rand)
            .field("monitor", &self.monitor)
            .field("config", &self.config)
            .finish()
    }
}

impl RobustEstimatorState {
    pub fn new(rand: SketchRandomness, config: RobustConfig, noise: Box<dyn NoiseSource>) -> Result<Self> {
        config.constants.validate()?;
        let p = rand.params();
        let privacy = config.privacy(p.n, p.b)?;
        let monitor = ThresholdMonitor::new(p.d, privacy, noise)?;
        Ok(RobustEstimatorState { rand, monitor, config })
    }

    pub fn with_transcript(mut self) -> Self {
        self.monitor = self.monitor.with_transcript();
        self
    }

    pub fn rand(&self) -> &SketchRandomness {
        &self.rand
    }

    pub fn monitor(&self) -> &ThresholdMonitor {
        &self.monitor
    }

    pub fn monitor_mut(&mut self) -> &mut ThresholdMonitor {
        &mut self.monitor
    }

    pub fn config(&self) -> &RobustConfig {
        &self.config
    }

    pub fn constants(&self) -> &EstimatorConstants {
        &self.config.constants
    }

    pub fn d_over_b(&self) -> f64 {
        self.rand.params().d_over_b()
    }

    /// Buckets of `entries` whose signed value satisfies `pred`.
    pub(crate) fn select(state: &SketchState, entries: &[Entry], pred: impl Fn(f64) -> bool) -> Vec<usize> {
        entries
            .iter()
            .filter(|e| pred(e.sign as f64 * state.value(e.bucket)))
            .map(|e| e.bucket)
            .collect()
    }

    /// Query of f^sigma (buckets with sigma mu_t[i] c_t > 0) in direction s at threshold tau.
    pub fn query_alignment(
        &mut self,
        state: &SketchState,
        entries: &[Entry],
        sigma: i8,
        s: i8,
        tau: f64,
    ) -> Result<QueryRecord> {
        let sat = Self::select(state, entries, |x| x * sigma as f64 > 0.0);
        self.monitor.query(&sat, s, tau)
    }

    fn inactive_fraction(&self, entries: &[Entry]) -> f64 {
        if entries.is_empty() {
            return 0.0;
        }
        let inactive = entries.iter().filter(|e| !self.monitor.is_active(e.bucket)).count();
        inactive as f64 / entries.len() as f64
    }

    /// Reports i iff f+ or (when f+ answers Bottom) f- crosses (d/b) tau_m.
    pub fn robust_threshold_query(
        &mut self,
        state: &SketchState,
        candidates: impl IntoIterator<Item = u64>,
    ) -> Result<RobustReport> {
        state.check(&self.rand)?;
        let tau = self.d_over_b() * self.config.constants.tau_m();
        let mut report = RobustReport::default();
        for key in candidates {
            let entries = self.rand.entries(key)?;
            let frac = self.inactive_fraction(&entries);
            if frac > 0.0 {
                report.inactive_fraction.insert(key, frac);
                if frac == 1.0 {
                    report.exhausted.push(key);
                }
            }
            let hit = self.query_alignment(state, &entries, 1, 1, tau)?.answer.is_top()
                || self.query_alignment(state, &entries, -1, 1, tau)?.answer.is_top();
            if hit {
                report.keys.insert(key);
            }
        }
        Ok(report)
    }
}
