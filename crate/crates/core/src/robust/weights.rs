//! Private weight estimation by scanning w = -W..=W for the first noisy crossing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sketch::{Entry, SketchState};

use super::RobustEstimatorState;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightEstimatorParams {
    /// Bound W on |v[i]|.
    pub w_max: i64,
    pub tau_down: f64,
    pub tau_up: f64,
}

impl WeightEstimatorParams {
    pub fn new(w_max: i64) -> Self {
        WeightEstimatorParams {
            w_max,
            tau_down: 0.1,
            tau_up: 0.9,
        }
    }

    pub fn tau_tr(&self) -> f64 {
        (self.tau_down + self.tau_up) / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.w_max < 0 {
            return Err(Error::param("W", "must be non-negative"));
        }
        if !(0.0 < self.tau_down && self.tau_down < self.tau_up && self.tau_up < 1.0) {
            return Err(Error::param("tau_down/tau_up", "need 0 < tau_down < tau_up < 1"));
        }
        Ok(())
    }
}

/// Signed bucket values of the active buckets of `entries`, sorted, with their buckets.
fn active_values(rs: &RobustEstimatorState, state: &SketchState, entries: &[Entry]) -> Vec<(f64, usize)> {
    let mut vals: Vec<(f64, usize)> = entries
        .iter()
        .filter(|e| rs.monitor().is_active(e.bucket))
        .map(|e| (e.sign as f64 * state.value(e.bucket), e.bucket))
        .collect();
    vals.sort_by(|a, b| a.0.total_cmp(&b.0));
    vals
}

/// One monitor query per w in increasing order; returns the first Top, else W.
pub fn weight_estimate_naive(
    rs: &mut RobustEstimatorState,
    state: &SketchState,
    key: u64,
    params: &WeightEstimatorParams,
) -> Result<i64> {
    params.validate()?;
    state.check(rs.rand())?;
    let entries = rs.rand().entries(key)?;
    let tau = rs.d_over_b() * params.tau_tr();
    for w in -params.w_max..=params.w_max {
        let sat = RobustEstimatorState::select(state, &entries, |x| x <= w as f64);
        if rs.monitor_mut().query(&sat, 1, tau)?.answer.is_top() {
            return Ok(w);
        }
    }
    Ok(params.w_max)
}

/// Same output distribution as [`weight_estimate_naive`] without visiting every w.
///
/// The count f_{<=w} is constant between consecutive bucket values, so each run of
/// equal counts crosses with a common probability p computed from the noise law.
/// The run is passed over with probability (1-p)^len; otherwise the crossing point
/// inside it is drawn from the truncated geometric distribution.
pub fn weight_estimate_fast(
    rs: &mut RobustEstimatorState,
    state: &SketchState,
    key: u64,
    params: &WeightEstimatorParams,
) -> Result<i64> {
    params.validate()?;
    state.check(rs.rand())?;
    let entries = rs.rand().entries(key)?;
    let tau = rs.d_over_b() * params.tau_tr();
    let vals = active_values(rs, state, &entries);
    let w_max = params.w_max;

    // Run starts: -W and every ceil(value) inside (-W, W].
    let mut starts: Vec<i64> = vec![-w_max];
    for &(x, _) in &vals {
        let c = x.ceil();
        if c > -w_max as f64 && c <= w_max as f64 {
            starts.push(c as i64);
        }
    }
    starts.dedup();

    let mut skipped: u64 = 0;
    let mut idx = 0usize;
    for (j, &lo) in starts.iter().enumerate() {
        let hi = starts.get(j + 1).map_or(w_max, |&n| n - 1);
        while idx < vals.len() && vals[idx].0 <= lo as f64 {
            idx += 1;
        }
        let count = idx as u64;
        let len = (hi - lo + 1) as u64;
        let p = rs
            .monitor()
            .top_probability(count, 1, tau)
            .ok_or_else(|| Error::param("noise", "fast weight estimation needs a closed-form noise law"))?;
        if p <= 0.0 {
            skipped += len;
            continue;
        }
        let log_q = (-p).ln_1p();
        let miss_all = (len as f64 * log_q).exp();
        let u = rs.monitor_mut().noise_mut().uniform();
        if p < 1.0 && u < miss_all {
            skipped += len;
            continue;
        }
        // Offset within the run: Pr[k] proportional to (1-p)^k p, k < len.
        let offset = if p >= 1.0 {
            0
        } else {
            let v = rs.monitor_mut().noise_mut().uniform();
            let hit_mass = -(len as f64 * log_q).exp_m1();
            let k = ((-v * hit_mass).ln_1p() / log_q).floor() as u64;
            k.min(len - 1)
        };
        let w = lo + offset as i64;
        rs.monitor_mut().note_bottoms(skipped + offset);
        let sat: Vec<usize> = vals.iter().filter(|(x, _)| *x <= w as f64).map(|&(_, t)| t).collect();
        rs.monitor_mut().commit_top(&sat, 1, tau);
        return Ok(w);
    }
    rs.monitor_mut().note_bottoms(skipped);
    Ok(w_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::ZeroNoise;
    use crate::estimators::EstimatorConstants;
    use crate::robust::RobustConfig;
    use crate::sketch::{init_sketch, CounterKind, SketchParams, SketchVariant, SparseVector};

    fn rs(seed: u64) -> RobustEstimatorState {
        let r = init_sketch(SketchVariant::BCountSketch, SketchParams::new(60, 120, 6).unwrap(), seed).unwrap();
        let cfg = RobustConfig::new(EstimatorConstants::relaxed(0.6, 0.9), 10_000, 100);
        RobustEstimatorState::new(r, cfg, Box::new(ZeroNoise)).unwrap()
    }

    #[test]
    fn zero_noise_single_key() {
        let p = WeightEstimatorParams::new(40);
        for seed in 0..20 {
            let mut a = rs(seed);
            let mut b = rs(seed);
            let st = a.rand().sketch_vector_as(&SparseVector::unit(7, 13.0), CounterKind::Exact).unwrap();
            let t = a.rand().entries(7).unwrap().len() as f64;
            let want = if t >= 20.0 * 0.5 { 13 } else { 40 };
            assert_eq!(weight_estimate_naive(&mut a, &st, 7, &p).unwrap(), want);
            assert_eq!(weight_estimate_fast(&mut b, &st, 7, &p).unwrap(), want);
            assert_eq!(a.monitor().counters(), b.monitor().counters());
        }
    }

    #[test]
    fn empty_support_returns_w() {
        let r = init_sketch(SketchVariant::BCountSketch, SketchParams::new(10_000, 20, 10).unwrap(), 2).unwrap();
        let key = (0..10_000).find(|&k| r.entries(k).unwrap().is_empty()).unwrap();
        let cfg = RobustConfig::new(EstimatorConstants::relaxed(0.6, 0.9), 100, 100);
        let mut s = RobustEstimatorState::new(r, cfg, Box::new(ZeroNoise)).unwrap();
        let st = s.rand().new_state(CounterKind::Exact);
        let p = WeightEstimatorParams::new(25);
        assert_eq!(weight_estimate_naive(&mut s, &st, key, &p).unwrap(), 25);
        assert_eq!(weight_estimate_fast(&mut s, &st, key, &p).unwrap(), 25);
    }

    #[test]
    fn zero_noise_fast_equals_naive_on_random_instances() {
        let p = WeightEstimatorParams::new(40);
        for seed in 0..30u64 {
            let v = SparseVector::from_entries((0..60u64).map(|k| (k, ((k * 7 + seed) % 11) as f64 - 5.0)));
            let mut a = rs(seed);
            let mut b = rs(seed);
            let st = a.rand().sketch_vector_as(&v, CounterKind::Exact).unwrap();
            for key in 0..60 {
                assert_eq!(
                    weight_estimate_naive(&mut a, &st, key, &p).unwrap(),
                    weight_estimate_fast(&mut b, &st, key, &p).unwrap()
                );
            }
            assert_eq!(a.monitor().counters(), b.monitor().counters());
            assert_eq!(a.monitor().queries(), b.monitor().queries());
        }
    }
}
