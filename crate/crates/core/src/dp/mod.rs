//! Laplace noise and the threshold monitor (a fine-grained sparse-vector mechanism).

mod noise;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use noise::{
    laplace_clipped_upper_tail, laplace_from_uniform, sample_laplace, LaplaceNoise, NoiseSource, ScriptedNoise,
    ZeroNoise,
};

/// Frozen constant of the monitor's noise envelope, see [`PrivacyParams::noise_envelope`].
///
/// |a| <= 10 Delta log(r/beta) and |clip(b)| <= x log(r/beta) with x = log(1/delta)/eps <= Delta
/// hold jointly over r queries with probability 1 - 2 beta by a union bound, so 11 suffices.
pub const NOISE_ENVELOPE_KAPPA: f64 = 11.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    pub epsilon: f64,
    pub delta: f64,
    /// Access limit L.
    pub limit: u64,
}

impl PrivacyParams {
    pub fn new(epsilon: f64, delta: f64, limit: u64) -> Result<Self> {
        let p = PrivacyParams { epsilon, delta, limit };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::param("epsilon", "must be positive"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::param("delta", "must lie in (0, 1)"));
        }
        if self.limit == 0 {
            return Err(Error::param("L", "access limit must be positive"));
        }
        if self.base_scale() <= 1.0 {
            return Err(Error::param(
                "epsilon/delta",
                format!("log(1/delta)/epsilon = {} must exceed 1 for a positive Delta", self.base_scale()),
            ));
        }
        Ok(())
    }

    /// (1/eps) log(1/delta), the scale of the clipped Laplace term.
    pub fn base_scale(&self) -> f64 {
        (1.0 / self.delta).ln() / self.epsilon
    }

    /// Delta = (1/eps) log(1/delta) log((1/eps) log(1/delta)).
    pub fn big_delta(&self) -> f64 {
        let x = self.base_scale();
        x * x.ln()
    }

    /// Scale of the unclipped Laplace term a.
    pub fn scale_a(&self) -> f64 {
        10.0 * self.big_delta()
    }

    /// kappa Delta log(r/beta): bound on max |noise| over r queries at failure probability beta.
    pub fn noise_envelope(&self, r: usize, beta: f64) -> f64 {
        NOISE_ENVELOPE_KAPPA * self.big_delta() * (r as f64 / beta).ln()
    }
}

/// `x` with x ln x = target (x > 1), by Newton iteration.
pub fn solve_x_log_x(target: f64) -> f64 {
    assert!(target > 0.0);
    let mut x = (target / target.ln().max(1.0)).max(1.5);
    for _ in 0..100 {
        let f = x * x.ln() - target;
        let step = f / (x.ln() + 1.0);
        x = (x - step).max(1.0 + 1e-12);
        if step.abs() < 1e-13 * x {
            break;
        }
    }
    x
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Answer {
    /// Threshold crossed in direction s.
    Top,
    Bottom,
}

impl Answer {
    pub fn is_top(self) -> bool {
        self == Answer::Top
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub id: u64,
    pub s: i8,
    pub tau: f64,
    pub true_count: u64,
    /// NaN when the query was resolved by a sampler rather than a direct draw.
    pub noisy_count: f64,
    pub answer: Answer,
    pub deactivated: usize,
}

/// Per-element access counters with deactivation at the limit L.
pub struct ThresholdMonitor {
    params: PrivacyParams,
    counters: Vec<u64>,
    active: Vec<bool>,
    num_active: usize,
    noise: Box<dyn NoiseSource>,
    transcript: Option<Vec<QueryRecord>>,
    next_id: u64,
}

pub type MonitorState = ThresholdMonitor;

impl std::fmt::Debug for ThresholdMonitor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ThresholdMonitor")
            .field("params", &self.params)
            .field("elements", &self.counters.len())
            .field("num_active", &self.num_active)
            .field("queries", &self.next_id)
            .finish_non_exhaustive()
    }
}

pub fn tm_init(
    num_elements: usize,
    epsilon: f64,
    delta: f64,
    limit: u64,
    noise: Box<dyn NoiseSource>,
) -> Result<ThresholdMonitor> {
    ThresholdMonitor::new(num_elements, PrivacyParams::new(epsilon, delta, limit)?, noise)
}

impl ThresholdMonitor {
    pub fn new(num_elements: usize, params: PrivacyParams, noise: Box<dyn NoiseSource>) -> Result<Self> {
        params.validate()?;
        if num_elements == 0 {
            return Err(Error::param("num_elements", "must be positive"));
        }
        Ok(ThresholdMonitor {
            params,
            counters: vec![0; num_elements],
            active: vec![true; num_elements],
            num_active: num_elements,
            noise,
            transcript: None,
            next_id: 0,
        })
    }

    pub fn with_transcript(mut self) -> Self {
        self.transcript = Some(Vec::new());
        self
    }

    pub fn params(&self) -> &PrivacyParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.counters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counters.is_empty()
    }

    pub fn counter(&self, x: usize) -> u64 {
        self.counters[x]
    }

    pub fn counters(&self) -> &[u64] {
        &self.counters
    }

    pub fn is_active(&self, x: usize) -> bool {
        self.active[x]
    }

    pub fn num_active(&self) -> usize {
        self.num_active
    }

    pub fn queries(&self) -> u64 {
        self.next_id
    }

    pub fn transcript(&self) -> Option<&[QueryRecord]> {
        self.transcript.as_deref()
    }

    pub fn noise(&self) -> &dyn NoiseSource {
        self.noise.as_ref()
    }

    pub fn noise_mut(&mut self) -> &mut dyn NoiseSource {
        self.noise.as_mut()
    }

    /// f(S): number of listed elements that are still active.
    pub fn active_count(&self, satisfied: &[usize]) -> u64 {
        satisfied.iter().filter(|&&x| self.active[x]).count() as u64
    }

    /// Noise-free value a + clip_s(b) for one draw.
    fn noise_term(&mut self, s: i8) -> f64 {
        let p = self.params;
        let (a, b) = self.noise.draw(p.scale_a(), p.base_scale());
        let dl = p.big_delta();
        let clipped = if s > 0 { b.min(dl) } else { b.max(-dl) };
        a + clipped
    }

    /// Threshold query with predicate given by the elements where it holds.
    ///
    /// Elements must be distinct and in range. On Top every satisfied active element
    /// is charged once; on Bottom nothing changes.
    pub fn query(&mut self, satisfied: &[usize], s: i8, tau: f64) -> Result<QueryRecord> {
        if s != 1 && s != -1 {
            return Err(Error::param("s", "must be +1 or -1"));
        }
        if let Some(&x) = satisfied.iter().find(|&&x| x >= self.counters.len()) {
            return Err(Error::BucketOutOfRange { t: x, d: self.counters.len() });
        }
        let f = self.active_count(satisfied);
        let noisy = f as f64 + self.noise_term(s);
        let top = noisy * s as f64 >= tau * s as f64;
        let deactivated = if top { self.charge(satisfied) } else { 0 };
        Ok(self.record(s, tau, f, noisy, top, deactivated))
    }

    /// Query with a predicate over all elements.
    pub fn query_predicate(&mut self, pred: impl Fn(usize) -> bool, s: i8, tau: f64) -> Result<QueryRecord> {
        let sat: Vec<usize> = (0..self.counters.len()).filter(|&x| pred(x)).collect();
        self.query(&sat, s, tau)
    }

    /// Pr[Top] for a query with active count f, under the configured noise.
    pub fn top_probability(&self, f: u64, s: i8, tau: f64) -> Option<f64> {
        let p = self.params;
        self.noise
            .upper_tail(s as f64 * (tau - f as f64), p.scale_a(), p.base_scale(), p.big_delta())
    }

    /// Applies the state change of a Top answer resolved outside [`query`](Self::query).
    pub fn commit_top(&mut self, satisfied: &[usize], s: i8, tau: f64) -> QueryRecord {
        let f = self.active_count(satisfied);
        let deactivated = self.charge(satisfied);
        self.record(s, tau, f, f64::NAN, true, deactivated)
    }

    /// Counts Bottom answers resolved outside [`query`](Self::query).
    pub fn note_bottoms(&mut self, count: u64) {
        self.next_id += count;
    }

    fn charge(&mut self, satisfied: &[usize]) -> usize {
        let mut deactivated = 0;
        for &x in satisfied {
            if self.active[x] {
                self.counters[x] += 1;
                if self.counters[x] >= self.params.limit {
                    self.active[x] = false;
                    self.num_active -= 1;
                    deactivated += 1;
                }
            }
        }
        deactivated
    }

    fn record(&mut self, s: i8, tau: f64, f: u64, noisy: f64, top: bool, deactivated: usize) -> QueryRecord {
        let rec = QueryRecord {
            id: self.next_id,
            s,
            tau,
            true_count: f,
            noisy_count: noisy,
            answer: if top { Answer::Top } else { Answer::Bottom },
            deactivated,
        };
        self.next_id += 1;
        if let Some(t) = &mut self.transcript {
            t.push(rec);
        }
        rec
    }
}
