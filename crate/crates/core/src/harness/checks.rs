//! Statistical checks shared by the experiments and the acceptance suite.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::dp::{LaplaceNoise, NoiseSource, PrivacyParams, ThresholdMonitor, ZeroNoise};
use crate::error::{Error, Result};
use crate::estimators::{
    classify_heavy_suspect, median_estimate, oracle_p, AlignmentCounts, EstimatorConstants, MembershipChange,
};
use crate::robust::{
    flip_number, weight_estimate_fast, weight_estimate_naive, RobustConfig, RobustEstimatorState, RobustStable,
    WeightEstimatorParams,
};
use crate::sketch::{init_sketch, SketchParams, SketchRandomness, SketchVariant, SparseVector};

use super::config::ExperimentConfig;

fn mix(seed: u64, i: u64) -> u64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ i.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    r.random()
}

// ---- alignment probabilities on boundary instances ----

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum BoundaryKind {
    /// Just inside the heavy condition: must align with probability >= tau_b.
    Heavy,
    /// On the neither boundary: one-sided alignment <= tau_a.
    Neither,
}

impl BoundaryKind {
    pub fn name(self) -> &'static str {
        match self {
            BoundaryKind::Heavy => "heavy",
            BoundaryKind::Neither => "neither",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryInstance {
    pub name: String,
    pub kind: BoundaryKind,
    pub v: SparseVector,
    pub key: u64,
}

/// Puts key 0 exactly on the boundary of `kind` by fixed-point iteration on its weight.
fn on_boundary(others: &SparseVector, kind: BoundaryKind, constants: &EstimatorConstants, b: usize) -> SparseVector {
    let mut v = others.clone();
    let mut w = 1.0;
    for _ in 0..100 {
        v.set(0, w);
        let c = classify_heavy_suspect(&v, constants, b);
        let next = match kind {
            BoundaryKind::Heavy => c.heavy_cut_sq.sqrt() * (1.0 + 1e-9),
            BoundaryKind::Neither => c.neither_cut_sq.sqrt() * (1.0 - 1e-9),
        };
        if (next - w).abs() <= 1e-12 * w.max(1.0) {
            w = next;
            break;
        }
        w = next;
    }
    v.set(0, w);
    v
}

fn alternating(keys: std::ops::Range<u64>, x: f64) -> impl Iterator<Item = (u64, f64)> {
    keys.map(move |k| (k, if k % 2 == 0 { x } else { -x }))
}

/// Uniform, Zipf and two-level tails for both boundaries, plus a key dominated by
/// C_a b larger keys.
pub fn boundary_instances(b: usize, constants: &EstimatorConstants) -> Vec<BoundaryInstance> {
    let big = (constants.c_a * b as f64) as u64;
    let uniform = |len: u64| SparseVector::from_entries(alternating(1..len + 1, 1.0));
    let zipf = |len: u64, s: f64| {
        SparseVector::from_entries((1..len + 1).map(|k| {
            let x = 100.0 / (k as f64).powf(s);
            (k, if k % 2 == 0 { x } else { -x })
        }))
    };
    let two_level = |top: u64, hi: f64, len: u64| {
        SparseVector::from_entries(alternating(1..top + 1, hi).chain(alternating(top + 1..top + len + 1, 1.0)))
    };
    let dominated = SparseVector::from_entries(alternating(1..big + 1, 20.0).chain(alternating(big + 1..2 * big + 1, 1.0)));
    let specs: Vec<(&str, BoundaryKind, SparseVector)> = vec![
        ("heavy_uniform", BoundaryKind::Heavy, uniform(20 * b as u64)),
        ("heavy_zipf", BoundaryKind::Heavy, zipf(20 * b as u64, 0.8)),
        ("heavy_two_level", BoundaryKind::Heavy, two_level(50, 20.0, 10 * b as u64)),
        ("neither_uniform", BoundaryKind::Neither, uniform(2 * big)),
        ("neither_zipf", BoundaryKind::Neither, zipf(2 * big, 0.6)),
        ("neither_two_level", BoundaryKind::Neither, two_level(b as u64, 20.0, 2 * big)),
        ("neither_dominated", BoundaryKind::Neither, dominated),
    ];
    specs
        .into_iter()
        .map(|(name, kind, others)| BoundaryInstance {
            name: name.into(),
            kind,
            v: on_boundary(&others, kind, constants, b),
            key: 0,
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Lemma1Row {
    pub trial: usize,
    pub instance: String,
    pub kind: BoundaryKind,
    pub key: u64,
    pub value: f64,
    pub p_plus: f64,
    pub p_minus: f64,
    /// Standard error of the probability the bound applies to (the larger one for neither).
    pub std_err: f64,
    pub bound: f64,
    pub pass: bool,
}

pub fn check_boundary(
    inst: &BoundaryInstance,
    trial: usize,
    b: usize,
    constants: &EstimatorConstants,
    samples: usize,
    seed: u64,
) -> Result<Lemma1Row> {
    let est = oracle_p(&inst.v, inst.key, b, samples, seed)?;
    let x = inst.v.get(inst.key);
    let (bound, std_err, pass) = match inst.kind {
        BoundaryKind::Heavy => {
            let sigma = if x >= 0.0 { 1 } else { -1 };
            let se = est.std_err(sigma);
            (constants.tau_b, se, est.p(sigma) >= constants.tau_b - 3.0 * se)
        }
        BoundaryKind::Neither => {
            let ok = [1i8, -1].iter().all(|&s| est.p(s) <= constants.tau_a + 3.0 * est.std_err(s));
            (constants.tau_a, est.std_err(1).max(est.std_err(-1)), ok)
        }
    };
    Ok(Lemma1Row {
        trial,
        instance: inst.name.clone(),
        kind: inst.kind,
        key: inst.key,
        value: x,
        p_plus: est.p_plus,
        p_minus: est.p_minus,
        std_err,
        bound,
        pass,
    })
}

pub fn lemma1_rows(
    trial: usize,
    b: usize,
    constants: &EstimatorConstants,
    samples: usize,
    seed: u64,
) -> Result<Vec<Lemma1Row>> {
    boundary_instances(b, constants)
        .iter()
        .enumerate()
        .map(|(j, inst)| check_boundary(inst, trial, b, constants, samples, mix(seed, j as u64)))
        .collect()
}

// ---- median estimator utility ----

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct UtilityOutcome {
    pub trials: usize,
    pub violations: usize,
}

impl UtilityOutcome {
    pub fn violation_rate(&self) -> f64 {
        self.violations as f64 / self.trials.max(1) as f64
    }
}

/// (v[i] - est)^2 <= (1/b) ||v_tail[b]||^2 over `trials` (sketch seed, key) pairs on
/// a CountSketch with ceil(8 ln 20) rows.
pub fn median_utility(b: usize, trials: usize, seed: u64) -> Result<UtilityOutcome> {
    let rows = (8.0 * 20f64.ln()).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = SparseVector::new();
    for k in 0..5u64 {
        v.set(k, 40.0 + 20.0 * k as f64);
    }
    for k in 5..3000u64 {
        v.set(k, rng.random_range(1..=3) as f64 * if rng.random::<bool>() { 1.0 } else { -1.0 });
    }
    let bound = v.tail_norm_sq(b) / b as f64;
    let keys: Vec<u64> = v.keys().collect();
    let params = SketchParams::new(1 << 20, rows * b, b)?;
    let mut violations = 0;
    for t in 0..trials {
        let rand = init_sketch(SketchVariant::CountSketch, params, mix(seed, t as u64))?;
        let state = rand.sketch_vector(&v)?;
        let key = keys[rng.random_range(0..keys.len())];
        let err = v.get(key) - median_estimate(&rand, &state, key)?;
        if err * err > bound {
            violations += 1;
        }
    }
    Ok(UtilityOutcome { trials, violations })
}

// ---- chi-square ----

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Two-sample chi-square on histograms over the same outcome space.
///
/// Adjacent outcomes are merged until every bin holds at least 10 observations in total,
/// so each expected count is at least 5 for equal sample sizes.
pub fn chi_square_two_sample(a: &BTreeMap<i64, u64>, b: &BTreeMap<i64, u64>) -> ChiSquare {
    let keys: BTreeSet<i64> = a.keys().chain(b.keys()).copied().collect();
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut ca, mut cb) = (0.0, 0.0);
    for k in keys {
        ca += *a.get(&k).unwrap_or(&0) as f64;
        cb += *b.get(&k).unwrap_or(&0) as f64;
        if ca + cb >= 10.0 {
            bins.push((ca, cb));
            ca = 0.0;
            cb = 0.0;
        }
    }
    if ca + cb > 0.0 {
        match bins.last_mut() {
            Some(last) => {
                last.0 += ca;
                last.1 += cb;
            }
            None => bins.push((ca, cb)),
        }
    }
    let na: f64 = bins.iter().map(|x| x.0).sum();
    let nb: f64 = bins.iter().map(|x| x.1).sum();
    if bins.len() < 2 || na == 0.0 || nb == 0.0 {
        return ChiSquare {
            statistic: 0.0,
            dof: 0,
            p_value: 1.0,
        };
    }
    let (ka, kb) = ((nb / na).sqrt(), (na / nb).sqrt());
    let statistic: f64 = bins.iter().map(|&(x, y)| (ka * x - kb * y).powi(2) / (x + y)).sum();
    let dof = bins.len() - 1;
    let p_value = ChiSquared::new(dof as f64).map(|d| d.sf(statistic)).unwrap_or(f64::NAN);
    ChiSquare {
        statistic,
        dof,
        p_value,
    }
}

// ---- weight estimator ----

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeightComparison {
    pub trial: usize,
    pub naive: BTreeMap<i64, u64>,
    pub fast: BTreeMap<i64, u64>,
    pub chi_square: ChiSquare,
    pub bound_qualifying: usize,
    pub bound_within: usize,
}

impl WeightComparison {
    pub fn histogram(&self) -> BTreeMap<i64, (u64, u64)> {
        let mut h: BTreeMap<i64, (u64, u64)> = BTreeMap::new();
        for (&w, &c) in &self.naive {
            h.entry(w).or_default().0 = c;
        }
        for (&w, &c) in &self.fast {
            h.entry(w).or_default().1 = c;
        }
        h
    }

    /// Fraction of qualifying zero-noise runs within the bound; 0 when none qualified.
    pub fn weight_bound_rate(&self) -> f64 {
        if self.bound_qualifying == 0 {
            0.0
        } else {
            self.bound_within as f64 / self.bound_qualifying as f64
        }
    }
}

/// eps = 1 and delta = e^{-x}, so that (1/eps) log(1/delta) = x.
pub fn weight_robust_config(constants: EstimatorConstants, limit: u64, params: SketchParams, x: f64) -> RobustConfig {
    let mut rc = RobustConfig::new(constants, limit, 1);
    rc.c1 = (limit as f64).sqrt();
    rc.c2 = (-x).exp() * params.n as f64 * params.b as f64 * limit as f64;
    rc
}

/// The n = 60 comparison instance: one key of weight 12 over small integers.
pub fn weight_instance(n: u64) -> SparseVector {
    SparseVector::from_entries((0..n).map(|k| (k, if k == 0 { 12.0 } else { ((k * 7) % 5) as f64 - 2.0 })))
}

fn fresh_estimator(rand: &SketchRandomness, rc: RobustConfig, noise: Box<dyn NoiseSource>) -> Result<RobustEstimatorState> {
    RobustEstimatorState::new(rand.replicate(), rc, noise)
}

/// Paired naive/fast runs with independent noise, plus zero-noise accuracy runs.
pub fn compare_weight_estimators(cfg: &ExperimentConfig, trial: usize, seed: u64) -> Result<WeightComparison> {
    let params = cfg.sketch.params()?;
    let o = &cfg.options;
    let wp = WeightEstimatorParams::new(o.w_max);
    let rc = weight_robust_config(cfg.estimator.constants, cfg.estimator.limit, params, o.noise_scale);
    let rand = init_sketch(cfg.sketch.variant, params, mix(seed, u64::MAX))?;
    let v = weight_instance(params.n);
    let state = rand.sketch_vector_as(&v, crate::sketch::CounterKind::Exact)?;
    let (mut naive, mut fast) = (BTreeMap::new(), BTreeMap::new());
    for r in 0..o.paired_runs as u64 {
        let mut a = fresh_estimator(&rand, rc, Box::new(LaplaceNoise::new(mix(seed, 2 * r))))?;
        let mut b = fresh_estimator(&rand, rc, Box::new(LaplaceNoise::new(mix(seed, 2 * r + 1))))?;
        *naive.entry(weight_estimate_naive(&mut a, &state, 0, &wp)?).or_insert(0u64) += 1;
        *fast.entry(weight_estimate_fast(&mut b, &state, 0, &wp)?).or_insert(0u64) += 1;
    }
    let chi_square = chi_square_two_sample(&naive, &fast);
    let runs = (o.paired_runs / 20).max(100);
    let (q, w) = weight_bound_runs(cfg, rc, &wp, runs, mix(seed, u64::MAX - 1))?;
    Ok(WeightComparison {
        trial,
        naive,
        fast,
        chi_square,
        bound_qualifying: q,
        bound_within: w,
    })
}

/// Zero-noise runs on random integral instances with k = b.
///
/// A run qualifies when fewer than (d/b) tau_tr buckets of key 0 lie below
/// v[0] - E and more than that many lie at or below v[0] + E, E = ||v_tail[k]|| / sqrt(k).
/// Returns (qualifying, within E for both estimators).
pub fn weight_bound_runs(
    cfg: &ExperimentConfig,
    rc: RobustConfig,
    wp: &WeightEstimatorParams,
    runs: usize,
    seed: u64,
) -> Result<(usize, usize)> {
    let params = cfg.sketch.params()?;
    let k = params.b;
    let thr = params.d_over_b() * wp.tau_tr();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut qualifying, mut within) = (0, 0);
    for r in 0..runs as u64 {
        let mut v = SparseVector::new();
        v.set(0, rng.random_range(5..=25) as f64);
        for key in 1..params.n {
            v.set(key, rng.random_range(-3i64..=3) as f64);
        }
        let e = (v.tail_norm_sq(k) / k as f64).sqrt();
        let rand = init_sketch(cfg.sketch.variant, params, mix(seed, r))?;
        let state = rand.sketch_vector_as(&v, crate::sketch::CounterKind::Exact)?;
        let vals: Vec<f64> = state.signed_values(&rand.entries(0)?).collect();
        let (lo, hi) = (v.get(0) - e, v.get(0) + e);
        let below = vals.iter().filter(|&&x| x < lo).count() as f64;
        let upto = vals.iter().filter(|&&x| x <= hi).count() as f64;
        if !(below < thr && upto > thr && hi.floor() <= wp.w_max as f64) {
            continue;
        }
        qualifying += 1;
        let mut a = fresh_estimator(&rand, rc, Box::new(ZeroNoise))?;
        let mut b = fresh_estimator(&rand, rc, Box::new(ZeroNoise))?;
        let x = weight_estimate_naive(&mut a, &state, 0, wp)? as f64;
        let y = weight_estimate_fast(&mut b, &state, 0, wp)? as f64;
        if (lo..=hi).contains(&x) && (lo..=hi).contains(&y) {
            within += 1;
        }
    }
    Ok((qualifying, within))
}

// ---- monitor noise envelope ----

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnvelopeOutcome {
    pub queries: usize,
    pub max_abs_noise: f64,
    pub envelope: f64,
}

impl EnvelopeOutcome {
    pub fn holds(&self) -> bool {
        self.max_abs_noise <= self.envelope
    }
}

/// `r` zero-signal queries at an unreachable threshold; max |noisy - true| vs the
/// envelope at failure probability `beta`.
pub fn monitor_envelope(params: PrivacyParams, r: usize, beta: f64, seed: u64) -> Result<EnvelopeOutcome> {
    let mut tm = ThresholdMonitor::new(4, params, Box::new(LaplaceNoise::new(seed)))?;
    let mut max_abs: f64 = 0.0;
    for _ in 0..r {
        let q = tm.query(&[], 1, f64::MAX)?;
        if q.answer.is_top() {
            return Err(Error::Protocol("unreachable threshold answered Top".into()));
        }
        max_abs = max_abs.max((q.noisy_count - q.true_count as f64).abs());
    }
    Ok(EnvelopeOutcome {
        queries: r,
        max_abs_noise: max_abs,
        envelope: params.noise_envelope(r, beta),
    })
}

// ---- stable estimator vs flip number ----

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct FlipAudit {
    pub key: u64,
    pub sign: i8,
    pub changes: usize,
    pub flips: usize,
}

/// Zero-noise drift stream (heavy, buried by a growing tail, heavy again, then
/// cancelled) through the robust stable estimator.
///
/// For each seen key and sign, counts membership changes and the flip number of its
/// p-hat trace; the trace starts from the empty vector, which is low.
pub fn stable_flip_audit(seed: u64) -> Result<Vec<FlipAudit>> {
    let constants = EstimatorConstants::relaxed(0.6, 0.9);
    let params = SketchParams::new(1 << 20, 400, 10)?;
    let rand = init_sketch(SketchVariant::BCountSketch, params, seed)?;
    let rc = RobustConfig::new(constants, 1_000_000, 1_000_000);
    let mut st = RobustStable::new(rand, rc, Box::new(ZeroNoise), None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xF11F);
    let mut stream: Vec<(u64, f64)> = Vec::new();
    let sign = |rng: &mut ChaCha8Rng| if rng.random::<bool>() { 1.0 } else { -1.0 };
    for k in 10..60u64 {
        stream.push((k, sign(&mut rng)));
    }
    stream.extend(std::iter::repeat_n((1, 1.0), 12));
    stream.extend(std::iter::repeat_n((2, -1.0), 12));
    for k in 60..260u64 {
        stream.push((k, 3.0 * sign(&mut rng)));
    }
    stream.extend(std::iter::repeat_n((1, 4.0), 20));
    stream.extend(std::iter::repeat_n((1, -4.0), 22));
    stream.extend(std::iter::repeat_n((2, -3.0), 15));

    let dob = params.d_over_b();
    let mut changes: BTreeMap<(u64, i8), usize> = BTreeMap::new();
    let mut traces: BTreeMap<(u64, i8), Vec<f64>> = BTreeMap::new();
    let mut seen: BTreeSet<u64> = BTreeSet::new();
    for (key, x) in stream {
        for e in st.update(key, x)? {
            let (k, s) = match e.change {
                MembershipChange::Enter { key, sign } | MembershipChange::Exit { key, sign } => (key, sign),
            };
            *changes.entry((k, s)).or_default() += 1;
        }
        if seen.insert(key) {
            for s in [1i8, -1] {
                traces.insert((key, s), vec![0.0]);
            }
        }
        let rand = st.estimator().rand();
        for &k in &seen {
            let a = AlignmentCounts::from_entries(st.sketch(), &rand.entries(k)?);
            for s in [1i8, -1] {
                traces.get_mut(&(k, s)).expect("seen").push(a.p_hat(s, dob));
            }
        }
    }
    Ok(traces
        .iter()
        .map(|(&(key, sign), tr)| FlipAudit {
            key,
            sign,
            changes: changes.get(&(key, sign)).copied().unwrap_or(0),
            flips: flip_number(tr, &constants),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi_square_identical_histograms() {
        let h: BTreeMap<i64, u64> = (0..10).map(|k| (k, 100)).collect();
        let c = chi_square_two_sample(&h, &h);
        assert_eq!(c.statistic, 0.0);
        assert_eq!(c.dof, 9);
        assert!((c.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chi_square_detects_shift() {
        let a: BTreeMap<i64, u64> = (0..10).map(|k| (k, 100)).collect();
        let b: BTreeMap<i64, u64> = (0..10).map(|k| (k + 3, 100)).collect();
        assert!(chi_square_two_sample(&a, &b).p_value < 1e-10);
    }

    #[test]
    fn chi_square_merges_sparse_bins() {
        let a: BTreeMap<i64, u64> = [(0, 3), (1, 3), (2, 4), (3, 50)].into_iter().collect();
        let b: BTreeMap<i64, u64> = [(0, 2), (1, 3), (2, 5), (3, 50)].into_iter().collect();
        let c = chi_square_two_sample(&a, &b);
        // {0, 1, 2} and {3}.
        assert_eq!(c.dof, 1);
    }

    #[test]
    fn boundary_instances_sit_on_their_boundaries() {
        let c = EstimatorConstants::default();
        for inst in boundary_instances(900, &c) {
            let cl = classify_heavy_suspect(&inst.v, &c, 900);
            let x = inst.v.get(0);
            match inst.kind {
                BoundaryKind::Heavy => {
                    assert!(x * x > cl.heavy_cut_sq, "{}", inst.name);
                    assert!(x * x < cl.heavy_cut_sq * (1.0 + 1e-6), "{}", inst.name);
                }
                BoundaryKind::Neither => {
                    assert!(x * x <= cl.neither_cut_sq, "{}", inst.name);
                    assert!(x * x > cl.neither_cut_sq * (1.0 - 1e-6), "{}", inst.name);
                }
            }
        }
    }

    #[test]
    fn flip_audit_is_bounded() {
        for a in stable_flip_audit(1).unwrap() {
            assert!(a.changes <= a.flips, "{a:?}");
        }
    }
}
