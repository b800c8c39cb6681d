//! Exact invariants shared by the property suite and the acceptance runner.
#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use robust_hh::attacks::{attack_median, AttackConfig, MedianOracle};
use robust_hh::dp::{LaplaceNoise, NoiseSource, PrivacyParams, ScriptedNoise, ThresholdMonitor, ZeroNoise};
use robust_hh::estimators::{AlignmentCounts, EstimatorConstants, StableReportState};
use robust_hh::sketch::{init_sketch, CounterKind, SketchParams, SketchVariant, SparseVector};

pub type Check = std::result::Result<(), TestCaseError>;

pub fn variant() -> impl Strategy<Value = SketchVariant> {
    prop_oneof![Just(SketchVariant::CountSketch), Just(SketchVariant::BCountSketch)]
}

/// Small integral vectors over keys below 500.
pub fn int_vector() -> impl Strategy<Value = SparseVector> {
    prop::collection::vec((0u64..500, -50i64..=50), 0..40)
        .prop_map(|kv| SparseVector::from_entries(kv.into_iter().map(|(k, x)| (k, x as f64))))
}

fn params_for(rows: usize, b: usize) -> SketchParams {
    SketchParams::new(1 << 16, rows * b, b).expect("valid params")
}

// ---- sketch linearity ----

pub fn linearity_case() -> impl Strategy<Value = (SketchVariant, u64, SparseVector, SparseVector, i64, i64)> {
    (variant(), any::<u64>(), int_vector(), int_vector(), -5i64..=5, -5i64..=5)
}

pub fn check_linearity(
    (variant, seed, u, w, alpha, beta): (SketchVariant, u64, SparseVector, SparseVector, i64, i64),
) -> Check {
    let rand = init_sketch(variant, params_for(6, 8), seed).unwrap();
    let mut combo = u.scaled(alpha as f64);
    combo.add_scaled(&w, beta as f64);
    for kind in [CounterKind::Exact, CounterKind::Float] {
        let direct = rand.sketch_vector_as(&combo, kind).unwrap();
        let mut lin = rand.new_state(kind);
        lin.add_scaled(&rand.sketch_vector_as(&u, kind).unwrap(), alpha as f64).unwrap();
        lin.add_scaled(&rand.sketch_vector_as(&w, kind).unwrap(), beta as f64).unwrap();
        prop_assert_eq!(direct.values(), lin.values());
    }
    Ok(())
}

// ---- streaming updates vs one-shot ----

pub fn stream_case() -> impl Strategy<Value = (SketchVariant, u64, Vec<(u64, i64)>)> {
    (variant(), any::<u64>(), prop::collection::vec((0u64..300, -20i64..=20), 0..120))
}

pub fn check_stream_equivalence((variant, seed, updates): (SketchVariant, u64, Vec<(u64, i64)>)) -> Check {
    let rand = init_sketch(variant, params_for(5, 10), seed).unwrap();
    let mut st = rand.new_state(CounterKind::Exact);
    let mut total = SparseVector::new();
    for &(k, x) in &updates {
        st.apply_update(&rand, k, x as f64).unwrap();
        total.add(k, x as f64);
    }
    let once = rand.sketch_vector_as(&total, CounterKind::Exact).unwrap();
    prop_assert_eq!(st.counters(), once.counters());
    // Undoing the stream restores zeros exactly.
    for &(k, x) in updates.iter().rev() {
        st.apply_update(&rand, k, -x as f64).unwrap();
    }
    let zero = rand.new_state(CounterKind::Exact);
    prop_assert_eq!(st.counters(), zero.counters());
    Ok(())
}

// ---- threshold monitor ----

/// (satisfied subset mask, direction, threshold) per query.
pub type MonitorScript = Vec<(u16, bool, i8)>;

pub fn monitor_case() -> impl Strategy<Value = (u64, u64, MonitorScript)> {
    (
        any::<u64>(),
        1u64..4,
        prop::collection::vec((any::<u16>(), any::<bool>(), -2i8..=14), 1..80),
    )
}

fn satisfied(mask: u16) -> Vec<usize> {
    (0..12).filter(|x| mask >> x & 1 == 1).collect()
}

fn monitor(limit: u64, noise: Box<dyn NoiseSource>) -> ThresholdMonitor {
    ThresholdMonitor::new(12, PrivacyParams::new(1.0, 1e-3, limit).unwrap(), noise).unwrap()
}

/// Bottom answers change nothing; Top charges exactly the satisfied active elements;
/// an element is active iff its counter is below L.
pub fn check_monitor_bookkeeping((seed, limit, script): (u64, u64, MonitorScript)) -> Check {
    for noisy in [false, true] {
        let noise: Box<dyn NoiseSource> = if noisy {
            Box::new(LaplaceNoise::new(seed))
        } else {
            Box::new(ZeroNoise)
        };
        let mut tm = monitor(limit, noise);
        let mut expect = vec![0u64; 12];
        for &(mask, up, tau) in &script {
            let sat = satisfied(mask);
            let s = if up { 1 } else { -1 };
            let before_counters = tm.counters().to_vec();
            let before_active: Vec<bool> = (0..12).map(|x| tm.is_active(x)).collect();
            let rec = tm.query(&sat, s, tau as f64).unwrap();
            let active_sat = sat.iter().filter(|&&x| before_active[x]).count() as u64;
            prop_assert_eq!(rec.true_count, active_sat);
            if rec.answer.is_top() {
                for &x in &sat {
                    if before_active[x] {
                        expect[x] += 1;
                    }
                }
            } else {
                prop_assert_eq!(tm.counters(), &before_counters[..]);
                prop_assert_eq!((0..12).map(|x| tm.is_active(x)).collect::<Vec<_>>(), before_active);
            }
            prop_assert_eq!(tm.counters(), &expect[..]);
            for x in 0..12 {
                prop_assert_eq!(tm.is_active(x), expect[x] < limit);
            }
            prop_assert_eq!(tm.num_active(), expect.iter().filter(|&&c| c < limit).count());
        }
        prop_assert_eq!(tm.queries(), script.len() as u64);
    }
    Ok(())
}

/// Scripted noise pushing every answer to Bottom leaves the monitor untouched.
pub fn check_bottom_immutability((_, limit, script): (u64, u64, MonitorScript)) -> Check {
    let pairs = script.iter().map(|&(_, up, _)| if up { (-1e9, 0.0) } else { (1e9, 0.0) });
    let mut tm = monitor(limit, Box::new(ScriptedNoise::new(pairs.collect::<Vec<_>>())));
    for &(mask, up, tau) in &script {
        let rec = tm.query(&satisfied(mask), if up { 1 } else { -1 }, tau as f64).unwrap();
        prop_assert!(!rec.answer.is_top());
        prop_assert!(tm.counters().iter().all(|&c| c == 0));
        prop_assert_eq!(tm.num_active(), 12);
    }
    Ok(())
}

// ---- attack tail norm ----

pub fn tail_case() -> impl Strategy<Value = (u64, u64, usize, u64)> {
    (any::<u64>(), any::<u64>(), 10usize..80, 1u64..25)
}

/// Each collection adds (or subtracts) a fresh +-1 tail on a disjoint support.
pub fn check_tail_norm((sketch_seed, attack_seed, m, r): (u64, u64, usize, u64)) -> Check {
    let rand = init_sketch(SketchVariant::CountSketch, SketchParams::new(1 << 40, 40, 10).unwrap(), sketch_seed).unwrap();
    let cfg = AttackConfig {
        tail_size: m,
        k_prime: 2,
        ell: 4,
        b: 10,
        collections: r,
        borderline_weight: 3.0,
        super_heavy_weight: 100.0,
        seed: attack_seed,
        max_queries: 40 * r,
        ..AttackConfig::default()
    };
    let mut o = MedianOracle::new(rand, cfg.k_prime, vec![]).unwrap();
    let res = attack_median(&mut o, &cfg, &mut ()).unwrap();
    prop_assert_eq!(res.a.norm_sq(), (res.collections as usize * m) as f64);
    prop_assert!(res.a.iter().all(|(_, x)| x.abs() == 1.0));
    let collected = res.collected().filter(|&c| c != 0).count() as u64;
    prop_assert_eq!(collected, res.collections);
    Ok(())
}

// ---- stable hysteresis ----

pub fn stable_case() -> impl Strategy<Value = (SketchVariant, u64, Vec<SparseVector>)> {
    let step = prop::collection::vec((0u64..12, -30i64..=30), 0..20)
        .prop_map(|kv| SparseVector::from_entries(kv.into_iter().map(|(k, x)| (k, x as f64))));
    (variant(), any::<u64>(), prop::collection::vec(step, 1..25))
}

/// Members leave only below tau_m1 and enter only at tau_m2; anything in between keeps
/// its membership.
pub fn check_stable_hysteresis((variant, seed, steps): (SketchVariant, u64, Vec<SparseVector>)) -> Check {
    let constants = EstimatorConstants::relaxed(0.6, 0.9);
    let rand = init_sketch(variant, SketchParams::new(1 << 16, 40, 4).unwrap(), seed).unwrap();
    let dob = rand.params().d_over_b();
    let mut st = StableReportState::new();
    let mut v = SparseVector::new();
    for delta in steps {
        v.add_scaled(&delta, 1.0);
        let state = rand.sketch_vector(&v).unwrap();
        let before = st.clone();
        st.stable_step(&rand, &state, &constants, 0..12).unwrap();
        for key in 0..12u64 {
            let a = AlignmentCounts::from_entries(&state, &rand.entries(key).unwrap());
            let p = |s: i8| a.p_hat(s, dob);
            match (before.sign_of(key), st.sign_of(key)) {
                (Some(s), Some(t)) => {
                    prop_assert_eq!(s, t);
                    prop_assert!(p(s) >= constants.tau_m1());
                }
                (Some(s), None) => prop_assert!(p(s) < constants.tau_m1()),
                (None, Some(t)) => prop_assert!(p(t) >= constants.tau_m2()),
                (None, None) => prop_assert!(p(1) < constants.tau_m2() && p(-1) < constants.tau_m2()),
            }
        }
    }
    Ok(())
}

/// Runs `check` on `cases` generated inputs; Err carries the shrunk failure.
pub fn run<S: Strategy>(cases: u32, strategy: S, check: impl Fn(S::Value) -> Check) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner.run(&strategy, check).map_err(|e| e.to_string())
}
