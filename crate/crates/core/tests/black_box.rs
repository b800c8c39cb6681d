//! The analyst sees answers only: replaying recorded answers reproduces every attack
//! decision, and the scoring wrapper never alters what the analyst receives.

use std::path::Path;

use robust_hh::attacks::{
    run_attack, AttackConfig, AttackResult, BnrTracker, Calibration, EstimatorKind, MedianOracle, Oracle,
    RecordingOracle, ReplayOracle,
};
use robust_hh::harness::experiments::{build_oracle, TrialSeeds};
use robust_hh::harness::game::{game_loop, Analyst, AttackAnalyst, GameOracle, Judge, NullAnalyst};
use robust_hh::harness::ExperimentConfig;
use robust_hh::sketch::{init_sketch, SketchParams, SketchVariant, SparseVector};

fn config(name: &str) -> ExperimentConfig {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name);
    ExperimentConfig::load(&p).unwrap()
}

fn small_attack(cfg: &ExperimentConfig, kind: EstimatorKind, seed: u64) -> AttackConfig {
    let mut a = AttackConfig {
        seed,
        estimator: kind,
        ..cfg.attack_for(&cfg.sketch)
    };
    a.collections = a.collections.min(40);
    a.max_queries = a.max_queries.min(400);
    a
}

fn decisions(r: &AttackResult) -> (SparseVector, Vec<i8>, u64, u64) {
    (r.a.clone(), r.collected().collect(), r.collections, r.queries_used)
}

#[test]
fn attacks_depend_only_on_answers() {
    for (name, kind) in [
        ("attack_end_to_end.json", EstimatorKind::Median),
        ("robust_survival.json", EstimatorKind::BasicSign),
        ("robust_survival.json", EstimatorKind::Robust),
    ] {
        let cfg = config(name);
        for seed in 0..3u64 {
            let attack = small_attack(&cfg, kind, seed);
            let s = TrialSeeds::new(seed, 0);
            let (mut oracle, _) = build_oracle(&cfg.estimator, kind, &cfg.sketch, &attack, s.sketch, s.noise).unwrap();
            let mut rec = RecordingOracle::new(oracle.as_mut());
            let live = run_attack(&mut rec, Calibration::Target, &attack, &mut ()).unwrap();
            let answers = rec.into_answers();
            assert_eq!(answers.len() as u64, live.queries_used);
            let mut replay = ReplayOracle::new(answers);
            let again = run_attack(&mut replay, Calibration::Target, &attack, &mut ()).unwrap();
            assert_eq!(decisions(&live), decisions(&again), "{name} {kind:?} seed {seed}");
        }
    }
}

#[test]
fn ground_truth_observer_does_not_steer_the_attack() {
    let cfg = config("attack_end_to_end.json");
    let attack = small_attack(&cfg, EstimatorKind::Median, 5);
    let s = TrialSeeds::new(5, 0);
    let run = |observe: bool| {
        let (mut oracle, rand) =
            build_oracle(&cfg.estimator, EstimatorKind::Median, &cfg.sketch, &attack, s.sketch, s.noise).unwrap();
        if observe {
            let mut tracker = BnrTracker::new(rand, &[attack.target_key]).unwrap();
            run_attack(oracle.as_mut(), Calibration::Fixed, &attack, &mut tracker).unwrap()
        } else {
            run_attack(oracle.as_mut(), Calibration::Fixed, &attack, &mut ()).unwrap()
        }
    };
    let (a, b) = (run(true), run(false));
    assert!(a.measured_bnr.is_some() && b.measured_bnr.is_none());
    assert_eq!(decisions(&a), decisions(&b));
}

#[test]
fn game_wrapper_is_transparent() {
    let make = || {
        let rand = init_sketch(SketchVariant::CountSketch, SketchParams::new(1 << 20, 200, 20).unwrap(), 4).unwrap();
        MedianOracle::new(rand, 5, vec![]).unwrap()
    };
    let analyst = || NullAnalyst {
        rounds: 30,
        keys: 200,
        heavy: 3,
        heavy_weight: 60.0,
        seed: 9,
    };
    let mut plain = make();
    let mut rec = RecordingOracle::new(&mut plain);
    analyst().play(&mut rec).unwrap();
    let direct = rec.into_answers();

    let mut inner = make();
    let wrapped = {
        let mut g = GameOracle::new(&mut inner, Judge::TopK { k: 5 }, 100);
        let mut rec = RecordingOracle::new(&mut g);
        analyst().play(&mut rec).unwrap();
        rec.into_answers()
    };
    assert_eq!(direct, wrapped);
}

#[test]
fn null_analyst_against_median_is_mostly_correct() {
    let rand = init_sketch(SketchVariant::CountSketch, SketchParams::new(1 << 20, 400, 20).unwrap(), 2).unwrap();
    let mut o = MedianOracle::new(rand, 5, vec![]).unwrap();
    let mut a = NullAnalyst {
        rounds: 200,
        keys: 300,
        heavy: 3,
        heavy_weight: 60.0,
        seed: 1,
    };
    let t = game_loop(&mut a, &mut o, Judge::TopK { k: 5 }, 1000).unwrap();
    let ok = t.rounds.iter().filter(|r| r.correct).count();
    assert_eq!(t.rounds.len(), 200);
    assert!(ok * 100 >= 95 * t.rounds.len(), "{ok}/200");
    // The heavy keys are real: a judge is not vacuous here.
    assert!(t.rounds.iter().all(|r| r.reported.len() == 5));
}

#[test]
fn fake_heavy_game_basic_vs_robust() {
    let cfg = config("robust_survival.json");
    let c = cfg.estimator.constants;
    let judge = Judge::Threshold { constants: c, b: cfg.sketch.b };
    let seeds = 0..5u64;
    let (mut basic_fooled, mut robust_held) = (0, 0);
    for seed in seeds.clone() {
        let s = TrialSeeds::new(cfg.master_seed, seed as usize);
        for kind in [EstimatorKind::BasicSign, EstimatorKind::Robust] {
            let attack = AttackConfig {
                seed: s.attack,
                estimator: kind,
                ..cfg.attack_for(&cfg.sketch)
            };
            let h = attack.target_key;
            let (mut oracle, _) = build_oracle(&cfg.estimator, kind, &cfg.sketch, &attack, s.sketch, s.noise).unwrap();
            let mut analyst = AttackAnalyst {
                cfg: attack.clone(),
                calibrate: true,
                final_query: |r: &AttackResult| r.a.clone(),
                result: None,
            };
            let t = game_loop(&mut analyst, oracle.as_mut(), judge, attack.max_queries + 1).unwrap();
            let last = t.rounds.last().expect("final round");
            let reported = last.reported.contains(&h);
            match kind {
                EstimatorKind::BasicSign => basic_fooled += reported as usize,
                _ => robust_held += !reported as usize,
            }
        }
    }
    let n = seeds.count();
    assert!(basic_fooled + 1 >= n, "basic fooled in {basic_fooled}/{n}");
    assert!(robust_held + 1 >= n, "robust held in {robust_held}/{n}");
}

#[test]
fn oracle_query_count_matches_rounds() {
    let rand = init_sketch(SketchVariant::CountSketch, SketchParams::new(1 << 20, 100, 10).unwrap(), 3).unwrap();
    let mut o = MedianOracle::new(rand, 2, vec![]).unwrap();
    let mut a = NullAnalyst {
        rounds: 7,
        keys: 40,
        heavy: 1,
        heavy_weight: 30.0,
        seed: 2,
    };
    let t = game_loop(&mut a, &mut o, Judge::TopK { k: 2 }, 10).unwrap();
    assert_eq!(t.rounds.len(), 7);
    assert_eq!(o.queries(), 7);
    assert!(!t.exhausted);
}
