//! Attack strategies. Everything here sees only oracle answers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::sketch::SparseVector;

use super::{sample_tail, AttackConfig, AttackResult, EstimatorKind, KeyArena, Oracle, OracleAnswer, RoundRecord};

/// What an evaluation hook returns after each round.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Observation {
    pub measured_bnr: Option<f64>,
    /// Ends the attack early (used to stop at a measured BNR).
    pub stop: bool,
}

/// Sees each round's tail and decision. Its output never feeds back into decisions.
pub trait RoundObserver {
    fn observe(&mut self, collected: i8, tail: &SparseVector) -> Result<Observation>;
}

impl RoundObserver for () {
    fn observe(&mut self, _: i8, _: &SparseVector) -> Result<Observation> {
        Ok(Observation::default())
    }
}

fn plus(base: &SparseVector, z: &SparseVector, sign: f64) -> SparseVector {
    let mut v = base.clone();
    v.add_scaled(z, sign);
    v
}

fn check_answer(ans: &OracleAnswer, expected_len: Option<usize>) -> Result<()> {
    if let Some(k) = expected_len {
        if ans.keys.len() != k {
            return Err(Error::Protocol(format!("expected {k} keys, got {}", ans.keys.len())));
        }
    }
    let mut seen = std::collections::BTreeSet::new();
    if !ans.keys.iter().all(|k| seen.insert(*k)) {
        return Err(Error::Protocol("duplicate key in answer".into()));
    }
    if let Some(v) = &ans.values {
        if v.len() != ans.keys.len() {
            return Err(Error::Protocol("values misaligned with keys".into()));
        }
    }
    Ok(())
}

/// Collects the arm with more reports; a tie collects nothing.
pub fn pick_arm(plus_hits: u64, minus_hits: u64) -> i8 {
    match plus_hits.cmp(&minus_hits) {
        std::cmp::Ordering::Greater => 1,
        std::cmp::Ordering::Less => -1,
        std::cmp::Ordering::Equal => 0,
    }
}

/// Shared round loop. `decide` returns the collection sign for one tail.
fn run_rounds(
    oracle: &mut dyn Oracle,
    cfg: &AttackConfig,
    w: f64,
    round_cost: u64,
    observer: &mut dyn RoundObserver,
    mut decide: impl FnMut(&mut dyn Oracle, &SparseVector, &SparseVector, &mut u64) -> Result<i8>,
) -> Result<AttackResult> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut arena = KeyArena::new(cfg.arena_start);
    let base = cfg.probe_base(w);
    let mut res = AttackResult {
        borderline_weight: w,
        ..Default::default()
    };
    let mut round = 0;
    // Supports are disjoint, so squared norms add.
    let mut norm_sq = 0.0;
    while res.collections < cfg.collections && res.queries_used.saturating_add(round_cost) <= cfg.max_queries {
        round += 1;
        let z = sample_tail(arena.block(cfg.tail_size)?, cfg.tail, &mut rng);
        let dec = decide(oracle, &base, &z, &mut res.queries_used)?;
        if dec != 0 {
            res.a.add_scaled(&z, dec as f64);
            res.collections += 1;
            norm_sq += z.norm_sq();
        }
        let obs = observer.observe(dec, &z)?;
        if obs.measured_bnr.is_some() {
            res.measured_bnr = obs.measured_bnr;
        }
        res.rounds.push(RoundRecord {
            round,
            collected: dec,
            norm_sq,
            measured_bnr: obs.measured_bnr,
            queries_used: res.queries_used,
        });
        if obs.stop {
            break;
        }
    }
    Ok(res)
}

/// Median estimator: H holds k'-1 very heavy keys and two equal borderline keys.
/// Collect z when h is reported and -z otherwise.
pub fn attack_median(oracle: &mut dyn Oracle, cfg: &AttackConfig, observer: &mut dyn RoundObserver) -> Result<AttackResult> {
    let h = cfg.target_key;
    let k = cfg.k_prime;
    run_rounds(oracle, cfg, cfg.borderline_weight, 1, observer, |o, base, z, q| {
        let ans = o.query(&plus(base, z, 1.0))?;
        *q += 1;
        check_answer(&ans, Some(k))?;
        Ok(if ans.contains(h) { 1 } else { -1 })
    })
}

/// Basic sign-alignment estimator: query w e_h + z and w e_h - z and collect the
/// variant under which h alone was reported.
pub fn attack_basic_sign(
    oracle: &mut dyn Oracle,
    cfg: &AttackConfig,
    w: f64,
    observer: &mut dyn RoundObserver,
) -> Result<AttackResult> {
    let h = cfg.target_key;
    run_rounds(oracle, cfg, w, 2, observer, |o, base, z, q| {
        let p = o.query(&plus(base, z, 1.0))?;
        let m = o.query(&plus(base, z, -1.0))?;
        *q += 2;
        check_answer(&p, None)?;
        check_answer(&m, None)?;
        Ok(match (p.contains(h), m.contains(h)) {
            (true, false) => 1,
            (false, true) => -1,
            _ => 0,
        })
    })
}

/// Robust estimator: repeat each arm and collect the one reported more often.
pub fn attack_robust(
    oracle: &mut dyn Oracle,
    cfg: &AttackConfig,
    w: f64,
    observer: &mut dyn RoundObserver,
) -> Result<AttackResult> {
    let h = cfg.target_key;
    let reps = cfg.repeats_per_arm();
    run_rounds(oracle, cfg, w, 2 * reps as u64, observer, |o, base, z, q| {
        let (vp, vm) = (plus(base, z, 1.0), plus(base, z, -1.0));
        let (mut hp, mut hm) = (0u64, 0u64);
        for _ in 0..reps {
            let p = o.query(&vp)?;
            let m = o.query(&vm)?;
            check_answer(&p, None)?;
            check_answer(&m, None)?;
            hp += p.contains(h) as u64;
            hm += m.contains(h) as u64;
        }
        *q += 2 * reps as u64;
        Ok(pick_arm(hp, hm))
    })
}

/// Where the borderline weight of the sign attacks comes from.
pub enum Calibration<'a> {
    /// Use `cfg.borderline_weight` as is.
    Fixed,
    /// Calibrate on the attacked oracle; the probes count against the budget.
    Target,
    /// Calibrate on a separate oracle the attacker owns.
    Simulation(&'a mut dyn Oracle),
}

/// Dispatches on `cfg.estimator`. `cfg.max_queries` bounds calibration plus attack.
pub fn run_attack(
    oracle: &mut dyn Oracle,
    calibration: Calibration<'_>,
    cfg: &AttackConfig,
    observer: &mut dyn RoundObserver,
) -> Result<AttackResult> {
    if cfg.estimator == EstimatorKind::Median {
        return attack_median(oracle, cfg, observer);
    }
    let before = oracle.queries();
    let w = match calibration {
        Calibration::Fixed => cfg.borderline_weight,
        Calibration::Target => calibrate_borderline(oracle, cfg)?,
        Calibration::Simulation(sim) => calibrate_borderline(sim, cfg)?,
    };
    let spent = oracle.queries() - before;
    let rest = AttackConfig {
        max_queries: cfg.max_queries.saturating_sub(spent),
        ..cfg.clone()
    };
    let mut res = if cfg.estimator == EstimatorKind::BasicSign {
        attack_basic_sign(oracle, &rest, w, observer)?
    } else {
        attack_robust(oracle, &rest, w, observer)?
    };
    res.calibration_queries = spent;
    res.queries_used += spent;
    for r in &mut res.rounds {
        r.queries_used += spent;
    }
    Ok(res)
}

const CAL_PROBES: usize = 50;
const CAL_MAX_ITERS: usize = 30;
const CAL_BAND: (f64, f64) = (0.25, 0.75);

/// Empirical frequency of h being reported over `probes` fresh tails at weight w.
fn report_frequency(
    oracle: &mut dyn Oracle,
    cfg: &AttackConfig,
    w: f64,
    probes: usize,
    arena: &mut KeyArena,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let base = cfg.probe_base(w);
    let mut hits = 0;
    for _ in 0..probes {
        let z = sample_tail(arena.block(cfg.tail_size)?, cfg.tail, rng);
        let ans = oracle.query(&plus(&base, &z, 1.0))?;
        check_answer(&ans, None)?;
        hits += ans.contains(cfg.target_key) as usize;
    }
    Ok(hits as f64 / probes as f64)
}

/// Finds w with reporting frequency in [0.25, 0.75] over 50 fresh probe tails.
///
/// Starts at `cfg.borderline_weight` (or sqrt(m/b) when that is 0), doubles until the
/// frequency is high enough, then bisects.
pub fn calibrate_borderline(oracle: &mut dyn Oracle, cfg: &AttackConfig) -> Result<f64> {
    cfg.validate()?;
    // Probe tails live far from the attack tails.
    let mut arena = KeyArena::new(cfg.arena_start.checked_add(1 << 32).ok_or(Error::Overflow)?);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xCA1B_0000);
    let mut w = if cfg.borderline_weight > 0.0 {
        cfg.borderline_weight
    } else {
        cfg.tail_std()
    };
    let (mut lo, mut hi) = (0.0f64, None::<f64>);
    let mut last = f64::NAN;
    for _ in 0..CAL_MAX_ITERS {
        last = report_frequency(oracle, cfg, w, CAL_PROBES, &mut arena, &mut rng)?;
        if (CAL_BAND.0..=CAL_BAND.1).contains(&last) {
            return Ok(w);
        }
        if last > CAL_BAND.1 {
            hi = Some(w);
        } else {
            lo = w;
        }
        w = match hi {
            Some(h) => (lo + h) / 2.0,
            None => (2.0 * w).max(1.0),
        };
    }
    Err(Error::Calibration {
        iterations: CAL_MAX_ITERS,
        last_frequency: last,
    })
}

/// Validation helper: frequency at `w` over `probes` tails from a separate arena region.
pub fn validation_frequency(oracle: &mut dyn Oracle, cfg: &AttackConfig, w: f64, probes: usize) -> Result<f64> {
    let mut arena = KeyArena::new(cfg.arena_start.checked_add(1 << 33).ok_or(Error::Overflow)?);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5A11_D000);
    report_frequency(oracle, cfg, w, probes, &mut arena, &mut rng)
}
