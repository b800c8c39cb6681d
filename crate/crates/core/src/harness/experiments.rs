//! The six experiments. Each returns CSV bytes, a summary and a pass flag.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::Serialize;

use crate::attacks::{
    build_final_vector, median_final_vector, run_attack, AttackConfig, AttackResult, BnrTracker, Calibration,
    EstimatorKind, FinalMode, MedianOracle, Observation, Oracle, OracleAnswer, RobustOracle, RoundObserver,
    ThresholdOracle,
};
use crate::dp::{LaplaceNoise, NoiseSource, ZeroNoise};
use crate::error::{Error, Result};
use crate::estimators::{classify_heavy_suspect, EstimatorConstants, HeavyLabel};
use crate::robust::{lambda_number, RobustConfig, RobustEstimatorState, SequenceAccounting};
use crate::sketch::{init_sketch, SketchRandomness, SparseVector};

use super::checks::{self, Lemma1Row, WeightComparison};
use super::config::{CalibrationMode, EstimatorSection, ExperimentConfig, ExperimentKind, NoiseKind, SketchSection};

/// Bumped whenever a column changes.
pub const CSV_SCHEMA_VERSION: u32 = 1;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeds of one trial: seed_i = master_seed + i, split into independent substreams.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TrialSeeds {
    pub trial: usize,
    pub seed: u64,
    pub sketch: u64,
    pub attack: u64,
    pub noise: u64,
    pub fresh: u64,
}

impl TrialSeeds {
    pub fn new(master_seed: u64, trial: usize) -> Self {
        let seed = master_seed.wrapping_add(trial as u64);
        let sub = |tag: u64| splitmix64(seed ^ splitmix64(tag));
        TrialSeeds {
            trial,
            seed,
            sketch: sub(1),
            attack: sub(2),
            noise: sub(3),
            fresh: sub(4),
        }
    }
}

fn noise_source(kind: NoiseKind, seed: u64) -> Box<dyn NoiseSource> {
    match kind {
        NoiseKind::Laplace => Box::new(LaplaceNoise::new(seed)),
        NoiseKind::Zero => Box::new(ZeroNoise),
    }
}

pub fn robust_config(est: &EstimatorSection, sketch: &SketchSection, max_queries: u64) -> Result<RobustConfig> {
    let rc = RobustConfig::new(est.constants, est.limit, max_queries);
    match est.target_big_delta {
        Some(t) => rc.with_target_big_delta(t, sketch.n, sketch.b),
        None => Ok(rc),
    }
}

/// The attacked estimator, plus a replica of its randomness for ground-truth evaluation.
pub fn build_oracle(
    est: &EstimatorSection,
    kind: EstimatorKind,
    sketch: &SketchSection,
    attack: &AttackConfig,
    sketch_seed: u64,
    noise_seed: u64,
) -> Result<(Box<dyn Oracle>, SketchRandomness)> {
    let rand = init_sketch(sketch.variant, sketch.params()?, sketch_seed)?;
    let replica = rand.replicate();
    let watch = attack.special_keys();
    let oracle: Box<dyn Oracle> = match kind {
        EstimatorKind::Median => Box::new(MedianOracle::new(rand, attack.k_prime, watch)?),
        EstimatorKind::BasicSign => Box::new(ThresholdOracle::new(rand, est.constants, watch)?),
        EstimatorKind::Robust => {
            // One extra query for the final report.
            let rc = robust_config(est, sketch, attack.max_queries.saturating_add(1))?;
            let rs = RobustEstimatorState::new(rand, rc, noise_source(est.noise, noise_seed))?;
            Box::new(RobustOracle::new(rs, watch))
        }
    };
    Ok((oracle, replica))
}

/// Summary lines, named metrics and the pass flag of one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Summary {
    pub lines: Vec<String>,
    pub metrics: BTreeMap<String, f64>,
    pub pass: bool,
}

impl Summary {
    fn metric(&mut self, name: impl Into<String>, x: f64) {
        self.metrics.insert(name.into(), x);
    }

    fn line(&mut self, s: impl Into<String>) {
        self.lines.push(s.into());
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.lines {
            writeln!(f, "{l}")?;
        }
        write!(f, "result: {}", if self.pass { "PASS" } else { "FAIL" })
    }
}

/// min / mean / max of a sample; NaN for an empty one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Band {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
}

impl Band {
    pub fn of(xs: impl IntoIterator<Item = f64>) -> Band {
        let (mut min, mut max, mut sum, mut n) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
        for x in xs {
            min = min.min(x);
            max = max.max(x);
            sum += x;
            n += 1;
        }
        if n == 0 {
            return Band {
                min: f64::NAN,
                mean: f64::NAN,
                max: f64::NAN,
            };
        }
        Band {
            min,
            mean: sum / n as f64,
            max,
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "min {:.3} / mean {:.3} / max {:.3}", self.min, self.mean, self.max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TracePoint {
    pub round: u64,
    pub collections: u64,
    pub queries: u64,
    pub bnr: f64,
    pub control_bnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialTrace {
    pub ell: usize,
    pub trial: usize,
    pub seed: u64,
    pub points: Vec<TracePoint>,
    /// Collections at the first round with BNR at or above the target.
    pub crossing: Option<u64>,
}

impl TrialTrace {
    pub fn r_over_ell(&self) -> Option<f64> {
        self.crossing.map(|r| r as f64 / self.ell as f64)
    }

    pub fn bnr_at(&self, round: u64) -> Option<f64> {
        self.points.get((round as usize).checked_sub(1)?).map(|p| p.bnr)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EndToEndRow {
    pub trial: usize,
    pub seed: u64,
    pub collections: u64,
    pub queries: u64,
    pub calibration_queries: u64,
    pub measured_bnr: f64,
    pub final_mode: FinalMode,
    pub attack_success: bool,
    pub fresh_correct: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SurvivalRow {
    pub trial: usize,
    pub seed: u64,
    pub basic_defeated: bool,
    pub basic_bnr: f64,
    pub basic_queries: u64,
    pub robust_correct: bool,
    pub robust_bnr: f64,
    pub robust_queries: u64,
    pub robust_collections: u64,
    pub lambda: f64,
    pub lambda_budget: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Detail {
    Traces(Vec<TrialTrace>),
    EndToEnd(Vec<EndToEndRow>),
    Survival(Vec<SurvivalRow>),
    Lemma1(Vec<Lemma1Row>),
    WeightEq(Vec<WeightComparison>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub kind: ExperimentKind,
    pub csv: Vec<u8>,
    pub summary: Summary,
    pub detail: Detail,
}

impl ExperimentReport {
    pub fn pass(&self) -> bool {
        self.summary.pass
    }
}

/// Runs the configured experiment. Trials run in parallel; rows are ordered by trial.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let (csv, summary, detail) = match cfg.experiment {
        ExperimentKind::BnrVsRounds => {
            let traces = collect_traces(cfg, &[cfg.sketch.ell()])?;
            (trace_csv(cfg, &traces)?, summarize_bnr(cfg, &traces), Detail::Traces(traces))
        }
        ExperimentKind::RoundsVsEll => {
            let traces = collect_traces(cfg, &cfg.ells())?;
            (crossing_csv(cfg, &traces)?, summarize_crossings(cfg, &traces), Detail::Traces(traces))
        }
        ExperimentKind::AttackEndToEnd => {
            let rows = par_trials(cfg.trials, |i| end_to_end_trial(cfg, TrialSeeds::new(cfg.master_seed, i)))?;
            (rows_csv(cfg, &rows, END_TO_END_COLUMNS, end_to_end_record)?, summarize_end_to_end(cfg, &rows), Detail::EndToEnd(rows))
        }
        ExperimentKind::RobustSurvival => {
            let rows = par_trials(cfg.trials, |i| survival_trial(cfg, TrialSeeds::new(cfg.master_seed, i)))?;
            (rows_csv(cfg, &rows, SURVIVAL_COLUMNS, survival_record)?, summarize_survival(cfg, &rows), Detail::Survival(rows))
        }
        ExperimentKind::Lemma1Validation => {
            let per_trial = par_trials(cfg.trials, |i| {
                let seed = TrialSeeds::new(cfg.master_seed, i).sketch;
                checks::lemma1_rows(i, cfg.sketch.b, &cfg.estimator.constants, cfg.options.samples, seed)
            })?;
            let rows: Vec<Lemma1Row> = per_trial.into_iter().flatten().collect();
            (rows_csv(cfg, &rows, LEMMA1_COLUMNS, lemma1_record)?, summarize_lemma1(&rows), Detail::Lemma1(rows))
        }
        ExperimentKind::WeightEstEquivalence => {
            let comps = par_trials(cfg.trials, |i| {
                checks::compare_weight_estimators(cfg, i, TrialSeeds::new(cfg.master_seed, i).noise)
            })?;
            (weight_csv(cfg, &comps)?, summarize_weights(cfg, &comps), Detail::WeightEq(comps))
        }
    };
    Ok(ExperimentReport {
        kind: cfg.experiment,
        csv,
        summary,
        detail,
    })
}

/// Runs and writes the CSV to `cfg.output` when set.
pub fn run_and_write(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let report = run_experiment(cfg)?;
    if let Some(path) = &cfg.output {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, &report.csv)?;
    }
    Ok(report)
}

fn par_trials<T: Send>(trials: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..trials).into_par_iter().map(f).collect()
}

// ---- traces ----

struct TraceObserver {
    tracker: BnrTracker,
    h: u64,
    control: u64,
    target: f64,
    stop_bnr: Option<f64>,
    min_rounds: u64,
    points: Vec<TracePoint>,
    collections: u64,
    crossing: Option<u64>,
}

impl RoundObserver for TraceObserver {
    fn observe(&mut self, collected: i8, tail: &SparseVector) -> Result<Observation> {
        self.tracker.add(tail, collected as f64)?;
        if collected != 0 {
            self.collections += 1;
        }
        let round = self.points.len() as u64 + 1;
        let bnr = self.tracker.bnr(self.h)?;
        let control_bnr = match self.tracker.bnr(self.control) {
            Ok(x) => x,
            Err(Error::EstimateUnavailable(_)) => f64::NAN,
            Err(e) => return Err(e),
        };
        self.points.push(TracePoint {
            round,
            collections: self.collections,
            // The median attack spends one query per round.
            queries: round,
            bnr,
            control_bnr,
        });
        if self.crossing.is_none() && bnr >= self.target {
            self.crossing = Some(self.collections);
        }
        let stop = self.stop_bnr.is_some_and(|s| bnr >= s) && round >= self.min_rounds;
        Ok(Observation {
            measured_bnr: Some(bnr),
            stop,
        })
    }
}

pub fn trace_trial(cfg: &ExperimentConfig, ell: usize, seeds: TrialSeeds) -> Result<TrialTrace> {
    let sketch = cfg.sketch.with_ell(ell);
    let o = &cfg.options;
    let mut attack = AttackConfig {
        seed: seeds.attack,
        ..cfg.attack_for(&sketch)
    };
    if o.max_rounds_factor > 0.0 {
        attack.collections = (o.max_rounds_factor * ell as f64).ceil() as u64;
    }
    let (mut oracle, rand) = build_oracle(&cfg.estimator, EstimatorKind::Median, &sketch, &attack, seeds.sketch, seeds.noise)?;
    let h = attack.target_key;
    let mut obs = TraceObserver {
        tracker: BnrTracker::new(rand, &[h, o.control_key])?,
        h,
        control: o.control_key,
        target: o.stop_bnr.unwrap_or(attack.bnr),
        stop_bnr: o.stop_bnr,
        min_rounds: (o.min_rounds_factor * ell as f64).ceil() as u64,
        points: Vec::new(),
        collections: 0,
        crossing: None,
    };
    run_attack(oracle.as_mut(), Calibration::Fixed, &attack, &mut obs)?;
    Ok(TrialTrace {
        ell,
        trial: seeds.trial,
        seed: seeds.seed,
        points: obs.points,
        crossing: obs.crossing,
    })
}

fn collect_traces(cfg: &ExperimentConfig, ells: &[usize]) -> Result<Vec<TrialTrace>> {
    let jobs: Vec<(usize, usize)> = ells.iter().flat_map(|&e| (0..cfg.trials).map(move |i| (e, i))).collect();
    jobs.into_par_iter()
        .map(|(ell, i)| trace_trial(cfg, ell, TrialSeeds::new(cfg.master_seed, i)))
        .collect()
}

/// Statistics of the trial-mean curve of one ell.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurveStats {
    pub ell: usize,
    pub trials: usize,
    /// Rounds covered by every trial.
    pub rounds: u64,
    pub slope: Option<f64>,
    pub control_max_abs: f64,
    /// Trials with BNR >= 1 at round 5 ell, among those that got that far.
    pub bnr1_at_5ell: (usize, usize),
    pub final_bnr: Band,
}

/// Trial-mean BNR and control BNR per round over the common prefix.
pub fn mean_curve(traces: &[&TrialTrace]) -> Vec<(u64, f64, f64)> {
    let len = traces.iter().map(|t| t.points.len()).min().unwrap_or(0);
    (0..len)
        .map(|j| {
            let n = traces.len() as f64;
            let bnr = traces.iter().map(|t| t.points[j].bnr).sum::<f64>() / n;
            let ctl = traces.iter().map(|t| t.points[j].control_bnr).sum::<f64>() / n;
            (j as u64 + 1, bnr, ctl)
        })
        .collect()
}

/// Least-squares slope of ln y on ln x.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn curve_stats(traces: &[&TrialTrace]) -> CurveStats {
    let ell = traces.first().map_or(0, |t| t.ell);
    let curve = mean_curve(traces);
    let rounds = curve.len() as u64;
    // Log-spaced rounds from ell to the end of the common prefix.
    let start = ell.max(1) as f64;
    let end = rounds as f64;
    let mut sample: Vec<u64> = Vec::new();
    if end > start {
        for j in 0..24 {
            let r = (start * (end / start).powf(j as f64 / 23.0)).round() as u64;
            if sample.last() != Some(&r) {
                sample.push(r);
            }
        }
    }
    let pts: Vec<(f64, f64)> = sample
        .iter()
        .map(|&r| (r as f64, curve[(r - 1) as usize].1))
        .collect();
    let control_max_abs = curve.iter().map(|c| c.2.abs()).fold(0.0, f64::max);
    let at = 5 * ell as u64;
    let reached: Vec<f64> = traces.iter().filter_map(|t| t.bnr_at(at)).collect();
    CurveStats {
        ell,
        trials: traces.len(),
        rounds,
        slope: loglog_slope(&pts),
        control_max_abs,
        bnr1_at_5ell: (reached.iter().filter(|&&x| x >= 1.0).count(), reached.len()),
        final_bnr: Band::of(traces.iter().filter_map(|t| t.points.last().map(|p| p.bnr))),
    }
}

fn by_ell(traces: &[TrialTrace]) -> BTreeMap<usize, Vec<&TrialTrace>> {
    let mut m: BTreeMap<usize, Vec<&TrialTrace>> = BTreeMap::new();
    for t in traces {
        m.entry(t.ell).or_default().push(t);
    }
    m
}

fn header_line(cfg: &ExperimentConfig) -> String {
    format!(
        "# robust-hh csv schema v{CSV_SCHEMA_VERSION} experiment={} master_seed={} trials={}\n",
        cfg.experiment.name(),
        cfg.master_seed,
        cfg.trials
    )
}

fn write_csv(cfg: &ExperimentConfig, columns: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut buf = header_line(cfg).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(columns).map_err(crate::attacks::csv_err)?;
        for r in rows {
            w.write_record(&r).map_err(crate::attacks::csv_err)?;
        }
        w.flush()?;
    }
    Ok(buf)
}

fn fmt_f(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        x.to_string()
    }
}

const TRACE_COLUMNS: &[&str] = &["ell", "trial", "seed", "round", "collections", "queries", "bnr_target", "bnr_control"];

fn trace_csv(cfg: &ExperimentConfig, traces: &[TrialTrace]) -> Result<Vec<u8>> {
    let rows = traces.iter().flat_map(|t| {
        t.points.iter().map(move |p| {
            vec![
                t.ell.to_string(),
                t.trial.to_string(),
                t.seed.to_string(),
                p.round.to_string(),
                p.collections.to_string(),
                p.queries.to_string(),
                fmt_f(p.bnr),
                fmt_f(p.control_bnr),
            ]
        })
    });
    write_csv(cfg, TRACE_COLUMNS, rows)
}

const CROSSING_COLUMNS: &[&str] = &["ell", "trial", "seed", "rounds", "reached", "r_over_ell", "final_bnr"];

fn crossing_csv(cfg: &ExperimentConfig, traces: &[TrialTrace]) -> Result<Vec<u8>> {
    let rows = traces.iter().map(|t| {
        vec![
            t.ell.to_string(),
            t.trial.to_string(),
            t.seed.to_string(),
            t.crossing.map(|r| r.to_string()).unwrap_or_default(),
            t.crossing.is_some().to_string(),
            t.r_over_ell().map(fmt_f).unwrap_or_default(),
            t.points.last().map(|p| fmt_f(p.bnr)).unwrap_or_default(),
        ]
    });
    write_csv(cfg, CROSSING_COLUMNS, rows)
}

fn summarize_bnr(cfg: &ExperimentConfig, traces: &[TrialTrace]) -> Summary {
    let mut s = Summary::default();
    s.line(format!("bnr_vs_rounds: ell = {}, {} trials", cfg.sketch.ell(), traces.len()));
    if traces.is_empty() {
        s.line("no trials run");
        return s;
    }
    let refs: Vec<&TrialTrace> = traces.iter().collect();
    let st = curve_stats(&refs);
    let curve = mean_curve(&refs);
    let ell = cfg.sketch.ell() as u64;
    for m in 1..=10u64 {
        let r = m * ell;
        if r as usize > curve.len() {
            break;
        }
        let band = Band::of(refs.iter().filter_map(|t| t.bnr_at(r)));
        s.line(format!("  round {r:>6}: bnr {band}; control mean {:+.3}", curve[(r - 1) as usize].2));
    }
    let slope = st.slope.unwrap_or(f64::NAN);
    let [lo, hi] = cfg.options.slope_band;
    s.line(format!("log-log slope {slope:.3} (band [{lo}, {hi}])"));
    s.line(format!(
        "max |control bnr| {:.3} (band {}); bnr >= 1 at 5 ell in {}/{} trials",
        st.control_max_abs, cfg.options.control_band, st.bnr1_at_5ell.0, st.bnr1_at_5ell.1
    ));
    s.metric("slope", slope);
    s.metric("control_max_abs", st.control_max_abs);
    s.metric("bnr1_at_5ell", st.bnr1_at_5ell.0 as f64);
    s.metric("rounds", st.rounds as f64);
    s.pass = (lo..=hi).contains(&slope) && st.control_max_abs <= cfg.options.control_band;
    s
}

fn summarize_crossings(cfg: &ExperimentConfig, traces: &[TrialTrace]) -> Summary {
    let mut s = Summary::default();
    s.line(format!(
        "rounds_vs_ell: target bnr {}, {} trials per ell",
        cfg.options.stop_bnr.unwrap_or(cfg.attack.bnr),
        cfg.trials
    ));
    if traces.is_empty() {
        s.line("no trials run");
        return s;
    }
    let [lo, hi] = cfg.options.ratio_band;
    let mut pass = true;
    for (ell, ts) in by_ell(traces) {
        let reached = ts.iter().filter(|t| t.crossing.is_some()).count();
        let band = Band::of(ts.iter().filter_map(|t| t.r_over_ell()));
        let ok = reached == ts.len() && (lo..=hi).contains(&band.mean);
        pass &= ok;
        s.line(format!("  ell {ell:>5}: r/ell {band}; reached {reached}/{}", ts.len()));
        s.metric(format!("mean_r_over_ell_{ell}"), band.mean);
        s.metric(format!("reached_{ell}"), reached as f64);
    }
    s.line(format!("accepted mean r/ell band [{lo}, {hi}]"));
    s.pass = pass;
    s
}

// ---- end to end ----

fn final_mode(cfg: &ExperimentConfig) -> FinalMode {
    cfg.options.final_mode.unwrap_or(match cfg.estimator.kind {
        EstimatorKind::Median => FinalMode::MaskHeavy,
        _ => FinalMode::FakeHeavy,
    })
}

/// Outcome of one attack followed by its final query.
#[derive(Clone, Debug)]
pub struct AttackOutcome {
    pub result: Option<AttackResult>,
    pub final_vector: SparseVector,
    pub answer: OracleAnswer,
    pub success: bool,
}

/// Attacks one oracle and issues the final query. A failed calibration counts as a
/// failed attack.
pub fn attack_once(
    cfg: &ExperimentConfig,
    oracle: &mut dyn Oracle,
    rand: SketchRandomness,
    attack: &AttackConfig,
) -> Result<AttackOutcome> {
    let h = attack.target_key;
    let mut tracker = BnrTracker::new(rand, &[h])?;
    if let Some(stop) = cfg.options.stop_bnr {
        tracker = tracker.stop_when(h, stop);
    }
    let calibration = match cfg.options.calibration {
        CalibrationMode::Fixed => Calibration::Fixed,
        CalibrationMode::Target => Calibration::Target,
    };
    let mode = final_mode(cfg);
    let res = match run_attack(oracle, calibration, attack, &mut tracker) {
        Ok(r) => r,
        Err(Error::Calibration { .. }) => {
            let v = SparseVector::new();
            let answer = oracle.query(&v)?;
            return Ok(AttackOutcome {
                result: None,
                final_vector: v,
                answer,
                success: false,
            });
        }
        Err(e) => return Err(e),
    };
    let w = match mode {
        FinalMode::MaskHeavy => cfg.options.mask_factor * tracker.median_bias(h)?,
        FinalMode::FakeHeavy => 0.0,
    };
    let v = if attack.estimator == EstimatorKind::Median {
        median_final_vector(&res.a, attack, w, cfg.options.median_roles)
    } else {
        build_final_vector(&res.a, h, w, mode)
    };
    let answer = oracle.query(&v)?;
    let success = match mode {
        FinalMode::MaskHeavy => !answer.contains(h),
        FinalMode::FakeHeavy => answer.contains(h),
    };
    Ok(AttackOutcome {
        result: Some(res),
        final_vector: v,
        answer,
        success,
    })
}

fn end_to_end_trial(cfg: &ExperimentConfig, seeds: TrialSeeds) -> Result<EndToEndRow> {
    let attack = AttackConfig {
        seed: seeds.attack,
        ..cfg.attack_for(&cfg.sketch)
    };
    let kind = cfg.estimator.kind;
    let (mut oracle, rand) = build_oracle(&cfg.estimator, kind, &cfg.sketch, &attack, seeds.sketch, seeds.noise)?;
    let out = attack_once(cfg, oracle.as_mut(), rand, &attack)?;
    let (mut fresh, _) = build_oracle(&cfg.estimator, kind, &cfg.sketch, &attack, seeds.fresh, seeds.fresh ^ 1)?;
    let fresh_answer = fresh.query(&out.final_vector)?;
    let mode = final_mode(cfg);
    let h = attack.target_key;
    let fresh_correct = match mode {
        FinalMode::MaskHeavy => fresh_answer.contains(h),
        FinalMode::FakeHeavy => !fresh_answer.contains(h),
    };
    let r = out.result.as_ref();
    Ok(EndToEndRow {
        trial: seeds.trial,
        seed: seeds.seed,
        collections: r.map_or(0, |r| r.collections),
        queries: r.map_or(0, |r| r.queries_used),
        calibration_queries: r.map_or(0, |r| r.calibration_queries),
        measured_bnr: r.and_then(|r| r.measured_bnr).unwrap_or(f64::NAN),
        final_mode: mode,
        attack_success: out.success,
        fresh_correct,
    })
}

const END_TO_END_COLUMNS: &[&str] = &[
    "trial",
    "seed",
    "collections",
    "queries",
    "calibration_queries",
    "measured_bnr",
    "final_mode",
    "attack_success",
    "fresh_correct",
];

fn end_to_end_record(r: &EndToEndRow) -> Vec<String> {
    vec![
        r.trial.to_string(),
        r.seed.to_string(),
        r.collections.to_string(),
        r.queries.to_string(),
        r.calibration_queries.to_string(),
        fmt_f(r.measured_bnr),
        match r.final_mode {
            FinalMode::MaskHeavy => "mask_heavy".into(),
            FinalMode::FakeHeavy => "fake_heavy".into(),
        },
        r.attack_success.to_string(),
        r.fresh_correct.to_string(),
    ]
}

fn rows_csv<T>(cfg: &ExperimentConfig, rows: &[T], columns: &[&str], rec: fn(&T) -> Vec<String>) -> Result<Vec<u8>> {
    write_csv(cfg, columns, rows.iter().map(rec))
}

fn summarize_end_to_end(cfg: &ExperimentConfig, rows: &[EndToEndRow]) -> Summary {
    let mut s = Summary::default();
    let n = rows.len();
    s.line(format!("attack_end_to_end: {:?} estimator, {n} trials", cfg.estimator.kind));
    if n == 0 {
        s.line("no trials run");
        return s;
    }
    let wins = rows.iter().filter(|r| r.attack_success).count();
    let fresh = rows.iter().filter(|r| r.fresh_correct).count();
    s.line(format!("  measured bnr {}", Band::of(rows.iter().map(|r| r.measured_bnr).filter(|x| !x.is_nan()))));
    s.line(format!("  collections {}", Band::of(rows.iter().map(|r| r.collections as f64))));
    s.line(format!("  queries {}", Band::of(rows.iter().map(|r| r.queries as f64))));
    s.line(format!("attack succeeded in {wins}/{n}; fresh sketch correct in {fresh}/{n}"));
    s.metric("attack_success", wins as f64 / n as f64);
    s.metric("fresh_correct", fresh as f64 / n as f64);
    s.pass = wins as f64 >= cfg.options.min_attack_success * n as f64
        && fresh as f64 >= cfg.options.min_fresh_correct * n as f64;
    s
}

// ---- robust survival ----

/// Ground-truth suspect accounting around an oracle; invisible to the attacker.
struct AccountingOracle<'a> {
    inner: &'a mut dyn Oracle,
    acct: SequenceAccounting,
    constants: EstimatorConstants,
}

impl Oracle for AccountingOracle<'_> {
    fn query(&mut self, v: &SparseVector) -> Result<OracleAnswer> {
        let c = classify_heavy_suspect(v, &self.constants, self.acct.b);
        self.acct
            .record_suspects(c.labels.iter().filter(|(_, &l)| l != HeavyLabel::Neither).map(|(&k, _)| k));
        self.inner.query(v)
    }

    fn queries(&self) -> u64 {
        self.inner.queries()
    }
}

fn survival_trial(cfg: &ExperimentConfig, seeds: TrialSeeds) -> Result<SurvivalRow> {
    let base = AttackConfig {
        seed: seeds.attack,
        ..cfg.attack_for(&cfg.sketch)
    };
    let basic_cfg = AttackConfig {
        estimator: EstimatorKind::BasicSign,
        ..base.clone()
    };
    let (mut basic, rand) = build_oracle(&cfg.estimator, EstimatorKind::BasicSign, &cfg.sketch, &basic_cfg, seeds.sketch, seeds.noise)?;
    let b_out = attack_once(cfg, basic.as_mut(), rand, &basic_cfg)?;

    let robust_cfg = AttackConfig {
        estimator: EstimatorKind::Robust,
        ..base
    };
    let (mut robust, rand) = build_oracle(&cfg.estimator, EstimatorKind::Robust, &cfg.sketch, &robust_cfg, seeds.sketch, seeds.noise)?;
    let mut acct = AccountingOracle {
        inner: robust.as_mut(),
        acct: SequenceAccounting::new(cfg.sketch.b),
        constants: cfg.estimator.constants,
    };
    let r_out = attack_once(cfg, &mut acct, rand, &robust_cfg)?;
    let lambda = lambda_number(&acct.acct, &cfg.estimator.constants);
    let rc = robust_config(&cfg.estimator, &cfg.sketch, robust_cfg.max_queries.saturating_add(1))?;
    let bnr = |o: &AttackOutcome| o.result.as_ref().and_then(|r| r.measured_bnr).unwrap_or(f64::NAN);
    Ok(SurvivalRow {
        trial: seeds.trial,
        seed: seeds.seed,
        basic_defeated: b_out.success,
        basic_bnr: bnr(&b_out),
        basic_queries: basic.queries(),
        robust_correct: !r_out.success,
        robust_bnr: bnr(&r_out),
        robust_queries: robust.queries(),
        robust_collections: r_out.result.as_ref().map_or(0, |r| r.collections),
        lambda,
        lambda_budget: rc.lambda_budget(),
    })
}

const SURVIVAL_COLUMNS: &[&str] = &[
    "trial",
    "seed",
    "basic_defeated",
    "basic_bnr",
    "basic_queries",
    "robust_correct",
    "robust_bnr",
    "robust_queries",
    "robust_collections",
    "lambda",
    "lambda_budget",
];

fn survival_record(r: &SurvivalRow) -> Vec<String> {
    vec![
        r.trial.to_string(),
        r.seed.to_string(),
        r.basic_defeated.to_string(),
        fmt_f(r.basic_bnr),
        r.basic_queries.to_string(),
        r.robust_correct.to_string(),
        fmt_f(r.robust_bnr),
        r.robust_queries.to_string(),
        r.robust_collections.to_string(),
        fmt_f(r.lambda),
        fmt_f(r.lambda_budget),
    ]
}

fn summarize_survival(cfg: &ExperimentConfig, rows: &[SurvivalRow]) -> Summary {
    let mut s = Summary::default();
    let n = rows.len();
    s.line(format!(
        "robust_survival: ell = {}, b = {}, L = {}, {n} trials",
        cfg.sketch.ell(),
        cfg.sketch.b,
        cfg.estimator.limit
    ));
    if n == 0 {
        s.line("no trials run");
        return s;
    }
    let defeated = rows.iter().filter(|r| r.basic_defeated).count();
    let correct = rows.iter().filter(|r| r.robust_correct).count();
    let lambda = Band::of(rows.iter().map(|r| r.lambda));
    let budget = rows[0].lambda_budget;
    s.line(format!("  basic: bnr {}", Band::of(rows.iter().map(|r| r.basic_bnr).filter(|x| !x.is_nan()))));
    s.line(format!("  robust: bnr {}", Band::of(rows.iter().map(|r| r.robust_bnr).filter(|x| !x.is_nan()))));
    s.line(format!("  robust collections {}", Band::of(rows.iter().map(|r| r.robust_collections as f64))));
    s.line(format!("  lambda_Q {lambda} vs c1 L = {budget:.3}"));
    s.line(format!("basic defeated in {defeated}/{n}; robust correct in {correct}/{n}"));
    s.metric("basic_defeated", defeated as f64 / n as f64);
    s.metric("robust_correct", correct as f64 / n as f64);
    s.metric("lambda_max", lambda.max);
    s.metric("lambda_budget", budget);
    s.pass = defeated as f64 >= cfg.options.min_attack_success * n as f64
        && correct as f64 >= cfg.options.min_robust_correct * n as f64
        && lambda.max <= budget;
    s
}

// ---- boundary instances and weights ----

const LEMMA1_COLUMNS: &[&str] = &["trial", "instance", "kind", "key", "value", "p_plus", "p_minus", "std_err", "bound", "pass"];

fn lemma1_record(r: &Lemma1Row) -> Vec<String> {
    vec![
        r.trial.to_string(),
        r.instance.clone(),
        r.kind.name().into(),
        r.key.to_string(),
        fmt_f(r.value),
        fmt_f(r.p_plus),
        fmt_f(r.p_minus),
        fmt_f(r.std_err),
        fmt_f(r.bound),
        r.pass.to_string(),
    ]
}

fn summarize_lemma1(rows: &[Lemma1Row]) -> Summary {
    let mut s = Summary::default();
    s.line(format!("lemma1_validation: {} instance runs", rows.len()));
    for r in rows {
        s.line(format!(
            "  [{}] {:<22} {:<7} p+ {:.5} p- {:.5} bound {:.5} +- 3se {:.5}: {}",
            r.trial,
            r.instance,
            r.kind.name(),
            r.p_plus,
            r.p_minus,
            r.bound,
            3.0 * r.std_err,
            if r.pass { "ok" } else { "VIOLATED" }
        ));
    }
    let ok = rows.iter().filter(|r| r.pass).count();
    s.metric("passed", ok as f64);
    s.metric("instances", rows.len() as f64);
    s.pass = !rows.is_empty() && ok == rows.len();
    s
}

fn weight_csv(cfg: &ExperimentConfig, comps: &[WeightComparison]) -> Result<Vec<u8>> {
    let rows = comps.iter().flat_map(|c| {
        c.histogram().into_iter().map(move |(w, (a, b))| {
            vec![c.trial.to_string(), w.to_string(), a.to_string(), b.to_string()]
        })
    });
    write_csv(cfg, &["trial", "outcome", "naive", "fast"], rows)
}

fn summarize_weights(cfg: &ExperimentConfig, comps: &[WeightComparison]) -> Summary {
    let mut s = Summary::default();
    s.line(format!(
        "weight_est_equivalence: n = {}, d = {}, b = {}, W = {}, {} paired runs per trial",
        cfg.sketch.n, cfg.sketch.d, cfg.sketch.b, cfg.options.w_max, cfg.options.paired_runs
    ));
    if comps.is_empty() {
        s.line("no trials run");
        return s;
    }
    let mut pass = true;
    for c in comps {
        let ok = c.chi_square.p_value > cfg.options.min_p_value && c.weight_bound_rate() >= 0.99;
        pass &= ok;
        s.line(format!(
            "  [{}] chi2 {:.2} on {} dof, p = {:.4}; weight bound held in {}/{} qualifying runs",
            c.trial, c.chi_square.statistic, c.chi_square.dof, c.chi_square.p_value, c.bound_within, c.bound_qualifying
        ));
    }
    s.metric("min_p_value", comps.iter().map(|c| c.chi_square.p_value).fold(f64::INFINITY, f64::min));
    s.metric("min_weight_bound_rate", comps.iter().map(|c| c.weight_bound_rate()).fold(f64::INFINITY, f64::min));
    s.pass = pass;
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_distinct_and_stable() {
        let a = TrialSeeds::new(5, 0);
        let b = TrialSeeds::new(5, 1);
        assert_eq!(a.seed, 5);
        assert_eq!(b.seed, 6);
        assert_ne!(a.sketch, b.sketch);
        assert_ne!(a.sketch, a.attack);
        assert_eq!(a, TrialSeeds::new(4, 1).with_trial(0));
    }

    impl TrialSeeds {
        fn with_trial(mut self, t: usize) -> Self {
            self.trial = t;
            self
        }
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = (1..50).map(|x| (x as f64, 3.0 * (x as f64).sqrt())).collect();
        assert!((loglog_slope(&pts).unwrap() - 0.5).abs() < 1e-12);
        assert!(loglog_slope(&pts[..2]).is_none());
    }

    #[test]
    fn band_of_empty_is_nan() {
        assert!(Band::of([]).mean.is_nan());
        let b = Band::of([1.0, 3.0]);
        assert_eq!((b.min, b.mean, b.max), (1.0, 2.0, 3.0));
    }
}
