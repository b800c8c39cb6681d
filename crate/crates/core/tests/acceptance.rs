//! Runs every acceptance criterion and prints one PASS/FAIL line per criterion.

mod support;

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use robust_hh::dp::PrivacyParams;
use robust_hh::estimators::EstimatorConstants;
use robust_hh::harness::checks::{median_utility, monitor_envelope, stable_flip_audit};
use robust_hh::harness::experiments::{run_experiment, Detail, ExperimentReport};
use robust_hh::harness::ExperimentConfig;
use robust_hh::robust::{flip_number, lambda_number, SequenceAccounting};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

fn config(name: &str) -> ExperimentConfig {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name);
    let mut cfg = ExperimentConfig::load(&p).expect("shipped config loads");
    cfg.output = None;
    cfg
}

fn experiment(name: &str) -> Result<ExperimentReport, String> {
    let report = run_experiment(&config(name)).map_err(|e| e.to_string())?;
    for line in &report.summary.lines {
        println!("    {line}");
    }
    Ok(report)
}

fn metric(r: &ExperimentReport, key: &str) -> f64 {
    r.summary.metrics.get(key).copied().unwrap_or(f64::NAN)
}

fn rounds_vs_ell() -> Result<Outcome, String> {
    let r = experiment("rounds_vs_ell.json")?;
    let Detail::Traces(traces) = &r.detail else {
        return Err("unexpected detail".into());
    };
    let at100: Vec<_> = traces.iter().filter(|t| t.ell == 100).collect();
    let inside = at100
        .iter()
        .filter(|t| t.crossing.is_some_and(|c| (250..=1000).contains(&c)))
        .count();
    Ok(Outcome::new(
        r.pass(),
        format!(
            "mean r/ell at 25/50/100 = {:.2}/{:.2}/{:.2}; ell=100 crossings in [250, 1000]: {inside}/{}",
            metric(&r, "mean_r_over_ell_25"),
            metric(&r, "mean_r_over_ell_50"),
            metric(&r, "mean_r_over_ell_100"),
            at100.len()
        ),
    ))
}

fn bnr_vs_rounds() -> Result<Outcome, String> {
    let r = experiment("bnr_vs_rounds.json")?;
    Ok(Outcome::new(
        r.pass(),
        format!(
            "slope {:.3}, control max |bnr| {:.3}, trials with bnr >= 1 at 5 ell: {}",
            metric(&r, "slope"),
            metric(&r, "control_max_abs"),
            metric(&r, "bnr1_at_5ell")
        ),
    ))
}

fn end_to_end() -> Result<Outcome, String> {
    let r = experiment("attack_end_to_end.json")?;
    let Detail::EndToEnd(rows) = &r.detail else {
        return Err("unexpected detail".into());
    };
    let strong = rows.iter().filter(|x| x.measured_bnr >= 4.0).count();
    Ok(Outcome::new(
        r.pass(),
        format!(
            "attack success {:.2}, fresh correct {:.2}, bnr >= 4 in {strong}/{}",
            metric(&r, "attack_success"),
            metric(&r, "fresh_correct"),
            rows.len()
        ),
    ))
}

fn lemma1() -> Result<Outcome, String> {
    let r = experiment("lemma1_validation.json")?;
    Ok(Outcome::new(
        r.pass(),
        format!("{}/{} boundary instances within bound", metric(&r, "passed"), metric(&r, "instances")),
    ))
}

fn utility() -> Result<Outcome, String> {
    let mut worst: f64 = 0.0;
    for seed in [1u64, 2, 3] {
        let u = median_utility(30, 1000, seed).map_err(|e| e.to_string())?;
        worst = worst.max(u.violation_rate());
    }
    Ok(Outcome::new(worst <= 0.05, format!("worst violation rate {worst:.4} over 3 x 1000 trials")))
}

fn invariants() -> Result<Outcome, String> {
    use support::*;
    let checks: [(&str, Result<(), String>); 6] = [
        ("linearity", run(100, linearity_case(), check_linearity)),
        ("streaming", run(100, stream_case(), check_stream_equivalence)),
        ("monitor bookkeeping", run(100, monitor_case(), check_monitor_bookkeeping)),
        ("bottom immutability", run(100, monitor_case(), check_bottom_immutability)),
        ("tail norm", run(100, tail_case(), check_tail_norm)),
        ("stable hysteresis", run(100, stable_case(), check_stable_hysteresis)),
    ];
    let failed: Vec<String> = checks
        .into_iter()
        .filter_map(|(name, r)| r.err().map(|e| format!("{name}: {e}")))
        .collect();
    Ok(Outcome::new(
        failed.is_empty(),
        if failed.is_empty() { "6 invariants x 100 cases".to_string() } else { failed.join("; ") },
    ))
}

fn weight_equivalence() -> Result<Outcome, String> {
    let r = experiment("weight_est_equivalence.json")?;
    let detail = r
        .summary
        .metrics
        .iter()
        .map(|(k, v)| format!("{k} {v:.3}"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok(Outcome::new(r.pass(), detail))
}

fn envelope() -> Result<Outcome, String> {
    let mut lines = Vec::new();
    let mut ok = true;
    for (eps, delta, limit) in [(1.0, 1e-3, 1), (0.5, 1e-4, 10), (2.0, 1e-8, 100)] {
        let params = PrivacyParams::new(eps, delta, limit).map_err(|e| e.to_string())?;
        for seed in 0..3u64 {
            let o = monitor_envelope(params, 10_000, 0.01, seed).map_err(|e| e.to_string())?;
            ok &= o.holds();
            if seed == 0 {
                lines.push(format!("eps {eps}: max {:.1} <= {:.1}", o.max_abs_noise, o.envelope));
            }
        }
    }
    Ok(Outcome::new(ok, lines.join("; ")))
}

fn robust_survival() -> Result<Outcome, String> {
    let r = experiment("robust_survival.json")?;
    Ok(Outcome::new(
        r.pass(),
        format!(
            "basic defeated {:.2}, robust correct {:.2}, lambda max {:.3} vs budget {:.3}",
            metric(&r, "basic_defeated"),
            metric(&r, "robust_correct"),
            metric(&r, "lambda_max"),
            metric(&r, "lambda_budget")
        ),
    ))
}

fn accounting() -> Result<Outcome, String> {
    let c = EstimatorConstants::relaxed(0.6, 0.9);
    let mut ok = true;

    let mut acct = SequenceAccounting::new(10);
    ok &= lambda_number(&acct, &c) == 0.0;
    for k in 0..3u64 {
        acct.set(k, 4.0);
    }
    // sum 12 over C_a b = 500 is below the max count of 4
    ok &= (lambda_number(&acct, &c) - 12.0 / (c.c_a * 10.0)).abs() < 1e-12;

    let (lo, hi, mid) = (0.0, 1.0, (c.flip_low() + c.flip_high()) / 2.0);
    ok &= flip_number(&[lo, mid, hi, mid, lo, hi], &c) == 3;
    ok &= flip_number(&[hi, mid, hi, mid, hi], &c) == 0;

    let mut audited = 0;
    let mut worst = (0usize, 0usize);
    for seed in 0..100u64 {
        for a in stable_flip_audit(seed).map_err(|e| e.to_string())? {
            audited += 1;
            if a.changes > a.flips {
                ok = false;
                worst = (a.changes, a.flips);
            }
        }
    }
    let tail = if worst == (0, 0) {
        String::new()
    } else {
        format!("; violation: {} changes vs {} flips", worst.0, worst.1)
    };
    Ok(Outcome::new(ok, format!("scripted lambda/flip values; {audited} audited (key, sign) traces over 100 seeds{tail}")))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Result<Outcome, String>); 10] = [
        ("rounds to unit bnr scale linearly with ell", rounds_vs_ell),
        ("bnr grows like the square root of rounds", bnr_vs_rounds),
        ("end-to-end attack defeats the median estimator", end_to_end),
        ("boundary instances respect p-hat bounds", lemma1),
        ("median estimator utility", utility),
        ("exact structural invariants", invariants),
        ("fast and naive weight estimators agree", weight_equivalence),
        ("monitor noise stays inside its envelope", envelope),
        ("robust estimator survives the attack", robust_survival),
        ("lambda and flip accounting", accounting),
    ];
    let mut failures = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        println!("criterion {}: {name}", i + 1);
        let outcome = f().unwrap_or_else(|e| Outcome::new(false, format!("error: {e}")));
        failures += !outcome.pass as usize;
        println!(
            "criterion {}: {} ({}) [{:.1}s]",
            i + 1,
            if outcome.pass { "PASS" } else { "FAIL" },
            outcome.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("{}/10 criteria passed", 10 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
