use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use robust_hh::attacks::EstimatorKind;
use robust_hh::estimators::{median_estimate, median_topk};
use robust_hh::harness::experiments::{attack_once, build_oracle, TrialSeeds};
use robust_hh::harness::{run_and_write, ExperimentConfig, ExperimentKind, MASTER_SEED_ENV};
use robust_hh::sketch::{init_sketch, CounterKind, Snapshot, SketchParams, SketchVariant, SparseVector};
use robust_hh::Error;

const EXIT_UNMET: u8 = 1;
const EXIT_CONFIG: u8 = 2;

const MEDIAN_DEMO: &str = include_str!("../configs/attack_end_to_end.json");
const SIGN_DEMO: &str = include_str!("../configs/robust_survival.json");

#[derive(Parser)]
#[command(name = "robust-hh", version, about = "Heavy-hitter sketches, robust estimators and adaptive attacks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run or list experiments.
    #[command(subcommand)]
    Experiment(ExperimentCmd),
    /// Build or inspect sketch snapshots.
    #[command(subcommand)]
    Sketch(SketchCmd),
    /// Attack demonstrations.
    #[command(subcommand)]
    Attack(AttackCmd),
}

#[derive(Subcommand)]
enum ExperimentCmd {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Override the number of trials.
        #[arg(long)]
        trials: Option<usize>,
        /// Override the CSV output path.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Master seed; beats the config file.
        #[arg(long, env = MASTER_SEED_ENV)]
        seed: Option<u64>,
    },
    /// List experiment kinds.
    List,
}

#[derive(Subcommand)]
enum SketchCmd {
    /// Sketch a `key,value` CSV and write a snapshot.
    Build {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_variant, default_value = "count_sketch")]
        variant: SketchVariant,
        #[arg(long, default_value_t = 1 << 20)]
        n: u64,
        #[arg(long, default_value_t = 300)]
        d: usize,
        #[arg(long, default_value_t = 30)]
        b: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Integer counters.
        #[arg(long)]
        exact: bool,
    },
    /// Print snapshot parameters and median estimates.
    Inspect {
        snapshot: PathBuf,
        /// Keys to estimate.
        #[arg(long, value_delimiter = ',')]
        keys: Vec<u64>,
        /// Report the top-k' of `keys`.
        #[arg(long)]
        top: Option<usize>,
    },
}

#[derive(Subcommand)]
enum AttackCmd {
    /// One attack plus final query against a chosen estimator.
    Demo {
        #[arg(long, value_parser = parse_estimator)]
        estimator: EstimatorKind,
        #[arg(long)]
        ell: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_estimator(s: &str) -> Result<EstimatorKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_variant(s: &str) -> Result<SketchVariant, String> {
    match s {
        "count_sketch" | "cs" => Ok(SketchVariant::CountSketch),
        "b_count_sketch" | "bcs" => Ok(SketchVariant::BCountSketch),
        _ => Err(format!("unknown variant `{s}` (count_sketch or b_count_sketch)")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e
                .downcast_ref::<Error>()
                .is_some_and(|e| matches!(e, Error::Config { .. } | Error::Parameter { .. }));
            ExitCode::from(if config { EXIT_CONFIG } else { EXIT_UNMET })
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Experiment(ExperimentCmd::List) => {
            for k in ExperimentKind::ALL {
                println!("{:<24} {}", k.name(), k.describe());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Experiment(ExperimentCmd::Run {
            config,
            trials,
            output,
            seed,
        }) => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(t) = trials {
                cfg.trials = t;
            }
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if output.is_some() {
                cfg.output = output;
            }
            let report = run_and_write(&cfg)?;
            print!("{}", report.summary);
            if let Some(p) = &cfg.output {
                println!("csv: {}", p.display());
            }
            Ok(if report.pass() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_UNMET)
            })
        }
        Command::Sketch(SketchCmd::Build {
            input,
            out,
            variant,
            n,
            d,
            b,
            seed,
            exact,
        }) => {
            let v = read_vector(&input)?;
            let rand = init_sketch(variant, SketchParams::new(n, d, b)?, seed)?;
            let kind = if exact { CounterKind::Exact } else { CounterKind::Float };
            let state = rand.sketch_vector_as(&v, kind)?;
            let bytes = Snapshot::capture(&rand, &state)?.to_bytes()?;
            std::fs::write(&out, bytes).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {} ({} keys, d = {d})", out.display(), v.len());
            Ok(ExitCode::SUCCESS)
        }
        Command::Sketch(SketchCmd::Inspect { snapshot, keys, top }) => {
            let bytes = std::fs::read(&snapshot).with_context(|| format!("reading {}", snapshot.display()))?;
            let snap = Snapshot::from_bytes(&bytes)?;
            let (rand, state) = snap.restore()?;
            let p = snap.params;
            println!("variant      {:?}", snap.variant);
            println!("n d b        {} {} {} (ell = {})", p.n, p.d, p.b, p.d / p.b);
            println!("counters     {:?}", snap.counter_kind());
            println!("hash degrees selector {} sign {} ({:?})", snap.degrees.selector, snap.degrees.sign, snap.degrees.mode);
            println!("master seed  {}", snap.master_seed);
            let norm: f64 = (0..p.d).map(|t| state.value(t).powi(2)).sum();
            println!("sum of squared counters {norm}");
            for &k in &keys {
                println!("  key {k:>10}: median estimate {:.4}", median_estimate(&rand, &state, k)?);
            }
            if let Some(k) = top {
                let best = median_topk(&rand, &state, k, keys.iter().copied())?;
                let list: Vec<String> = best.iter().map(|(k, x)| format!("{k} ({x:.3})")).collect();
                println!("top {k}: {}", list.join(", "));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Attack(AttackCmd::Demo { estimator, ell, seed }) => demo(estimator, ell, seed),
    }
}

fn read_vector(path: &Path) -> anyhow::Result<SparseVector> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut v = SparseVector::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = || -> Option<(u64, f64)> { Some((rec.get(0)?.parse().ok()?, rec.get(1)?.parse().ok()?)) };
        let (k, x) = parse().with_context(|| format!("{}: record {} is not `key,value`", path.display(), line + 1))?;
        v.set(k, v.get(k) + x);
    }
    Ok(v)
}

fn demo(estimator: EstimatorKind, ell: usize, seed: u64) -> anyhow::Result<ExitCode> {
    let mut cfg = ExperimentConfig::from_json(if estimator == EstimatorKind::Median { MEDIAN_DEMO } else { SIGN_DEMO })?;
    cfg.estimator.kind = estimator;
    cfg.sketch.d = ell.checked_mul(cfg.sketch.b).context("ell too large")?;
    if estimator != EstimatorKind::Median {
        cfg.attack.max_queries = 20 * ell as u64;
    }
    cfg.validate()?;
    let seeds = TrialSeeds::new(seed, 0);
    let attack = robust_hh::attacks::AttackConfig {
        seed: seeds.attack,
        ..cfg.attack_for(&cfg.sketch)
    };
    let (mut oracle, rand) = build_oracle(&cfg.estimator, estimator, &cfg.sketch, &attack, seeds.sketch, seeds.noise)?;
    let out = attack_once(&cfg, oracle.as_mut(), rand, &attack)?;
    println!("estimator {estimator:?}, ell = {ell}, b = {}, seed = {seed}", cfg.sketch.b);
    match &out.result {
        Some(r) => println!(
            "collections {}, queries {} ({} calibrating), borderline weight {:.3}, measured bnr {:.3}",
            r.collections,
            r.queries_used,
            r.calibration_queries,
            r.borderline_weight,
            r.measured_bnr.unwrap_or(f64::NAN)
        ),
        None => println!("calibration failed"),
    }
    let h = attack.target_key;
    println!(
        "final query: key {h} {} ({} keys reported)",
        if out.answer.contains(h) { "reported" } else { "not reported" },
        out.answer.keys.len()
    );
    println!("attack {}", if out.success { "succeeded" } else { "failed" });
    Ok(ExitCode::SUCCESS)
}
