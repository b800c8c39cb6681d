//! Experiment configuration: one JSON document per run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackConfig, EstimatorKind, FinalMode, MedianRoles};
use crate::error::{Error, Result};
use crate::estimators::EstimatorConstants;
use crate::sketch::{SketchParams, SketchVariant};

/// Overrides `master_seed` when set.
pub const MASTER_SEED_ENV: &str = "RHH_MASTER_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    BnrVsRounds,
    RoundsVsEll,
    AttackEndToEnd,
    RobustSurvival,
    Lemma1Validation,
    WeightEstEquivalence,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::BnrVsRounds,
        ExperimentKind::RoundsVsEll,
        ExperimentKind::AttackEndToEnd,
        ExperimentKind::RobustSurvival,
        ExperimentKind::Lemma1Validation,
        ExperimentKind::WeightEstEquivalence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::BnrVsRounds => "bnr_vs_rounds",
            ExperimentKind::RoundsVsEll => "rounds_vs_ell",
            ExperimentKind::AttackEndToEnd => "attack_end_to_end",
            ExperimentKind::RobustSurvival => "robust_survival",
            ExperimentKind::Lemma1Validation => "lemma1_validation",
            ExperimentKind::WeightEstEquivalence => "weight_est_equivalence",
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            ExperimentKind::BnrVsRounds => "median attack: BNR of the target and a control key per round",
            ExperimentKind::RoundsVsEll => "median attack: rounds to reach a BNR across sketch sizes ell",
            ExperimentKind::AttackEndToEnd => "attack then a final query; fresh-randomness control",
            ExperimentKind::RobustSurvival => "the same attack against the basic and the robust estimator",
            ExperimentKind::Lemma1Validation => "Monte Carlo alignment probabilities on boundary instances",
            ExperimentKind::WeightEstEquivalence => "fast vs naive private weight estimator outcome histograms",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SketchSection {
    pub variant: SketchVariant,
    pub n: u64,
    pub d: usize,
    pub b: usize,
}

impl SketchSection {
    pub fn params(&self) -> Result<SketchParams> {
        SketchParams::new(self.n, self.d, self.b)
    }

    /// Same n and b with d = ell * b.
    pub fn with_ell(&self, ell: usize) -> SketchSection {
        SketchSection { d: ell * self.b, ..*self }
    }

    pub fn ell(&self) -> usize {
        self.d / self.b.max(1)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    Laplace,
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorSection {
    pub kind: EstimatorKind,
    pub constants: EstimatorConstants,
    /// Access limit L of the robust estimator.
    pub limit: u64,
    /// When set, C1 is solved so that the monitor's Delta equals this.
    pub target_big_delta: Option<f64>,
    pub noise: NoiseKind,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        EstimatorSection {
            kind: EstimatorKind::Median,
            constants: EstimatorConstants::default(),
            limit: 1000,
            target_big_delta: None,
            noise: NoiseKind::Laplace,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    Fixed,
    /// Probe the attacked estimator; probes count against `max_queries`.
    #[default]
    Target,
}

/// Experiment-specific knobs. Unused fields are ignored by other experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentOptions {
    /// Unbiased key tracked next to h.
    pub control_key: u64,
    /// Stop a trace once h reaches this BNR...
    pub stop_bnr: Option<f64>,
    /// ...but not before this many multiples of ell.
    pub min_rounds_factor: f64,
    /// Sweep of rounds_vs_ell; empty means the sketch's own ell.
    pub ells: Vec<usize>,
    /// Cap on rounds per trace, as a multiple of ell (0 keeps `attack.collections`).
    pub max_rounds_factor: f64,
    /// Accepted band for mean r/ell.
    pub ratio_band: [f64; 2],
    /// Accepted band for the log-log slope of BNR vs rounds.
    pub slope_band: [f64; 2],
    /// Accepted |control BNR|.
    pub control_band: f64,
    /// Final query shape; defaults to mask_heavy for median, fake_heavy otherwise.
    pub final_mode: Option<FinalMode>,
    /// Weight of h in mask_heavy, in units of its measured median bias.
    pub mask_factor: f64,
    pub median_roles: MedianRoles,
    pub calibration: CalibrationMode,
    pub min_attack_success: f64,
    pub min_fresh_correct: f64,
    pub min_robust_correct: f64,
    /// Monte Carlo samples per boundary instance.
    pub samples: usize,
    /// Paired runs of the weight-estimator comparison.
    pub paired_runs: usize,
    /// Bound W of the weight estimator.
    pub w_max: i64,
    /// Target (1/eps) log(1/delta) for the weight comparison noise.
    pub noise_scale: f64,
    pub min_p_value: f64,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            control_key: 0,
            stop_bnr: None,
            min_rounds_factor: 0.0,
            ells: Vec::new(),
            max_rounds_factor: 0.0,
            ratio_band: [2.5, 10.0],
            slope_band: [0.35, 0.65],
            control_band: 0.3,
            final_mode: None,
            mask_factor: 1.0,
            median_roles: MedianRoles::Appendix,
            calibration: CalibrationMode::Target,
            min_attack_success: 0.8,
            min_fresh_correct: 0.95,
            min_robust_correct: 0.9,
            samples: 1_000_000,
            paired_runs: 20_000,
            w_max: 40,
            noise_scale: 1.2,
            min_p_value: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub sketch: SketchSection,
    #[serde(default)]
    pub estimator: EstimatorSection,
    #[serde(default)]
    pub attack: AttackConfig,
    pub trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub options: ExperimentOptions,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        let mut cfg = Self::from_json(&text)?;
        if let Ok(s) = std::env::var(MASTER_SEED_ENV) {
            cfg.master_seed = s
                .trim()
                .parse()
                .map_err(|_| Error::config(MASTER_SEED_ENV, format!("`{s}` is not a u64")))?;
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// The attack parameters with ell, b and the estimator filled in from the other sections.
    pub fn attack_for(&self, sketch: &SketchSection) -> AttackConfig {
        AttackConfig {
            ell: sketch.ell(),
            b: sketch.b,
            estimator: self.estimator.kind,
            ..self.attack.clone()
        }
    }

    /// The sweep of rounds_vs_ell, or the configured ell.
    pub fn ells(&self) -> Vec<usize> {
        if self.options.ells.is_empty() {
            vec![self.sketch.ell()]
        } else {
            self.options.ells.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sketch
            .params()
            .map_err(|e| Error::config("sketch", e.to_string()))?;
        if self.sketch.d % self.sketch.b != 0 {
            return Err(Error::config("sketch.d", "must be a multiple of b"));
        }
        self.estimator
            .constants
            .validate()
            .map_err(|e| Error::config("estimator.constants", e.to_string()))?;
        if self.estimator.limit == 0 {
            return Err(Error::config("estimator.limit", "must be positive"));
        }
        if let Some(t) = self.estimator.target_big_delta {
            if !(t > 0.0) {
                return Err(Error::config("estimator.target_big_delta", "must be positive"));
            }
        }
        let o = &self.options;
        if o.ells.contains(&0) {
            return Err(Error::config("options.ells", "ell must be positive"));
        }
        if !(o.ratio_band[0] <= o.ratio_band[1]) || !(o.slope_band[0] <= o.slope_band[1]) {
            return Err(Error::config("options", "bands must be [low, high]"));
        }
        if !(o.min_rounds_factor >= 0.0 && o.max_rounds_factor >= 0.0) {
            return Err(Error::config("options", "round factors must be non-negative"));
        }
        for (name, x) in [
            ("options.min_attack_success", o.min_attack_success),
            ("options.min_fresh_correct", o.min_fresh_correct),
            ("options.min_robust_correct", o.min_robust_correct),
        ] {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::config(name, "must lie in [0, 1]"));
            }
        }
        match self.experiment {
            ExperimentKind::BnrVsRounds | ExperimentKind::RoundsVsEll => {
                if self.estimator.kind != EstimatorKind::Median {
                    return Err(Error::config("estimator.kind", "trace experiments attack the median estimator"));
                }
            }
            ExperimentKind::RobustSurvival => {
                if self.estimator.kind == EstimatorKind::Median {
                    return Err(Error::config("estimator.kind", "robust_survival needs a sign-alignment attack"));
                }
            }
            ExperimentKind::Lemma1Validation => {
                if o.samples == 0 {
                    return Err(Error::config("options.samples", "must be positive"));
                }
            }
            ExperimentKind::WeightEstEquivalence => {
                if o.w_max < 0 {
                    return Err(Error::config("options.w_max", "must be non-negative"));
                }
                if !(o.noise_scale > 1.0) {
                    return Err(Error::config("options.noise_scale", "must exceed 1"));
                }
            }
            ExperimentKind::AttackEndToEnd => {}
        }
        for ell in self.ells() {
            let s = self.sketch.with_ell(ell);
            s.params().map_err(|e| Error::config("options.ells", e.to_string()))?;
            self.attack_for(&s)
                .validate()
                .map_err(|e| Error::config("attack", e.to_string()))?;
        }
        let attack = self.attack_for(&self.sketch);
        if attack.special_keys().contains(&o.control_key) || o.control_key >= attack.arena_start {
            return Err(Error::config("options.control_key", "must be outside H and the tail arena"));
        }
        Ok(())
    }
}
