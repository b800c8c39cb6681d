//! The adaptive game: an analyst queries an estimator round by round while a judge,
//! which sees the true vectors, scores every answer. The analyst only holds the oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attacks::{run_attack, Calibration, Oracle, OracleAnswer, RoundObserver};
use crate::attacks::{AttackConfig, AttackResult};
use crate::error::{Error, Result};
use crate::estimators::{classify_heavy_suspect, EstimatorConstants};
use crate::sketch::SparseVector;

/// How an answer is scored against the true query vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Judge {
    /// Every key with v_i^2 > ||v_tail[k]||^2 / k must be reported.
    TopK { k: usize },
    /// Heavy keys reported, neither keys absent.
    Threshold { constants: EstimatorConstants, b: usize },
}

impl Judge {
    pub fn heavy_keys(&self, v: &SparseVector) -> Vec<u64> {
        match *self {
            Judge::TopK { k } => {
                let cut = v.tail_norm_sq(k) / k.max(1) as f64;
                v.iter().filter(|&(_, x)| x * x > cut).map(|(key, _)| key).collect()
            }
            Judge::Threshold { constants, b } => classify_heavy_suspect(v, &constants, b).heavy_keys().into_iter().collect(),
        }
    }

    pub fn is_correct(&self, v: &SparseVector, answer: &OracleAnswer) -> bool {
        match *self {
            Judge::TopK { .. } => self.heavy_keys(v).iter().all(|&k| answer.contains(k)),
            Judge::Threshold { constants, b } => {
                classify_heavy_suspect(v, &constants, b).is_correct(&answer.key_set())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GameRound {
    pub round: u64,
    pub reported: Vec<u64>,
    pub correct: bool,
}

/// Wraps the estimator, scores each round, and stops the game after `max_rounds`.
pub struct GameOracle<'a> {
    inner: &'a mut dyn Oracle,
    judge: Judge,
    max_rounds: u64,
    rounds: Vec<GameRound>,
    exhausted: bool,
}

impl<'a> GameOracle<'a> {
    pub fn new(inner: &'a mut dyn Oracle, judge: Judge, max_rounds: u64) -> Self {
        GameOracle {
            inner,
            judge,
            max_rounds,
            rounds: Vec::new(),
            exhausted: false,
        }
    }

    pub fn rounds(&self) -> &[GameRound] {
        &self.rounds
    }

    /// True when the analyst asked for more than `max_rounds` answers.
    pub fn exhausted(&self) -> bool {
        self.exhausted
    }

    pub fn into_rounds(self) -> Vec<GameRound> {
        self.rounds
    }
}

impl Oracle for GameOracle<'_> {
    fn query(&mut self, v: &SparseVector) -> Result<OracleAnswer> {
        if self.rounds.len() as u64 >= self.max_rounds {
            self.exhausted = true;
            return Err(Error::Protocol(format!("game over after {} rounds", self.max_rounds)));
        }
        let answer = self.inner.query(v)?;
        self.rounds.push(GameRound {
            round: self.rounds.len() as u64 + 1,
            reported: answer.keys.clone(),
            correct: self.judge.is_correct(v, &answer),
        });
        Ok(answer)
    }

    fn queries(&self) -> u64 {
        self.inner.queries()
    }
}

pub trait Analyst {
    fn play(&mut self, oracle: &mut dyn Oracle) -> Result<()>;
}

/// Non-adaptive baseline: fixed random vectors, answers ignored.
///
/// Keys below `heavy` get weight +-`heavy_weight`; the rest are small integers.
pub struct NullAnalyst {
    pub rounds: u64,
    pub keys: u64,
    pub heavy: u64,
    pub heavy_weight: f64,
    pub seed: u64,
}

impl Analyst for NullAnalyst {
    fn play(&mut self, oracle: &mut dyn Oracle) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        for _ in 0..self.rounds {
            let v: SparseVector = (0..self.keys)
                .map(|k| {
                    let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    let x = if k < self.heavy { self.heavy_weight } else { rng.random_range(0..=5) as f64 };
                    (k, s * x)
                })
                .filter(|&(_, x)| x != 0.0)
                .collect();
            oracle.query(&v)?;
        }
        Ok(())
    }
}

/// Runs the attack and then asks `final_query(result)`.
pub struct AttackAnalyst<F> {
    pub cfg: AttackConfig,
    /// Calibrate on the attacked oracle instead of using the fixed weight.
    pub calibrate: bool,
    pub final_query: F,
    pub result: Option<AttackResult>,
}

impl<F: FnMut(&AttackResult) -> SparseVector> Analyst for AttackAnalyst<F> {
    fn play(&mut self, oracle: &mut dyn Oracle) -> Result<()> {
        let cal = if self.calibrate { Calibration::Target } else { Calibration::Fixed };
        let r = run_attack(oracle, cal, &self.cfg, &mut () as &mut dyn RoundObserver)?;
        let v = (self.final_query)(&r);
        oracle.query(&v)?;
        self.result = Some(r);
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Transcript {
    pub rounds: Vec<GameRound>,
    pub exhausted: bool,
    pub first_failure: Option<u64>,
}

impl Transcript {
    pub fn all_correct(&self) -> bool {
        self.first_failure.is_none()
    }
}

/// Plays one game. Running out of rounds ends the game without an error.
pub fn game_loop(analyst: &mut dyn Analyst, oracle: &mut dyn Oracle, judge: Judge, max_rounds: u64) -> Result<Transcript> {
    let mut g = GameOracle::new(oracle, judge, max_rounds);
    let played = analyst.play(&mut g);
    let exhausted = g.exhausted();
    match played {
        Ok(()) => {}
        Err(_) if exhausted => {}
        Err(e) => return Err(e),
    }
    let rounds = g.into_rounds();
    let first_failure = rounds.iter().find(|r| !r.correct).map(|r| r.round);
    Ok(Transcript {
        rounds,
        exhausted,
        first_failure,
    })
}
