//! The black-box boundary: an attacker holds `&mut dyn Oracle` and nothing else.

use std::collections::{BTreeSet, VecDeque};

use crate::error::{Error, Result};
use crate::estimators::{median_in_place, top_k_by_magnitude, AlignmentCounts, EstimatorConstants};
use crate::robust::RobustEstimatorState;
use crate::sketch::{CounterKind, Entries, SketchRandomness, SketchState, SparseVector};

/// What the estimator returns for one query vector.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OracleAnswer {
    /// Reported keys, in the estimator's output order.
    pub keys: Vec<u64>,
    /// Per-key estimates aligned with `keys`, for estimators that expose them.
    pub values: Option<Vec<f64>>,
}

impl OracleAnswer {
    pub fn contains(&self, key: u64) -> bool {
        self.keys.contains(&key)
    }

    pub fn key_set(&self) -> BTreeSet<u64> {
        self.keys.iter().copied().collect()
    }
}

pub trait Oracle {
    fn query(&mut self, v: &SparseVector) -> Result<OracleAnswer>;

    /// Queries answered so far.
    fn queries(&self) -> u64;
}

/// Candidate universe: the query support plus a fixed watch list.
fn universe(v: &SparseVector, watch: &[u64]) -> BTreeSet<u64> {
    v.keys().chain(watch.iter().copied()).collect()
}

/// Sketches `v` computing each universe key's column once.
fn sketch_universe(
    rand: &SketchRandomness,
    v: &SparseVector,
    watch: &[u64],
) -> Result<(SketchState, Vec<(u64, Entries)>)> {
    let mut state = rand.new_state(CounterKind::Float);
    let mut cols = Vec::new();
    for key in universe(v, watch) {
        let e = rand.entries(key)?;
        let x = v.get(key);
        if x != 0.0 {
            state.apply_entries(&e, x)?;
        }
        cols.push((key, e));
    }
    Ok((state, cols))
}

/// Top-k' by |median estimate| over a CountSketch-style ensemble.
pub struct MedianOracle {
    rand: SketchRandomness,
    k_prime: usize,
    watch: Vec<u64>,
    queries: u64,
}

impl MedianOracle {
    pub fn new(rand: SketchRandomness, k_prime: usize, watch: Vec<u64>) -> Result<Self> {
        if k_prime == 0 {
            return Err(Error::param("k_prime", "must be positive"));
        }
        Ok(MedianOracle {
            rand,
            k_prime,
            watch,
            queries: 0,
        })
    }

    /// Ground truth, for evaluation code only.
    pub fn randomness(&self) -> &SketchRandomness {
        &self.rand
    }
}

impl Oracle for MedianOracle {
    fn query(&mut self, v: &SparseVector) -> Result<OracleAnswer> {
        self.queries += 1;
        let (state, cols) = sketch_universe(&self.rand, v, &self.watch)?;
        let mut buf = Vec::new();
        let scored = cols
            .iter()
            .map(|(key, e)| {
                buf.clear();
                buf.extend(state.signed_values(e));
                (*key, median_in_place(&mut buf).unwrap_or(0.0))
            })
            .collect();
        let (keys, values) = top_k_by_magnitude(scored, self.k_prime).into_iter().unzip();
        Ok(OracleAnswer {
            keys,
            values: Some(values),
        })
    }

    fn queries(&self) -> u64 {
        self.queries
    }
}

/// Basic sign-alignment threshold estimator at tau_m.
pub struct ThresholdOracle {
    rand: SketchRandomness,
    constants: EstimatorConstants,
    watch: Vec<u64>,
    queries: u64,
}

impl ThresholdOracle {
    pub fn new(rand: SketchRandomness, constants: EstimatorConstants, watch: Vec<u64>) -> Result<Self> {
        constants.validate()?;
        Ok(ThresholdOracle {
            rand,
            constants,
            watch,
            queries: 0,
        })
    }

    pub fn randomness(&self) -> &SketchRandomness {
        &self.rand
    }
}

impl Oracle for ThresholdOracle {
    fn query(&mut self, v: &SparseVector) -> Result<OracleAnswer> {
        self.queries += 1;
        let (state, cols) = sketch_universe(&self.rand, v, &self.watch)?;
        let dob = self.rand.params().d_over_b();
        let tau = self.constants.tau_m();
        let keys = cols
            .iter()
            .filter(|(_, e)| {
                let a = AlignmentCounts::from_entries(&state, e);
                a.p_hat(1, dob).max(a.p_hat(-1, dob)) >= tau
            })
            .map(|(k, _)| *k)
            .collect();
        Ok(OracleAnswer { keys, values: None })
    }

    fn queries(&self) -> u64 {
        self.queries
    }
}

/// The DP-robust threshold estimator.
pub struct RobustOracle {
    rs: RobustEstimatorState,
    watch: Vec<u64>,
    queries: u64,
}

impl RobustOracle {
    pub fn new(rs: RobustEstimatorState, watch: Vec<u64>) -> Self {
        RobustOracle { rs, watch, queries: 0 }
    }

    pub fn randomness(&self) -> &SketchRandomness {
        self.rs.rand()
    }

    pub fn estimator(&self) -> &RobustEstimatorState {
        &self.rs
    }
}

impl Oracle for RobustOracle {
    fn query(&mut self, v: &SparseVector) -> Result<OracleAnswer> {
        self.queries += 1;
        let state = self.rs.rand().sketch_vector(v)?;
        let report = self.rs.robust_threshold_query(&state, universe(v, &self.watch))?;
        Ok(OracleAnswer {
            keys: report.keys.into_iter().collect(),
            values: None,
        })
    }

    fn queries(&self) -> u64 {
        self.queries
    }
}

/// Forwards to an inner oracle and keeps every answer.
pub struct RecordingOracle<'a> {
    inner: &'a mut dyn Oracle,
    answers: Vec<OracleAnswer>,
}

impl<'a> RecordingOracle<'a> {
    pub fn new(inner: &'a mut dyn Oracle) -> Self {
        RecordingOracle {
            inner,
            answers: Vec::new(),
        }
    }

    pub fn into_answers(self) -> Vec<OracleAnswer> {
        self.answers
    }
}

impl Oracle for RecordingOracle<'_> {
    fn query(&mut self, v: &SparseVector) -> Result<OracleAnswer> {
        let a = self.inner.query(v)?;
        self.answers.push(a.clone());
        Ok(a)
    }

    fn queries(&self) -> u64 {
        self.answers.len() as u64
    }
}

/// Replays recorded answers regardless of the query; errors when it runs dry.
pub struct ReplayOracle {
    answers: VecDeque<OracleAnswer>,
    queries: u64,
}

impl ReplayOracle {
    pub fn new(answers: impl IntoIterator<Item = OracleAnswer>) -> Self {
        ReplayOracle {
            answers: answers.into_iter().collect(),
            queries: 0,
        }
    }
}

impl Oracle for ReplayOracle {
    fn query(&mut self, _v: &SparseVector) -> Result<OracleAnswer> {
        self.queries += 1;
        self.answers
            .pop_front()
            .ok_or_else(|| Error::Protocol("replay exhausted".into()))
    }

    fn queries(&self) -> u64 {
        self.queries
    }
}
