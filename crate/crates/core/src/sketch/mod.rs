//! CountSketch / BCountSketch measurement ensembles and bucket counters.

mod snapshot;
mod vector;

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::{make_hash, sign_of, HashFamilySpec, HashFunction, HashMode, KeyPowers};

pub use snapshot::{Snapshot, SNAPSHOT_MAGIC, SNAPSHOT_VERSION};
pub use vector::SparseVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SketchVariant {
    CountSketch,
    BCountSketch,
}

impl SketchVariant {
    pub fn code(self) -> u8 {
        match self {
            SketchVariant::CountSketch => 0,
            SketchVariant::BCountSketch => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(SketchVariant::CountSketch),
            1 => Some(SketchVariant::BCountSketch),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SketchParams {
    pub n: u64,
    pub d: usize,
    pub b: usize,
}

impl SketchParams {
    pub fn new(n: u64, d: usize, b: usize) -> Result<Self> {
        let p = SketchParams { n, d, b };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::param("n", "must be at least 1"));
        }
        if self.b == 0 || self.b > self.d {
            return Err(Error::param("b", format!("need 1 <= b <= d (b = {}, d = {})", self.b, self.d)));
        }
        if self.n > (1u64 << crate::hashing::MAX_DOMAIN_BITS) {
            return Err(Error::param("n", "exceeds the supported key domain"));
        }
        Ok(())
    }

    /// d/b as a real; equals the row count for CountSketch.
    pub fn d_over_b(&self) -> f64 {
        self.d as f64 / self.b as f64
    }

    pub fn ell(&self) -> usize {
        self.d / self.b
    }

    fn domain_bits(&self) -> u32 {
        (64 - (self.n - 1).leading_zeros()).max(1)
    }
}

/// Hash degrees for the selector (h) and sign (s) functions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashDegrees {
    pub selector: usize,
    pub sign: usize,
    pub mode: HashMode,
}

impl HashDegrees {
    pub fn default_for(variant: SketchVariant) -> Self {
        match variant {
            SketchVariant::CountSketch => HashDegrees {
                selector: 2,
                sign: 2,
                mode: HashMode::Polynomial,
            },
            SketchVariant::BCountSketch => HashDegrees {
                selector: 3,
                sign: 5,
                mode: HashMode::Polynomial,
            },
        }
    }

    pub fn fully_random() -> Self {
        HashDegrees {
            selector: 2,
            sign: 2,
            mode: HashMode::FullyRandom,
        }
    }
}

/// One nonzero measurement entry mu_t[i] = sign.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Entry {
    pub bucket: usize,
    pub sign: i8,
}

pub type Entries = Arc<[Entry]>;

const DEFAULT_CACHE_CAP: usize = 1 << 20;

struct EntryCache {
    map: RwLock<HashMap<u64, Entries>>,
    cap: usize,
}

/// Flat copies of the polynomial coefficients for fast evaluation.
struct FlatCoeffs {
    sel: Vec<u64>,
    sign: Vec<u64>,
    ks: usize,
    kg: usize,
}

pub struct SketchRandomness {
    variant: SketchVariant,
    params: SketchParams,
    degrees: HashDegrees,
    master_seed: u64,
    selectors: Vec<HashFunction>,
    signs: Vec<HashFunction>,
    flat: Option<FlatCoeffs>,
    fingerprint: u64,
    cache: Option<EntryCache>,
}

impl std::fmt::Debug for SketchRandomness {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SketchRandomness")
            .field("variant", &self.variant)
            .field("params", &self.params)
            .field("degrees", &self.degrees)
            .field("master_seed", &self.master_seed)
            .finish_non_exhaustive()
    }
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fingerprint_of(variant: SketchVariant, p: &SketchParams, deg: &HashDegrees, seed: u64) -> u64 {
    [
        variant.code() as u64,
        p.n,
        p.d as u64,
        p.b as u64,
        deg.selector as u64,
        deg.sign as u64,
        deg.mode.code() as u64,
        seed,
    ]
    .iter()
    .fold(0x5EED_u64, |acc, &x| splitmix64(acc ^ x))
}

/// Builds the measurement ensemble with the default hash degrees for `variant`.
pub fn init_sketch(variant: SketchVariant, params: SketchParams, seed: u64) -> Result<SketchRandomness> {
    SketchRandomness::new(variant, params, HashDegrees::default_for(variant), seed)
}

impl SketchRandomness {
    pub fn new(variant: SketchVariant, params: SketchParams, degrees: HashDegrees, seed: u64) -> Result<Self> {
        params.validate()?;
        if variant == SketchVariant::CountSketch && params.d % params.b != 0 {
            return Err(Error::param(
                "d",
                format!("CountSketch needs b | d (b = {}, d = {})", params.b, params.d),
            ));
        }
        let count = match variant {
            SketchVariant::CountSketch => params.d / params.b,
            SketchVariant::BCountSketch => params.d,
        };
        let bits = params.domain_bits();
        let (sel_spec, sign_spec) = match degrees.mode {
            HashMode::Polynomial => (
                HashFamilySpec::polynomial(degrees.selector, bits),
                HashFamilySpec::polynomial(degrees.sign, bits),
            ),
            HashMode::FullyRandom => (HashFamilySpec::fully_random(bits), HashFamilySpec::fully_random(bits)),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut selectors = Vec::with_capacity(count);
        let mut signs = Vec::with_capacity(count);
        for _ in 0..count {
            selectors.push(make_hash(sel_spec, rng.next_u64())?);
            signs.push(make_hash(sign_spec, rng.next_u64())?);
        }
        let flat = match degrees.mode {
            HashMode::Polynomial => Some(FlatCoeffs {
                sel: selectors.iter().flat_map(|h| h.coefficients().unwrap().to_vec()).collect(),
                sign: signs.iter().flat_map(|h| h.coefficients().unwrap().to_vec()).collect(),
                ks: degrees.selector,
                kg: degrees.sign,
            }),
            HashMode::FullyRandom => None,
        };
        Ok(SketchRandomness {
            variant,
            params,
            degrees,
            master_seed: seed,
            selectors,
            signs,
            flat,
            fingerprint: fingerprint_of(variant, &params, &degrees, seed),
            cache: None,
        })
    }

    /// An identical ensemble rebuilt from the master seed, without the entry cache.
    pub fn replicate(&self) -> SketchRandomness {
        SketchRandomness::new(self.variant, self.params, self.degrees, self.master_seed)
            .expect("parameters were validated at construction")
    }

    /// Enables memoization of per-key entries (an inverted index for repeated keys).
    pub fn with_entry_cache(mut self, cap: Option<usize>) -> Self {
        self.cache = Some(EntryCache {
            map: RwLock::new(HashMap::new()),
            cap: cap.unwrap_or(DEFAULT_CACHE_CAP),
        });
        self
    }

    pub fn variant(&self) -> SketchVariant {
        self.variant
    }

    pub fn params(&self) -> SketchParams {
        self.params
    }

    pub fn degrees(&self) -> HashDegrees {
        self.degrees
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn d(&self) -> usize {
        self.params.d
    }

    pub fn b(&self) -> usize {
        self.params.b
    }

    fn check_key(&self, key: u64) -> Result<()> {
        if key >= self.params.n {
            Err(Error::KeyOutOfRange { key, n: self.params.n })
        } else {
            Ok(())
        }
    }

    /// mu_t[i] in {-1, 0, +1}.
    pub fn measurement_entry(&self, t: usize, key: u64) -> Result<i8> {
        self.check_key(key)?;
        let (d, b) = (self.params.d, self.params.b as u64);
        if t >= d {
            return Err(Error::BucketOutOfRange { t, d });
        }
        Ok(match self.variant {
            SketchVariant::CountSketch => {
                let row = t / b as usize;
                let j = (t % b as usize) as u64;
                if self.selectors[row].raw(key) % b == j {
                    self.signs[row].eval_sign(key)
                } else {
                    0
                }
            }
            SketchVariant::BCountSketch => {
                if self.selectors[t].raw(key) % b == 0 {
                    self.signs[t].eval_sign(key)
                } else {
                    0
                }
            }
        })
    }

    /// Nonzero entries of column `key`, in increasing bucket order.
    pub fn entries(&self, key: u64) -> Result<Entries> {
        self.check_key(key)?;
        if let Some(cache) = &self.cache {
            if let Some(e) = cache.map.read().expect("cache poisoned").get(&key) {
                return Ok(e.clone());
            }
            let e: Entries = self.compute_entries(key).into();
            let mut map = cache.map.write().expect("cache poisoned");
            if map.len() < cache.cap {
                map.insert(key, e.clone());
            }
            return Ok(e);
        }
        Ok(self.compute_entries(key).into())
    }

    fn compute_entries(&self, key: u64) -> Vec<Entry> {
        let b = self.params.b as u64;
        let deg = self.degrees.selector.max(self.degrees.sign);
        let pows = KeyPowers::new(key, deg);
        match (&self.flat, self.variant) {
            (Some(f), SketchVariant::CountSketch) => {
                let mut out = Vec::with_capacity(self.selectors.len());
                for r in 0..self.selectors.len() {
                    let j = flat_eval(&f.sel[r * f.ks..(r + 1) * f.ks], &pows) % b;
                    let s = sign_of(flat_eval(&f.sign[r * f.kg..(r + 1) * f.kg], &pows));
                    out.push(Entry {
                        bucket: r * b as usize + j as usize,
                        sign: s,
                    });
                }
                out
            }
            (Some(f), SketchVariant::BCountSketch) => {
                let mut out = Vec::with_capacity(2 * self.params.d / self.params.b + 4);
                for t in 0..self.params.d {
                    if flat_eval(&f.sel[t * f.ks..(t + 1) * f.ks], &pows) % b == 0 {
                        let s = sign_of(flat_eval(&f.sign[t * f.kg..(t + 1) * f.kg], &pows));
                        out.push(Entry { bucket: t, sign: s });
                    }
                }
                out
            }
            (None, SketchVariant::CountSketch) => (0..self.selectors.len())
                .map(|r| Entry {
                    bucket: r * b as usize + (self.selectors[r].raw(key) % b) as usize,
                    sign: self.signs[r].eval_sign(key),
                })
                .collect(),
            (None, SketchVariant::BCountSketch) => (0..self.params.d)
                .filter(|&t| self.selectors[t].raw(key) % b == 0)
                .map(|t| Entry {
                    bucket: t,
                    sign: self.signs[t].eval_sign(key),
                })
                .collect(),
        }
    }

    /// T_i in increasing order.
    pub fn participating_buckets(&self, key: u64) -> Result<Vec<usize>> {
        Ok(self.entries(key)?.iter().map(|e| e.bucket).collect())
    }

    pub fn new_state(&self, kind: CounterKind) -> SketchState {
        SketchState::zeros(self, kind)
    }

    pub fn sketch_vector(&self, v: &SparseVector) -> Result<SketchState> {
        self.sketch_vector_as(v, CounterKind::Float)
    }

    pub fn sketch_vector_as(&self, v: &SparseVector, kind: CounterKind) -> Result<SketchState> {
        let mut st = self.new_state(kind);
        for (key, val) in v.iter() {
            st.apply_update(self, key, val)?;
        }
        Ok(st)
    }
}

#[inline]
fn flat_eval(coeffs: &[u64], pows: &KeyPowers) -> u64 {
    crate::hashing::dot_mod(coeffs, pows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterKind {
    Float,
    Exact,
}

impl CounterKind {
    pub fn code(self) -> u8 {
        match self {
            CounterKind::Float => 0,
            CounterKind::Exact => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(CounterKind::Float),
            1 => Some(CounterKind::Exact),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Counters {
    Float(Vec<f64>),
    Exact(Vec<i64>),
}

/// The d bucket counters c_t = <mu_t, v>.
#[derive(Clone, Debug, PartialEq)]
pub struct SketchState {
    counters: Counters,
    fingerprint: u64,
}

impl SketchState {
    pub fn zeros(rand: &SketchRandomness, kind: CounterKind) -> Self {
        let d = rand.params.d;
        let counters = match kind {
            CounterKind::Float => Counters::Float(vec![0.0; d]),
            CounterKind::Exact => Counters::Exact(vec![0; d]),
        };
        SketchState {
            counters,
            fingerprint: rand.fingerprint,
        }
    }

    pub(crate) fn from_parts(counters: Counters, fingerprint: u64) -> Self {
        SketchState { counters, fingerprint }
    }

    pub fn kind(&self) -> CounterKind {
        match self.counters {
            Counters::Float(_) => CounterKind::Float,
            Counters::Exact(_) => CounterKind::Exact,
        }
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn len(&self) -> usize {
        match &self.counters {
            Counters::Float(c) => c.len(),
            Counters::Exact(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    #[inline]
    pub fn value(&self, t: usize) -> f64 {
        match &self.counters {
            Counters::Float(c) => c[t],
            Counters::Exact(c) => c[t] as f64,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.len()).map(|t| self.value(t)).collect()
    }

    pub fn check(&self, rand: &SketchRandomness) -> Result<()> {
        if self.fingerprint != rand.fingerprint || self.len() != rand.params.d {
            Err(Error::RandomnessMismatch)
        } else {
            Ok(())
        }
    }

    /// Adds `delta * e_key` to the sketched vector.
    pub fn apply_update(&mut self, rand: &SketchRandomness, key: u64, delta: f64) -> Result<()> {
        self.check(rand)?;
        let entries = rand.entries(key)?;
        self.apply_entries(&entries, delta)
    }

    /// Update with precomputed entries of the updated key.
    pub fn apply_entries(&mut self, entries: &[Entry], delta: f64) -> Result<()> {
        match &mut self.counters {
            Counters::Float(c) => {
                for e in entries {
                    c[e.bucket] += e.sign as f64 * delta;
                }
            }
            Counters::Exact(c) => {
                if delta.fract() != 0.0 || !delta.is_finite() || delta.abs() > i64::MAX as f64 {
                    return Err(Error::NonIntegral(delta));
                }
                let dv = delta as i64;
                for e in entries {
                    let inc = if e.sign > 0 { dv } else { dv.checked_neg().ok_or(Error::Overflow)? };
                    c[e.bucket] = c[e.bucket].checked_add(inc).ok_or(Error::Overflow)?;
                }
            }
        }
        Ok(())
    }

    /// V(i) restricted to the given entries.
    #[inline]
    pub fn signed_values<'a>(&'a self, entries: &'a [Entry]) -> impl Iterator<Item = f64> + 'a {
        entries.iter().map(move |e| e.sign as f64 * self.value(e.bucket))
    }

    /// Entrywise `self += alpha * other`; both must share randomness and counter kind.
    pub fn add_scaled(&mut self, other: &SketchState, alpha: f64) -> Result<()> {
        if self.fingerprint != other.fingerprint {
            return Err(Error::RandomnessMismatch);
        }
        match (&mut self.counters, &other.counters) {
            (Counters::Float(a), Counters::Float(b)) => {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += alpha * y);
            }
            (Counters::Exact(a), Counters::Exact(b)) => {
                if alpha.fract() != 0.0 {
                    return Err(Error::NonIntegral(alpha));
                }
                let k = alpha as i64;
                for (x, y) in a.iter_mut().zip(b) {
                    *x = y
                        .checked_mul(k)
                        .and_then(|p| x.checked_add(p))
                        .ok_or(Error::Overflow)?;
                }
            }
            _ => return Err(Error::param("counters", "counter kinds differ")),
        }
        Ok(())
    }
}

/// V(i) = { mu_t[i] c_t : t in T_i }, in bucket order.
pub fn bucket_estimates(rand: &SketchRandomness, state: &SketchState, key: u64) -> Result<Vec<f64>> {
    state.check(rand)?;
    let entries = rand.entries(key)?;
    Ok(state.signed_values(&entries).collect())
}
