//! Seedable k-wise independent hash families.
//!
//! Polynomial mode evaluates a random degree-(k-1) polynomial over GF(P) with
//! P = 2^61 - 1. Fully-random mode draws an independent uniform value per key
//! and memoizes it.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The Mersenne prime 2^61 - 1.
pub const MERSENNE_61: u64 = (1u64 << 61) - 1;

/// Largest supported key width; keys must stay below P.
pub const MAX_DOMAIN_BITS: u32 = 60;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HashMode {
    Polynomial,
    FullyRandom,
}

impl HashMode {
    pub fn code(self) -> u8 {
        match self {
            HashMode::Polynomial => 0,
            HashMode::FullyRandom => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(HashMode::Polynomial),
            1 => Some(HashMode::FullyRandom),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashFamilySpec {
    /// Number of polynomial coefficients (k-wise independence).
    pub independence: usize,
    pub domain_bits: u32,
    pub mode: HashMode,
}

impl HashFamilySpec {
    pub fn polynomial(independence: usize, domain_bits: u32) -> Self {
        HashFamilySpec {
            independence,
            domain_bits,
            mode: HashMode::Polynomial,
        }
    }

    pub fn fully_random(domain_bits: u32) -> Self {
        HashFamilySpec {
            independence: 2,
            domain_bits,
            mode: HashMode::FullyRandom,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.independence < 2 {
            return Err(Error::param("independence", "must be at least 2"));
        }
        if self.domain_bits > MAX_DOMAIN_BITS {
            return Err(Error::param(
                "domain_bits",
                format!("must be at most {MAX_DOMAIN_BITS}"),
            ));
        }
        Ok(())
    }
}

#[inline]
fn reduce(x: u128) -> u64 {
    // x < 2^122 for products of two residues; two folds suffice.
    let lo = (x as u64) & MERSENNE_61;
    let hi = (x >> 61) as u64;
    let mut s = lo + (hi & MERSENNE_61) + (hi >> 61);
    s = (s & MERSENNE_61) + (s >> 61);
    if s >= MERSENNE_61 {
        s - MERSENNE_61
    } else {
        s
    }
}

#[inline]
pub fn mul_mod(a: u64, b: u64) -> u64 {
    reduce(a as u128 * b as u128)
}

#[inline]
pub fn add_mod(a: u64, b: u64) -> u64 {
    let s = a + b;
    if s >= MERSENNE_61 {
        s - MERSENNE_61
    } else {
        s
    }
}

/// Horner evaluation of `coeffs` (lowest degree first) at `x` modulo an arbitrary prime `p`.
///
/// Slow generic path, used to check the construction over small fields.
pub fn poly_eval_mod(coeffs: &[u64], x: u64, p: u64) -> u64 {
    let x = (x % p) as u128;
    let p = p as u128;
    coeffs
        .iter()
        .rev()
        .fold(0u128, |acc, &c| (acc * x + c as u128 % p) % p) as u64
}

/// Powers 1, x, x^2, ... of a key modulo P, shared across many hash functions.
#[derive(Clone, Debug)]
pub struct KeyPowers {
    pub key: u64,
    pows: Vec<u64>,
}

impl KeyPowers {
    pub fn new(key: u64, degree: usize) -> Self {
        let x = key % MERSENNE_61;
        let mut pows = Vec::with_capacity(degree.max(1));
        let mut acc = 1u64;
        for _ in 0..degree.max(1) {
            pows.push(acc);
            acc = mul_mod(acc, x);
        }
        KeyPowers { key, pows }
    }

    pub fn len(&self) -> usize {
        self.pows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pows.is_empty()
    }
}

enum Inner {
    Poly(Box<[u64]>),
    Memo(Mutex<HashMap<u64, u64>>),
}

pub struct HashFunction {
    spec: HashFamilySpec,
    seed: u64,
    inner: Inner,
}

impl Clone for HashFunction {
    fn clone(&self) -> Self {
        let inner = match &self.inner {
            Inner::Poly(c) => Inner::Poly(c.clone()),
            Inner::Memo(m) => Inner::Memo(Mutex::new(m.lock().expect("memo poisoned").clone())),
        };
        HashFunction {
            spec: self.spec,
            seed: self.seed,
            inner,
        }
    }
}

impl std::fmt::Debug for HashFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HashFunction")
            .field("spec", &self.spec)
            .field("seed", &self.seed)
            .finish_non_exhaustive()
    }
}

/// Builds a hash function whose coefficients are derived from `seed`.
pub fn make_hash(spec: HashFamilySpec, seed: u64) -> Result<HashFunction> {
    spec.validate()?;
    let inner = match spec.mode {
        HashMode::Polynomial => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let coeffs: Box<[u64]> = (0..spec.independence)
                .map(|_| rng.random_range(0..MERSENNE_61))
                .collect();
            Inner::Poly(coeffs)
        }
        HashMode::FullyRandom => Inner::Memo(Mutex::new(HashMap::new())),
    };
    Ok(HashFunction { spec, seed, inner })
}

fn fully_random_value(seed: u64, key: u64) -> u64 {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&key.to_le_bytes());
    bytes[16] = 0xA5;
    ChaCha8Rng::from_seed(bytes).random_range(0..MERSENNE_61)
}

impl HashFunction {
    pub fn spec(&self) -> HashFamilySpec {
        self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Polynomial coefficients, lowest degree first. `None` in fully-random mode.
    pub fn coefficients(&self) -> Option<&[u64]> {
        match &self.inner {
            Inner::Poly(c) => Some(c),
            Inner::Memo(_) => None,
        }
    }

    /// Raw hash value in [0, P).
    pub fn raw(&self, key: u64) -> u64 {
        match &self.inner {
            Inner::Poly(c) => {
                let x = key % MERSENNE_61;
                c.iter().rev().fold(0u64, |acc, &a| add_mod(mul_mod(acc, x), a))
            }
            Inner::Memo(m) => {
                let mut memo = m.lock().expect("memo poisoned");
                *memo
                    .entry(key)
                    .or_insert_with(|| fully_random_value(self.seed, key))
            }
        }
    }

    /// Raw hash value using precomputed key powers; identical to [`raw`](Self::raw).
    #[inline]
    pub fn raw_with_powers(&self, p: &KeyPowers) -> u64 {
        match &self.inner {
            Inner::Poly(c) if c.len() <= p.pows.len() && c.len() <= 32 => dot_mod(c, p),
            _ => self.raw(p.key),
        }
    }

    pub fn eval_selector(&self, key: u64, b: u64) -> Result<bool> {
        if b == 0 {
            return Err(Error::param("b", "must be positive"));
        }
        Ok(self.raw(key) % b == 0)
    }

    pub fn eval_sign(&self, key: u64) -> i8 {
        sign_of(self.raw(key))
    }

    /// Raw value reduced to [0, range).
    pub fn eval_range(&self, key: u64, range: u64) -> Result<u64> {
        if range == 0 {
            return Err(Error::param("range", "must be positive"));
        }
        Ok(self.raw(key) % range)
    }
}

/// sum_j coeffs[j] * x^j mod P. Requires `coeffs.len() <= min(pows.len(), 32)`.
#[inline]
pub fn dot_mod(coeffs: &[u64], pows: &KeyPowers) -> u64 {
    debug_assert!(coeffs.len() <= pows.pows.len() && coeffs.len() <= 32);
    let acc: u128 = coeffs
        .iter()
        .zip(&pows.pows)
        .map(|(&a, &x)| a as u128 * x as u128)
        .sum();
    reduce_wide(acc)
}

#[inline]
fn reduce_wide(x: u128) -> u64 {
    // Sum of up to 32 products stays below 2^127.
    let lo = (x as u64) & MERSENNE_61;
    let hi = x >> 61;
    let mid = (hi as u64) & MERSENNE_61;
    let top = (hi >> 61) as u64;
    let s = lo + mid + top;
    let s = (s & MERSENNE_61) + (s >> 61);
    if s >= MERSENNE_61 {
        s - MERSENNE_61
    } else {
        s
    }
}

#[inline]
pub fn sign_of(raw: u64) -> i8 {
    if raw & 1 == 0 {
        1
    } else {
        -1
    }
}
