//! Flat binary snapshot of a sketch.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! 0   magic "RHHS"
//! 4   u16 version
//! 6   u8 variant, u8 counter kind, u8 selector degree, u8 sign degree, u8 hash mode, u8 reserved
//! 12  u64 n, u64 d, u64 b, u64 master seed
//! 44  d counters, 8 bytes each (f64 bits or i64)
//! ```

use crate::error::{Error, Result};
use crate::hashing::HashMode;

use super::{CounterKind, Counters, HashDegrees, SketchParams, SketchRandomness, SketchState, SketchVariant};

pub const SNAPSHOT_MAGIC: [u8; 4] = *b"RHHS";
pub const SNAPSHOT_VERSION: u16 = 1;
const HEADER_LEN: usize = 44;

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub variant: SketchVariant,
    pub params: SketchParams,
    pub degrees: HashDegrees,
    pub master_seed: u64,
    pub counters: Counters,
}

fn small(x: usize, name: &'static str) -> Result<u8> {
    u8::try_from(x).map_err(|_| Error::Snapshot(format!("{name} degree {x} does not fit in a byte")))
}

impl Snapshot {
    pub fn capture(rand: &SketchRandomness, state: &SketchState) -> Result<Self> {
        state.check(rand)?;
        Ok(Snapshot {
            variant: rand.variant(),
            params: rand.params(),
            degrees: rand.degrees(),
            master_seed: rand.master_seed(),
            counters: state.counters().clone(),
        })
    }

    pub fn counter_kind(&self) -> CounterKind {
        match self.counters {
            Counters::Float(_) => CounterKind::Float,
            Counters::Exact(_) => CounterKind::Exact,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let d = self.params.d;
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * d);
        out.extend_from_slice(&SNAPSHOT_MAGIC);
        out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        out.push(self.variant.code());
        out.push(self.counter_kind().code());
        out.push(small(self.degrees.selector, "selector")?);
        out.push(small(self.degrees.sign, "sign")?);
        out.push(self.degrees.mode.code());
        out.push(0);
        for x in [self.params.n, d as u64, self.params.b as u64, self.master_seed] {
            out.extend_from_slice(&x.to_le_bytes());
        }
        match &self.counters {
            Counters::Float(c) => c.iter().for_each(|x| out.extend_from_slice(&x.to_bits().to_le_bytes())),
            Counters::Exact(c) => c.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Snapshot(format!("truncated header ({} bytes)", bytes.len())));
        }
        if bytes[..4] != SNAPSHOT_MAGIC {
            return Err(Error::Snapshot("bad magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != SNAPSHOT_VERSION {
            return Err(Error::Snapshot(format!("unsupported version {version}")));
        }
        let variant = SketchVariant::from_code(bytes[6]).ok_or_else(|| Error::Snapshot("bad variant".into()))?;
        let kind = CounterKind::from_code(bytes[7]).ok_or_else(|| Error::Snapshot("bad counter kind".into()))?;
        let mode = HashMode::from_code(bytes[10]).ok_or_else(|| Error::Snapshot("bad hash mode".into()))?;
        let degrees = HashDegrees {
            selector: bytes[8] as usize,
            sign: bytes[9] as usize,
            mode,
        };
        let word = |i: usize| u64::from_le_bytes(bytes[12 + 8 * i..20 + 8 * i].try_into().unwrap());
        let (n, d, b, master_seed) = (word(0), word(1), word(2), word(3));
        let d = usize::try_from(d).map_err(|_| Error::Snapshot("d too large".into()))?;
        let body = &bytes[HEADER_LEN..];
        if body.len() != d.checked_mul(8).ok_or_else(|| Error::Snapshot("d too large".into()))? {
            return Err(Error::Snapshot(format!("expected {} counter bytes, found {}", 8 * d, body.len())));
        }
        let params = SketchParams::new(n, d, b as usize).map_err(|e| Error::Snapshot(e.to_string()))?;
        let raw = body.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap()));
        let counters = match kind {
            CounterKind::Float => Counters::Float(raw.map(f64::from_bits).collect()),
            CounterKind::Exact => Counters::Exact(raw.map(|x| x as i64).collect()),
        };
        Ok(Snapshot {
            variant,
            params,
            degrees,
            master_seed,
            counters,
        })
    }

    /// Rebuilds the randomness from the seed and attaches the stored counters.
    pub fn restore(&self) -> Result<(SketchRandomness, SketchState)> {
        let rand = SketchRandomness::new(self.variant, self.params, self.degrees, self.master_seed)?;
        let state = SketchState::from_parts(self.counters.clone(), rand.fingerprint());
        Ok((rand, state))
    }
}
