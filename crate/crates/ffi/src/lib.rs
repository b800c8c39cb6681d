//! C ABI over the sketch, the median estimator and the robust threshold estimator.
//!
//! Every call returns an [`RhhStatus`]. On failure the message is kept per thread and
//! can be copied out with [`rhh_last_error`]. Handles are opaque and owned by the
//! caller, who releases them with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use robust_hh::dp::{LaplaceNoise, NoiseSource, ZeroNoise};
use robust_hh::estimators::{median_estimate, median_topk, EstimatorConstants};
use robust_hh::robust::{RobustConfig, RobustEstimatorState};
use robust_hh::sketch::{init_sketch, CounterKind, SketchParams, SketchRandomness, SketchState, SketchVariant, Snapshot};
use robust_hh::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RhhStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    KeyOutOfRange = 3,
    EstimateUnavailable = 4,
    RandomnessMismatch = 5,
    NonIntegral = 6,
    Overflow = 7,
    Snapshot = 8,
    BufferTooSmall = 9,
    Protocol = 10,
    Panic = 11,
    Internal = 12,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RhhVariant {
    CountSketch = 0,
    BCountSketch = 1,
}

impl From<RhhVariant> for SketchVariant {
    fn from(v: RhhVariant) -> Self {
        match v {
            RhhVariant::CountSketch => SketchVariant::CountSketch,
            RhhVariant::BCountSketch => SketchVariant::BCountSketch,
        }
    }
}

/// A sketch: randomness plus counters.
pub struct RhhSketch {
    rand: SketchRandomness,
    state: SketchState,
}

/// The DP-robust threshold estimator over its own sketch.
pub struct RhhRobust {
    est: RobustEstimatorState,
    state: SketchState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = CString::new(msg.into().replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(s));
}

fn status_of(e: &Error) -> RhhStatus {
    match e {
        Error::Parameter { .. } | Error::Config { .. } => RhhStatus::InvalidArgument,
        Error::KeyOutOfRange { .. } | Error::BucketOutOfRange { .. } => RhhStatus::KeyOutOfRange,
        Error::EstimateUnavailable(_) => RhhStatus::EstimateUnavailable,
        Error::RandomnessMismatch => RhhStatus::RandomnessMismatch,
        Error::NonIntegral(_) => RhhStatus::NonIntegral,
        Error::Overflow => RhhStatus::Overflow,
        Error::Snapshot(_) => RhhStatus::Snapshot,
        Error::Protocol(_) => RhhStatus::Protocol,
        _ => RhhStatus::Internal,
    }
}

enum Fail {
    Status(RhhStatus, String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn null(what: &str) -> Fail {
    Fail::Status(RhhStatus::NullPointer, format!("`{what}` is null"))
}

/// Runs `f`, turning errors and panics into a status plus the per-thread message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RhhStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            RhhStatus::Ok
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("panic inside robust-hh");
            RhhStatus::Panic
        }
    }
}

unsafe fn obj<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn obj_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn put<T>(out: *mut T, v: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

/// Copies the last error message of this thread into `buf` (NUL-terminated, truncated
/// to `cap`). Returns the full message length without the NUL, 0 when there is none.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn rhh_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else {
            if !buf.is_null() && cap > 0 {
                *buf = 0;
            }
            return 0;
        };
        let bytes = msg.as_bytes();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn rhh_status_name(status: RhhStatus) -> *const c_char {
    let s: &'static [u8] = match status {
        RhhStatus::Ok => b"ok\0",
        RhhStatus::NullPointer => b"null pointer\0",
        RhhStatus::InvalidArgument => b"invalid argument\0",
        RhhStatus::KeyOutOfRange => b"key out of range\0",
        RhhStatus::EstimateUnavailable => b"estimate unavailable\0",
        RhhStatus::RandomnessMismatch => b"randomness mismatch\0",
        RhhStatus::NonIntegral => b"non-integral value\0",
        RhhStatus::Overflow => b"overflow\0",
        RhhStatus::Snapshot => b"bad snapshot\0",
        RhhStatus::BufferTooSmall => b"buffer too small\0",
        RhhStatus::Protocol => b"protocol error\0",
        RhhStatus::Panic => b"panic\0",
        RhhStatus::Internal => b"internal error\0",
    };
    s.as_ptr() as *const c_char
}

// ---- sketch ----

/// Creates an empty sketch. `exact` selects integer counters.
///
/// # Safety
/// `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn rhh_sketch_new(
    variant: RhhVariant,
    n: u64,
    d: usize,
    b: usize,
    seed: u64,
    exact: bool,
    out: *mut *mut RhhSketch,
) -> RhhStatus {
    guard(|| {
        let rand = init_sketch(variant.into(), SketchParams::new(n, d, b)?, seed)?;
        let state = rand.new_state(if exact { CounterKind::Exact } else { CounterKind::Float });
        put(out, Box::into_raw(Box::new(RhhSketch { rand, state })), "out")
    })
}

/// Releases a sketch; null is ignored.
///
/// # Safety
/// `sketch` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rhh_sketch_free(sketch: *mut RhhSketch) {
    if !sketch.is_null() {
        drop(Box::from_raw(sketch));
    }
}

/// Adds `delta` to coordinate `key`.
///
/// # Safety
/// `sketch` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn rhh_sketch_update(sketch: *mut RhhSketch, key: u64, delta: f64) -> RhhStatus {
    guard(|| {
        let s = obj_mut(sketch, "sketch")?;
        s.state.apply_update(&s.rand, key, delta)?;
        Ok(())
    })
}

/// `len` updates at once; stops at the first failing one.
///
/// # Safety
/// `keys` and `deltas` must each point to `len` readable elements.
#[no_mangle]
pub unsafe extern "C" fn rhh_sketch_update_batch(
    sketch: *mut RhhSketch,
    keys: *const u64,
    deltas: *const f64,
    len: usize,
) -> RhhStatus {
    guard(|| {
        let s = obj_mut(sketch, "sketch")?;
        let keys = input(keys, len, "keys")?;
        let deltas = input(deltas, len, "deltas")?;
        for (&k, &x) in keys.iter().zip(deltas) {
            s.state.apply_update(&s.rand, k, x)?;
        }
        Ok(())
    })
}

/// `dst += alpha * src`; both must share randomness.
///
/// # Safety
/// Both handles must be live.
#[no_mangle]
pub unsafe extern "C" fn rhh_sketch_add_scaled(dst: *mut RhhSketch, src: *const RhhSketch, alpha: f64) -> RhhStatus {
    guard(|| {
        let src = obj(src, "src")?.state.clone();
        let d = obj_mut(dst, "dst")?;
        d.state.add_scaled(&src, alpha)?;
        Ok(())
    })
}

/// Median-of-participating-buckets estimate of `key`.
///
/// # Safety
/// `sketch` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rhh_sketch_estimate(sketch: *const RhhSketch, key: u64, out: *mut f64) -> RhhStatus {
    guard(|| {
        let s = obj(sketch, "sketch")?;
        put(out, median_estimate(&s.rand, &s.state, key)?, "out")
    })
}

/// Top `k` of `candidates` by estimate magnitude. Writes up to `cap` pairs and the
/// count to `out_len`.
///
/// # Safety
/// `candidates` must hold `len` keys; `out_keys` and `out_values` must hold `cap` elements.
#[no_mangle]
pub unsafe extern "C" fn rhh_sketch_top_k(
    sketch: *const RhhSketch,
    candidates: *const u64,
    len: usize,
    k: usize,
    out_keys: *mut u64,
    out_values: *mut f64,
    cap: usize,
    out_len: *mut usize,
) -> RhhStatus {
    guard(|| {
        let s = obj(sketch, "sketch")?;
        let cands = input(candidates, len, "candidates")?;
        let best = median_topk(&s.rand, &s.state, k, cands.iter().copied())?;
        put(out_len, best.len(), "out_len")?;
        if best.len() > cap {
            return Err(Fail::Status(
                RhhStatus::BufferTooSmall,
                format!("{} results, capacity {cap}", best.len()),
            ));
        }
        if !best.is_empty() && (out_keys.is_null() || out_values.is_null()) {
            return Err(null("out_keys/out_values"));
        }
        for (j, (key, x)) in best.into_iter().enumerate() {
            *out_keys.add(j) = key;
            *out_values.add(j) = x;
        }
        Ok(())
    })
}

/// Serializes the sketch. With `buf` null or too small, only `out_len` is set and
/// the status is `BufferTooSmall` when `buf` was given.
///
/// # Safety
/// `buf` must be null or hold `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn rhh_sketch_serialize(
    sketch: *const RhhSketch,
    buf: *mut u8,
    cap: usize,
    out_len: *mut usize,
) -> RhhStatus {
    guard(|| {
        let s = obj(sketch, "sketch")?;
        let bytes = Snapshot::capture(&s.rand, &s.state)?.to_bytes()?;
        put(out_len, bytes.len(), "out_len")?;
        if buf.is_null() {
            return Ok(());
        }
        if bytes.len() > cap {
            return Err(Fail::Status(
                RhhStatus::BufferTooSmall,
                format!("snapshot needs {} bytes, capacity {cap}", bytes.len()),
            ));
        }
        ptr::copy_nonoverlapping(bytes.as_ptr(), buf, bytes.len());
        Ok(())
    })
}

/// Restores a sketch from snapshot bytes.
///
/// # Safety
/// `buf` must hold `len` readable bytes and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rhh_sketch_deserialize(buf: *const u8, len: usize, out: *mut *mut RhhSketch) -> RhhStatus {
    guard(|| {
        let bytes = input(buf, len, "buf")?;
        let (rand, state) = Snapshot::from_bytes(bytes)?.restore()?;
        put(out, Box::into_raw(Box::new(RhhSketch { rand, state })), "out")
    })
}

// ---- robust estimator ----

/// Parameters of [`rhh_robust_new`].
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct RhhRobustParams {
    pub variant: RhhVariant,
    pub n: u64,
    pub d: usize,
    pub b: usize,
    pub sketch_seed: u64,
    pub c_a: f64,
    pub c_b: f64,
    pub tau_a: f64,
    pub tau_b: f64,
    /// Per-bucket budget L.
    pub limit: u64,
    /// Planned number of robust queries Q; enters the privacy delta.
    pub max_queries: u64,
    /// Seed of the Laplace noise; ignored when `zero_noise` is set.
    pub noise_seed: u64,
    pub zero_noise: bool,
}

/// Creates a robust estimator over an empty float sketch.
///
/// # Safety
/// `params` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rhh_robust_new(params: *const RhhRobustParams, out: *mut *mut RhhRobust) -> RhhStatus {
    guard(|| {
        let p = *obj(params, "params")?;
        let constants = EstimatorConstants {
            c_a: p.c_a,
            c_b: p.c_b,
            tau_a: p.tau_a,
            tau_b: p.tau_b,
        };
        constants.validate()?;
        let rand = init_sketch(p.variant.into(), SketchParams::new(p.n, p.d, p.b)?, p.sketch_seed)?;
        let state = rand.new_state(CounterKind::Float);
        let noise: Box<dyn NoiseSource> = if p.zero_noise {
            Box::new(ZeroNoise)
        } else {
            Box::new(LaplaceNoise::new(p.noise_seed))
        };
        let est = RobustEstimatorState::new(rand, RobustConfig::new(constants, p.limit, p.max_queries), noise)?;
        put(out, Box::into_raw(Box::new(RhhRobust { est, state })), "out")
    })
}

/// # Safety
/// `robust` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rhh_robust_free(robust: *mut RhhRobust) {
    if !robust.is_null() {
        drop(Box::from_raw(robust));
    }
}

/// Adds `delta` to coordinate `key` of the estimator's sketch.
///
/// # Safety
/// `robust` must be live.
#[no_mangle]
pub unsafe extern "C" fn rhh_robust_update(robust: *mut RhhRobust, key: u64, delta: f64) -> RhhStatus {
    guard(|| {
        let r = obj_mut(robust, "robust")?;
        r.state.apply_update(r.est.rand(), key, delta)?;
        Ok(())
    })
}

/// Robust threshold report over `candidates`. Reported keys go to `out_keys`
/// (ascending), their count to `out_len`.
///
/// # Safety
/// `candidates` must hold `len` keys and `out_keys` `cap` elements.
#[no_mangle]
pub unsafe extern "C" fn rhh_robust_report(
    robust: *mut RhhRobust,
    candidates: *const u64,
    len: usize,
    out_keys: *mut u64,
    cap: usize,
    out_len: *mut usize,
) -> RhhStatus {
    guard(|| {
        let r = obj_mut(robust, "robust")?;
        let cands = input(candidates, len, "candidates")?;
        let report = r.est.robust_threshold_query(&r.state, cands.iter().copied())?;
        put(out_len, report.keys.len(), "out_len")?;
        if report.keys.len() > cap {
            return Err(Fail::Status(
                RhhStatus::BufferTooSmall,
                format!("{} keys reported, capacity {cap}", report.keys.len()),
            ));
        }
        if !report.keys.is_empty() && out_keys.is_null() {
            return Err(null("out_keys"));
        }
        for (j, k) in report.keys.iter().enumerate() {
            *out_keys.add(j) = *k;
        }
        Ok(())
    })
}

/// Threshold queries answered so far.
///
/// # Safety
/// `robust` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rhh_robust_queries(robust: *const RhhRobust, out: *mut u64) -> RhhStatus {
    guard(|| {
        let r = obj(robust, "robust")?;
        put(out, r.est.monitor().queries(), "out")
    })
}
