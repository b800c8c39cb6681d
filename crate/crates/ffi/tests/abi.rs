use std::ffi::CStr;
use std::ptr;

use robust_hh_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as std::ffi::c_char; 256];
    unsafe { rhh_last_error(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn sketch(exact: bool) -> *mut RhhSketch {
    let mut s = ptr::null_mut();
    let st = unsafe { rhh_sketch_new(RhhVariant::CountSketch, 1000, 60, 10, 5, exact, &mut s) };
    assert_eq!(st, RhhStatus::Ok);
    s
}

#[test]
fn single_key_estimate_is_exact() {
    let s = sketch(false);
    unsafe {
        assert_eq!(rhh_sketch_update(s, 7, 12.5), RhhStatus::Ok);
        let mut x = 0.0;
        assert_eq!(rhh_sketch_estimate(s, 7, &mut x), RhhStatus::Ok);
        assert_eq!(x, 12.5);
        rhh_sketch_free(s);
    }
}

#[test]
fn bad_parameters_set_status_and_message() {
    let mut s = ptr::null_mut();
    // 7 does not divide 60.
    let st = unsafe { rhh_sketch_new(RhhVariant::CountSketch, 1000, 60, 7, 5, false, &mut s) };
    assert_eq!(st, RhhStatus::InvalidArgument);
    assert!(s.is_null());
    assert!(!last_error().is_empty());
    let name = unsafe { CStr::from_ptr(rhh_status_name(st)) };
    assert_eq!(name.to_str().unwrap(), "invalid argument");
}

#[test]
fn null_handles_are_rejected() {
    unsafe {
        assert_eq!(rhh_sketch_update(ptr::null_mut(), 1, 1.0), RhhStatus::NullPointer);
        let s = sketch(false);
        assert_eq!(rhh_sketch_estimate(s, 1, ptr::null_mut()), RhhStatus::NullPointer);
        assert!(last_error().contains("out"));
        rhh_sketch_free(s);
        rhh_sketch_free(ptr::null_mut());
    }
}

#[test]
fn key_range_and_integrality() {
    let s = sketch(true);
    unsafe {
        assert_eq!(rhh_sketch_update(s, 1000, 1.0), RhhStatus::KeyOutOfRange);
        assert_eq!(rhh_sketch_update(s, 3, 0.5), RhhStatus::NonIntegral);
        assert_eq!(rhh_sketch_update(s, 3, 2.0), RhhStatus::Ok);
        assert_eq!(last_error(), "");
        rhh_sketch_free(s);
    }
}

#[test]
fn serialize_round_trip_and_buffer_sizing() {
    let s = sketch(false);
    let keys = [1u64, 2, 3, 4];
    let vals = [40.0, -3.0, 1.0, 2.0];
    unsafe {
        assert_eq!(rhh_sketch_update_batch(s, keys.as_ptr(), vals.as_ptr(), 4), RhhStatus::Ok);
        let mut len = 0;
        assert_eq!(rhh_sketch_serialize(s, ptr::null_mut(), 0, &mut len), RhhStatus::Ok);
        assert_eq!(len, 44 + 8 * 60);
        let mut small = vec![0u8; len - 1];
        assert_eq!(rhh_sketch_serialize(s, small.as_mut_ptr(), small.len(), &mut len), RhhStatus::BufferTooSmall);
        let mut buf = vec![0u8; len];
        assert_eq!(rhh_sketch_serialize(s, buf.as_mut_ptr(), buf.len(), &mut len), RhhStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(rhh_sketch_deserialize(buf.as_ptr(), buf.len(), &mut back), RhhStatus::Ok);
        for k in keys {
            let (mut a, mut b) = (0.0, 0.0);
            rhh_sketch_estimate(s, k, &mut a);
            rhh_sketch_estimate(back, k, &mut b);
            assert_eq!(a.to_bits(), b.to_bits());
        }
        buf[0] = b'X';
        let mut bad = ptr::null_mut();
        assert_eq!(rhh_sketch_deserialize(buf.as_ptr(), buf.len(), &mut bad), RhhStatus::Snapshot);
        rhh_sketch_free(s);
        rhh_sketch_free(back);
    }
}

#[test]
fn linear_combination_and_top_k() {
    let a = sketch(false);
    let b = sketch(false);
    unsafe {
        rhh_sketch_update(a, 1, 10.0);
        rhh_sketch_update(b, 1, 4.0);
        rhh_sketch_update(b, 2, 30.0);
        assert_eq!(rhh_sketch_add_scaled(a, b, -0.5), RhhStatus::Ok);
        let mut x = 0.0;
        rhh_sketch_estimate(a, 2, &mut x);
        assert_eq!(x, -15.0);
        let cands = [1u64, 2, 3];
        let (mut ks, mut vs, mut n) = ([0u64; 2], [0f64; 2], 0usize);
        let st = rhh_sketch_top_k(a, cands.as_ptr(), 3, 1, ks.as_mut_ptr(), vs.as_mut_ptr(), 2, &mut n);
        assert_eq!(st, RhhStatus::Ok);
        assert_eq!((n, ks[0], vs[0]), (1, 2, -15.0));
        // Different randomness.
        let mut c = ptr::null_mut();
        rhh_sketch_new(RhhVariant::CountSketch, 1000, 60, 10, 6, false, &mut c);
        assert_eq!(rhh_sketch_add_scaled(a, c, 1.0), RhhStatus::RandomnessMismatch);
        for h in [a, b, c] {
            rhh_sketch_free(h);
        }
    }
}

#[test]
fn robust_reports_single_heavy_key_without_noise() {
    let params = RhhRobustParams {
        variant: RhhVariant::BCountSketch,
        n: 1000,
        d: 400,
        b: 10,
        sketch_seed: 3,
        c_a: 50.0,
        c_b: 30.0,
        tau_a: 0.6,
        tau_b: 0.9,
        limit: 100,
        max_queries: 10,
        noise_seed: 0,
        zero_noise: true,
    };
    let mut r = ptr::null_mut();
    unsafe {
        assert_eq!(rhh_robust_new(&params, &mut r), RhhStatus::Ok);
        assert_eq!(rhh_robust_update(r, 5, 20.0), RhhStatus::Ok);
        let cands = [4u64, 5, 6];
        let (mut out, mut n) = ([0u64; 3], 0usize);
        assert_eq!(rhh_robust_report(r, cands.as_ptr(), 3, out.as_mut_ptr(), 3, &mut n), RhhStatus::Ok);
        assert_eq!(&out[..n], &[5]);
        let mut q = 0;
        assert_eq!(rhh_robust_queries(r, &mut q), RhhStatus::Ok);
        // Key 5 answers on its first query; keys 4 and 6 take both.
        assert_eq!(q, 5);
        rhh_robust_free(r);
        let bad = RhhRobustParams { tau_a: 0.95, ..params };
        assert_eq!(rhh_robust_new(&bad, &mut r), RhhStatus::InvalidArgument);
    }
}
