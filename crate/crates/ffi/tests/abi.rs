use std::ffi::CStr;
use std::ptr;

use nalgebra::{DMatrix, DVector};
use rrhte::data::center_columns;
use rrhte::solver::{fit, SolverOptions};
use rrhte::{Strategy, TrialData};
use rrhte_ffi::*;

const N: usize = 120;
const P: usize = 4;
const M: usize = 3;

struct Inputs {
    x: Vec<f64>,
    y: Vec<f64>,
    t: Vec<f64>,
    pi: Vec<f64>,
}

// small LCG so the test needs no RNG crate
fn inputs() -> Inputs {
    let mut s: u64 = 0x2545_f491_4f6c_dd1d;
    let mut next = || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (s >> 11) as f64 / (1u64 << 53) as f64
    };
    let x: Vec<f64> = (0..N * P).map(|_| next() * 2.0 - 1.0).collect();
    let y = (0..N * M).map(|_| if next() < 0.6 { 1.0 } else { 0.0 }).collect();
    let t = (0..N).map(|_| if next() < 0.5 { 1.0 } else { -1.0 }).collect();
    let pi = (0..N).map(|_| 0.3 + 0.4 * next()).collect();
    Inputs { x, y, t, pi }
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(rrhte_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

fn new_data(inp: &Inputs) -> *mut RrhteData {
    let mut data = ptr::null_mut();
    let st = unsafe {
        rrhte_data_new(
            N,
            P,
            M,
            inp.x.as_ptr(),
            inp.y.as_ptr(),
            inp.t.as_ptr(),
            inp.pi.as_ptr(),
            1,
            &mut data,
        )
    };
    assert_eq!(st, RrhteStatus::Ok, "{}", last_error());
    data
}

#[test]
fn fit_round_trip_matches_library() {
    let inp = inputs();
    let data = new_data(&inp);
    let mut f = ptr::null_mut();
    let st = unsafe { rrhte_fit(data, RrhteStrategy::ALearner, 2, 0.0, 0, 7, 0.0, &mut f) };
    assert_eq!(st, RrhteStatus::Ok, "{}", last_error());
    assert_eq!(last_error(), "");

    let x = center_columns(&DMatrix::from_row_slice(N, P, &inp.x)).unwrap();
    let trial = TrialData::new(
        x.clone(),
        DMatrix::from_row_slice(N, M, &inp.y),
        DVector::from_vec(inp.t.clone()),
        DVector::from_vec(inp.pi.clone()),
    )
    .unwrap();
    let mut options = SolverOptions::new(2);
    options.init_seed = 7;
    let expected = fit(Strategy::ALearner, &trial, &options).unwrap();

    let (mut p, mut m, mut r) = (0, 0, 0);
    assert_eq!(unsafe { rrhte_fit_dims(f, &mut p, &mut m, &mut r) }, RrhteStatus::Ok);
    assert_eq!((p, m, r), (P, M, 2));

    let mut w = vec![0.0; P * 2];
    let mut v = vec![0.0; M * 2];
    assert_eq!(unsafe { rrhte_fit_w(f, w.as_mut_ptr(), w.len()) }, RrhteStatus::Ok);
    assert_eq!(unsafe { rrhte_fit_v(f, v.as_mut_ptr(), v.len()) }, RrhteStatus::Ok);
    assert_eq!(DMatrix::from_row_slice(P, 2, &w), *expected.coeffs.w());
    assert_eq!(DMatrix::from_row_slice(M, 2, &v), *expected.coeffs.v());

    let mut iterations = 0;
    let mut converged = false;
    let mut objective = 0.0;
    unsafe {
        assert_eq!(rrhte_fit_iterations(f, &mut iterations), RrhteStatus::Ok);
        assert_eq!(rrhte_fit_converged(f, &mut converged), RrhteStatus::Ok);
        assert_eq!(rrhte_fit_objective(f, &mut objective), RrhteStatus::Ok);
    }
    assert_eq!(iterations, expected.iterations);
    assert_eq!(converged, expected.converged);
    assert_eq!(objective, expected.objective());

    // effects on the centered covariates, row-major
    let xc: Vec<f64> = (0..N)
        .flat_map(|i| (0..P).map(move |k| (i, k)))
        .map(|(i, k)| x[(i, k)])
        .collect();
    let raw = (&x * expected.coeffs.w()) * expected.coeffs.v().transpose();
    let mut h = vec![0.0; N * M];
    let st = unsafe { rrhte_effects(f, xc.as_ptr(), N, P, ptr::null(), 0, h.as_mut_ptr(), h.len()) };
    assert_eq!(st, RrhteStatus::Ok, "{}", last_error());
    let h_raw = DMatrix::from_row_slice(N, M, &h);
    assert!((h_raw - &raw).abs().max() < 1e-12);

    let st = unsafe { rrhte_effects(f, xc.as_ptr(), N, P, inp.pi.as_ptr(), 1, h.as_mut_ptr(), h.len()) };
    assert_eq!(st, RrhteStatus::Ok);
    for i in 0..N {
        for j in 0..M {
            let u = raw[(i, j)];
            let want = u + rrhte_bias_term(u, inp.pi[i]);
            assert!((h[i * M + j] - want).abs() < 1e-12);
        }
    }

    unsafe {
        rrhte_fit_free(f);
        rrhte_data_free(data);
    }
}

#[test]
fn error_statuses() {
    let inp = inputs();
    let mut data = ptr::null_mut();
    let st = unsafe {
        rrhte_data_new(
            N,
            P,
            M,
            ptr::null(),
            inp.y.as_ptr(),
            inp.t.as_ptr(),
            inp.pi.as_ptr(),
            1,
            &mut data,
        )
    };
    assert_eq!(st, RrhteStatus::NullPointer);
    assert!(data.is_null());
    assert!(last_error().contains('x'));

    let mut bad_pi = inp.pi.clone();
    bad_pi[3] = 1.0;
    let st = unsafe {
        rrhte_data_new(
            N,
            P,
            M,
            inp.x.as_ptr(),
            inp.y.as_ptr(),
            inp.t.as_ptr(),
            bad_pi.as_ptr(),
            1,
            &mut data,
        )
    };
    assert_eq!(st, RrhteStatus::InvalidArgument);
    assert!(!last_error().is_empty());

    let data = new_data(&inp);
    let mut f = ptr::null_mut();
    let st = unsafe { rrhte_fit(data, RrhteStrategy::WMethod, M + 1, 0.0, 0, 1, 0.0, &mut f) };
    assert_ne!(st, RrhteStatus::Ok);
    assert!(f.is_null());

    let st = unsafe { rrhte_fit(data, RrhteStrategy::WMethod, 1, 0.0, 0, 1, 0.0, &mut f) };
    assert_eq!(st, RrhteStatus::Ok);
    let mut small = vec![0.0; P - 1];
    assert_eq!(
        unsafe { rrhte_fit_w(f, small.as_mut_ptr(), small.len()) },
        RrhteStatus::BufferTooSmall
    );
    assert_eq!(unsafe { rrhte_fit_w(f, ptr::null_mut(), P) }, RrhteStatus::NullPointer);
    assert_eq!(
        unsafe { rrhte_fit_v(ptr::null(), small.as_mut_ptr(), 0) },
        RrhteStatus::NullPointer
    );

    let x = vec![0.0; N * (P + 1)];
    let mut h = vec![0.0; N * M];
    let st = unsafe { rrhte_effects(f, x.as_ptr(), N, P + 1, ptr::null(), 0, h.as_mut_ptr(), h.len()) };
    assert_eq!(st, RrhteStatus::Dimension);
    let st = unsafe { rrhte_effects(f, x.as_ptr(), N, P, ptr::null(), 1, h.as_mut_ptr(), h.len()) };
    assert_eq!(st, RrhteStatus::NullPointer);

    unsafe {
        rrhte_fit_free(f);
        rrhte_data_free(data);
        rrhte_fit_free(ptr::null_mut());
        rrhte_data_free(ptr::null_mut());
    }
}

#[test]
fn bias_term_is_half_at_even_odds() {
    for u in [-3.0, -0.5, 0.0, 1.25, 8.0] {
        assert_eq!(rrhte_bias_term(u, 0.5), -u / 2.0);
    }
    // log((1 + e^{-0.8}) / (1 + e^{0.2})) at u = 1, pi = 0.2
    let want = ((1.0 + (-0.8f64).exp()) / (1.0 + 0.2f64.exp())).ln();
    assert!((rrhte_bias_term(1.0, 0.2) - want).abs() < 1e-15);
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/rrhte.h")).unwrap();
    for name in [
        "rrhte_data_new",
        "rrhte_data_free",
        "rrhte_fit(",
        "rrhte_fit_free",
        "rrhte_fit_dims",
        "rrhte_fit_w",
        "rrhte_fit_v",
        "rrhte_fit_iterations",
        "rrhte_fit_converged",
        "rrhte_fit_objective",
        "rrhte_effects",
        "rrhte_bias_term",
        "rrhte_last_error_message",
        "RRHTE_STATUS_BUFFER_TOO_SMALL",
        "RRHTE_STRATEGY_A_LEARNER",
        "typedef struct RrhteData RrhteData",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = std::process::Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler on PATH; header compile check skipped");
        return;
    };
    assert!(cc.status.success());
    let dir = tempfile_dir();
    let src = dir.join("use_header.c");
    std::fs::write(
        &src,
        "#include \"rrhte.h\"\nint main(void) {\n  RrhteData *d = 0;\n  RrhteStatus s = RRHTE_STATUS_OK;\n  (void)d; (void)s;\n  return (int)rrhte_bias_term(0.0, 0.5);\n}\n",
    )
    .unwrap();
    let out = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::path::PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("header_check");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
