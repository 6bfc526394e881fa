//! Helpers shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rrhte::data::center_columns;
use rrhte::TrialData;

/// Random trial with centered uniform covariates, Bernoulli(0.5) outcomes
/// and treatment, and propensities in `[0.2, 0.8]`.
pub fn random_trial(seed: u64, n: usize, p: usize, m: usize) -> TrialData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = center_columns(&DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal))).unwrap();
    let y = DMatrix::from_fn(n, m, |_, _| if rng.random::<bool>() { 1.0 } else { 0.0 });
    let t = DVector::from_fn(n, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 });
    let pi = DVector::from_fn(n, |_, _| rng.random_range(0.2..0.8));
    TrialData::new(x, y, t, pi).unwrap()
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-row weight and predictor scale, from the textbook definitions.
pub fn row_terms(data: &TrialData, w_method: bool) -> Vec<(f64, f64)> {
    (0..data.n())
        .map(|i| {
            let (t, pi) = (data.t()[i], data.pi()[i]);
            let case = data.case_weights().map_or(1.0, |c| c[i]);
            if w_method {
                let a = if t > 0.0 { 1.0 / pi } else { 1.0 / (1.0 - pi) };
                (case * a, t)
            } else {
                let q = if t > 0.0 { 1.0 - pi } else { -pi };
                (case, q)
            }
        })
        .collect()
}

/// Objective and gradient over an unstructured `p x m` matrix by scalar loops.
pub fn objective_and_gradient(data: &TrialData, w_method: bool, gamma: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let (p, m) = (data.p(), data.m());
    let rows = row_terms(data, w_method);
    let mut value = 0.0;
    let mut grad = DMatrix::zeros(p, m);
    for (i, &(w, s)) in rows.iter().enumerate() {
        for j in 0..m {
            if data.y()[(i, j)] == 0.0 {
                continue;
            }
            let mut u = 0.0;
            for k in 0..p {
                u += data.x()[(i, k)] * gamma[(k, j)];
            }
            value += w * softplus(-s * u);
            let d = -w * s * sigmoid(-s * u);
            for k in 0..p {
                grad[(k, j)] += d * data.x()[(i, k)];
            }
        }
    }
    (value, grad)
}

/// Gradient descent with Barzilai-Borwein steps safeguarded by Armijo
/// backtracking, from `gamma = 0`.
pub fn oracle_minimum(data: &TrialData, w_method: bool, grad_tol: f64, max_iter: usize) -> (f64, DMatrix<f64>) {
    let mut gamma = DMatrix::zeros(data.p(), data.m());
    let (mut f, mut g) = objective_and_gradient(data, w_method, &gamma);
    let mut step = 1e-3;
    for _ in 0..max_iter {
        if g.amax() < grad_tol {
            break;
        }
        let gg = g.norm_squared();
        let mut s = step;
        let (next, f_next, g_next) = loop {
            let cand = &gamma - &g * s;
            let (fc, gc) = objective_and_gradient(data, w_method, &cand);
            if fc <= f - 1e-4 * s * gg || s < 1e-16 {
                break (cand, fc, gc);
            }
            s *= 0.5;
        };
        let ds = &next - &gamma;
        let dg = &g_next - &g;
        let curv = ds.dot(&dg);
        step = if curv > 0.0 { ds.norm_squared() / curv } else { s * 2.0 };
        gamma = next;
        f = f_next;
        g = g_next;
    }
    (f, gamma)
}
