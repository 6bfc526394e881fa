mod common;

use common::random_trial;
use nalgebra::{DMatrix, DVector};
use rrhte::baselines::{fit_separable, SeparableOptions};
use rrhte::effects::{corrected_effect, corrected_effect_univariate, raw_effect, raw_effect_gamma};
use rrhte::losses::Strategy;
use rrhte::solver::{fit, SolverOptions};
use rrhte::{Method, TrialData};

fn tight(rank: usize) -> SolverOptions {
    let mut o = SolverOptions::new(rank);
    o.tolerance = 1e-13;
    o.max_iter = 200_000;
    o
}

fn tight_separable() -> SeparableOptions {
    SeparableOptions {
        tolerance: 1e-13,
        max_iter: 200_000,
        ridge: 0.0,
    }
}

fn half_propensity(data: &TrialData) -> TrialData {
    data.with_propensity(DVector::from_element(data.n(), 0.5)).unwrap()
}

fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).abs().max()
}

#[test]
fn alearner_at_half_propensity_is_scaled_wmethod() {
    let data = half_propensity(&random_trial(11, 300, 4, 3));
    let ma = fit_separable(Strategy::ALearner, &data, &tight_separable()).unwrap();
    let mw = fit_separable(Strategy::WMethod, &data, &tight_separable()).unwrap();
    assert!(max_abs_diff(&ma.gamma, &(&mw.gamma * 2.0)) < 1e-6);
    // objective identity: L_A(2 Gamma) = L_W(Gamma) / 2
    assert!((ma.objective() - mw.objective() / 2.0).abs() < 1e-9);

    let corrected = corrected_effect_univariate(&ma.gamma, data.x(), data.pi()).unwrap();
    let w = raw_effect_gamma(&mw.gamma, data.x(), Method::Mw).unwrap();
    assert!(max_abs_diff(&corrected.h, &w.h) < 1e-6);
}

#[test]
fn reduced_rank_alearner_at_half_propensity_matches_wmethod() {
    let data = half_propensity(&random_trial(12, 300, 5, 4));
    let a = fit(Strategy::ALearner, &data, &tight(2)).unwrap();
    let w = fit(Strategy::WMethod, &data, &tight(2)).unwrap();
    assert!((a.objective() - w.objective() / 2.0).abs() < 1e-8);
    let corrected = corrected_effect(&a.coeffs, data.x(), data.pi()).unwrap();
    let raw = raw_effect(&w.coeffs, data.x(), Method::R3w).unwrap();
    assert!(max_abs_diff(&corrected.h, &raw.h) < 1e-4);
}

#[test]
fn full_rank_fit_matches_separable_fit() {
    let data = random_trial(13, 250, 5, 3);
    for strategy in [Strategy::WMethod, Strategy::ALearner] {
        let rr = fit(strategy, &data, &tight(3)).unwrap();
        let sep = fit_separable(strategy, &data, &tight_separable()).unwrap();
        assert!((rr.objective() - sep.objective()).abs() < 1e-8, "{strategy:?}");
        assert!(max_abs_diff(&rr.coeffs.gamma(), &sep.gamma) < 1e-4, "{strategy:?}");
    }
}

#[test]
fn reduced_rank_objective_is_at_least_separable() {
    let data = random_trial(14, 250, 6, 5);
    let sep = fit_separable(Strategy::WMethod, &data, &tight_separable()).unwrap();
    for r in 1..=4 {
        let rr = fit(Strategy::WMethod, &data, &tight(r)).unwrap();
        assert!(rr.objective() >= sep.objective() - 1e-10, "rank {r}");
    }
}

#[test]
fn single_outcome_rank_one_equals_separable() {
    let data = random_trial(15, 200, 4, 1);
    let rr = fit(Strategy::WMethod, &data, &tight(1)).unwrap();
    let sep = fit_separable(Strategy::WMethod, &data, &tight_separable()).unwrap();
    assert!(max_abs_diff(&rr.coeffs.gamma(), &sep.gamma) < 1e-5);
    assert!((rr.coeffs.v()[(0, 0)].abs() - 1.0).abs() < 1e-12);
}

#[test]
fn permuting_outcomes_permutes_full_rank_solution() {
    let data = random_trial(16, 250, 4, 3);
    let order = [2, 0, 1];
    let permuted = data.select_outcomes(&order).unwrap();
    let a = fit(Strategy::WMethod, &data, &tight(3)).unwrap();
    let b = fit(Strategy::WMethod, &permuted, &tight(3)).unwrap();
    assert!((a.objective() - b.objective()).abs() < 1e-8);
    let ga = a.coeffs.gamma();
    let gb = b.coeffs.gamma();
    for (k, &j) in order.iter().enumerate() {
        assert!((ga.column(j) - gb.column(k)).abs().max() < 1e-4);
    }
}

#[test]
fn fitted_v_stays_orthonormal_and_trace_decreases() {
    let data = random_trial(17, 400, 8, 6);
    for strategy in [Strategy::WMethod, Strategy::ALearner] {
        let f = fit(strategy, &data, &SolverOptions::new(2)).unwrap();
        let v = f.coeffs.v();
        let gram = v.transpose() * v;
        assert!((gram - DMatrix::identity(2, 2)).abs().max() < 1e-8);
        for pair in f.objective_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12 * pair[0].abs().max(1.0));
        }
    }
}
