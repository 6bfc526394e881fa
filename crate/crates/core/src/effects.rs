//! Per-subject, per-outcome treatment effects on the log mean-ratio scale.
//!
//! A-learner fits estimate a score `u` whose relation to the log ratio of
//! arm means carries a propensity-dependent offset:
//!
//! ```text
//! log E[Y | T = 1, x] / E[Y | T = -1, x]
//!     = u + log (1 + exp(-(1 - pi) u)) / (1 + exp(pi u))
//! ```
//!
//! W-method fits need no such correction.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::data::FactorizedCoefficients;
use crate::error::{Error, Result};
use crate::losses::softplus;

/// The estimators compared in the simulation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Full,
    Ma,
    MaMod,
    Mw,
    R3a,
    R3aMod,
    R3w,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Full,
        Method::Ma,
        Method::MaMod,
        Method::Mw,
        Method::R3a,
        Method::R3aMod,
        Method::R3w,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Full => "Full",
            Method::Ma => "MA",
            Method::MaMod => "MAmod",
            Method::Mw => "MW",
            Method::R3a => "R3A",
            Method::R3aMod => "R3Amod",
            Method::R3w => "R3W",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown method '{s}', expected one of Full, MA, MAmod, MW, R3A, R3Amod, R3W"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectMatrix {
    pub h: DMatrix<f64>,
    pub method: Method,
}

impl EffectMatrix {
    pub fn new(h: DMatrix<f64>, method: Method) -> Result<Self> {
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{method} effect matrix")));
        }
        Ok(Self { h, method })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.h.shape()
    }
}

fn check_x(p: usize, x: &DMatrix<f64>) -> Result<()> {
    if x.ncols() != p {
        return Err(Error::Dimension(format!(
            "coefficients expect {p} covariates, X has {}",
            x.ncols()
        )));
    }
    Ok(())
}

/// `X W V'`.
pub fn raw_effect(coeffs: &FactorizedCoefficients, x: &DMatrix<f64>, method: Method) -> Result<EffectMatrix> {
    check_x(coeffs.p(), x)?;
    EffectMatrix::new((x * coeffs.w()) * coeffs.v().transpose(), method)
}

/// `X Gamma` for an unstructured coefficient matrix.
pub fn raw_effect_gamma(gamma: &DMatrix<f64>, x: &DMatrix<f64>, method: Method) -> Result<EffectMatrix> {
    check_x(gamma.nrows(), x)?;
    EffectMatrix::new(x * gamma, method)
}

/// `log(1 + exp(-(1 - pi) u)) - log(1 + exp(pi u))`.
///
/// Evaluated as `softplus(-(1 - pi) u) - softplus(-pi u) - pi u`, which is
/// exactly `-u / 2` when `pi = 1/2`.
pub fn bias_term(u: f64, pi: f64) -> f64 {
    let a = (1.0 - pi) * u;
    let b = pi * u;
    (softplus(-a) - softplus(-b)) - b
}

/// `u + bias_term(u, pi)`.
pub fn corrected_score(u: f64, pi: f64) -> f64 {
    u + bias_term(u, pi)
}

fn correct_rows(raw: &DMatrix<f64>, pi: &DVector<f64>, method: Method) -> Result<EffectMatrix> {
    if pi.len() != raw.nrows() {
        return Err(Error::Dimension(format!(
            "{} subjects but {} propensity scores",
            raw.nrows(),
            pi.len()
        )));
    }
    if let Some(index) = pi.iter().position(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::Positivity {
            index,
            value: pi[index],
        });
    }
    let h = DMatrix::from_fn(raw.nrows(), raw.ncols(), |i, j| corrected_score(raw[(i, j)], pi[i]));
    EffectMatrix::new(h, method)
}

/// Bias-corrected effects from a reduced-rank A-learner fit.
pub fn corrected_effect(coeffs: &FactorizedCoefficients, x: &DMatrix<f64>, pi: &DVector<f64>) -> Result<EffectMatrix> {
    let raw = raw_effect(coeffs, x, Method::R3aMod)?;
    correct_rows(&raw.h, pi, Method::R3aMod)
}

/// Bias-corrected effects from per-outcome A-learner coefficients.
pub fn corrected_effect_univariate(gamma: &DMatrix<f64>, x: &DMatrix<f64>, pi: &DVector<f64>) -> Result<EffectMatrix> {
    let raw = raw_effect_gamma(gamma, x, Method::MaMod)?;
    correct_rows(&raw.h, pi, Method::MaMod)
}

/// Rank-`r` factorization of `gamma` with orthonormal `V`, from its SVD
/// `gamma = U S R'`: `W = U_r S_r`, `V = R_r`.
pub fn refactor(gamma: &DMatrix<f64>, rank: usize) -> Result<FactorizedCoefficients> {
    let (p, m) = gamma.shape();
    if rank == 0 || rank > p.min(m) {
        return Err(Error::Dimension(format!("rank {rank} must lie in 1..=min({p}, {m})")));
    }
    let svd = gamma.clone().svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Estimation("SVD produced no U".into()))?;
    let v_t = svd.v_t.ok_or_else(|| Error::Estimation("SVD produced no V".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let keep = &order[..rank];
    let mut w = DMatrix::zeros(p, rank);
    let mut v = DMatrix::zeros(m, rank);
    for (k, &idx) in keep.iter().enumerate() {
        w.set_column(k, &(u.column(idx) * svd.singular_values[idx]));
        v.set_column(k, &v_t.row(idx).transpose());
    }
    FactorizedCoefficients::new(w, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_bias(u: f64, pi: f64) -> f64 {
        ((1.0 + (-(1.0 - pi) * u).exp()) / (1.0 + (pi * u).exp())).ln()
    }

    fn random_coeffs(rng: &mut ChaCha8Rng, p: usize, m: usize, r: usize) -> FactorizedCoefficients {
        let w = DMatrix::from_fn(p, r, |_, _| rng.random_range(-1.0..1.0));
        let v = crate::linalg::orthonormal_factor(&DMatrix::from_fn(m, r, |_, _| rng.random_range(-1.0..1.0)));
        FactorizedCoefficients::new(w, v).unwrap()
    }

    #[test]
    fn raw_effect_examples() {
        let c =
            FactorizedCoefficients::new(DMatrix::from_element(1, 1, 3.0), DMatrix::from_element(1, 1, 1.0)).unwrap();
        let h = raw_effect(&c, &DMatrix::from_element(1, 1, 2.0), Method::R3w).unwrap();
        assert_eq!(h.h[(0, 0)], 6.0);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = random_coeffs(&mut rng, 3, 4, 2);
        let x = DMatrix::from_fn(5, 3, |_, _| rng.random_range(-1.0..1.0));
        let h = raw_effect(&c, &x, Method::R3w).unwrap();
        for i in 0..5 {
            for j in 0..4 {
                let mut s = 0.0;
                for a in 0..3 {
                    for k in 0..2 {
                        s += x[(i, a)] * c.w()[(a, k)] * c.v()[(j, k)];
                    }
                }
                assert!((h.h[(i, j)] - s).abs() < 1e-12);
            }
        }
        let zero = FactorizedCoefficients::new(DMatrix::zeros(3, 2), c.v().clone()).unwrap();
        assert!(raw_effect(&zero, &x, Method::R3w).unwrap().h.iter().all(|&v| v == 0.0));
        assert!(raw_effect(&c, &DMatrix::zeros(5, 2), Method::R3w).is_err());
    }

    #[test]
    fn bias_term_examples() {
        assert_eq!(bias_term(0.0, 0.3), 0.0);
        for u in [-7.5, -1.0, 0.25, 3.0, 40.0] {
            assert_eq!(bias_term(u, 0.5), -u / 2.0);
            assert_eq!(corrected_score(u, 0.5), u / 2.0);
        }
        assert!((bias_term(1.0, 0.3) - (-0.451_169_195_583_069_34)).abs() < 1e-12);
    }

    #[test]
    fn bias_term_matches_naive_form_on_moderate_inputs() {
        for &u in &[-5.0, -1.3, 0.7, 4.2] {
            for &pi in &[0.05, 0.3, 0.5, 0.81] {
                assert!((bias_term(u, pi) - naive_bias(u, pi)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bias_term_is_finite_for_extreme_scores() {
        assert!(bias_term(1e4, 0.2).is_finite());
        assert!(bias_term(-1e4, 0.9).is_finite());
    }

    #[test]
    fn half_propensity_halves_effects() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = random_coeffs(&mut rng, 4, 3, 2);
        let x = DMatrix::from_fn(6, 4, |_, _| rng.random_range(-2.0..2.0));
        let pi = DVector::from_element(6, 0.5);
        let raw = raw_effect(&c, &x, Method::R3a).unwrap();
        let corrected = corrected_effect(&c, &x, &pi).unwrap();
        assert_eq!(corrected.h, raw.h / 2.0);
        let g = c.gamma();
        let uni = corrected_effect_univariate(&g, &x, &pi).unwrap();
        assert_eq!(uni.h, raw_effect_gamma(&g, &x, Method::Ma).unwrap().h / 2.0);
    }

    #[test]
    fn zero_scores_stay_zero() {
        let x = DMatrix::from_element(3, 2, 1.0);
        let pi = DVector::from_vec(vec![0.2, 0.5, 0.9]);
        let h = corrected_effect_univariate(&DMatrix::zeros(2, 4), &x, &pi).unwrap();
        assert!(h.h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn corrected_paths_agree_with_scalar_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = random_coeffs(&mut rng, 3, 5, 2);
        let x = DMatrix::from_fn(7, 3, |_, _| rng.random_range(-2.0..2.0));
        let pi = DVector::from_fn(7, |_, _| rng.random_range(0.05..0.95));
        let a = corrected_effect(&c, &x, &pi).unwrap();
        let b = corrected_effect_univariate(&c.gamma(), &x, &pi).unwrap();
        for i in 0..7 {
            for j in 0..5 {
                let mut u = 0.0;
                for k in 0..3 {
                    u += x[(i, k)] * c.gamma()[(k, j)];
                }
                let expect = u + naive_bias(u, pi[i]);
                assert!((a.h[(i, j)] - expect).abs() < 1e-12);
                assert!((a.h[(i, j)] - b.h[(i, j)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn correction_rejects_boundary_propensity() {
        let x = DMatrix::from_element(2, 1, 1.0);
        let pi = DVector::from_vec(vec![0.5, 1.0]);
        assert!(corrected_effect_univariate(&DMatrix::from_element(1, 1, 1.0), &x, &pi).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("causal-forest".parse::<Method>().is_err());
    }

    #[test]
    fn refactor_recovers_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = random_coeffs(&mut rng, 5, 4, 2);
        let g = c.gamma();
        let re = refactor(&g, 2).unwrap();
        assert!((re.gamma() - g).amax() < 1e-12);
    }

    proptest! {
        #[test]
        fn bias_term_decreases_in_score(pi in 0.01f64..0.99, u in -20.0f64..20.0, du in 0.001f64..1.0) {
            prop_assert!(bias_term(u + du, pi) < bias_term(u, pi));
        }

        #[test]
        fn bias_opposes_score(pi in 0.01f64..0.99, u in -20.0f64..20.0) {
            prop_assume!(u.abs() > 1e-6);
            prop_assert!(bias_term(u, pi) * u < 0.0);
        }
    }
}
