//! Heterogeneous treatment effects for multiple correlated binary outcomes.
//!
//! Effects are modelled as a log ratio of outcome means between the two
//! treatment arms, linear in the covariates with a low-rank coefficient
//! matrix `Gamma = W V'`. Two identification strategies are provided:
//!
//! * the W-method, which weights each subject's logistic loss by its inverse
//!   assignment probability, and
//! * the A-learner, which scales the linear predictor by
//!   `(t + 1) / 2 - pi(x)` and needs a propensity-dependent bias correction.
//!
//! Both objectives are minimized by a majorization-minimization scheme whose
//! steps reduce to an orthogonal Procrustes problem for `V` and a weighted
//! least-squares solve for `W`.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod data;
pub mod effects;
pub mod error;
pub mod evaluation;
mod glm;
pub mod linalg;
pub mod losses;
pub mod realdata;
pub mod simulation;
pub mod solver;
pub mod study;

pub use data::{FactorizedCoefficients, PropensityMode, PropensityModel, TrialData};
pub use effects::{EffectMatrix, Method};
pub use error::{Error, Result};
pub use losses::Strategy;
pub use solver::{FitResult, SolverOptions};
