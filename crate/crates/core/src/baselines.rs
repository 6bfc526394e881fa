//! Comparison estimators: the full interaction logistic model and the
//! per-outcome (separable) A-learner and W-method fits.

use nalgebra::{DMatrix, DVector};

use crate::data::TrialData;
use crate::effects::{EffectMatrix, Method};
use crate::error::{Error, Result};
use crate::glm;
use crate::linalg::conditioned_cholesky;
use crate::losses::{multiple_logistic_loss, sigmoid_neg, softplus, Strategy};

pub const FULL_MAX_ITER: usize = 200;
pub const FULL_TOL: f64 = 1e-8;

/// Per-outcome logistic regression of `Y_j` on `[1, X, t X]`.
#[derive(Debug, Clone)]
pub struct FullModelFit {
    pub intercepts: DVector<f64>,
    /// Main-effect coefficients, `p x m`.
    pub main: DMatrix<f64>,
    /// Treatment-interaction coefficients, `p x m`.
    pub interaction: DMatrix<f64>,
    /// Standard errors of `interaction`.
    pub interaction_se: DMatrix<f64>,
}

pub fn fit_full(data: &TrialData) -> Result<FullModelFit> {
    let (n, p, m) = (data.n(), data.p(), data.m());
    if data.case_weights().is_some() {
        return Err(Error::InvalidConfig(
            "the full model does not support case weights".into(),
        ));
    }
    let treated = data.t().iter().filter(|&&v| v == 1.0).count();
    if treated == 0 || treated == n {
        return Err(Error::Estimation("full model needs both treatment arms".into()));
    }
    let mut design = DMatrix::from_element(n, 1 + 2 * p, 1.0);
    for i in 0..n {
        let ti = data.t()[i];
        for k in 0..p {
            let xik = data.x()[(i, k)];
            design[(i, 1 + k)] = xik;
            design[(i, 1 + p + k)] = ti * xik;
        }
    }
    let mut intercepts = DVector::zeros(m);
    let mut main = DMatrix::zeros(p, m);
    let mut interaction = DMatrix::zeros(p, m);
    let mut interaction_se = DMatrix::zeros(p, m);
    for j in 0..m {
        let y = data.y().column(j).into_owned();
        let fit =
            glm::fit_logistic(&design, &y, FULL_MAX_ITER, FULL_TOL, "full model").map_err(|e| Error::Outcome {
                outcome: j,
                source: Box::new(e),
            })?;
        intercepts[j] = fit.coefficients[0];
        for k in 0..p {
            main[(k, j)] = fit.coefficients[1 + k];
            interaction[(k, j)] = fit.coefficients[1 + p + k];
            interaction_se[(k, j)] = fit.covariance[(1 + p + k, 1 + p + k)].sqrt();
        }
    }
    Ok(FullModelFit {
        intercepts,
        main,
        interaction,
        interaction_se,
    })
}

/// Log ratio of model-implied outcome means between the arms:
/// `log sigmoid(eta + c) - log sigmoid(eta - c)` with `eta = alpha + x'b`
/// and `c = x'c_j`.
pub fn full_effect(fit: &FullModelFit, x: &DMatrix<f64>) -> Result<EffectMatrix> {
    if x.ncols() != fit.main.nrows() {
        return Err(Error::Dimension(format!(
            "full model has {} covariates, X has {}",
            fit.main.nrows(),
            x.ncols()
        )));
    }
    let base = x * &fit.main;
    let inter = x * &fit.interaction;
    let h = DMatrix::from_fn(x.nrows(), fit.main.ncols(), |i, j| {
        let eta = fit.intercepts[j] + base[(i, j)];
        let c = inter[(i, j)];
        // log sigmoid(z) = -softplus(-z)
        softplus(-(eta - c)) - softplus(-(eta + c))
    });
    EffectMatrix::new(h, Method::Full)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparableOptions {
    pub tolerance: f64,
    pub max_iter: usize,
    pub ridge: f64,
}

impl Default for SeparableOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iter: 1000,
            ridge: 0.0,
        }
    }
}

/// Per-outcome coefficients from a separable fit.
#[derive(Debug, Clone)]
pub struct SeparableFit {
    pub strategy: Strategy,
    /// `p x m`, one column per outcome.
    pub gamma: DMatrix<f64>,
    pub objectives: Vec<f64>,
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
}

impl SeparableFit {
    pub fn objective(&self) -> f64 {
        self.objectives.iter().sum()
    }

    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|&c| c)
    }

    pub fn max_iterations(&self) -> usize {
        self.iterations.iter().copied().max().unwrap_or(0)
    }
}

/// Fits each outcome separately with the scalar-outcome version of the MM
/// scheme, starting from `gamma_j = 0`.
pub fn fit_separable(strategy: Strategy, data: &TrialData, options: &SeparableOptions) -> Result<SeparableFit> {
    if !(options.tolerance > 0.0) || options.max_iter == 0 {
        return Err(Error::InvalidConfig(
            "separable fit needs a positive tolerance and at least one iteration".into(),
        ));
    }
    let factors = strategy.row_factors(data)?;
    let x = data.x();
    let (n, p, m) = (data.n(), data.p(), data.m());

    let d2 = factors.weights.zip_map(&factors.scale, |w, s| w * s * s);
    let ws = factors.weights.component_mul(&factors.scale);
    let mut normal = x.transpose() * DMatrix::from_fn(n, p, |i, k| d2[i] * x[(i, k)]);
    let chol = if options.ridge > 0.0 {
        for k in 0..p {
            normal[(k, k)] += options.ridge;
        }
        conditioned_cholesky(&normal)?
    } else {
        match conditioned_cholesky(&normal) {
            Ok(c) => c,
            Err(Error::IllConditioned { condition }) => {
                let fallback = crate::solver::AUTO_RIDGE_FRACTION * normal.trace() / p as f64;
                if !(fallback > 0.0) {
                    return Err(Error::IllConditioned { condition });
                }
                log::warn!("separable fit: ill-conditioned normal equations, retrying with ridge {fallback:.3e}");
                for k in 0..p {
                    normal[(k, k)] += fallback;
                }
                conditioned_cholesky(&normal)?
            }
            Err(e) => return Err(e),
        }
    };
    // Rows of X scaled by w_i s_i, so X' diag(w s) z = xs' z.
    let xs = DMatrix::from_fn(n, p, |i, k| ws[i] * x[(i, k)]);

    let mut gamma = DMatrix::zeros(p, m);
    let mut objectives = vec![0.0; m];
    let mut iterations = vec![0; m];
    let mut converged = vec![false; m];

    for j in 0..m {
        let y = data.y().column(j).into_owned();
        let y_mat = DMatrix::from_column_slice(n, 1, y.as_slice());
        let objective = |g: &DVector<f64>| -> Result<f64> {
            let theta = (x * g).component_mul(&factors.scale);
            multiple_logistic_loss(
                &y_mat,
                &DMatrix::from_column_slice(n, 1, theta.as_slice()),
                &factors.weights,
            )
        };
        let mut g = DVector::zeros(p);
        let mut current = objective(&g)?;
        for iter in 1..=options.max_iter {
            iterations[j] = iter;
            let theta = (x * &g).component_mul(&factors.scale);
            let z = DVector::from_fn(n, |i, _| theta[i] + 4.0 * y[i] * sigmoid_neg(theta[i]));
            let next = chol.solve(&(xs.transpose() * z));
            let value = objective(&next)?;
            if value > current {
                converged[j] = true;
                break;
            }
            let decrease = current - value;
            g = next;
            current = value;
            if decrease < options.tolerance {
                converged[j] = true;
                break;
            }
        }
        gamma.set_column(j, &g);
        objectives[j] = current;
    }

    Ok(SeparableFit {
        strategy,
        gamma,
        objectives,
        iterations,
        converged,
    })
}

/// Per-outcome A-learner (`MA`).
pub fn fit_ma(data: &TrialData, options: &SeparableOptions) -> Result<SeparableFit> {
    fit_separable(Strategy::ALearner, data, options)
}

/// Per-outcome W-method (`MW`).
pub fn fit_mw(data: &TrialData, options: &SeparableOptions) -> Result<SeparableFit> {
    fit_separable(Strategy::WMethod, data, options)
}
