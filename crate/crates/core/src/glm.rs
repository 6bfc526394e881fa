//! Maximum-likelihood logistic regression by iteratively reweighted least
//! squares. Used for the propensity model and the full-interaction baseline.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug)]
pub(crate) struct LogisticFit {
    pub coefficients: DVector<f64>,
    /// Inverse Fisher information at the solution.
    pub covariance: DMatrix<f64>,
}

/// A linear predictor this large means a fitted probability within ~1e-13 of
/// 0 or 1, which only happens when the data are (quasi-)separated.
const SEPARATION_ETA: f64 = 30.0;

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Fits `P(y = 1) = sigmoid(design * beta)`.
///
/// `design` must already contain an intercept column if one is wanted.
/// Convergence is declared when the largest absolute coefficient change
/// falls below `tol`.
pub(crate) fn fit_logistic(
    design: &DMatrix<f64>,
    y: &DVector<f64>,
    max_iter: usize,
    tol: f64,
    what: &str,
) -> Result<LogisticFit> {
    let (n, k) = design.shape();
    if y.len() != n {
        return Err(Error::Dimension(format!(
            "{what}: design has {n} rows but response has {}",
            y.len()
        )));
    }
    let positives = y.iter().filter(|&&v| v > 0.5).count();
    if positives == 0 || positives == n {
        return Err(Error::Estimation(format!(
            "{what}: response is constant ({positives} of {n} positive), \
             the likelihood has no finite maximizer"
        )));
    }

    let mut beta = DVector::<f64>::zeros(k);
    for iter in 1..=max_iter {
        let eta = design * &beta;
        let mut grad = DVector::<f64>::zeros(k);
        let mut info = DMatrix::<f64>::zeros(k, k);
        for i in 0..n {
            let mu = sigmoid(eta[i]);
            let w = (mu * (1.0 - mu)).max(1e-12);
            let row = design.row(i);
            let resid = y[i] - mu;
            for a in 0..k {
                grad[a] += row[a] * resid;
                let ra = row[a] * w;
                for b in 0..=a {
                    info[(a, b)] += ra * row[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                info[(b, a)] = info[(a, b)];
            }
        }
        let chol = info
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Estimation(format!("{what}: information matrix is singular at iteration {iter}")))?;
        let step = chol.solve(&grad);
        if step.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{what}: IRLS step")));
        }
        beta += &step;
        let change = step.amax();
        if change < tol {
            let eta = design * &beta;
            if eta.amax() > SEPARATION_ETA {
                return Err(Error::Convergence {
                    what: format!("{what} (IRLS; fitted probabilities numerically 0 or 1, data separated)"),
                    max_iter,
                });
            }
            let covariance = chol.inverse();
            return Ok(LogisticFit {
                coefficients: beta,
                covariance,
            });
        }
    }
    Err(Error::Convergence {
        what: format!("{what} (IRLS; possible separation)"),
        max_iter,
    })
}
