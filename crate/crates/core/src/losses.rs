//! The one-sided multiple logistic loss and the W-method / A-learner
//! objectives built from it.

use nalgebra::{DMatrix, DVector};

use crate::data::{a_scalings, w_weights, FactorizedCoefficients, TrialData};
use crate::error::{Error, Result};

/// Identification strategy for the treatment effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    /// Inverse-probability weighted loss with `t`-signed predictors.
    WMethod,
    /// Unweighted loss with predictors scaled by `(t + 1) / 2 - pi`.
    ALearner,
}

/// Per-subject loss weights and predictor scalings for a strategy.
///
/// W-method: weights `a_i`, scale `t_i`. A-learner: weights `1`, scale `q_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct RowFactors {
    pub weights: DVector<f64>,
    pub scale: DVector<f64>,
}

impl Strategy {
    /// Case weights, when present, multiply the strategy's weights.
    pub fn row_factors(self, data: &TrialData) -> Result<RowFactors> {
        let mut factors = match self {
            Strategy::WMethod => RowFactors {
                weights: w_weights(data.t(), data.pi())?,
                scale: data.t().clone(),
            },
            Strategy::ALearner => RowFactors {
                weights: DVector::from_element(data.n(), 1.0),
                scale: a_scalings(data.t(), data.pi())?,
            },
        };
        if let Some(case) = data.case_weights() {
            factors.weights.component_mul_assign(case);
        }
        Ok(factors)
    }
}

/// `Theta_ij = s_i * (X W V')_ij` for a strategy's row scale `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPredictor(DMatrix<f64>);

impl LinearPredictor {
    pub fn new(x: &DMatrix<f64>, gamma: &DMatrix<f64>, scale: &DVector<f64>) -> Result<Self> {
        if x.ncols() != gamma.nrows() || x.nrows() != scale.len() {
            return Err(Error::Dimension(format!(
                "X is {}x{}, Gamma is {}x{}, scale has {} entries",
                x.nrows(),
                x.ncols(),
                gamma.nrows(),
                gamma.ncols(),
                scale.len()
            )));
        }
        let mut theta = x * gamma;
        for (mut row, s) in theta.row_iter_mut().zip(scale.iter()) {
            row *= *s;
        }
        Ok(Self(theta))
    }

    pub fn for_coefficients(coeffs: &FactorizedCoefficients, data: &TrialData, scale: &DVector<f64>) -> Result<Self> {
        check_dims(coeffs, data)?;
        Self::new(data.x(), &coeffs.gamma(), scale)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `sum_i weights_i sum_j Y_ij log(1 + exp(-Theta_ij))`.
///
/// Entries with `Y_ij = 0` contribute nothing.
pub fn multiple_logistic_loss(y: &DMatrix<f64>, theta: &DMatrix<f64>, weights: &DVector<f64>) -> Result<f64> {
    if y.shape() != theta.shape() || weights.len() != y.nrows() {
        return Err(Error::Dimension(format!(
            "Y is {:?}, Theta is {:?}, weights has {} entries",
            y.shape(),
            theta.shape(),
            weights.len()
        )));
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("linear predictor".into()));
    }
    let (n, m) = y.shape();
    let mut total = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..m {
            if y[(i, j)] != 0.0 {
                row += y[(i, j)] * softplus(-theta[(i, j)]);
            }
        }
        total += weights[i] * row;
    }
    Ok(total)
}

fn check_dims(coeffs: &FactorizedCoefficients, data: &TrialData) -> Result<()> {
    if coeffs.p() != data.p() || coeffs.m() != data.m() {
        return Err(Error::Dimension(format!(
            "coefficients are for p = {}, m = {} but data has p = {}, m = {}",
            coeffs.p(),
            coeffs.m(),
            data.p(),
            data.m()
        )));
    }
    Ok(())
}

/// Objective for a strategy with precomputed row factors.
pub fn loss_with_factors(coeffs: &FactorizedCoefficients, data: &TrialData, factors: &RowFactors) -> Result<f64> {
    let theta = LinearPredictor::for_coefficients(coeffs, data, &factors.scale)?;
    multiple_logistic_loss(data.y(), theta.matrix(), &factors.weights)
}

pub fn loss(strategy: Strategy, coeffs: &FactorizedCoefficients, data: &TrialData) -> Result<f64> {
    loss_with_factors(coeffs, data, &strategy.row_factors(data)?)
}

/// W-method objective `L_W`.
pub fn loss_w(coeffs: &FactorizedCoefficients, data: &TrialData) -> Result<f64> {
    loss(Strategy::WMethod, coeffs, data)
}

/// A-learner objective `L_A`.
pub fn loss_a(coeffs: &FactorizedCoefficients, data: &TrialData) -> Result<f64> {
    loss(Strategy::ALearner, coeffs, data)
}

/// Derivative of the objective with respect to each linear predictor entry,
/// pushed back through the row scale: `R_ij = -w_i s_i y_ij sigmoid(-Theta_ij)`.
fn predictor_sensitivity(y: &DMatrix<f64>, theta: &DMatrix<f64>, factors: &RowFactors) -> DMatrix<f64> {
    DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| {
        let yij = y[(i, j)];
        if yij == 0.0 {
            0.0
        } else {
            -factors.weights[i] * factors.scale[i] * yij * sigmoid_neg(theta[(i, j)])
        }
    })
}

/// `exp(-x) / (1 + exp(-x))`.
pub(crate) fn sigmoid_neg(x: f64) -> f64 {
    crate::glm::sigmoid(-x)
}

/// Analytic gradient of the objective with respect to `W` and an
/// unconstrained `V`.
pub fn loss_gradient(
    strategy: Strategy,
    coeffs: &FactorizedCoefficients,
    data: &TrialData,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let factors = strategy.row_factors(data)?;
    let theta = LinearPredictor::for_coefficients(coeffs, data, &factors.scale)?;
    let r = predictor_sensitivity(data.y(), theta.matrix(), &factors);
    let xt_r = data.x().transpose() * &r;
    let d_w = &xt_r * coeffs.v();
    let d_v = xt_r.transpose() * coeffs.w();
    Ok((d_w, d_v))
}

/// Gradient of the objective over an unstructured `p x m` coefficient matrix.
pub fn loss_gradient_gamma(strategy: Strategy, gamma: &DMatrix<f64>, data: &TrialData) -> Result<DMatrix<f64>> {
    let factors = strategy.row_factors(data)?;
    let theta = LinearPredictor::new(data.x(), gamma, &factors.scale)?;
    let r = predictor_sensitivity(data.y(), theta.matrix(), &factors);
    Ok(data.x().transpose() * r)
}

/// Objective over an unstructured `p x m` coefficient matrix.
pub fn loss_gamma(strategy: Strategy, gamma: &DMatrix<f64>, data: &TrialData) -> Result<f64> {
    let factors = strategy.row_factors(data)?;
    let theta = LinearPredictor::new(data.x(), gamma, &factors.scale)?;
    multiple_logistic_loss(data.y(), theta.matrix(), &factors.weights)
}
