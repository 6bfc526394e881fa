//! Trial data, factorized coefficients and propensity models.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::glm;

/// Propensity predictions are clamped to `[PROPENSITY_FLOOR, 1 - PROPENSITY_FLOOR]`
/// so inverse-probability weights stay below `1e6`.
pub const PROPENSITY_FLOOR: f64 = 1e-6;

const CENTERING_TOL: f64 = 1e-10;
const ORTHONORMAL_TOL: f64 = 1e-8;

/// Covariates, binary outcomes, treatment signs and propensity scores for one
/// trial. Covariate columns are mean-zero; treatment is coded `-1`/`+1`.
#[derive(Debug, Clone)]
pub struct TrialData {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    t: DVector<f64>,
    pi: DVector<f64>,
    case_weights: Option<DVector<f64>>,
}

impl TrialData {
    /// Builds trial data from covariates that are already centered.
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>, t: DVector<f64>, pi: DVector<f64>) -> Result<Self> {
        let n = x.nrows();
        if y.nrows() != n || t.len() != n || pi.len() != n {
            return Err(Error::Dimension(format!(
                "X has {n} rows, Y has {}, t has {}, pi has {}",
                y.nrows(),
                t.len(),
                pi.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("covariate matrix".into()));
        }
        for (j, col) in x.column_iter().enumerate() {
            let scale = col.amax().max(1.0);
            let mean = col.sum() / n as f64;
            if mean.abs() > CENTERING_TOL * scale {
                return Err(Error::Validation(format!(
                    "covariate column {j} is not centered (mean {mean:e})"
                )));
            }
        }
        if let Some((k, v)) = y.iter().enumerate().find(|(_, &v)| v != 0.0 && v != 1.0) {
            return Err(Error::Validation(format!(
                "outcome entry {k} (column-major) is {v}, expected 0 or 1"
            )));
        }
        if let Some((i, v)) = t.iter().enumerate().find(|(_, &v)| v != 1.0 && v != -1.0) {
            return Err(Error::Validation(format!(
                "treatment at row {i} is {v}, expected -1 or +1"
            )));
        }
        check_positivity(&pi)?;
        Ok(Self {
            x,
            y,
            t,
            pi,
            case_weights: None,
        })
    }

    /// Centers `x_raw` column-wise and builds trial data from it.
    pub fn from_raw(x_raw: &DMatrix<f64>, y: DMatrix<f64>, t: DVector<f64>, pi: DVector<f64>) -> Result<Self> {
        Self::new(center_columns(x_raw)?, y, t, pi)
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn t(&self) -> &DVector<f64> {
        &self.t
    }

    pub fn pi(&self) -> &DVector<f64> {
        &self.pi
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn m(&self) -> usize {
        self.y.ncols()
    }

    /// The same subjects restricted to a subset of outcome columns.
    pub fn select_outcomes(&self, columns: &[usize]) -> Result<Self> {
        if let Some(&bad) = columns.iter().find(|&&j| j >= self.m()) {
            return Err(Error::Dimension(format!(
                "outcome index {bad} out of range for {} outcomes",
                self.m()
            )));
        }
        Ok(Self {
            x: self.x.clone(),
            y: self.y.select_columns(columns),
            t: self.t.clone(),
            pi: self.pi.clone(),
            case_weights: self.case_weights.clone(),
        })
    }

    /// Replaces the propensity scores.
    pub fn with_propensity(&self, pi: DVector<f64>) -> Result<Self> {
        let mut out = Self::new(self.x.clone(), self.y.clone(), self.t.clone(), pi)?;
        out.case_weights = self.case_weights.clone();
        Ok(out)
    }

    /// Attaches non-negative frequency weights that multiply each subject's
    /// loss term under either strategy.
    pub fn with_case_weights(mut self, weights: DVector<f64>) -> Result<Self> {
        if weights.len() != self.n() {
            return Err(Error::Dimension(format!(
                "{} case weights for {} subjects",
                weights.len(),
                self.n()
            )));
        }
        if let Some(i) = weights.iter().position(|&w| !(w.is_finite() && w >= 0.0)) {
            return Err(Error::Validation(format!(
                "case weight at row {i} is {}, expected a finite non-negative value",
                weights[i]
            )));
        }
        self.case_weights = Some(weights);
        Ok(self)
    }

    pub fn case_weights(&self) -> Option<&DVector<f64>> {
        self.case_weights.as_ref()
    }
}

/// Converts a 0/1 treatment indicator to the `-1`/`+1` coding.
pub fn treatment_from_binary(t01: &[f64]) -> Result<DVector<f64>> {
    t01.iter()
        .enumerate()
        .map(|(i, &v)| {
            if v == 1.0 {
                Ok(1.0)
            } else if v == 0.0 {
                Ok(-1.0)
            } else {
                Err(Error::Validation(format!(
                    "treatment at row {i} is {v}, expected 0 or 1"
                )))
            }
        })
        .collect::<Result<Vec<_>>>()
        .map(DVector::from_vec)
}

/// Low-rank coefficients `Gamma = W V'` with orthonormal columns in `V`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedCoefficients {
    w: DMatrix<f64>,
    v: DMatrix<f64>,
}

impl FactorizedCoefficients {
    pub fn new(w: DMatrix<f64>, v: DMatrix<f64>) -> Result<Self> {
        let r = w.ncols();
        if v.ncols() != r {
            return Err(Error::Dimension(format!("W has {r} columns but V has {}", v.ncols())));
        }
        if r == 0 || r > w.nrows().min(v.nrows()) {
            return Err(Error::Dimension(format!(
                "rank {r} must lie in 1..=min(p = {}, m = {})",
                w.nrows(),
                v.nrows()
            )));
        }
        let gram = v.transpose() * &v;
        let dev = (gram - DMatrix::<f64>::identity(r, r)).amax();
        if dev > ORTHONORMAL_TOL {
            return Err(Error::Validation(format!(
                "V columns are not orthonormal (max |V'V - I| = {dev:e})"
            )));
        }
        Ok(Self { w, v })
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn rank(&self) -> usize {
        self.w.ncols()
    }

    pub fn p(&self) -> usize {
        self.w.nrows()
    }

    pub fn m(&self) -> usize {
        self.v.nrows()
    }

    /// `W V'`, the `p x m` coefficient matrix.
    pub fn gamma(&self) -> DMatrix<f64> {
        &self.w * self.v.transpose()
    }

    pub fn into_parts(self) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.w, self.v)
    }
}

/// How propensity scores are obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PropensityMode {
    /// A known constant, as in a randomized trial.
    Constant(f64),
    /// The sample proportion of treated subjects.
    EmpiricalRct,
    /// Logistic regression of the treatment indicator on the covariates.
    Logistic,
}

/// A fitted propensity model.
#[derive(Debug, Clone, PartialEq)]
pub enum PropensityModel {
    Constant(f64),
    EmpiricalRct(f64),
    /// Intercept first, then one coefficient per covariate.
    Logistic(DVector<f64>),
}

impl PropensityModel {
    /// Propensity scores for the rows of `x`.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        let n = x.nrows();
        match self {
            PropensityModel::Constant(c) | PropensityModel::EmpiricalRct(c) => Ok(DVector::from_element(n, *c)),
            PropensityModel::Logistic(coef) => {
                if coef.len() != x.ncols() + 1 {
                    return Err(Error::Dimension(format!(
                        "logistic propensity has {} coefficients for {} covariates",
                        coef.len(),
                        x.ncols()
                    )));
                }
                Ok(DVector::from_iterator(
                    n,
                    x.row_iter().map(|row| {
                        let eta = coef[0] + row.iter().zip(coef.iter().skip(1)).map(|(a, b)| a * b).sum::<f64>();
                        glm::sigmoid(eta).clamp(PROPENSITY_FLOOR, 1.0 - PROPENSITY_FLOOR)
                    }),
                ))
            }
        }
    }
}

/// Subtracts each column's mean.
pub fn center_columns(x_raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = x_raw.nrows();
    if n < 2 {
        return Err(Error::DegenerateInput(format!(
            "centering needs at least 2 rows, got {n}"
        )));
    }
    let mut x = x_raw.clone();
    for mut col in x.column_iter_mut() {
        let mean = col.sum() / n as f64;
        col.add_scalar_mut(-mean);
    }
    Ok(x)
}

fn check_positivity(pi: &DVector<f64>) -> Result<()> {
    match pi.iter().position(|&p| !(p > 0.0 && p < 1.0)) {
        Some(index) => Err(Error::Positivity {
            index,
            value: pi[index],
        }),
        None => Ok(()),
    }
}

fn check_signs(t: &DVector<f64>, pi: &DVector<f64>) -> Result<()> {
    if t.len() != pi.len() {
        return Err(Error::Dimension(format!(
            "t has {} entries but pi has {}",
            t.len(),
            pi.len()
        )));
    }
    check_positivity(pi)
}

/// Inverse assignment probabilities: `1 / pi` for treated subjects and
/// `1 / (1 - pi)` for controls.
pub fn w_weights(t: &DVector<f64>, pi: &DVector<f64>) -> Result<DVector<f64>> {
    check_signs(t, pi)?;
    Ok(t.zip_map(pi, |ti, p| 1.0 / (ti * p + (1.0 - ti) / 2.0)))
}

/// Predictor scalings `(t + 1) / 2 - pi`: `1 - pi` for treated subjects and
/// `-pi` for controls.
pub fn a_scalings(t: &DVector<f64>, pi: &DVector<f64>) -> Result<DVector<f64>> {
    check_signs(t, pi)?;
    Ok(t.zip_map(pi, |ti, p| (ti + 1.0) / 2.0 - p))
}

/// IRLS settings for the logistic propensity model.
pub const PROPENSITY_MAX_ITER: usize = 100;
pub const PROPENSITY_TOL: f64 = 1e-8;

pub fn estimate_propensity(x: &DMatrix<f64>, t: &DVector<f64>, mode: PropensityMode) -> Result<PropensityModel> {
    if x.nrows() != t.len() {
        return Err(Error::Dimension(format!(
            "X has {} rows but t has {}",
            x.nrows(),
            t.len()
        )));
    }
    let treated = t.iter().filter(|&&v| v == 1.0).count();
    let both_arms = treated > 0 && treated < t.len();
    match mode {
        PropensityMode::Constant(c) => {
            if !(c > 0.0 && c < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "constant propensity {c} must lie in (0, 1)"
                )));
            }
            Ok(PropensityModel::Constant(c))
        }
        PropensityMode::EmpiricalRct => {
            if !both_arms {
                return Err(Error::Estimation(
                    "empirical propensity needs both treatment arms".into(),
                ));
            }
            Ok(PropensityModel::EmpiricalRct(treated as f64 / t.len() as f64))
        }
        PropensityMode::Logistic => {
            if !both_arms {
                return Err(Error::Estimation(
                    "logistic propensity needs both treatment arms".into(),
                ));
            }
            let n = x.nrows();
            let mut design = DMatrix::from_element(n, x.ncols() + 1, 1.0);
            design.columns_mut(1, x.ncols()).copy_from(x);
            let indicator = t.map(|v| if v == 1.0 { 1.0 } else { 0.0 });
            let fit = glm::fit_logistic(
                &design,
                &indicator,
                PROPENSITY_MAX_ITER,
                PROPENSITY_TOL,
                "propensity model",
            )?;
            Ok(PropensityModel::Logistic(fit.coefficients))
        }
    }
}
