//! Majorization-minimization for the reduced-rank objectives.
//!
//! Each term `y log(1 + exp(-theta))` has curvature at most `1/4`, so around
//! an expansion point `theta0` it is bounded above by
//! `(1/8) (theta - z)^2 + c` with `z = theta0 + 4 y sigmoid(-theta0)`.
//! Summing with the strategy's row weights gives a weighted least-squares
//! surrogate in `Theta = S X W V'`. One outer iteration performs one sweep:
//! an orthogonal Procrustes update of `V` followed by a weighted
//! least-squares update of `W`, which cannot increase the surrogate and hence
//! cannot increase the true objective.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{FactorizedCoefficients, TrialData};
use crate::error::{Error, Result};
use crate::linalg::{conditioned_cholesky, orthonormal_factor, polar_factor};
use crate::losses::{
    loss_with_factors, multiple_logistic_loss, sigmoid_neg, softplus, LinearPredictor, RowFactors, Strategy,
};

/// Scale of the Gaussian draw used for the initial `W`.
pub const INIT_W_SCALE: f64 = 0.01;
/// The automatic ridge is this fraction of the average diagonal of the
/// normal matrix.
pub const AUTO_RIDGE_FRACTION: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub rank: usize,
    /// Stop once an iteration lowers the objective by less than this.
    pub tolerance: f64,
    pub max_iter: usize,
    pub init_seed: u64,
    /// Ridge added to the normal equations of the `W` update. When zero, an
    /// automatic ridge is used only if the system is ill-conditioned.
    pub ridge: f64,
}

impl SolverOptions {
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            tolerance: 1e-6,
            max_iter: 1000,
            init_seed: 0,
            ridge: 0.0,
        }
    }

    pub fn validate(&self, p: usize, m: usize) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidConfig("max_iter must be at least 1".into()));
        }
        if self.rank == 0 || self.rank > p.min(m) {
            return Err(Error::InvalidConfig(format!(
                "rank {} must lie in 1..=min(p = {p}, m = {m})",
                self.rank
            )));
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "ridge must be non-negative, got {}",
                self.ridge
            )));
        }
        Ok(())
    }
}

/// The quadratic surrogate built at one expansion point.
#[derive(Debug, Clone)]
pub struct MajorizationState {
    /// `sigmoid(-theta0)` per entry.
    pub phi: DMatrix<f64>,
    /// Working response `theta0 + 4 Y .* Phi`.
    pub z: DMatrix<f64>,
    pub iteration: usize,
    /// Surrogate value at the expansion point, equal to the true objective
    /// there.
    pub surrogate_value: f64,
    factors: RowFactors,
    constant: f64,
}

impl MajorizationState {
    /// `(1/8) sum_i w_i sum_j (Z_ij - Theta_ij)^2`.
    pub fn quadratic_part(&self, theta: &DMatrix<f64>) -> f64 {
        let mut total = 0.0;
        for (i, (z_row, t_row)) in self.z.row_iter().zip(theta.row_iter()).enumerate() {
            let row: f64 = z_row.iter().zip(t_row.iter()).map(|(z, t)| (z - t) * (z - t)).sum();
            total += self.factors.weights[i] * row;
        }
        total / 8.0
    }

    /// The additive term dropped from the least-squares form:
    /// `sum_i w_i sum_j (loss_ij(theta0) - 2 y_ij phi_ij^2)`.
    pub fn tangency_constant(&self) -> f64 {
        self.constant
    }

    /// Full surrogate value at a trial linear predictor.
    pub fn surrogate_at(&self, theta: &DMatrix<f64>) -> f64 {
        self.quadratic_part(theta) + self.constant
    }

    pub fn surrogate_at_coefficients(&self, coeffs: &FactorizedCoefficients, data: &TrialData) -> Result<f64> {
        let theta = LinearPredictor::for_coefficients(coeffs, data, &self.factors.scale)?;
        Ok(self.surrogate_at(theta.matrix()))
    }

    pub fn row_factors(&self) -> &RowFactors {
        &self.factors
    }
}

fn majorize_with(
    coeffs: &FactorizedCoefficients,
    data: &TrialData,
    factors: RowFactors,
    iteration: usize,
) -> Result<MajorizationState> {
    let theta = LinearPredictor::for_coefficients(coeffs, data, &factors.scale)?.into_matrix();
    let y = data.y();
    let phi = theta.map(sigmoid_neg);
    let z = DMatrix::from_fn(theta.nrows(), theta.ncols(), |i, j| {
        theta[(i, j)] + 4.0 * y[(i, j)] * phi[(i, j)]
    });
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("working response".into()));
    }
    let mut constant = 0.0;
    for i in 0..theta.nrows() {
        let mut row = 0.0;
        for j in 0..theta.ncols() {
            let yij = y[(i, j)];
            if yij != 0.0 {
                row += yij * softplus(-theta[(i, j)]) - 2.0 * yij * yij * phi[(i, j)] * phi[(i, j)];
            }
        }
        constant += factors.weights[i] * row;
    }
    let surrogate_value = multiple_logistic_loss(y, &theta, &factors.weights)?;
    Ok(MajorizationState {
        phi,
        z,
        iteration,
        surrogate_value,
        factors,
        constant,
    })
}

/// Surrogate of the objective for `strategy` at `coeffs`.
pub fn majorize(strategy: Strategy, coeffs: &FactorizedCoefficients, data: &TrialData) -> Result<MajorizationState> {
    majorize_with(coeffs, data, strategy.row_factors(data)?, 0)
}

pub fn majorize_w(coeffs: &FactorizedCoefficients, data: &TrialData) -> Result<MajorizationState> {
    majorize(Strategy::WMethod, coeffs, data)
}

pub fn majorize_a(coeffs: &FactorizedCoefficients, data: &TrialData) -> Result<MajorizationState> {
    majorize(Strategy::ALearner, coeffs, data)
}

/// `diag(d) * m` without forming the diagonal matrix.
fn scale_rows(m: &DMatrix<f64>, d: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (mut row, s) in out.row_iter_mut().zip(d.iter()) {
        row *= *s;
    }
    out
}

/// `G = 2 Z' D X W` with `D = diag(weights .* scale)`; the Procrustes target
/// for the `V` update.
pub fn procrustes_target(state: &MajorizationState, data: &TrialData, w: &DMatrix<f64>) -> DMatrix<f64> {
    let ws = state.factors.weights.component_mul(&state.factors.scale);
    let xw = scale_rows(&(data.x() * w), &ws);
    (state.z.transpose() * xw) * 2.0
}

/// Orthonormal `V` maximizing `tr(G' V)`: the polar factor `K L'` of the thin
/// SVD `G = K Lambda L'`.
pub fn update_v(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(polar_factor(g)?.factor)
}

/// Factorized normal matrix `X' diag(w s^2) X + ridge I` of the `W` update.
struct NormalSystem {
    chol: Cholesky<f64, Dyn>,
    ridge: f64,
}

fn normal_matrix(data: &TrialData, factors: &RowFactors) -> DMatrix<f64> {
    let d = factors.weights.zip_map(&factors.scale, |w, s| w * s * s);
    data.x().transpose() * scale_rows(data.x(), &d)
}

fn factor_normal(normal: &DMatrix<f64>, ridge: f64) -> Result<NormalSystem> {
    let mut a = normal.clone();
    if ridge > 0.0 {
        for k in 0..a.nrows() {
            a[(k, k)] += ridge;
        }
    }
    Ok(NormalSystem {
        chol: conditioned_cholesky(&a)?,
        ridge,
    })
}

fn auto_ridge(normal: &DMatrix<f64>) -> f64 {
    AUTO_RIDGE_FRACTION * normal.trace() / normal.nrows() as f64
}

fn w_rhs(data: &TrialData, factors: &RowFactors, z: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    let ws = factors.weights.component_mul(&factors.scale);
    data.x().transpose() * scale_rows(&(z * v), &ws)
}

fn check_update_dims(data: &TrialData, z: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<()> {
    if z.shape() != (data.n(), data.m()) || v.nrows() != data.m() {
        return Err(Error::Dimension(format!(
            "Z is {:?} and V is {:?} for data with n = {}, m = {}",
            z.shape(),
            v.shape(),
            data.n(),
            data.m()
        )));
    }
    Ok(())
}

/// `W = (X' diag(w s^2) X + ridge I)^{-1} X' diag(w s) Z V`.
///
/// Fails with [`Error::IllConditioned`] rather than silently regularizing.
pub fn update_w(
    strategy: Strategy,
    data: &TrialData,
    z: &DMatrix<f64>,
    v: &DMatrix<f64>,
    ridge: f64,
) -> Result<DMatrix<f64>> {
    check_update_dims(data, z, v)?;
    let factors = strategy.row_factors(data)?;
    let system = factor_normal(&normal_matrix(data, &factors), ridge)?;
    Ok(system.chol.solve(&w_rhs(data, &factors, z, v)))
}

/// `W = (X'AX + ridge I)^{-1} X' T A Z V`.
pub fn update_w_wmethod(data: &TrialData, z: &DMatrix<f64>, v: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    update_w(Strategy::WMethod, data, z, v, ridge)
}

/// `W = (X'Q^2X + ridge I)^{-1} X' Q Z V`.
pub fn update_w_alearner(data: &TrialData, zdag: &DMatrix<f64>, v: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    update_w(Strategy::ALearner, data, zdag, v, ridge)
}

/// Seeded starting point: `V` is the sign-normalized Q factor of a standard
/// Gaussian `m x r` draw, then `W` is a standard Gaussian `p x r` draw scaled
/// by [`INIT_W_SCALE`]. Both come from one ChaCha8 stream, `V` first,
/// column-major.
pub fn initial_coefficients(p: usize, m: usize, r: usize, seed: u64) -> Result<FactorizedCoefficients> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw_v = DMatrix::from_fn(m, r, |_, _| StandardNormal.sample(&mut rng));
    let v = orthonormal_factor(&raw_v);
    let w = DMatrix::from_fn(p, r, |_, _| {
        let g: f64 = StandardNormal.sample(&mut rng);
        g * INIT_W_SCALE
    });
    FactorizedCoefficients::new(w, v)
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub strategy: Strategy,
    pub coeffs: FactorizedCoefficients,
    /// True objective at the start point and after every iteration.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Ridge actually used in the `W` update.
    pub ridge: f64,
}

impl FitResult {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace holds the start value")
    }
}

fn prepare_system(data: &TrialData, factors: &RowFactors, ridge: f64) -> Result<NormalSystem> {
    let normal = normal_matrix(data, factors);
    match factor_normal(&normal, ridge) {
        Err(Error::IllConditioned { condition }) if ridge == 0.0 => {
            let fallback = auto_ridge(&normal);
            if !(fallback > 0.0) {
                return Err(Error::IllConditioned { condition });
            }
            log::warn!(
                "normal equations ill-conditioned (condition {condition:.3e}); retrying with ridge {fallback:.3e}"
            );
            factor_normal(&normal, fallback)
        }
        other => other,
    }
}

/// Runs the MM iteration for `strategy` from the seeded start point.
pub fn fit(strategy: Strategy, data: &TrialData, options: &SolverOptions) -> Result<FitResult> {
    options.validate(data.p(), data.m())?;
    let start = initial_coefficients(data.p(), data.m(), options.rank, options.init_seed)?;
    fit_from(strategy, data, options, start)
}

/// Runs the MM iteration from a given start point.
pub fn fit_from(
    strategy: Strategy,
    data: &TrialData,
    options: &SolverOptions,
    start: FactorizedCoefficients,
) -> Result<FitResult> {
    options.validate(data.p(), data.m())?;
    if start.p() != data.p() || start.m() != data.m() || start.rank() != options.rank {
        return Err(Error::Dimension(format!(
            "start point is {}x{} rank {} but data has p = {}, m = {} and rank {} was requested",
            start.p(),
            start.m(),
            start.rank(),
            data.p(),
            data.m(),
            options.rank
        )));
    }
    let factors = strategy.row_factors(data)?;
    let system = prepare_system(data, &factors, options.ridge)?;

    let mut coeffs = start;
    let mut current = loss_with_factors(&coeffs, data, &factors)?;
    let mut trace = vec![current];
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=options.max_iter {
        iterations = iter;
        let state = majorize_with(&coeffs, data, factors.clone(), iter)?;
        let g = procrustes_target(&state, data, coeffs.w());
        let v = update_v(&g)?;
        let w = system.chol.solve(&w_rhs(data, &factors, &state.z, &v));
        let next = FactorizedCoefficients::new(w, v)?;
        let value = loss_with_factors(&next, data, &factors)?;
        if value > current {
            // Only reachable through rounding or a ridge-perturbed update.
            log::debug!("iteration {iter} raised the objective from {current} to {value}; keeping previous iterate");
            converged = true;
            break;
        }
        let decrease = current - value;
        coeffs = next;
        current = value;
        trace.push(value);
        if decrease < options.tolerance {
            converged = true;
            break;
        }
    }

    Ok(FitResult {
        strategy,
        coeffs,
        objective_trace: trace,
        converged,
        iterations,
        ridge: system.ridge,
    })
}

/// Reduced-rank logistic regression under the W-method.
pub fn fit_r3w(data: &TrialData, options: &SolverOptions) -> Result<FitResult> {
    fit(Strategy::WMethod, data, options)
}

/// Reduced-rank logistic regression under the A-learner.
pub fn fit_r3a(data: &TrialData, options: &SolverOptions) -> Result<FitResult> {
    fit(Strategy::ALearner, data, options)
}

/// Which factor is held fixed in a partial minimization.
#[derive(Debug, Clone)]
pub enum FixedFactor {
    /// Hold `W` (`p x r`, full column rank) and minimize over an
    /// unconstrained `V`.
    W(DMatrix<f64>),
    /// Hold `V` (`m x r`, full column rank) and minimize over `W`.
    V(DMatrix<f64>),
}

/// Result of minimizing over one factor with the other held fixed.
#[derive(Debug, Clone)]
pub struct PartialFit {
    pub w: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl PartialFit {
    pub fn gamma(&self) -> DMatrix<f64> {
        &self.w * self.v.transpose()
    }
}

/// Minimizes the objective over one factor with the other fixed, using the
/// same quadratic surrogate. The free factor starts at zero.
pub fn partial_minimize(
    strategy: Strategy,
    data: &TrialData,
    fixed: FixedFactor,
    tolerance: f64,
    max_iter: usize,
) -> Result<PartialFit> {
    let factors = strategy.row_factors(data)?;
    let ws = factors.weights.component_mul(&factors.scale);
    let (mut w, mut v) = match &fixed {
        FixedFactor::W(w) => {
            if w.nrows() != data.p() {
                return Err(Error::Dimension(format!(
                    "fixed W has {} rows, p = {}",
                    w.nrows(),
                    data.p()
                )));
            }
            (w.clone(), DMatrix::zeros(data.m(), w.ncols()))
        }
        FixedFactor::V(v) => {
            if v.nrows() != data.m() {
                return Err(Error::Dimension(format!(
                    "fixed V has {} rows, m = {}",
                    v.nrows(),
                    data.m()
                )));
            }
            (DMatrix::zeros(data.p(), v.ncols()), v.clone())
        }
    };

    // Precompute the fixed parts of the least-squares solve.
    enum Solver {
        ForW {
            chol: Cholesky<f64, Dyn>,
            v_pinv: DMatrix<f64>,
        },
        ForV {
            chol: Cholesky<f64, Dyn>,
            f_weighted: DMatrix<f64>,
        },
    }
    let solver = match &fixed {
        FixedFactor::V(v) => {
            let system = prepare_system(data, &factors, 0.0)?;
            let vtv = conditioned_cholesky(&(v.transpose() * v))?;
            Solver::ForW {
                chol: system.chol,
                v_pinv: v * vtv.inverse(),
            }
        }
        FixedFactor::W(w) => {
            // Features F = S X W; v_j solves the weighted least squares of
            // Z_j on F with weights w_i.
            let f = scale_rows(&(data.x() * w), &factors.scale);
            let f_weighted = scale_rows(&f, &factors.weights);
            let chol = conditioned_cholesky(&(f.transpose() * &f_weighted))?;
            Solver::ForV { chol, f_weighted }
        }
    };

    let objective = |w: &DMatrix<f64>, v: &DMatrix<f64>| -> Result<f64> {
        let theta = LinearPredictor::new(data.x(), &(w * v.transpose()), &factors.scale)?;
        multiple_logistic_loss(data.y(), theta.matrix(), &factors.weights)
    };

    let mut current = objective(&w, &v)?;
    let mut trace = vec![current];
    let mut converged = false;
    let mut iterations = 0;
    for iter in 1..=max_iter {
        iterations = iter;
        let theta = LinearPredictor::new(data.x(), &(&w * v.transpose()), &factors.scale)?.into_matrix();
        let y = data.y();
        let z = DMatrix::from_fn(theta.nrows(), theta.ncols(), |i, j| {
            theta[(i, j)] + 4.0 * y[(i, j)] * sigmoid_neg(theta[(i, j)])
        });
        match &solver {
            Solver::ForW { chol, v_pinv } => {
                let rhs = data.x().transpose() * scale_rows(&(&z * v_pinv), &ws);
                w = chol.solve(&rhs);
            }
            Solver::ForV { chol, f_weighted } => {
                v = chol.solve(&(f_weighted.transpose() * &z)).transpose();
            }
        }
        let value = objective(&w, &v)?;
        let decrease = current - value;
        current = value;
        trace.push(value);
        if decrease < tolerance {
            converged = true;
            break;
        }
    }
    Ok(PartialFit {
        w,
        v,
        objective_trace: trace,
        converged,
        iterations,
    })
}
