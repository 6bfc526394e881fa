//! Dense linear algebra helpers on top of `nalgebra`.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

/// Condition estimates above this are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Flips signs so each column's largest-magnitude entry is positive.
/// Ties go to the lowest row index. Returns the sign applied per column.
pub fn normalize_column_signs(m: &mut DMatrix<f64>) -> Vec<f64> {
    let mut signs = Vec::with_capacity(m.ncols());
    for mut col in m.column_iter_mut() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for &v in col.iter() {
            if v.abs() > best.abs() {
                best = v;
            }
        }
        if best < 0.0 {
            col.neg_mut();
            sign = -1.0;
        }
        signs.push(sign);
    }
    signs
}

/// First `cols` columns of the Q factor of `a`, with each column scaled so
/// the corresponding diagonal entry of R is non-negative.
pub fn orthonormal_factor(a: &DMatrix<f64>) -> DMatrix<f64> {
    let cols = a.ncols().min(a.nrows());
    let qr = a.clone().qr();
    let mut q = qr.q().columns(0, cols).into_owned();
    let r = qr.r();
    for k in 0..cols {
        if r[(k, k)] < 0.0 {
            q.column_mut(k).neg_mut();
        }
    }
    q
}

/// Extends orthonormal columns `basis` (possibly zero of them) with standard
/// basis vectors, taken in index order, orthogonalized by modified
/// Gram-Schmidt, until `target` columns exist.
fn complete_basis(basis: Vec<nalgebra::DVector<f64>>, dim: usize, target: usize) -> Vec<nalgebra::DVector<f64>> {
    let mut out = basis;
    let mut e = 0;
    while out.len() < target && e < dim {
        let mut v = nalgebra::DVector::<f64>::zeros(dim);
        v[e] = 1.0;
        for _ in 0..2 {
            for b in &out {
                let proj = b.dot(&v);
                v.axpy(-proj, b, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            out.push(v / norm);
        }
        e += 1;
    }
    out
}

/// Result of the orthogonal Procrustes problem `max tr(G' V) s.t. V'V = I`.
#[derive(Debug, Clone)]
pub struct PolarFactor {
    /// `K L'` with `G = K diag(singular_values) L'`.
    pub factor: DMatrix<f64>,
    pub singular_values: Vec<f64>,
}

/// Orthogonal polar factor of a tall `m x r` matrix `g` via its thin SVD.
///
/// Left singular vectors are sign-normalized (largest-magnitude entry
/// positive). Directions with numerically zero singular value are replaced
/// by a deterministic completion of the retained left singular vectors.
pub fn polar_factor(g: &DMatrix<f64>) -> Result<PolarFactor> {
    let (m, r) = g.shape();
    if m < r {
        return Err(Error::Dimension(format!(
            "polar factor needs at least as many rows as columns, got {m}x{r}"
        )));
    }
    if r == 0 {
        return Err(Error::Dimension("polar factor of an empty matrix".into()));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Procrustes target".into()));
    }
    let svd = g.clone().svd(true, true);
    let mut k = svd.u.ok_or_else(|| Error::Estimation("SVD produced no U".into()))?;
    let mut l_t = svd.v_t.ok_or_else(|| Error::Estimation("SVD produced no V".into()))?;
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();

    let signs = normalize_column_signs(&mut k);
    for (row, s) in signs.iter().enumerate() {
        if *s < 0.0 {
            l_t.row_mut(row).neg_mut();
        }
    }

    let top = sv.iter().copied().fold(0.0, f64::max);
    let cutoff = top * (m.max(r) as f64) * f64::EPSILON;
    let deficient: Vec<usize> = (0..r).filter(|&c| sv[c] <= cutoff).collect();
    if !deficient.is_empty() {
        let kept: Vec<_> = (0..r)
            .filter(|c| !deficient.contains(c))
            .map(|c| k.column(c).into_owned())
            .collect();
        let completed = complete_basis(kept.clone(), m, r);
        for (slot, col) in deficient.iter().zip(completed.iter().skip(kept.len())) {
            k.set_column(*slot, col);
        }
    }

    Ok(PolarFactor {
        factor: k * l_t,
        singular_values: sv,
    })
}

/// Cholesky factor of a symmetric positive definite matrix whose condition
/// estimate is at most [`MAX_CONDITION`].
pub fn conditioned_cholesky(a: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let condition = condition_estimate(a);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned { condition });
    }
    a.clone().cholesky().ok_or(Error::IllConditioned {
        condition: f64::INFINITY,
    })
}

/// Ratio of extreme eigenvalues of a symmetric matrix; infinite when the
/// smallest is not positive.
pub fn condition_estimate(a: &DMatrix<f64>) -> f64 {
    if a.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let eig = a.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min <= 0.0 || max <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Number of singular values above `max(m, n) * eps * sigma_max`.
pub fn numerical_rank(a: &DMatrix<f64>) -> usize {
    let sv = a.singular_values();
    let top = sv.max();
    if top == 0.0 {
        return 0;
    }
    let cutoff = top * (a.nrows().max(a.ncols()) as f64) * f64::EPSILON;
    sv.iter().filter(|&&s| s > cutoff).count()
}
