//! Synthetic trials: equicorrelated Gaussian covariates, quadratic main
//! effects, a low-rank treatment effect, Gaussian errors, and outcomes
//! thresholded at zero.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{center_columns, TrialData};
use crate::error::{Error, Result};
use crate::linalg::orthonormal_factor;

/// Treatment assignment mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Assignment {
    /// `P(t = +1) = 1/2` for everyone.
    Rct,
    /// `P(t = +1 | x) = 1 / (1 + exp(1 - x_1))`.
    Observational,
}

impl Assignment {
    pub fn as_str(self) -> &'static str {
        match self {
            Assignment::Rct => "rct",
            Assignment::Observational => "observational",
        }
    }
}

impl fmt::Display for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Assignment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rct" => Ok(Assignment::Rct),
            "observational" | "obs" => Ok(Assignment::Observational),
            _ => Err(Error::InvalidConfig(format!(
                "unknown assignment '{s}' (expected rct or observational)"
            ))),
        }
    }
}

/// One cell of the simulation grid plus its replication settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub n: usize,
    pub p: usize,
    pub m: usize,
    pub r: usize,
    pub rho1: f64,
    pub rho2: f64,
    pub assignment: Assignment,
    pub replications: usize,
    pub master_seed: u64,
    /// Draw `(D, W, V)` once and reuse it for every replication.
    pub freeze_truth: bool,
}

pub const GRID_N: [usize; 3] = [100, 300, 500];
pub const GRID_P: [usize; 2] = [10, 50];
/// `(m, r)` pairs: rank 5 is only used with 10 outcomes.
pub const GRID_M_R: [(usize, usize); 3] = [(5, 3), (10, 3), (10, 5)];
pub const GRID_RHO: [f64; 3] = [0.0, 1.0 / 3.0, 2.0 / 3.0];
pub const DEFAULT_REPLICATIONS: usize = 100;

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidConfig(format!("n must be at least 2, got {}", self.n)));
        }
        if self.p == 0 || self.m == 0 {
            return Err(Error::InvalidConfig("p and m must be positive".into()));
        }
        if self.r == 0 || self.r > self.p.min(self.m) {
            return Err(Error::InvalidConfig(format!(
                "rank {} must lie in 1..={}",
                self.r,
                self.p.min(self.m)
            )));
        }
        for (name, rho) in [("rho1", self.rho1), ("rho2", self.rho2)] {
            check_rho(rho).map_err(|_| Error::InvalidConfig(format!("{name} = {rho} is outside [0, 1)")))?;
        }
        if self.replications == 0 {
            return Err(Error::InvalidConfig("replications must be positive".into()));
        }
        Ok(())
    }

    /// Whether the cell lies on the published grid.
    pub fn on_default_grid(&self) -> bool {
        GRID_N.contains(&self.n)
            && GRID_P.contains(&self.p)
            && GRID_M_R.contains(&(self.m, self.r))
            && GRID_RHO.iter().any(|&v| (v - self.rho1).abs() < 1e-12)
            && GRID_RHO.iter().any(|&v| (v - self.rho2).abs() < 1e-12)
    }

    /// Stable identifier built from the cell parameters.
    pub fn scenario_id(&self) -> String {
        format!(
            "n{}_p{}_m{}_r{}_rho{:.4}_{:.4}_{}",
            self.n, self.p, self.m, self.r, self.rho1, self.rho2, self.assignment
        )
    }
}

/// Every cell of the published grid (324 cells).
pub fn default_grid(replications: usize, master_seed: u64) -> Vec<ScenarioConfig> {
    let mut cells = Vec::new();
    for &assignment in &[Assignment::Rct, Assignment::Observational] {
        for &n in &GRID_N {
            for &p in &GRID_P {
                for &(m, r) in &GRID_M_R {
                    for &rho1 in &GRID_RHO {
                        for &rho2 in &GRID_RHO {
                            cells.push(ScenarioConfig {
                                n,
                                p,
                                m,
                                r,
                                rho1,
                                rho2,
                                assignment,
                                replications,
                                master_seed,
                                freeze_truth: false,
                            });
                        }
                    }
                }
            }
        }
    }
    cells
}

fn check_rho(rho: f64) -> Result<()> {
    if (0.0..1.0).contains(&rho) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("correlation {rho} is outside [0, 1)")))
    }
}

/// `(1 - rho) I + rho 1 1'`.
pub fn equicorrelation_cov(dim: usize, rho: f64) -> Result<DMatrix<f64>> {
    check_rho(rho)?;
    Ok(DMatrix::from_fn(dim, dim, |i, j| if i == j { 1.0 } else { rho }))
}

/// `n` rows drawn iid from `N(0, cov)`.
///
/// Standard normals are drawn row by row, left to right, and mapped through
/// the lower Cholesky factor `L` as `x_i = L z_i`.
fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let dim = cov.nrows();
    let l = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Estimation("covariance is not positive definite".into()))?
        .l();
    let mut z = DMatrix::<f64>::zeros(n, dim);
    for i in 0..n {
        for j in 0..dim {
            z[(i, j)] = StandardNormal.sample(rng);
        }
    }
    Ok(z * l.transpose())
}

fn standard_normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Data-generating truth: main effects `D`, and `W`, `V` with `V'V = I`.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub d: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

/// Draws `D` (`p x m`), `W` (`p x r`) and a raw `m x r` matrix, in that order
/// and column-major, all standard Gaussian. `V` is the Q factor of the raw
/// matrix with a positive R diagonal.
pub fn sample_truth(p: usize, m: usize, r: usize, seed: u64) -> Result<Truth> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_truth_from(&mut rng, p, m, r)
}

fn sample_truth_from(rng: &mut ChaCha8Rng, p: usize, m: usize, r: usize) -> Result<Truth> {
    if r == 0 || r > p.min(m) {
        return Err(Error::InvalidConfig(format!("rank {r} must lie in 1..={}", p.min(m))));
    }
    let d = standard_normal_matrix(rng, p, m);
    let w = standard_normal_matrix(rng, p, r);
    let v = orthonormal_factor(&standard_normal_matrix(rng, m, r));
    Ok(Truth { d, w, v })
}

/// `1 / (1 + exp(1 - x1))`.
pub fn observational_propensity(x1: f64) -> f64 {
    1.0 / (1.0 + (1.0 - x1).exp())
}

/// Draws `t` in `{-1, +1}` with the assignment probability of `mode`, and
/// returns that probability alongside. Observational assignment reads the
/// first column of `x`.
pub fn assign_treatment(x: &DMatrix<f64>, mode: Assignment, seed: u64) -> Result<(DVector<f64>, DVector<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    assign_treatment_from(&mut rng, x, mode)
}

fn assign_treatment_from(
    rng: &mut ChaCha8Rng,
    x: &DMatrix<f64>,
    mode: Assignment,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = x.nrows();
    let pi = match mode {
        Assignment::Rct => DVector::from_element(n, 0.5),
        Assignment::Observational => {
            if x.ncols() == 0 {
                return Err(Error::Dimension("observational assignment needs a covariate".into()));
            }
            DVector::from_fn(n, |i, _| observational_propensity(x[(i, 0)]))
        }
    };
    let t = pi.map(|p| if rng.random::<f64>() < p { 1.0 } else { -1.0 });
    Ok((t, pi))
}

/// A generated trial together with everything needed to rebuild it.
#[derive(Debug, Clone)]
pub struct SimulatedDataset {
    /// Centered covariates, treatment, outcomes and true propensities.
    pub data: TrialData,
    /// Covariates as drawn, before centering.
    pub x_raw: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub w_true: DMatrix<f64>,
    pub v_true: DMatrix<f64>,
    pub e: DMatrix<f64>,
    /// `X W V'` on the centered covariates.
    pub h_true: DMatrix<f64>,
}

impl SimulatedDataset {
    /// `(X D) * (X D) + diag(t) X W V' + E`, elementwise square on the first term.
    pub fn latent(&self) -> DMatrix<f64> {
        latent_outcomes(self.data.x(), &self.d, &self.h_true, self.data.t(), &self.e)
    }
}

fn latent_outcomes(
    x: &DMatrix<f64>,
    d: &DMatrix<f64>,
    h: &DMatrix<f64>,
    t: &DVector<f64>,
    e: &DMatrix<f64>,
) -> DMatrix<f64> {
    let main = x * d;
    DMatrix::from_fn(x.nrows(), d.ncols(), |i, j| {
        main[(i, j)] * main[(i, j)] + t[i] * h[(i, j)] + e[(i, j)]
    })
}

/// Stream components within one replication.
#[derive(Clone, Copy)]
enum Component {
    Truth = 0,
    Covariates = 1,
    Treatment = 2,
    Errors = 3,
}

const COMPONENTS: u64 = 4;

/// Independent generator for one `(replication, component)` pair: the ChaCha
/// key comes from `master_seed` and the stream id from the pair.
fn component_rng(master_seed: u64, replication: usize, component: Component) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(replication as u64 * COMPONENTS + component as u64);
    rng
}

pub fn generate_scenario(config: &ScenarioConfig, replication: usize) -> Result<SimulatedDataset> {
    config.validate()?;
    let truth_rep = if config.freeze_truth { 0 } else { replication };
    let truth = sample_truth_from(
        &mut component_rng(config.master_seed, truth_rep, Component::Truth),
        config.p,
        config.m,
        config.r,
    )?;

    let x_raw = gaussian_rows(
        &mut component_rng(config.master_seed, replication, Component::Covariates),
        config.n,
        &equicorrelation_cov(config.p, config.rho1)?,
    )?;
    let (t, pi) = assign_treatment_from(
        &mut component_rng(config.master_seed, replication, Component::Treatment),
        &x_raw,
        config.assignment,
    )?;
    let e = gaussian_rows(
        &mut component_rng(config.master_seed, replication, Component::Errors),
        config.n,
        &equicorrelation_cov(config.m, config.rho2)?,
    )?;

    let x = center_columns(&x_raw)?;
    let h_true = (&x * &truth.w) * truth.v.transpose();
    let latent = latent_outcomes(&x, &truth.d, &h_true, &t, &e);
    let y = latent.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let data = TrialData::new(x, y, t, pi)?;
    Ok(SimulatedDataset {
        data,
        x_raw,
        d: truth.d,
        w_true: truth.w,
        v_true: truth.v,
        e,
        h_true,
    })
}

/// Header of the dataset CSV: `id,t,pi,y1..ym,x1..xp`.
pub fn dataset_header(m: usize, p: usize) -> Vec<String> {
    let mut h = vec!["id".to_string(), "t".to_string(), "pi".to_string()];
    h.extend((1..=m).map(|j| format!("y{j}")));
    h.extend((1..=p).map(|k| format!("x{k}")));
    h
}

/// Writes `id,t,pi,y1..ym,x1..xp` with the covariates as drawn (before
/// centering), so reloading and centering reproduces `data.x()` exactly.
pub fn write_dataset_csv<W: Write>(ds: &SimulatedDataset, out: W) -> Result<()> {
    let (n, m, p) = (ds.data.n(), ds.data.m(), ds.data.p());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(dataset_header(m, p))?;
    for i in 0..n {
        let mut rec = Vec::with_capacity(3 + m + p);
        rec.push((i + 1).to_string());
        rec.push(format!("{}", ds.data.t()[i]));
        rec.push(format!("{}", ds.data.pi()[i]));
        rec.extend((0..m).map(|j| format!("{}", ds.data.y()[(i, j)])));
        rec.extend((0..p).map(|k| format!("{}", ds.x_raw[(i, k)])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `id,h1..hm` with the true effect matrix.
pub fn write_truth_csv<W: Write>(ds: &SimulatedDataset, out: W) -> Result<()> {
    let (n, m) = ds.h_true.shape();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string()];
    header.extend((1..=m).map(|j| format!("h{j}")));
    w.write_record(&header)?;
    for i in 0..n {
        let mut rec = vec![(i + 1).to_string()];
        rec.extend((0..m).map(|j| format!("{}", ds.h_true[(i, j)])));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `<stem>.csv` and `<stem>_truth.csv` into `dir`.
pub fn dump_dataset(ds: &SimulatedDataset, dir: &Path, stem: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_dataset_csv(ds, std::fs::File::create(dir.join(format!("{stem}.csv")))?)?;
    write_truth_csv(ds, std::fs::File::create(dir.join(format!("{stem}_truth.csv")))?)?;
    Ok(())
}
