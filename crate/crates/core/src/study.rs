//! Simulation study runner: grid cells x replications x methods, written to
//! `results.csv`, `errors.csv`, `summary.csv` and `roc_pooled.csv`.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;

use crate::baselines::{fit_full, fit_ma, fit_mw, full_effect, SeparableOptions};
use crate::effects::{
    corrected_effect, corrected_effect_univariate, raw_effect, raw_effect_gamma, EffectMatrix, Method,
};
use crate::error::{Error, Result};
use crate::evaluation::{classification_rates, mse, roc_and_auc, subject_scores, vertical_average, RocCurve};
use crate::simulation::{generate_scenario, Assignment, ScenarioConfig, GRID_M_R, GRID_N, GRID_P, GRID_RHO};
use crate::solver::{fit_r3a, fit_r3w, SolverOptions};
use crate::TrialData;

pub const RESULTS_HEADER: [&str; 17] = [
    "scenario_id",
    "n",
    "p",
    "m",
    "r",
    "rho1",
    "rho2",
    "assignment",
    "replication",
    "method",
    "mse",
    "fpr",
    "fnr",
    "auc",
    "iterations",
    "converged",
    "seconds",
];
pub const ERRORS_HEADER: [&str; 4] = ["scenario_id", "replication", "method", "reason"];
pub const SUMMARY_HEADER: [&str; 13] = [
    "scenario_id",
    "method",
    "runs",
    "mse_median",
    "mse_iqr",
    "fpr_median",
    "fpr_iqr",
    "fnr_median",
    "fnr_iqr",
    "auc_median",
    "auc_iqr",
    "auc_mean",
    "converged_share",
];
pub const ROC_HEADER: [&str; 4] = ["scenario_id", "method", "fpr", "tpr"];

/// Points of the false-positive-rate grid used for pooled ROC curves.
pub const ROC_GRID_POINTS: usize = 101;

/// Lists of cell parameters; the grid is their Cartesian product.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n: Vec<usize>,
    pub p: Vec<usize>,
    pub m: Vec<usize>,
    pub r: Vec<usize>,
    pub rho1: Vec<f64>,
    pub rho2: Vec<f64>,
    pub assignment: Vec<Assignment>,
    /// Drop cells with `r = 5` unless `m = 10`, as in the published grid.
    #[serde(default = "yes")]
    pub pair_rank_five_with_ten_outcomes: bool,
}

fn yes() -> bool {
    true
}

impl Default for GridSpec {
    /// The published grid.
    fn default() -> Self {
        let mut m: Vec<usize> = GRID_M_R.iter().map(|&(m, _)| m).collect();
        let mut r: Vec<usize> = GRID_M_R.iter().map(|&(_, r)| r).collect();
        m.dedup();
        r.sort_unstable();
        r.dedup();
        Self {
            n: GRID_N.to_vec(),
            p: GRID_P.to_vec(),
            m,
            r,
            rho1: GRID_RHO.to_vec(),
            rho2: GRID_RHO.to_vec(),
            assignment: vec![Assignment::Rct, Assignment::Observational],
            pair_rank_five_with_ten_outcomes: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub grid: GridSpec,
    pub methods: Vec<Method>,
    pub replications: usize,
    pub master_seed: u64,
    pub out_dir: PathBuf,
    /// Worker threads; results do not depend on it.
    pub jobs: usize,
    pub freeze_truth: bool,
    pub tolerance: f64,
    pub max_iter: usize,
}

/// On-disk form of [`StudyConfig`]; every key is optional so command-line
/// flags can fill or override it.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyFile {
    pub grid: Option<GridSpec>,
    pub methods: Option<Vec<String>>,
    pub replications: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub freeze_truth: Option<bool>,
    pub tolerance: Option<f64>,
    pub max_iter: Option<usize>,
}

impl StudyFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("study config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Fills missing values with defaults and validates the result. `seed`
    /// and `out` have no default.
    pub fn into_config(self) -> Result<StudyConfig> {
        let methods = match self.methods {
            Some(list) => parse_methods(&list)?,
            None => Method::ALL.to_vec(),
        };
        let config = StudyConfig {
            grid: self.grid.unwrap_or_default(),
            methods,
            replications: self.replications.unwrap_or(crate::simulation::DEFAULT_REPLICATIONS),
            master_seed: self
                .seed
                .ok_or_else(|| Error::InvalidConfig("a master seed is required".into()))?,
            out_dir: self
                .out
                .ok_or_else(|| Error::InvalidConfig("an output directory is required".into()))?,
            jobs: self.jobs.unwrap_or(1),
            freeze_truth: self.freeze_truth.unwrap_or(false),
            tolerance: self.tolerance.unwrap_or(1e-6),
            max_iter: self.max_iter.unwrap_or(1000),
        };
        config.validate()?;
        Ok(config)
    }
}

/// Parses method names, dropping duplicates and keeping the first-seen order.
pub fn parse_methods<S: AsRef<str>>(names: &[S]) -> Result<Vec<Method>> {
    let mut out = Vec::new();
    for name in names {
        let m: Method = name.as_ref().parse()?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    Ok(out)
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("no methods selected".into()));
        }
        if self.jobs == 0 {
            return Err(Error::InvalidConfig("jobs must be at least 1".into()));
        }
        if !(self.tolerance > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidConfig("tolerance and max_iter must be positive".into()));
        }
        let cells = self.cells()?;
        if cells.is_empty() {
            return Err(Error::InvalidConfig("the scenario grid is empty".into()));
        }
        Ok(())
    }

    /// Grid cells in a fixed order: assignment, n, p, m, r, rho1, rho2.
    pub fn cells(&self) -> Result<Vec<ScenarioConfig>> {
        let g = &self.grid;
        let mut cells = Vec::new();
        for &assignment in &g.assignment {
            for &n in &g.n {
                for &p in &g.p {
                    for &m in &g.m {
                        for &r in &g.r {
                            if g.pair_rank_five_with_ten_outcomes && r == 5 && m != 10 {
                                continue;
                            }
                            for &rho1 in &g.rho1 {
                                for &rho2 in &g.rho2 {
                                    let cell = ScenarioConfig {
                                        n,
                                        p,
                                        m,
                                        r,
                                        rho1,
                                        rho2,
                                        assignment,
                                        replications: self.replications,
                                        master_seed: cell_seed(self.master_seed, n, p, m, r, rho1, rho2, assignment),
                                        freeze_truth: self.freeze_truth,
                                    };
                                    cell.validate()?;
                                    cells.push(cell);
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(cells)
    }

    fn solver_options(&self, rank: usize, init_seed: u64) -> SolverOptions {
        SolverOptions {
            tolerance: self.tolerance,
            max_iter: self.max_iter,
            init_seed,
            ..SolverOptions::new(rank)
        }
    }

    fn separable_options(&self) -> SeparableOptions {
        SeparableOptions {
            tolerance: self.tolerance,
            max_iter: self.max_iter,
            ..SeparableOptions::default()
        }
    }
}

/// Seed of one grid cell: a draw from the master seed's ChaCha key on a
/// stream selected by the cell parameters.
#[allow(clippy::too_many_arguments)]
fn cell_seed(master: u64, n: usize, p: usize, m: usize, r: usize, rho1: f64, rho2: f64, a: Assignment) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    let mut key = ChaCha8Rng::seed_from_u64(
        (n as u64)
            ^ (p as u64).rotate_left(16)
            ^ (m as u64).rotate_left(28)
            ^ (r as u64).rotate_left(36)
            ^ rho1.to_bits().rotate_left(7)
            ^ rho2.to_bits().rotate_left(23)
            ^ ((a == Assignment::Observational) as u64).rotate_left(63),
    );
    rng.set_stream(key.next_u64());
    rng.next_u64()
}

/// Seed for the solver start point of one replication.
fn init_seed(cell: &ScenarioConfig, replication: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(cell.master_seed);
    rng.set_stream(u64::MAX - replication as u64);
    rng.next_u64()
}

/// One successful (cell, replication, method) evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub cell: ScenarioConfig,
    pub replication: usize,
    pub method: Method,
    pub mse: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub auc: f64,
    /// Absent for the full model, whose per-outcome solver counts are not
    /// comparable.
    pub iterations: Option<usize>,
    pub converged: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRow {
    pub cell: ScenarioConfig,
    pub replication: usize,
    pub method: Method,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct StudyReport {
    pub rows: Vec<ResultRow>,
    pub errors: Vec<ErrorRow>,
}

impl StudyReport {
    /// Successful rows for one cell and method.
    pub fn rows_for<'a>(&'a self, scenario_id: &'a str, method: Method) -> impl Iterator<Item = &'a ResultRow> + 'a {
        self.rows
            .iter()
            .filter(move |r| r.method == method && r.cell.scenario_id() == scenario_id)
    }
}

struct Estimate {
    effect: EffectMatrix,
    iterations: Option<usize>,
    converged: bool,
    seconds: f64,
}

type Outcome = std::result::Result<(ResultRow, RocCurve), ErrorRow>;

/// Fits every requested method on one replication. Paired methods (`MA` and
/// `MAmod`, `R3A` and `R3Amod`) share a single fit.
fn run_replication(config: &StudyConfig, cell: &ScenarioConfig, replication: usize) -> Vec<Outcome> {
    let fail = |method: Method, err: &Error| ErrorRow {
        cell: cell.clone(),
        replication,
        method,
        reason: err.to_string(),
    };
    let ds = match generate_scenario(cell, replication) {
        Ok(ds) => ds,
        Err(e) => return config.methods.iter().map(|&m| Err(fail(m, &e))).collect(),
    };
    let data = &ds.data;
    let wants = |m: Method| config.methods.contains(&m);
    let options = config.solver_options(cell.r, init_seed(cell, replication));

    let mut estimates: BTreeMap<Method, Result<Estimate>> = BTreeMap::new();
    if wants(Method::Full) {
        estimates.insert(Method::Full, timed(|| estimate_full(data)));
    }
    if wants(Method::Ma) || wants(Method::MaMod) {
        let start = Instant::now();
        match fit_ma(data, &config.separable_options()) {
            Ok(fit) => {
                let iterations = Some(fit.max_iterations());
                let converged = fit.all_converged();
                let fit_secs = start.elapsed().as_secs_f64();
                for (method, corrected) in [(Method::Ma, false), (Method::MaMod, true)] {
                    if wants(method) {
                        let t = Instant::now();
                        let effect = if corrected {
                            corrected_effect_univariate(&fit.gamma, data.x(), data.pi())
                        } else {
                            raw_effect_gamma(&fit.gamma, data.x(), Method::Ma)
                        };
                        estimates.insert(
                            method,
                            effect.map(|effect| Estimate {
                                effect,
                                iterations,
                                converged,
                                seconds: fit_secs + t.elapsed().as_secs_f64(),
                            }),
                        );
                    }
                }
            }
            Err(e) => {
                let msg = e.to_string();
                for method in [Method::Ma, Method::MaMod] {
                    if wants(method) {
                        estimates.insert(method, Err(Error::Estimation(msg.clone())));
                    }
                }
            }
        }
    }
    if wants(Method::Mw) {
        estimates.insert(
            Method::Mw,
            timed(|| {
                let fit = fit_mw(data, &config.separable_options())?;
                Ok(Estimate {
                    effect: raw_effect_gamma(&fit.gamma, data.x(), Method::Mw)?,
                    iterations: Some(fit.max_iterations()),
                    converged: fit.all_converged(),
                    seconds: 0.0,
                })
            }),
        );
    }
    if wants(Method::R3a) || wants(Method::R3aMod) {
        let start = Instant::now();
        match fit_r3a(data, &options) {
            Ok(fit) => {
                let fit_secs = start.elapsed().as_secs_f64();
                for (method, corrected) in [(Method::R3a, false), (Method::R3aMod, true)] {
                    if wants(method) {
                        let t = Instant::now();
                        let effect = if corrected {
                            corrected_effect(&fit.coeffs, data.x(), data.pi())
                        } else {
                            raw_effect(&fit.coeffs, data.x(), Method::R3a)
                        };
                        estimates.insert(
                            method,
                            effect.map(|effect| Estimate {
                                effect,
                                iterations: Some(fit.iterations),
                                converged: fit.converged,
                                seconds: fit_secs + t.elapsed().as_secs_f64(),
                            }),
                        );
                    }
                }
            }
            Err(e) => {
                let msg = e.to_string();
                for method in [Method::R3a, Method::R3aMod] {
                    if wants(method) {
                        estimates.insert(method, Err(Error::Estimation(msg.clone())));
                    }
                }
            }
        }
    }
    if wants(Method::R3w) {
        estimates.insert(
            Method::R3w,
            timed(|| {
                let fit = fit_r3w(data, &options)?;
                Ok(Estimate {
                    effect: raw_effect(&fit.coeffs, data.x(), Method::R3w)?,
                    iterations: Some(fit.iterations),
                    converged: fit.converged,
                    seconds: 0.0,
                })
            }),
        );
    }

    let s_true = subject_scores(&ds.h_true);
    config
        .methods
        .iter()
        .map(|&method| {
            let est = estimates
                .remove(&method)
                .expect("every requested method has an estimate")
                .map_err(|e| fail(method, &e))?;
            score(cell, replication, method, est, &ds.h_true, &s_true).map_err(|e| fail(method, &e))
        })
        .collect()
}

fn timed(f: impl FnOnce() -> Result<Estimate>) -> Result<Estimate> {
    let start = Instant::now();
    let mut est = f()?;
    est.seconds = start.elapsed().as_secs_f64();
    Ok(est)
}

fn estimate_full(data: &TrialData) -> Result<Estimate> {
    let fit = fit_full(data)?;
    Ok(Estimate {
        effect: full_effect(&fit, data.x())?,
        iterations: None,
        converged: true,
        seconds: 0.0,
    })
}

/// Metrics for one estimate. When every subject's true score has the same
/// sign the rates and AUC are undefined and recorded as NaN.
fn score(
    cell: &ScenarioConfig,
    replication: usize,
    method: Method,
    est: Estimate,
    h_true: &DMatrix<f64>,
    s_true: &nalgebra::DVector<f64>,
) -> Result<(ResultRow, RocCurve)> {
    let err = mse(&est.effect.h, h_true)?;
    let s_hat = subject_scores(&est.effect.h);
    let (fpr, fnr, roc) = match classification_rates(&s_hat, s_true, 0.0) {
        Ok(rates) => (rates.fpr, rates.fnr, roc_and_auc(&s_hat, s_true)?),
        Err(Error::UndefinedRate(_)) => (
            f64::NAN,
            f64::NAN,
            RocCurve {
                points: Vec::new(),
                auc: f64::NAN,
            },
        ),
        Err(e) => return Err(e),
    };
    let row = ResultRow {
        cell: cell.clone(),
        replication,
        method,
        mse: err,
        fpr,
        fnr,
        auc: roc.auc,
        iterations: est.iterations,
        converged: est.converged,
        seconds: est.seconds,
    };
    Ok((row, roc))
}

/// Runs the study without writing files; the returned ROC curves are
/// aligned with `rows`.
pub fn run_study(config: &StudyConfig) -> Result<(StudyReport, Vec<RocCurve>)> {
    config.validate()?;
    let cells = config.cells()?;
    let tasks: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..config.replications).map(move |rep| (c, rep)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let outcomes: Vec<Vec<Outcome>> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(c, rep)| run_replication(config, &cells[c], rep))
            .collect()
    });

    let mut report = StudyReport::default();
    let mut curves = Vec::new();
    for outcome in outcomes.into_iter().flatten() {
        match outcome {
            Ok((row, roc)) => {
                report.rows.push(row);
                curves.push(roc);
            }
            Err(e) => {
                log::warn!(
                    "{} replication {} {}: {}",
                    e.cell.scenario_id(),
                    e.replication,
                    e.method,
                    e.reason
                );
                report.errors.push(e);
            }
        }
    }
    Ok((report, curves))
}

/// Runs the study and writes its CSV files into `config.out_dir`.
pub fn run_simulation_study(config: &StudyConfig) -> Result<StudyReport> {
    let (report, curves) = run_study(config)?;
    std::fs::create_dir_all(&config.out_dir)?;
    write_results(&report.rows, File::create(config.out_dir.join("results.csv"))?)?;
    write_errors(&report.errors, File::create(config.out_dir.join("errors.csv"))?)?;
    write_summary(&report.rows, File::create(config.out_dir.join("summary.csv"))?)?;
    write_pooled_roc(
        &report.rows,
        &curves,
        File::create(config.out_dir.join("roc_pooled.csv"))?,
    )?;
    Ok(report)
}

fn fmt_f(v: f64) -> String {
    format!("{v}")
}

fn cell_fields(cell: &ScenarioConfig) -> [String; 8] {
    [
        cell.scenario_id(),
        cell.n.to_string(),
        cell.p.to_string(),
        cell.m.to_string(),
        cell.r.to_string(),
        fmt_f(cell.rho1),
        fmt_f(cell.rho2),
        cell.assignment.to_string(),
    ]
}

pub fn write_results<W: std::io::Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULTS_HEADER)?;
    for row in rows {
        let mut rec: Vec<String> = cell_fields(&row.cell).into();
        rec.extend([
            row.replication.to_string(),
            row.method.to_string(),
            fmt_f(row.mse),
            fmt_f(row.fpr),
            fmt_f(row.fnr),
            fmt_f(row.auc),
            row.iterations.map(|i| i.to_string()).unwrap_or_default(),
            row.converged.to_string(),
            format!("{:.6}", row.seconds),
        ]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_errors<W: std::io::Write>(errors: &[ErrorRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ERRORS_HEADER)?;
    for e in errors {
        w.write_record([
            e.cell.scenario_id(),
            e.replication.to_string(),
            e.method.to_string(),
            e.reason.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Sample quantile with linear interpolation between order statistics
/// (`h = (n - 1) q`). NaN values are dropped; NaN when nothing remains.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

fn iqr(values: &[f64]) -> f64 {
    quantile(values, 0.75) - quantile(values, 0.25)
}

fn mean(values: &[f64]) -> f64 {
    let v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Groups row indices by (scenario, method) in first-seen order.
fn groups(rows: &[ResultRow]) -> Vec<((String, Method), Vec<usize>)> {
    let mut out: Vec<((String, Method), Vec<usize>)> = Vec::new();
    for (k, row) in rows.iter().enumerate() {
        let key = (row.cell.scenario_id(), row.method);
        match out.iter_mut().find(|(g, _)| *g == key) {
            Some((_, members)) => members.push(k),
            None => out.push((key, vec![k])),
        }
    }
    out
}

pub fn write_summary<W: std::io::Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for ((id, method), members) in groups(rows) {
        let pick = |f: fn(&ResultRow) -> f64| members.iter().map(|&k| f(&rows[k])).collect::<Vec<_>>();
        let mse_v = pick(|r| r.mse);
        let fpr_v = pick(|r| r.fpr);
        let fnr_v = pick(|r| r.fnr);
        let auc_v = pick(|r| r.auc);
        let converged = members.iter().filter(|&&k| rows[k].converged).count() as f64 / members.len() as f64;
        w.write_record([
            id,
            method.to_string(),
            members.len().to_string(),
            fmt_f(median(&mse_v)),
            fmt_f(iqr(&mse_v)),
            fmt_f(median(&fpr_v)),
            fmt_f(iqr(&fpr_v)),
            fmt_f(median(&fnr_v)),
            fmt_f(iqr(&fnr_v)),
            fmt_f(median(&auc_v)),
            fmt_f(iqr(&auc_v)),
            fmt_f(mean(&auc_v)),
            fmt_f(converged),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Vertically averaged ROC curve per (scenario, method) on an evenly spaced
/// false-positive-rate grid. Replications with undefined curves are skipped.
pub fn write_pooled_roc<W: std::io::Write>(rows: &[ResultRow], curves: &[RocCurve], out: W) -> Result<()> {
    if rows.len() != curves.len() {
        return Err(Error::Dimension(format!(
            "{} result rows but {} ROC curves",
            rows.len(),
            curves.len()
        )));
    }
    let grid: Vec<f64> = (0..ROC_GRID_POINTS)
        .map(|k| k as f64 / (ROC_GRID_POINTS - 1) as f64)
        .collect();
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ROC_HEADER)?;
    for ((id, method), members) in groups(rows) {
        let usable: Vec<RocCurve> = members
            .iter()
            .map(|&k| &curves[k])
            .filter(|c| !c.points.is_empty())
            .cloned()
            .collect();
        if usable.is_empty() {
            continue;
        }
        for (f, tpr) in grid.iter().zip(vertical_average(&usable, &grid)) {
            w.write_record([id.clone(), method.to_string(), fmt_f(*f), fmt_f(tpr)])?;
        }
    }
    w.flush()?;
    Ok(())
}
