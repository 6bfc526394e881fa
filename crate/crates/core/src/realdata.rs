//! Analysis of a trial stored as CSV: column roles, median dichotomization,
//! a reduced-rank W-method fit (optionally the bias-corrected A-learner too),
//! and report files.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::data::{center_columns, estimate_propensity, treatment_from_binary, PropensityMode, TrialData};
use crate::effects::{corrected_effect, raw_effect, Method};
use crate::error::{Error, Result};
use crate::evaluation::subject_scores;
use crate::solver::{fit_r3a, fit_r3w, FitResult, SolverOptions};

/// Default display threshold for covariate loadings.
pub const LOADING_THRESHOLD: f64 = 0.1;

/// An outcome column, optionally split at its median.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutcomeColumn {
    pub name: String,
    pub dichotomize: bool,
}

impl FromStr for OutcomeColumn {
    type Err = Error;

    /// `name` or `name:median`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, dichotomize) = match s.rsplit_once(':') {
            Some((name, "median")) => (name, true),
            Some((_, flag)) => {
                return Err(Error::InvalidConfig(format!(
                    "unknown outcome flag '{flag}' in '{s}' (only ':median' is supported)"
                )))
            }
            None => (s, false),
        };
        if name.is_empty() {
            return Err(Error::InvalidConfig("empty outcome column name".into()));
        }
        Ok(Self {
            name: name.to_string(),
            dichotomize,
        })
    }
}

/// Where propensity scores come from.
#[derive(Debug, Clone, PartialEq)]
pub enum PropensitySource {
    Model(PropensityMode),
    /// Read per-subject values from a column.
    Column(String),
}

impl FromStr for PropensitySource {
    type Err = Error;

    /// `empirical`, `logistic`, `column:<name>`, or a constant in (0, 1).
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "empirical" => Ok(Self::Model(PropensityMode::EmpiricalRct)),
            "logistic" => Ok(Self::Model(PropensityMode::Logistic)),
            _ => {
                if let Some(name) = s.strip_prefix("column:") {
                    return Ok(Self::Column(name.to_string()));
                }
                let c: f64 = s.parse().map_err(|_| {
                    Error::InvalidConfig(format!(
                        "propensity '{s}' is not empirical, logistic, column:<name> or a number"
                    ))
                })?;
                if !(c > 0.0 && c < 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "constant propensity {c} must lie in (0, 1)"
                    )));
                }
                Ok(Self::Model(PropensityMode::Constant(c)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RealDataConfig {
    pub input: PathBuf,
    pub treatment: String,
    /// Value of the treatment column coded as `t = +1`.
    pub treated_level: String,
    pub outcomes: Vec<OutcomeColumn>,
    pub covariates: Vec<String>,
    pub rank: usize,
    pub propensity: PropensitySource,
    pub threshold: f64,
    /// Scale covariates to unit sample variance after centering.
    pub standardize: bool,
    pub with_r3amod: bool,
    pub solver: SolverOptions,
    pub out_dir: PathBuf,
}

/// On-disk form of [`RealDataConfig`]; command-line flags override it.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RealDataFile {
    pub input: Option<PathBuf>,
    pub treatment: Option<String>,
    pub treated_level: Option<String>,
    pub outcomes: Option<Vec<String>>,
    pub covariates: Option<Vec<String>>,
    pub rank: Option<usize>,
    pub propensity: Option<String>,
    pub threshold: Option<f64>,
    pub standardize: Option<bool>,
    pub with_r3amod: Option<bool>,
    pub seed: Option<u64>,
    pub tolerance: Option<f64>,
    pub max_iter: Option<usize>,
    pub ridge: Option<f64>,
    pub out: Option<PathBuf>,
}

fn required<T>(value: Option<T>, key: &str) -> Result<T> {
    value.ok_or_else(|| Error::InvalidConfig(format!("'{key}' is required")))
}

impl RealDataFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("analysis config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn into_config(self) -> Result<RealDataConfig> {
        let rank = self.rank.unwrap_or(2);
        let mut solver = SolverOptions::new(rank);
        if let Some(seed) = self.seed {
            solver.init_seed = seed;
        }
        if let Some(tol) = self.tolerance {
            solver.tolerance = tol;
        }
        if let Some(max_iter) = self.max_iter {
            solver.max_iter = max_iter;
        }
        if let Some(ridge) = self.ridge {
            solver.ridge = ridge;
        }
        let config = RealDataConfig {
            input: required(self.input, "input")?,
            treatment: required(self.treatment, "treatment")?,
            treated_level: required(self.treated_level, "treated_level")?,
            outcomes: required(self.outcomes, "outcomes")?
                .iter()
                .map(|s| s.parse())
                .collect::<Result<_>>()?,
            covariates: required(self.covariates, "covariates")?,
            rank,
            propensity: match self.propensity {
                Some(s) => s.parse()?,
                None => PropensitySource::Model(PropensityMode::EmpiricalRct),
            },
            threshold: self.threshold.unwrap_or(LOADING_THRESHOLD),
            standardize: self.standardize.unwrap_or(false),
            with_r3amod: self.with_r3amod.unwrap_or(false),
            solver,
            out_dir: required(self.out, "out")?,
        };
        config.validate()?;
        Ok(config)
    }
}

impl RealDataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outcomes.is_empty() || self.covariates.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one outcome and one covariate are required".into(),
            ));
        }
        let mut names: Vec<&str> = vec![self.treatment.as_str()];
        names.extend(self.outcomes.iter().map(|o| o.name.as_str()));
        names.extend(self.covariates.iter().map(String::as_str));
        if let PropensitySource::Column(c) = &self.propensity {
            names.push(c);
        }
        let mut sorted = names.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig(format!(
                "column '{}' has more than one role",
                w[0]
            )));
        }
        if self.rank == 0 || self.rank > self.covariates.len().min(self.outcomes.len()) {
            return Err(Error::InvalidConfig(format!(
                "rank {} must lie in 1..={}",
                self.rank,
                self.covariates.len().min(self.outcomes.len())
            )));
        }
        if self.solver.rank != self.rank {
            return Err(Error::InvalidConfig(
                "solver rank differs from the requested rank".into(),
            ));
        }
        if self.threshold.is_nan() || self.threshold < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "threshold {} must be non-negative",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// A loaded trial plus the names needed to label reports.
#[derive(Debug, Clone)]
pub struct LoadedTrial {
    pub data: TrialData,
    pub outcome_names: Vec<String>,
    pub covariate_names: Vec<String>,
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
        row: 0,
        column: name.to_string(),
        message: "column not found in header".into(),
    })
}

fn parse_cell(record: &csv::StringRecord, idx: usize, row: usize, column: &str) -> Result<f64> {
    let raw = record.get(idx).unwrap_or("").trim();
    let value: f64 = raw.parse().map_err(|_| Error::Parse {
        row,
        column: column.to_string(),
        message: format!("'{raw}' is not a number"),
    })?;
    if !value.is_finite() {
        return Err(Error::Parse {
            row,
            column: column.to_string(),
            message: format!("'{raw}' is not finite"),
        });
    }
    Ok(value)
}

/// Median with the average of the two middle values for even counts.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// `1` where the value exceeds the median, `0` otherwise.
pub fn dichotomize_at_median(values: &[f64]) -> Vec<f64> {
    let cut = median(values);
    values.iter().map(|&v| if v > cut { 1.0 } else { 0.0 }).collect()
}

fn standardize_columns(x: &mut DMatrix<f64>, names: &[String]) -> Result<()> {
    let n = x.nrows() as f64;
    for (mut col, name) in x.column_iter_mut().zip(names) {
        let sd = (col.iter().map(|v| v * v).sum::<f64>() / (n - 1.0)).sqrt();
        if !(sd > 0.0) {
            return Err(Error::Validation(format!("covariate '{name}' is constant")));
        }
        col /= sd;
    }
    Ok(())
}

/// Reads the CSV named by `config.input` and builds centered trial data.
///
/// Rows are numbered from 1 for the first data line in error messages.
pub fn load_dataset_csv(config: &RealDataConfig) -> Result<LoadedTrial> {
    config.validate()?;
    let mut reader = csv::Reader::from_path(&config.input)?;
    let headers = reader.headers()?.clone();
    let t_idx = column_index(&headers, &config.treatment)?;
    let y_idx: Vec<usize> = config
        .outcomes
        .iter()
        .map(|o| column_index(&headers, &o.name))
        .collect::<Result<_>>()?;
    let x_idx: Vec<usize> = config
        .covariates
        .iter()
        .map(|c| column_index(&headers, c))
        .collect::<Result<_>>()?;
    let pi_idx = match &config.propensity {
        PropensitySource::Column(c) => Some(column_index(&headers, c)?),
        PropensitySource::Model(_) => None,
    };

    let mut levels: Vec<String> = Vec::new();
    let mut t01 = Vec::new();
    let mut y_cols: Vec<Vec<f64>> = vec![Vec::new(); y_idx.len()];
    let mut x_rows: Vec<f64> = Vec::new();
    let mut pi_vals = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let row = k + 1;
        let record = record?;
        let level = record.get(t_idx).unwrap_or("").trim().to_string();
        if level.is_empty() {
            return Err(Error::Parse {
                row,
                column: config.treatment.clone(),
                message: "missing treatment value".into(),
            });
        }
        if !levels.contains(&level) {
            levels.push(level.clone());
        }
        t01.push(if level == config.treated_level { 1.0 } else { 0.0 });
        for (col, (&idx, o)) in y_cols.iter_mut().zip(y_idx.iter().zip(&config.outcomes)) {
            col.push(parse_cell(&record, idx, row, &o.name)?);
        }
        for (&idx, name) in x_idx.iter().zip(&config.covariates) {
            x_rows.push(parse_cell(&record, idx, row, name)?);
        }
        if let (Some(idx), PropensitySource::Column(name)) = (pi_idx, &config.propensity) {
            pi_vals.push(parse_cell(&record, idx, row, name)?);
        }
    }
    let n = t01.len();
    if levels.len() != 2 {
        return Err(Error::Validation(format!(
            "treatment column '{}' has {} distinct values ({}); exactly 2 are required",
            config.treatment,
            levels.len(),
            levels.join(", ")
        )));
    }
    if !levels.contains(&config.treated_level) {
        return Err(Error::Validation(format!(
            "treated level '{}' does not occur in column '{}' (values: {})",
            config.treated_level,
            config.treatment,
            levels.join(", ")
        )));
    }

    let mut y = DMatrix::zeros(n, y_cols.len());
    for (j, (values, o)) in y_cols.iter().zip(&config.outcomes).enumerate() {
        let binary = if o.dichotomize {
            dichotomize_at_median(values)
        } else {
            if let Some(i) = values.iter().position(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Parse {
                    row: i + 1,
                    column: o.name.clone(),
                    message: format!("{} is not 0 or 1; add ':median' to dichotomize", values[i]),
                });
            }
            values.clone()
        };
        if binary.iter().all(|&v| v == binary[0]) {
            return Err(Error::Validation(format!(
                "outcome '{}' is constant after dichotomization",
                o.name
            )));
        }
        y.set_column(j, &DVector::from_vec(binary));
    }

    let x_raw = DMatrix::from_row_slice(n, x_idx.len(), &x_rows);
    let mut x = center_columns(&x_raw)?;
    if config.standardize {
        standardize_columns(&mut x, &config.covariates)?;
    }
    let t = treatment_from_binary(&t01)?;
    let pi = match &config.propensity {
        PropensitySource::Column(_) => DVector::from_vec(pi_vals),
        PropensitySource::Model(mode) => estimate_propensity(&x, &t, *mode)?.predict(&x)?,
    };
    Ok(LoadedTrial {
        data: TrialData::new(x, y, t, pi)?,
        outcome_names: config.outcomes.iter().map(|o| o.name.clone()).collect(),
        covariate_names: config.covariates.clone(),
    })
}

/// Fits produced by [`run_real_data`].
#[derive(Debug, Clone)]
pub struct RealDataReport {
    pub trial: LoadedTrial,
    pub r3w: FitResult,
    pub r3amod: Option<FitResult>,
}

pub fn run_real_data(config: &RealDataConfig) -> Result<RealDataReport> {
    let trial = load_dataset_csv(config)?;
    let data = &trial.data;
    let r3w = fit_r3w(data, &config.solver)?;
    if !r3w.converged {
        log::warn!(
            "R3W stopped after {} iterations without converging; raise max_iter or loosen the tolerance",
            r3w.iterations
        );
    }
    let r3amod = if config.with_r3amod {
        Some(fit_r3a(data, &config.solver)?)
    } else {
        None
    };

    let dir = &config.out_dir;
    std::fs::create_dir_all(dir)?;
    write_loadings(
        File::create(dir.join("V.csv"))?,
        "outcome",
        &trial.outcome_names,
        r3w.coeffs.v(),
        None,
    )?;
    write_loadings(
        File::create(dir.join("W.csv"))?,
        "covariate",
        &trial.covariate_names,
        r3w.coeffs.w(),
        None,
    )?;
    write_loadings(
        File::create(dir.join("W_thresholded.csv"))?,
        "covariate",
        &trial.covariate_names,
        r3w.coeffs.w(),
        Some(config.threshold),
    )?;
    let effects = raw_effect(&r3w.coeffs, data.x(), Method::R3w)?;
    write_effects(File::create(dir.join("effects.csv"))?, &trial.outcome_names, &effects.h)?;

    let mut fits: Vec<(Method, &FitResult)> = vec![(Method::R3w, &r3w)];
    if let Some(fit) = &r3amod {
        write_loadings(
            File::create(dir.join("V_r3amod.csv"))?,
            "outcome",
            &trial.outcome_names,
            fit.coeffs.v(),
            None,
        )?;
        write_loadings(
            File::create(dir.join("W_r3amod.csv"))?,
            "covariate",
            &trial.covariate_names,
            fit.coeffs.w(),
            None,
        )?;
        let corrected = corrected_effect(&fit.coeffs, data.x(), data.pi())?;
        write_effects(
            File::create(dir.join("effects_r3amod.csv"))?,
            &trial.outcome_names,
            &corrected.h,
        )?;
        fits.push((Method::R3aMod, fit));
    }
    write_fit_meta(File::create(dir.join("fit_meta.csv"))?, &fits)?;
    Ok(RealDataReport { trial, r3w, r3amod })
}

/// `<label>,<prefix>1..<prefix>r` with one row per name. With a threshold,
/// entries smaller in magnitude are left blank.
fn write_loadings<W: Write>(
    out: W,
    label: &str,
    names: &[String],
    loadings: &DMatrix<f64>,
    threshold: Option<f64>,
) -> Result<()> {
    let prefix = if label == "outcome" { "v" } else { "w" };
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![label.to_string()];
    header.extend((1..=loadings.ncols()).map(|k| format!("{prefix}{k}")));
    w.write_record(&header)?;
    for (i, name) in names.iter().enumerate() {
        let mut rec = vec![name.clone()];
        for k in 0..loadings.ncols() {
            let v = loadings[(i, k)];
            rec.push(match threshold {
                Some(t) if !(v.abs() >= t) => String::new(),
                _ => format!("{v}"),
            });
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn write_effects<W: Write>(out: W, outcomes: &[String], h: &DMatrix<f64>) -> Result<()> {
    let scores = subject_scores(h);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string()];
    header.extend(outcomes.iter().cloned());
    header.push("score".into());
    w.write_record(&header)?;
    for i in 0..h.nrows() {
        let mut rec = vec![(i + 1).to_string()];
        rec.extend(h.row(i).iter().map(|v| format!("{v}")));
        rec.push(format!("{}", scores[i]));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn write_fit_meta<W: Write>(out: W, fits: &[(Method, &FitResult)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "iteration", "objective", "converged", "ridge"])?;
    for (method, fit) in fits {
        for (k, value) in fit.objective_trace.iter().enumerate() {
            w.write_record([
                method.to_string(),
                k.to_string(),
                format!("{value}"),
                fit.converged.to_string(),
                format!("{}", fit.ridge),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
