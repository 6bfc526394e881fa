//! Command-line entry point.
//!
//! Exit codes: 0 on success, 1 on invalid input or configuration, 2 when a
//! computation fails.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rrhte::realdata::{run_real_data, RealDataFile};
use rrhte::simulation::{dump_dataset, generate_scenario, Assignment, ScenarioConfig};
use rrhte::study::{parse_methods, run_simulation_study, StudyFile};
use rrhte::Error;

#[derive(Parser)]
#[command(
    name = "rrhte",
    version,
    about = "Reduced-rank heterogeneous treatment effects for multiple binary outcomes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation study over a scenario grid.
    Simulate(SimulateArgs),
    /// Fit a trial stored as CSV and write loadings and effects.
    Analyze(AnalyzeArgs),
    /// Write simulated datasets for one scenario as CSV.
    GenData(GenDataArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML file with the grid and other settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    jobs: usize,
    /// Comma-separated subset of Full, MA, MAmod, MW, R3A, R3Amod, R3W, or "all".
    #[arg(long)]
    methods: String,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    freeze_truth: bool,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// TOML file with column roles and fit settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    treatment: Option<String>,
    /// Value of the treatment column coded as treated.
    #[arg(long)]
    treated_level: Option<String>,
    /// Comma-separated outcome columns; suffix a name with ":median" to split it at its median.
    #[arg(long, value_delimiter = ',')]
    outcomes: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
    #[arg(long)]
    rank: Option<usize>,
    /// empirical, logistic, column:<name>, or a constant in (0, 1).
    #[arg(long)]
    propensity: Option<String>,
    /// Loadings below this magnitude are blanked in W_thresholded.csv.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    standardize: bool,
    /// Also fit the bias-corrected A-learner.
    #[arg(long)]
    with_r3amod: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    ridge: Option<f64>,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    p: usize,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    r: usize,
    #[arg(long, default_value_t = 0.0)]
    rho1: f64,
    #[arg(long, default_value_t = 0.0)]
    rho2: f64,
    #[arg(long, default_value = "rct")]
    assignment: String,
    #[arg(long, default_value_t = 1)]
    replications: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    freeze_truth: bool,
}

fn simulate(args: SimulateArgs) -> rrhte::Result<()> {
    let mut file = match &args.config {
        Some(path) => StudyFile::load(path)?,
        None => StudyFile::default(),
    };
    file.seed = Some(args.seed);
    file.out = Some(args.out);
    file.jobs = Some(args.jobs);
    if !args.methods.eq_ignore_ascii_case("all") {
        let names: Vec<&str> = args.methods.split(',').map(str::trim).collect();
        parse_methods(&names)?;
        file.methods = Some(names.into_iter().map(String::from).collect());
    }
    if args.replications.is_some() {
        file.replications = args.replications;
    }
    if args.freeze_truth {
        file.freeze_truth = Some(true);
    }
    let config = file.into_config()?;
    let report = run_simulation_study(&config)?;
    log::info!(
        "wrote {} result rows and {} error rows to {}",
        report.rows.len(),
        report.errors.len(),
        config.out_dir.display()
    );
    Ok(())
}

fn analyze(args: AnalyzeArgs) -> rrhte::Result<()> {
    let mut file = match &args.config {
        Some(path) => RealDataFile::load(path)?,
        None => RealDataFile::default(),
    };
    macro_rules! override_with {
        ($($field:ident),*) => { $( if args.$field.is_some() { file.$field = args.$field; } )* };
    }
    override_with!(
        input,
        out,
        treatment,
        treated_level,
        outcomes,
        covariates,
        rank,
        propensity,
        threshold,
        seed,
        tolerance,
        max_iter,
        ridge
    );
    if args.standardize {
        file.standardize = Some(true);
    }
    if args.with_r3amod {
        file.with_r3amod = Some(true);
    }
    let config = file.into_config()?;
    let report = run_real_data(&config)?;
    log::info!(
        "R3W: {} iterations, objective {:.6}, converged {}",
        report.r3w.iterations,
        report.r3w.objective(),
        report.r3w.converged
    );
    Ok(())
}

fn gen_data(args: GenDataArgs) -> rrhte::Result<()> {
    let cell = ScenarioConfig {
        n: args.n,
        p: args.p,
        m: args.m,
        r: args.r,
        rho1: args.rho1,
        rho2: args.rho2,
        assignment: args.assignment.parse::<Assignment>()?,
        replications: args.replications,
        master_seed: args.seed,
        freeze_truth: args.freeze_truth,
    };
    cell.validate()?;
    for rep in 0..cell.replications {
        let ds = generate_scenario(&cell, rep)?;
        dump_dataset(&ds, &args.out, &format!("replication_{rep:04}"))?;
    }
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    if err.is_validation() {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Analyze(args) => analyze(args),
        Command::GenData(args) => gen_data(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
