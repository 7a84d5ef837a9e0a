//! Command-line front end: `fit`, `generate`, `evaluate` and `audit`.
//!
//! Exit codes: 0 ok, 2 validation, 3 budget, 4 infeasible condition,
//! 5 audit violation. Reports and data go to stdout, diagnostics to stderr.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::audit::fixtures::{audit_fixture, Fixture};
use crate::audit::{self, AuditOutcome, MIN_PROBES, MIN_RUNS};
use crate::domain::{load_domain, ColumnSpec, Domain};
use crate::error::{Error, Result};
use crate::metrics::{utility_report_with_bins, DEFAULT_BINS};
use crate::preprocess::Discretization;
use crate::privacy::eps_of_rho;
use crate::rng::seeded;
use crate::select::ModelKind;
use crate::synth::{fit, fit_private, pretrain_public, Condition, FittedSynthesizer, SynthesizerConfig};
use crate::table::{Column, MixedTable};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;
pub const EXIT_INFEASIBLE: i32 = 4;
pub const EXIT_VIOLATION: i32 = 5;

#[derive(Debug, Parser)]
#[command(name = "dpsynth", version, about = "Differentially private synthetic data")]
struct Cli {
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a synthesizer and write the model container.
    Fit(FitArgs),
    /// Sample rows from a saved model.
    Generate(GenerateArgs),
    /// Score synthetic data against real data.
    Evaluate(EvaluateArgs),
    /// Run an empirical privacy audit.
    Audit(AuditArgs),
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    model: ModelKind,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    domain: Option<PathBuf>,
    #[arg(long)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-5)]
    delta: f64,
    #[arg(long)]
    proc_epsilon: Option<f64>,
    #[arg(long, default_value_t = 2)]
    degree: usize,
    #[arg(long, default_value_t = 80.0)]
    size_cap_mb: f64,
    #[arg(long, default_value = "privtree")]
    discretization: Discretization,
    #[arg(long, default_value_t = 20)]
    bins: usize,
    /// Data declared public: preprocessing and selection run on it for free.
    #[arg(long)]
    public_data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Model container written by `fit`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    rows: usize,
    /// `column=value` or `column=[lo,hi]`; repeatable.
    #[arg(long = "condition")]
    conditions: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    real: PathBuf,
    #[arg(long)]
    synth: PathBuf,
    #[arg(long)]
    domain: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Suite {
    Game,
    Float,
}

#[derive(Debug, Args)]
struct AuditArgs {
    #[arg(long, value_enum)]
    suite: Suite,
    /// `privbayes`, `mst`, `aim` or `fixture:NAME`.
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = 1000)]
    runs: usize,
    #[arg(long, default_value_t = 1.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-3)]
    delta: f64,
    #[arg(long)]
    seed: Option<u64>,
}

/// Maps a library error to its exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::AuditRun { source, .. } => exit_code(source),
        e if e.is_budget() => EXIT_BUDGET,
        Error::InfeasibleCondition(_) => EXIT_INFEASIBLE,
        _ => EXIT_VALIDATION,
    }
}

/// Runs the CLI on `args` (including the program name), writing reports to
/// `out` and diagnostics to `err`. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(cli.command, out, err)),
            Err(e) => Err(Error::invalid(format!("cannot start {n} threads: {e}"))),
        },
        None => dispatch(cli.command, out, err),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(command: Command, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> Result<i32> {
    match command {
        Command::Fit(a) => cmd_fit(a, out, err),
        Command::Generate(a) => cmd_generate(a, err),
        Command::Evaluate(a) => cmd_evaluate(a, out),
        Command::Audit(a) => cmd_audit(a, out),
    }
}

fn read_domain(path: &Path) -> Result<Domain> {
    load_domain(&std::fs::read_to_string(path)?)
}

/// Domain for data that came without one. Categories would have to be read
/// off the private data, so only all-numerical tables qualify, and their
/// bounds are left to the private preprocessing.
fn numeric_domain(table: &MixedTable) -> Result<Domain> {
    let specs = table
        .names()
        .iter()
        .zip(table.columns())
        .map(|(name, col)| match col {
            Column::Numerical(_) => Ok(ColumnSpec::numerical(name.clone(), None)),
            Column::Categorical(_) => Err(Error::validation(format!(
                "column `{name}` is categorical; pass --domain to declare its categories"
            ))),
        })
        .collect::<Result<Vec<_>>>()?;
    Domain::new(specs)
}

fn cmd_fit(a: FitArgs, out: &mut (dyn Write + Send), err: &mut (dyn Write + Send)) -> Result<i32> {
    let (data, domain) = match &a.domain {
        Some(p) => {
            let domain = read_domain(p)?;
            (MixedTable::read_csv_path(&a.data, &domain)?, domain)
        }
        None => {
            let data = MixedTable::read_csv_untyped(std::fs::File::open(&a.data)?)?;
            let domain = numeric_domain(&data)?;
            if a.proc_epsilon.is_none() && a.public_data.is_none() {
                return Err(Error::BudgetRequired(
                    "without --domain, bounds and bins are estimated privately; pass --proc-epsilon".into(),
                ));
            }
            (data, domain)
        }
    };
    let seed = a.seed.unwrap_or_else(rand::random);
    let config = SynthesizerConfig {
        model: a.model,
        epsilon: a.epsilon,
        delta: a.delta,
        epsilon_proc: a.proc_epsilon,
        degree: a.degree,
        size_cap_mb: a.size_cap_mb,
        discretization: a.discretization,
        bins: a.bins,
        seed: Some(seed),
        ..Default::default()
    };
    let mut rng = seeded(seed);
    let fitted = match &a.public_data {
        Some(p) => {
            let public = MixedTable::read_csv_path(p, &domain)?;
            // Preprocessing and selection are free on public data, so the
            // whole budget goes to measurement.
            let config = SynthesizerConfig { epsilon_proc: Some(0.0), ..config };
            let state = pretrain_public(&config, &public, &domain, &mut rng)?;
            fit_private(&state, &data, &mut rng)?
        }
        None => fit(&config, &data, &domain, &mut rng)?,
    };
    fitted.save(&a.out)?;
    writeln!(err, "wrote {}", a.out.display())?;
    write_ledger(&fitted, out)?;
    Ok(EXIT_OK)
}

fn write_ledger(fitted: &FittedSynthesizer, out: &mut (dyn Write + Send)) -> Result<()> {
    let ledger = fitted.ledger();
    let names = fitted.preprocessor().names();
    let summary = serde_json::json!({
        "model": fitted.config().model.to_string(),
        "epsilon": fitted.config().epsilon,
        "delta": fitted.config().delta,
        "total_rho": ledger.total_rho(),
        "spent_rho": ledger.spent_rho(),
        "epsilon_spent": eps_of_rho(ledger.spent_rho(), fitted.config().delta).unwrap_or(0.0),
        "entries": ledger.log().len(),
        "cliques": fitted.cliques().iter().map(|c| c.attrs().iter().map(|&a| names[a].as_str()).collect::<Vec<_>>()).collect::<Vec<_>>(),
    });
    writeln!(out, "{}", serde_json::to_string_pretty(&summary)?)?;
    Ok(())
}

fn cmd_generate(a: GenerateArgs, err: &mut (dyn Write + Send)) -> Result<i32> {
    let fitted = FittedSynthesizer::load(&a.model)?;
    let conditions = a
        .conditions
        .iter()
        .map(|c| Condition::parse(c, fitted.domain()))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = seeded(a.seed.unwrap_or_else(rand::random));
    let table = fitted.generate(a.rows, &conditions, &mut rng)?;
    table.write_csv_path(&a.out)?;
    writeln!(err, "wrote {} rows to {}", table.n_rows(), a.out.display())?;
    Ok(EXIT_OK)
}

fn cmd_evaluate(a: EvaluateArgs, out: &mut (dyn Write + Send)) -> Result<i32> {
    let domain = read_domain(&a.domain)?;
    let real = MixedTable::read_csv_path(&a.real, &domain)?;
    let synth = MixedTable::read_csv_path(&a.synth, &domain)?;
    let mut rng = seeded(a.seed.unwrap_or(0));
    let report = utility_report_with_bins(&real, &synth, &domain, a.bins, &mut rng)?;
    match &a.out {
        Some(p) => std::fs::write(p, report.to_text() + "\n")?,
        None => writeln!(out, "{}", report.to_text())?,
    }
    Ok(EXIT_OK)
}

enum Target {
    Model(ModelKind),
    Fixture(Fixture),
}

fn parse_target(text: &str) -> Result<Target> {
    match text.strip_prefix("fixture:") {
        Some(name) => Ok(Target::Fixture(name.parse()?)),
        None => Ok(Target::Model(text.parse()?)),
    }
}

fn cmd_audit(a: AuditArgs, out: &mut (dyn Write + Send)) -> Result<i32> {
    if a.runs < MIN_RUNS {
        return Err(Error::invalid(format!("--runs must be at least {MIN_RUNS}, got {}", a.runs)));
    }
    let target = parse_target(&a.model)?;
    let mut rng = seeded(a.seed.unwrap_or_else(rand::random));
    let probes = a.runs.max(MIN_PROBES);
    let outcome: AuditOutcome = match (a.suite, target) {
        (Suite::Game, Target::Model(m)) => audit::audit_pipeline(m, a.runs, a.epsilon, a.delta, &mut rng)?,
        // Every model releases through the same sampler.
        (Suite::Float, Target::Model(_)) => audit::audit_exact_gaussian(probes, a.epsilon, a.delta, &mut rng)?,
        (suite, Target::Fixture(f)) => {
            if f.is_float() != matches!(suite, Suite::Float) {
                return Err(Error::invalid(format!(
                    "fixture `{}` belongs to the {} suite",
                    f.name(),
                    if f.is_float() { "float" } else { "game" }
                )));
            }
            let runs = if f.is_float() { probes } else { a.runs };
            audit_fixture(f, ModelKind::Mst, runs, a.epsilon, a.delta, &mut rng)?
        }
    };
    writeln!(out, "{}", outcome.to_text())?;
    Ok(if outcome.violation { EXIT_VIOLATION } else { EXIT_OK })
}
