//! Command-line frontend.
//!
//! Exit codes: 0 success, 1 invalid model or query, 2 runtime failure,
//! 64 usage error.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::adapt::{adapt_loop, AdaptConfig, GradientKind, ProjectionMode};
use crate::error::{Error, Result};
use crate::exact;
use crate::experiment::{best_action, run_experiment, ExperimentFile};
use crate::model::{load, Assignment, EstimationProblem, Model};
use crate::sampling::{likelihood_weighting, stream, SamplerParams};

pub const DEFAULT_SEED: u64 = 20000731;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "adaptis", version, about = "Adaptive importance sampling for discrete networks and influence diagrams")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct Query {
    /// Model file (JSON).
    pub file: PathBuf,
    /// Observed values, e.g. `X2=1,X4=0`.
    #[arg(long, default_value = "")]
    pub evidence: String,
    /// Decision value; required for influence diagrams unless the command
    /// evaluates every action.
    #[arg(long)]
    pub action: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a model file and list every violation.
    Validate { file: PathBuf },
    /// Exact value by enumeration. Without `--action`, an influence diagram
    /// reports every action and the best one.
    Exact {
        #[command(flatten)]
        query: Query,
        /// Also print the weight variance of the prior sampler.
        #[arg(long)]
        variance: bool,
    },
    /// Likelihood weighting estimate.
    Estimate {
        #[command(flatten)]
        query: Query,
        #[arg(long)]
        samples: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Adaptive importance sampling; prints the combined estimate and writes
    /// the per-round trace.
    Adapt {
        #[command(flatten)]
        query: Query,
        #[arg(long, value_enum)]
        method: GradientKind,
        #[arg(long, default_value_t = 100)]
        updates: usize,
        /// Samples per round; defaults to 1 for global rules and 50 for
        /// local rules.
        #[arg(long)]
        batch: Option<usize>,
        /// Step size scale; defaults depend on the method.
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long, default_value_t = 0.1)]
        gamma: f64,
        #[arg(long, value_enum, default_value_t = ProjectionMode::MeanCenter)]
        projection: ProjectionMode,
        /// Add-θ smoothing of empirical rows for local rules.
        #[arg(long)]
        smoothing: Option<bool>,
        #[arg(long)]
        min_local_batch: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "trace.csv")]
        trace: PathBuf,
        /// Write every sampler snapshot (initial, then after each round) as JSON.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Replicated experiment; writes `mse.csv` and `variance.csv`.
    Experiment {
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Parse(_)
        | Error::Invalid(_)
        | Error::Evidence(_)
        | Error::Action(_)
        | Error::UnknownVariable(_)
        | Error::ValueOutOfRange { .. } => EXIT_INVALID,
        _ => EXIT_RUNTIME,
    }
}

fn read_model(path: &Path) -> Result<Model> {
    load(&fs::read_to_string(path)?)
}

fn parse_evidence(text: &str) -> Result<Assignment> {
    if text.trim().is_empty() {
        return Ok(Assignment::new());
    }
    text.parse()
}

fn problem(model: Model, evidence: &str, action: Option<usize>) -> Result<EstimationProblem> {
    EstimationProblem::new(model, parse_evidence(evidence)?, action)
}

fn seed_or_default(seed: Option<u64>, err: &mut dyn Write) -> Result<u64> {
    match seed {
        Some(s) => Ok(s),
        None => {
            writeln!(err, "using default seed {DEFAULT_SEED}")?;
            Ok(DEFAULT_SEED)
        }
    }
}

fn write_file(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write(&mut out)?;
    out.flush()?;
    Ok(())
}

fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Validate { file } => {
            let text = fs::read_to_string(&file)?;
            load(&text)?;
            writeln!(out, "{}: ok", file.display())?;
        }
        Command::Exact { query, variance } => {
            let model = read_model(&query.file)?;
            let actions: Vec<Option<usize>> = match (&model, query.action) {
                (Model::Influence(id), None) => (0..id.decision.arity).map(Some).collect(),
                (_, a) => vec![a],
            };
            let mut values = Vec::new();
            for a in &actions {
                let p = problem(model.clone(), &query.evidence, *a)?;
                let value = exact::true_value(&p)?;
                match a {
                    Some(a) => writeln!(out, "action {a}: {value}")?,
                    None => writeln!(out, "{value}")?,
                }
                if variance {
                    let v = exact::weight_variance(&p, &SamplerParams::prior(&p))?;
                    writeln!(out, "prior weight variance: {v}")?;
                }
                values.push(value);
            }
            if actions.len() > 1 {
                writeln!(out, "best action: {}", best_action(&values))?;
            }
        }
        Command::Estimate { query, samples, seed } => {
            let p = problem(read_model(&query.file)?, &query.evidence, query.action)?;
            let seed = seed_or_default(seed, err)?;
            let value = likelihood_weighting(&p, samples, &mut stream(seed))?;
            writeln!(out, "{value}")?;
        }
        Command::Adapt {
            query,
            method,
            updates,
            batch,
            beta,
            gamma,
            projection,
            smoothing,
            min_local_batch,
            seed,
            trace,
            params,
        } => {
            let p = problem(read_model(&query.file)?, &query.evidence, query.action)?;
            let mut config = AdaptConfig::new(method);
            config.total_updates = updates;
            config.gamma = gamma;
            config.projection = projection;
            if let Some(n) = batch {
                config.batch_size = n;
            }
            if let Some(b) = beta {
                config.beta = b;
            }
            if let Some(s) = smoothing {
                config.dirichlet_smoothing = s;
            }
            if let Some(m) = min_local_batch {
                config.min_local_batch = m;
            }
            let seed = seed_or_default(seed, err)?;
            let (estimate, run) = adapt_loop(&p, &config, &mut stream(seed))?;
            write_file(&trace, |w| run.write_csv(w))?;
            if let Some(path) = params {
                let snapshots: Vec<&SamplerParams> =
                    std::iter::once(&run.initial).chain(run.steps.iter().map(|s| &s.theta)).collect();
                write_file(&path, |w| {
                    serde_json::to_writer_pretty(&mut *w, &snapshots).map_err(|e| Error::Io(e.into()))?;
                    writeln!(w)?;
                    Ok(())
                })?;
            }
            for s in run.steps.iter().filter(|s| !s.warnings.is_empty()) {
                writeln!(err, "t={}: {}", s.t, s.warnings.join("; "))?;
            }
            writeln!(out, "{}", estimate.value)?;
        }
        Command::Experiment { config, out_dir } => {
            let file = ExperimentFile::parse(&fs::read_to_string(&config)?)?;
            let base = config.parent().unwrap_or(Path::new("."));
            let model = read_model(&base.join(&file.model))?;
            let p = EstimationProblem::new(model, file.evidence.clone(), file.action)?;
            let result = run_experiment(&p, &file.config()?)?;
            fs::create_dir_all(&out_dir)?;
            let mse = out_dir.join("mse.csv");
            let var = out_dir.join("variance.csv");
            write_file(&mse, |w| result.write_mse_csv(w))?;
            write_file(&var, |w| result.write_variance_csv(w))?;
            for v in &result.violations {
                writeln!(err, "constraint violation: {v}")?;
            }
            writeln!(out, "wrote {}", mse.display())?;
            writeln!(out, "wrote {}", var.display())?;
        }
    }
    Ok(())
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match execute(cli, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}
