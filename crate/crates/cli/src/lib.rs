//! `loggas`: experiment driver.
//!
//! Exit codes: 0 all checks pass, 1 some verification failed, 2 bad
//! configuration or input, 3 numerical failure (unstable integrator,
//! degenerate chain, non-convergence).

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use loggas_core::potentials::{certify_convexity, ConvexityReport, KindTag, PotentialSpec};
use loggas_core::{Error, Result};

pub mod commands;
pub mod config;
pub mod report;

pub use config::{parse_config, ExperimentConfig};
pub use report::{parse_report, ReportDocument};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "loggas", version, about = "Log-gas and Riesz-gas diffusion laboratory")]
pub struct Cli {
    /// Worker threads (falls back to LOGGAS_THREADS, then to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Random search for negative curvature of the conditional Hamiltonian.
    Convexity(ConvexityArgs),
    /// Samples from the conditional Gibbs measure.
    Sample {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Chain diagnostics; printed to stdout when absent.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Reflected SDE trajectories.
    Evolve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo check of one functional inequality.
    Verify {
        which: Check,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid Fokker–Planck / JKO experiments.
    Flow {
        which: FlowKind,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Consolidates `verify` reports into one table.
    Report {
        inputs: Vec<PathBuf>,
        /// CSV summary; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Debug, clap::Args)]
pub struct ConvexityArgs {
    #[arg(long, value_enum)]
    pub kind: KindArg,
    #[arg(long)]
    pub beta: f64,
    /// Riesz exponent.
    #[arg(long)]
    pub s: Option<f64>,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub r: f64,
    #[arg(long = "R", default_value_t = 10.0)]
    pub cutoff: f64,
    /// Exterior points as a JSON array.
    #[arg(long, default_value = "[]")]
    pub exterior: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum KindArg {
    Dyson,
    Riesz,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Check {
    Be,
    Poincare,
    Harnack,
    LogHarnack,
    Lipschitz,
    Expmoment,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FlowKind {
    Fp,
    Jko,
    Evi,
    Dissipation,
    Dispconv,
}

/// What a successful run found.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
}

impl Outcome {
    pub fn from_pass(pass: bool) -> Self {
        if pass {
            Outcome::Pass
        } else {
            Outcome::Fail
        }
    }
}

pub fn exit_code(res: &Result<Outcome>) -> i32 {
    match res {
        Ok(Outcome::Pass) => EXIT_PASS,
        Ok(Outcome::Fail) => EXIT_FAIL,
        Err(e) if e.is_numerical() => EXIT_NUMERICAL,
        Err(_) => EXIT_CONFIG,
    }
}

/// Parses `argv` (including the program name), runs, and returns the exit
/// code. Diagnostics go to stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_PASS };
        }
    };
    if let Err(e) = configure_threads(cli.threads) {
        eprintln!("loggas: {e}");
        return EXIT_CONFIG;
    }
    let res = dispatch(&cli.command);
    if let Err(e) = &res {
        eprintln!("loggas: {e}");
    }
    exit_code(&res)
}

fn configure_threads(flag: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var("LOGGAS_THREADS") {
            Ok(v) => Some(v.trim().parse().map_err(|_| Error::InvalidParameter(format!("LOGGAS_THREADS = {v:?}")))?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::InvalidParameter("--threads must be at least 1".into()));
        }
        // the global pool can be set once per process; later calls keep it
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn dispatch(cmd: &Command) -> Result<Outcome> {
    match cmd {
        Command::Convexity(args) => convexity(args),
        Command::Sample { config, out, diagnostics } => {
            let cfg = load_config(config)?;
            commands::sample(&cfg, out_path(out, &cfg).as_deref(), diagnostics.as_deref())
        }
        Command::Evolve { config, out } => {
            let cfg = load_config(config)?;
            commands::evolve(&cfg, out_path(out, &cfg).as_deref())
        }
        Command::Verify { which, config, out } => {
            let cfg = load_config(config)?;
            commands::verify(&cfg, *which, out_path(out, &cfg).as_deref())
        }
        Command::Flow { which, config, out } => {
            let cfg = load_config(config)?;
            commands::flow(&cfg, *which, out_path(out, &cfg).as_deref())
        }
        Command::Report { inputs, out, json } => commands::report(inputs, out.as_deref(), json.as_deref()),
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::InvalidParameter(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| Error::InvalidParameter(format!("{}: {e}", path.display())))
}

fn out_path(flag: &Option<PathBuf>, cfg: &ExperimentConfig) -> Option<PathBuf> {
    flag.clone().or_else(|| cfg.output.out.as_ref().map(PathBuf::from))
}

/// Writes `text` to `path`, or to stdout.
pub(crate) fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)
            .map_err(|e| Error::InvalidParameter(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

pub(crate) fn json_line<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialise");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct ConvexityDocument<'a> {
    metadata: report::Metadata,
    potential: &'a PotentialSpec,
    report: &'a ConvexityReport,
    pass: bool,
}

fn convexity(a: &ConvexityArgs) -> Result<Outcome> {
    let exterior: Vec<f64> =
        serde_json::from_str(&a.exterior).map_err(|e| Error::InvalidParameter(format!("--exterior: {e}")))?;
    let spec = PotentialSpec {
        kind: match a.kind {
            KindArg::Dyson => KindTag::Dyson,
            KindArg::Riesz => KindTag::Riesz,
        },
        beta: a.beta,
        s: a.s,
        r: a.r,
        cutoff: a.cutoff,
        exterior,
    };
    if a.k == 0 {
        return Err(Error::InvalidParameter("--k must be at least 1".into()));
    }
    let pot = spec.build()?;
    let rep = certify_convexity(&pot, a.k, a.trials, a.seed);
    let hash = config::hash_json(&serde_json::to_string(&(&spec, a.k, a.trials, a.seed)).expect("serialise"));
    let doc = ConvexityDocument {
        metadata: report::Metadata::new("convexity", &hash, a.seed),
        potential: &spec,
        report: &rep,
        pass: rep.passed,
    };
    emit(a.out.as_deref(), &json_line(&doc))?;
    Ok(Outcome::from_pass(rep.passed))
}
