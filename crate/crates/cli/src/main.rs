mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::{ConfigLayer, RunConfig};

/// Geodesics, distances and curvature for second-order Sobolev metrics on
/// plane curves.
#[derive(Parser, Debug)]
#[command(name = "curveflow", version, propagate_version = true)]
struct Cli {
    /// JSON file with default settings; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: ConfigLayer,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Map a curve file to its R-transform, or back with --inverse.
    Transform {
        input: PathBuf,
        #[arg(long)]
        inverse: bool,
        /// Output file; stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Geodesic from an initial curve and velocity field.
    Ivp { curve: PathBuf, velocity: PathBuf },
    /// Geodesic between two curves.
    Bvp { from: PathBuf, to: PathBuf },
    /// Geodesic distance between two curves, with the sqrt-length bounds.
    Distance { from: PathBuf, to: PathBuf },
    /// Sectional curvature of the M2 metric at (c, h, k), or a table of the
    /// fibre curvature with --scal2.
    Curvature {
        #[arg(long, required_unless_present = "scal2")]
        curve: Option<PathBuf>,
        #[arg(long, requires = "curve")]
        h: Option<PathBuf>,
        #[arg(long, requires = "curve")]
        k: Option<PathBuf>,
        #[arg(long, conflicts_with = "curve")]
        scal2: bool,
        #[arg(long, default_value_t = 0.5)]
        x_min: f64,
        #[arg(long, default_value_t = 2.0)]
        x_max: f64,
        #[arg(long, default_value_t = 7)]
        count: usize,
    },
    /// Run the numerical self-checks and print a pass/fail table.
    Validate,
    /// Regenerate the data of the circle experiments.
    Demo {
        figure: Figure,
        /// Which initial velocity for fig2.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
        which: u8,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Figure {
    /// Circle to a 2:1 ellipse, M3 boundary value problem.
    Fig1,
    /// Circle with two initial velocities, M3 initial value problem.
    Fig2,
    /// Horizontal geodesic from the circle.
    Fig3,
}

/// Bad arguments, settings or input files; exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

pub enum Failure {
    Usage(UsageError),
    Domain(curveflow::Error),
    /// `validate` found a violated invariant.
    ChecksFailed,
}

impl From<UsageError> for Failure {
    fn from(e: UsageError) -> Self {
        Failure::Usage(e)
    }
}

impl From<curveflow::Error> for Failure {
    fn from(e: curveflow::Error) -> Self {
        match e {
            // Unreadable or malformed input files are the caller's mistake.
            curveflow::Error::Io(m) | curveflow::Error::Format(m) => Failure::Usage(UsageError(m)),
            e => Failure::Domain(e),
        }
    }
}

fn init_threads() -> Result<(), UsageError> {
    let Ok(v) = std::env::var("CURVEFLOW_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| UsageError(format!("CURVEFLOW_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| UsageError(e.to_string()))
}

fn run(cli: Cli) -> Result<(), Failure> {
    init_threads()?;
    let cfg = RunConfig::resolve(cli.settings, cli.config.as_deref())?;
    match cli.command {
        Command::Transform { input, inverse, output } => commands::transform(&cfg, &input, inverse, output.as_deref()),
        Command::Ivp { curve, velocity } => commands::ivp(&cfg, &curve, &velocity),
        Command::Bvp { from, to } => commands::bvp(&cfg, &from, &to),
        Command::Distance { from, to } => commands::distance(&cfg, &from, &to),
        Command::Curvature { curve, h, k, scal2, x_min, x_max, count } => {
            if scal2 {
                commands::scal2_table(x_min, x_max, count)
            } else {
                let (Some(curve), Some(h), Some(k)) = (curve, h, k) else {
                    return Err(UsageError("curvature needs --curve, --h and --k".into()).into());
                };
                commands::sectional(&curve, &h, &k)
            }
        }
        Command::Validate => commands::validate(&cfg),
        Command::Demo { figure, which } => match figure {
            Figure::Fig1 => commands::demo_fig1(&cfg),
            Figure::Fig2 => commands::demo_fig2(&cfg, which),
            Figure::Fig3 => commands::demo_fig3(&cfg),
        },
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(UsageError(m))) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Domain(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::ChecksFailed) => ExitCode::from(1),
    }
}
