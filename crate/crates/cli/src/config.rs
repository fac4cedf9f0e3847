//! Run settings. Each field is resolved as flag, then config file, then
//! default.

use std::path::{Path, PathBuf};

use curveflow::metric::MetricId;
use serde::Deserialize;

use crate::UsageError;

/// Settings as they appear in a JSON config file or on the command line;
/// every field optional.
#[derive(Debug, Clone, Default, Deserialize, clap::Args)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    /// Samples per curve.
    #[arg(short = 'N', long = "samples", global = true)]
    pub samples: Option<usize>,
    /// RATTLE time step.
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    /// Final time of the geodesic.
    #[arg(long = "t-end", global = true)]
    pub t_end: Option<f64>,
    /// Metric: M1, M2, M3 or M4.
    #[arg(long, global = true)]
    pub metric: Option<String>,
    /// Relative endpoint tolerance for boundary value problems.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Directory for exported data.
    #[arg(short = 'o', long = "out-dir", global = true)]
    pub out_dir: Option<PathBuf>,
    /// Seed for randomised checks.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Number of time snapshots written for a path.
    #[arg(long, global = true)]
    pub snapshots: Option<usize>,
    /// Initial Fourier modes per component in the shooting method.
    #[arg(long, global = true)]
    pub modes: Option<usize>,
}

impl ConfigLayer {
    fn over(self, below: ConfigLayer) -> ConfigLayer {
        ConfigLayer {
            samples: self.samples.or(below.samples),
            dt: self.dt.or(below.dt),
            t_end: self.t_end.or(below.t_end),
            metric: self.metric.or(below.metric),
            tol: self.tol.or(below.tol),
            out_dir: self.out_dir.or(below.out_dir),
            seed: self.seed.or(below.seed),
            snapshots: self.snapshots.or(below.snapshots),
            modes: self.modes.or(below.modes),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub samples: usize,
    pub dt: f64,
    /// `None` lets each command choose its own final time.
    pub t_end: Option<f64>,
    pub metric: MetricId,
    pub tol: f64,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub snapshots: usize,
    pub modes: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { samples: 100, dt: 1e-3, t_end: None, metric: MetricId::M3, tol: 1e-4, out_dir: PathBuf::from("out"), seed: 0, snapshots: 11, modes: 10 }
    }
}

impl RunConfig {
    /// Resolves `flags` over the optional config file over the defaults.
    pub fn resolve(flags: ConfigLayer, file: Option<&Path>) -> Result<RunConfig, UsageError> {
        let from_file = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| UsageError(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| UsageError(format!("invalid config {}: {e}", p.display())))?
            }
            None => ConfigLayer::default(),
        };
        let layer = flags.over(from_file);
        let d = RunConfig::default();
        let cfg = RunConfig {
            samples: layer.samples.unwrap_or(d.samples),
            dt: layer.dt.unwrap_or(d.dt),
            t_end: layer.t_end,
            metric: match layer.metric {
                Some(m) => m.parse().map_err(|e| UsageError(format!("{e}")))?,
                None => d.metric,
            },
            tol: layer.tol.unwrap_or(d.tol),
            out_dir: layer.out_dir.unwrap_or(d.out_dir),
            seed: layer.seed.unwrap_or(d.seed),
            snapshots: layer.snapshots.unwrap_or(d.snapshots),
            modes: layer.modes.unwrap_or(d.modes),
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), UsageError> {
        if self.samples < 8 {
            return Err(UsageError(format!("--samples must be at least 8, got {}", self.samples)));
        }
        if self.snapshots < 2 {
            return Err(UsageError(format!("--snapshots must be at least 2, got {}", self.snapshots)));
        }
        if self.modes == 0 {
            return Err(UsageError("--modes must be positive".into()));
        }
        for (name, v) in [("--dt", Some(self.dt)), ("--tol", Some(self.tol)), ("--t-end", self.t_end)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(UsageError(format!("{name} must be positive, got {v}")));
                }
            }
        }
        Ok(())
    }

    pub fn t_end_or(&self, default: f64) -> f64 {
        self.t_end.unwrap_or(default)
    }
}
