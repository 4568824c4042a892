//! Flat `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Every key may appear once per
//! file; command-line overrides are applied afterwards and win.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use spinfilter::dynamics::ModelParams;
use spinfilter::estimators::InnovationMode;
use spinfilter::spin::QGrid;
use spinfilter::Spin;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}:{line}: {message}")]
    Line { path: String, line: usize, message: String },

    #[error("key `{key}`: {message}")]
    Key { key: String, message: String },

    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    QcrSweep,
    PfSweep,
    Kalman,
    Qfunction,
    Trajectory,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::QcrSweep => "qcr-sweep",
            Scenario::PfSweep => "pf-sweep",
            Scenario::Kalman => "kalman",
            Scenario::Qfunction => "qfunction",
            Scenario::Trajectory => "trajectory",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        [Scenario::QcrSweep, Scenario::PfSweep, Scenario::Kalman, Scenario::Qfunction, Scenario::Trajectory]
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| format!("unknown scenario `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            _ => Err(format!("expected `csv` or `json`, got `{s}`")),
        }
    }
}

/// Everything needed to run one scenario. Serialized into the summary
/// without `workers` and `output_path`, which must not affect results.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    #[serde(rename = "F_list")]
    pub f_list: Vec<f64>,
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(rename = "K")]
    pub k: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub gamma: f64,
    pub dt: f64,
    pub t_final: f64,
    #[serde(rename = "deltaB")]
    pub delta_b: f64,
    pub n_trajectories: usize,
    pub n_particles: usize,
    pub prior_mean: f64,
    pub prior_var: f64,
    pub base_seed: u64,
    #[serde(skip)]
    pub workers: Option<usize>,
    #[serde(skip)]
    pub output_path: PathBuf,
    pub output_format: OutputFormat,
    /// Steps between trace rows in `kalman` and `trajectory` output.
    pub trace_stride: usize,
    pub q_theta: usize,
    pub q_phi: usize,
    /// Peaks below this fraction of the global Q maximum are ignored.
    pub q_peak_threshold: f64,
    pub innovations: InnovationMode,
}

pub const KEYS: &[&str] = &[
    "scenario",
    "F_list",
    "M",
    "K",
    "B",
    "gamma",
    "dt",
    "t_final",
    "deltaB",
    "n_trajectories",
    "n_particles",
    "prior_mean",
    "prior_var",
    "base_seed",
    "workers",
    "output_path",
    "output_format",
    "trace_stride",
    "q_theta",
    "q_phi",
    "q_peak_threshold",
    "innovations",
];

impl ExperimentConfig {
    pub fn new(scenario: Scenario) -> Self {
        ExperimentConfig {
            scenario,
            f_list: vec![10.0, 20.0, 30.0, 40.0, 50.0, 60.0],
            m: 10.0,
            k: 6e-4,
            b: 0.0,
            gamma: 1.0,
            dt: 1e-5,
            t_final: 0.1,
            delta_b: 5e-4,
            n_trajectories: 20,
            n_particles: 200,
            prior_mean: 0.0,
            prior_var: 10.0,
            base_seed: 0,
            workers: None,
            output_path: PathBuf::from("out"),
            output_format: OutputFormat::Csv,
            trace_stride: 100,
            q_theta: 100,
            q_phi: 200,
            q_peak_threshold: 0.1,
            innovations: InnovationMode::Shared,
        }
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let err = |message: String| ConfigError::Key {
            key: key.to_string(),
            message,
        };
        let value = value.trim();
        match key {
            "scenario" => self.scenario = value.parse().map_err(err)?,
            "F_list" => {
                self.f_list = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<f64>().map_err(|e| err(format!("`{s}`: {e}"))))
                    .collect::<Result<_, _>>()?
            }
            "M" => self.m = parse(value).map_err(err)?,
            "K" => self.k = parse(value).map_err(err)?,
            "B" => self.b = parse(value).map_err(err)?,
            "gamma" => self.gamma = parse(value).map_err(err)?,
            "dt" => self.dt = parse(value).map_err(err)?,
            "t_final" => self.t_final = parse(value).map_err(err)?,
            "deltaB" => self.delta_b = parse(value).map_err(err)?,
            "n_trajectories" => self.n_trajectories = parse(value).map_err(err)?,
            "n_particles" => self.n_particles = parse(value).map_err(err)?,
            "prior_mean" => self.prior_mean = parse(value).map_err(err)?,
            "prior_var" => self.prior_var = parse(value).map_err(err)?,
            "base_seed" => self.base_seed = parse(value).map_err(err)?,
            "workers" => self.workers = Some(parse(value).map_err(err)?),
            "output_path" => self.output_path = PathBuf::from(value),
            "output_format" => self.output_format = value.parse().map_err(err)?,
            "trace_stride" => self.trace_stride = parse(value).map_err(err)?,
            "q_theta" => self.q_theta = parse(value).map_err(err)?,
            "q_phi" => self.q_phi = parse(value).map_err(err)?,
            "q_peak_threshold" => self.q_peak_threshold = parse(value).map_err(err)?,
            "innovations" => {
                self.innovations = match value {
                    "shared" => InnovationMode::Shared,
                    "per-particle" => InnovationMode::PerParticle,
                    _ => return Err(err(format!("expected `shared` or `per-particle`, got `{value}`"))),
                }
            }
            _ => return Err(err(format!("unknown key; expected one of {}", KEYS.join(", ")))),
        }
        Ok(())
    }

    /// Applies every line of `text`; `path` only labels diagnostics.
    pub fn apply_text(&mut self, text: &str, path: &str) -> Result<(), ConfigError> {
        let mut seen = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let at = |message: String| ConfigError::Line {
                path: path.to_string(),
                line,
                message,
            };
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| at(format!("expected `key = value`, got `{content}`")))?;
            let key = key.trim();
            if seen.contains(&key) {
                return Err(at(format!("duplicate key `{key}`")));
            }
            seen.push(key);
            self.set(key, value).map_err(|e| at(e.to_string()))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, message: String| {
            Err(ConfigError::Key {
                key: key.to_string(),
                message,
            })
        };
        if self.f_list.is_empty() {
            return bad("F_list", "must not be empty".into());
        }
        for &f in &self.f_list {
            if let Err(e) = Spin::new(f) {
                return bad("F_list", e.to_string());
            }
        }
        for (key, v) in [("M", self.m), ("K", self.k), ("gamma", self.gamma), ("prior_var", self.prior_var)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(key, format!("must be finite and non-negative, got {v}"));
            }
        }
        for (key, v) in [("B", self.b), ("prior_mean", self.prior_mean)] {
            if !v.is_finite() {
                return bad(key, format!("must be finite, got {v}"));
            }
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt", format!("must be positive, got {}", self.dt));
        }
        if !(self.t_final >= self.dt && self.t_final.is_finite()) {
            return bad("t_final", format!("must be at least dt, got {}", self.t_final));
        }
        if !(self.delta_b > 0.0 && self.delta_b.is_finite()) {
            return bad("deltaB", format!("must be positive, got {}", self.delta_b));
        }
        let min_traj = match self.scenario {
            Scenario::QcrSweep | Scenario::PfSweep => 2,
            _ => 1,
        };
        if self.n_trajectories < min_traj {
            return bad("n_trajectories", format!("{} needs at least {min_traj}", self.scenario));
        }
        if self.scenario == Scenario::PfSweep && self.n_particles == 0 {
            return bad("n_particles", "must be at least 1".into());
        }
        if self.scenario == Scenario::PfSweep && self.prior_var == 0.0 {
            return bad("prior_var", "must be positive for a particle filter".into());
        }
        if self.workers == Some(0) {
            return bad("workers", "must be at least 1".into());
        }
        if self.trace_stride == 0 {
            return bad("trace_stride", "must be at least 1".into());
        }
        if QGrid::new(self.q_theta, self.q_phi).is_err() {
            return bad("q_theta", "grid must have at least one node per axis".into());
        }
        if !(0.0..=1.0).contains(&self.q_peak_threshold) {
            return bad("q_peak_threshold", "must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn spins(&self) -> Vec<Spin> {
        self.f_list.iter().map(|&f| Spin::new(f).expect("validated spin")).collect()
    }

    /// Model parameters at `spin`.
    pub fn model(&self, spin: Spin) -> ModelParams {
        ModelParams {
            gamma: self.gamma,
            dt: self.dt,
            t_final: self.t_final,
            ..ModelParams::new(spin, self.m, self.k, self.b)
        }
    }

    pub fn grid(&self) -> QGrid {
        QGrid::new(self.q_theta, self.q_phi).expect("validated grid")
    }
}

fn parse<T: FromStr>(value: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e| format!("`{value}`: {e}"))
}
