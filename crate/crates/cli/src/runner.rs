//! Scenario execution and result emission.
//!
//! Jobs are `(F index j, trajectory i)` pairs seeded with
//! `base_seed + j·10⁶ + i`. They run on a worker pool and come back in job
//! order, so every file except the wall time in `summary.json` is identical
//! for any worker count.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Result};
use serde::Serialize;
use spinfilter::dynamics::{generate_record, simulate_record};
use spinfilter::estimators::kalman::{b_variance_trajectory, run_kalman};
use spinfilter::estimators::particle::{particle_sweep, ParticleConfig};
use spinfilter::fisher::{bound_sweep, heisenberg_bound, power_law_fit, shotnoise_bound, DroppedPoint, PowerLawFit};
use spinfilter::parallel::{self, map_ordered, trajectory_seed};
use spinfilter::{stats, Spin};

use crate::config::{ExperimentConfig, Scenario};
use crate::output::{write_rows, write_summary};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QcrPointRow {
    #[serde(rename = "F")]
    pub f: f64,
    pub mean_bound: f64,
    pub std_bound: f64,
    pub n_traj: usize,
    pub n_failed: usize,
    pub n_outliers: usize,
    pub shotnoise: f64,
    pub heisenberg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QcrTrajectoryRow {
    pub scenario: Scenario,
    #[serde(rename = "F")]
    pub f: f64,
    pub trajectory: usize,
    pub seed: u64,
    pub qfi: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PfPointRow {
    #[serde(rename = "F")]
    pub f: f64,
    pub mean_uncertainty: f64,
    pub std_uncertainty: f64,
    /// `S_pf`
    pub sample_deviation: f64,
    pub mean_estimate: f64,
    pub mean_neff_fraction: f64,
    /// Kalman `ΔB̃` at `t_final` for the same model.
    pub kalman_uncertainty: f64,
    pub n_records: usize,
    pub n_failed: usize,
    pub clip_events: usize,
    /// `S_pf ≥ mean ΔB̃_pf`
    pub bias_dominated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PfTrajectoryRow {
    pub scenario: Scenario,
    #[serde(rename = "F")]
    pub f: f64,
    pub trajectory: usize,
    pub seed: u64,
    #[serde(rename = "B_estimate")]
    pub b_estimate: f64,
    #[serde(rename = "B_uncertainty")]
    pub b_uncertainty: f64,
    #[serde(rename = "N_eff")]
    pub n_eff: f64,
    pub clip_events: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KalmanPointRow {
    #[serde(rename = "F")]
    pub f: f64,
    /// `ΔB̃(t_final)`, the same for every record at this `F`.
    #[serde(rename = "B_uncertainty")]
    pub b_uncertainty: f64,
    pub mean_estimate: f64,
    pub n_records: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KalmanTraceRow {
    pub scenario: Scenario,
    #[serde(rename = "F")]
    pub f: f64,
    pub trajectory: usize,
    pub seed: u64,
    pub t: f64,
    pub theta: f64,
    #[serde(rename = "B_estimate")]
    pub b_estimate: f64,
    pub var_theta: f64,
    pub var_cross: f64,
    #[serde(rename = "var_B")]
    pub var_b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QPointRow {
    #[serde(rename = "F")]
    pub f: f64,
    pub trajectory: usize,
    pub seed: u64,
    pub normalization: f64,
    pub q_max: f64,
    pub n_peaks: usize,
    /// Largest separation between significant maxima, in grid cells.
    pub max_peak_separation: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QGridRow {
    pub scenario: Scenario,
    #[serde(rename = "F")]
    pub f: f64,
    pub trajectory: usize,
    pub seed: u64,
    pub theta: f64,
    pub phi: f64,
    pub q: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryPointRow {
    #[serde(rename = "F")]
    pub f: f64,
    pub trajectory: usize,
    pub seed: u64,
    pub final_fz: f64,
    #[serde(rename = "final_Z")]
    pub final_z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryTraceRow {
    pub scenario: Scenario,
    #[serde(rename = "F")]
    pub f: f64,
    pub trajectory: usize,
    pub seed: u64,
    pub t: f64,
    pub fz: f64,
    /// Integrated photocurrent `Z_t`.
    #[serde(rename = "Z")]
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Failure {
    #[serde(rename = "F")]
    pub f: f64,
    pub trajectory: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Points {
    Qcr(Vec<QcrPointRow>),
    Pf(Vec<PfPointRow>),
    Kalman(Vec<KalmanPointRow>),
    Qfunction(Vec<QPointRow>),
    Trajectory(Vec<TrajectoryPointRow>),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub scenario: Scenario,
    pub config: ExperimentConfig,
    /// Power law through the per-`F` headline value, where one applies.
    pub fit: Option<PowerLawFit>,
    pub fit_error: Option<String>,
    pub points: Points,
    pub dropped: Vec<DroppedPoint>,
    pub failures: Vec<Failure>,
    pub wall_time_s: f64,
}

impl Summary {
    pub fn pf_points(&self) -> &[PfPointRow] {
        match &self.points {
            Points::Pf(p) => p,
            _ => &[],
        }
    }

    pub fn qcr_points(&self) -> &[QcrPointRow] {
        match &self.points {
            Points::Qcr(p) => p,
            _ => &[],
        }
    }

    pub fn q_points(&self) -> &[QPointRow] {
        match &self.points {
            Points::Qfunction(p) => p,
            _ => &[],
        }
    }
}

#[derive(Debug)]
pub struct RunOutput {
    pub summary: Summary,
    pub files: Vec<PathBuf>,
}

struct Partial {
    fit_values: Vec<(f64, f64)>,
    points: Points,
    dropped: Vec<DroppedPoint>,
    failures: Vec<Failure>,
    files: Vec<PathBuf>,
}

/// Runs `config.scenario`, writing result files and `summary.json` into
/// `config.output_path`. Returns an error only when no point survived.
pub fn run(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    let workers = parallel::resolve_workers(config.workers);
    let started = Instant::now();
    let partial = match config.scenario {
        Scenario::QcrSweep => run_qcr(config, workers)?,
        Scenario::PfSweep => run_pf(config, workers)?,
        Scenario::Kalman => run_kalman_scenario(config, workers)?,
        Scenario::Qfunction => run_qfunction(config, workers)?,
        Scenario::Trajectory => run_trajectory(config, workers)?,
    };
    let (fit, fit_error) = if partial.fit_values.is_empty() {
        (None, None)
    } else {
        match power_law_fit(&partial.fit_values) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        }
    };
    let summary = Summary {
        scenario: config.scenario,
        config: config.clone(),
        fit,
        fit_error,
        points: partial.points,
        dropped: partial.dropped,
        failures: partial.failures,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    let mut files = partial.files;
    files.push(write_summary(&config.output_path, &summary)?);
    let empty = match &summary.points {
        Points::Qcr(p) => p.is_empty(),
        Points::Pf(p) => p.is_empty(),
        Points::Kalman(p) => p.is_empty(),
        Points::Qfunction(p) => p.is_empty(),
        Points::Trajectory(p) => p.is_empty(),
    };
    if empty {
        bail!(
            "{}: every point failed ({} dropped, {} failed trajectories); see {}",
            config.scenario,
            summary.dropped.len(),
            summary.failures.len(),
            config.output_path.join("summary.json").display()
        );
    }
    Ok(RunOutput { summary, files })
}

fn jobs(config: &ExperimentConfig) -> Vec<(usize, usize, Spin, u64)> {
    let spins = config.spins();
    (0..spins.len())
        .flat_map(|j| (0..config.n_trajectories).map(move |i| (j, i)))
        .map(|(j, i)| (j, i, spins[j], trajectory_seed(config.base_seed, j, i)))
        .collect()
}

fn run_qcr(config: &ExperimentConfig, workers: usize) -> Result<Partial> {
    let spins = config.spins();
    let template = config.model(spins[0]);
    let sweep = bound_sweep(&spins, &template, config.delta_b, config.n_trajectories, config.base_seed, workers)?;
    let mut points = Vec::new();
    let mut rows = Vec::new();
    for p in &sweep.points {
        let f = p.spin.value();
        let j = spins.iter().position(|s| *s == p.spin).expect("point spin comes from the list");
        points.push(QcrPointRow {
            f,
            mean_bound: p.mean_bound,
            std_bound: p.std_bound,
            n_traj: p.n_trajectories,
            n_failed: p.n_failed,
            n_outliers: p.n_outliers,
            shotnoise: shotnoise_bound(f, config.t_final, config.gamma),
            heisenberg: heisenberg_bound(f, config.t_final, config.gamma, 1.0),
        });
        for s in &p.samples {
            rows.push(QcrTrajectoryRow {
                scenario: config.scenario,
                f,
                trajectory: (s.seed - trajectory_seed(config.base_seed, j, 0)) as usize,
                seed: s.seed,
                qfi: s.qfi,
                bound: s.bound,
            });
        }
    }
    let files = vec![
        write_rows(&config.output_path, "points", config.output_format, &points)?,
        write_rows(&config.output_path, "trajectories", config.output_format, &rows)?,
    ];
    Ok(Partial {
        fit_values: points.iter().map(|p| (p.f, p.mean_bound)).collect(),
        points: Points::Qcr(points),
        dropped: sweep.dropped,
        failures: Vec::new(),
        files,
    })
}

fn run_pf(config: &ExperimentConfig, workers: usize) -> Result<Partial> {
    let spins = config.spins();
    let template = config.model(spins[0]);
    let pf = ParticleConfig {
        n_particles: config.n_particles,
        prior_mean: config.prior_mean,
        prior_var: config.prior_var,
        seed: config.base_seed,
        mode: config.innovations,
    };
    let sweep = particle_sweep(&spins, &template, &pf, config.n_trajectories, config.base_seed, workers)?;
    let mut points = Vec::new();
    let mut rows = Vec::new();
    for p in &sweep.points {
        let f = p.spin.value();
        let kalman = b_variance_trajectory(&config.model(p.spin), config.prior_var)
            .last()
            .map_or(f64::NAN, |v| v.max(0.0).sqrt());
        points.push(PfPointRow {
            f,
            mean_uncertainty: p.mean_uncertainty,
            std_uncertainty: p.std_uncertainty,
            sample_deviation: p.sample_deviation,
            mean_estimate: p.mean_estimate,
            mean_neff_fraction: p.mean_neff_fraction,
            kalman_uncertainty: kalman,
            n_records: p.runs.len(),
            n_failed: p.n_failed,
            clip_events: p.clip_events,
            bias_dominated: p.sample_deviation >= p.mean_uncertainty,
        });
        for r in &p.runs {
            rows.push(PfTrajectoryRow {
                scenario: config.scenario,
                f,
                trajectory: r.trajectory,
                seed: r.seed,
                b_estimate: r.estimate,
                b_uncertainty: r.uncertainty,
                n_eff: r.n_eff,
                clip_events: r.clip_events,
            });
        }
    }
    let files = vec![
        write_rows(&config.output_path, "points", config.output_format, &points)?,
        write_rows(&config.output_path, "trajectories", config.output_format, &rows)?,
    ];
    Ok(Partial {
        fit_values: points.iter().map(|p| (p.f, p.mean_uncertainty)).collect(),
        points: Points::Pf(points),
        dropped: sweep.dropped,
        failures: Vec::new(),
        files,
    })
}

fn run_kalman_scenario(config: &ExperimentConfig, workers: usize) -> Result<Partial> {
    let stride = config.trace_stride;
    let results = map_ordered(jobs(config), workers, |(_, i, spin, seed)| {
        let params = config.model(spin);
        let record = generate_record(&params, seed)?;
        let states = run_kalman(&record, config.prior_mean, config.prior_var)?;
        let last = states.len() - 1;
        let trace: Vec<KalmanTraceRow> = states
            .iter()
            .enumerate()
            .filter(|(k, _)| k % stride == 0 || *k == last)
            .map(|(k, s)| KalmanTraceRow {
                scenario: config.scenario,
                f: spin.value(),
                trajectory: i,
                seed,
                t: k as f64 * params.dt,
                theta: s.theta,
                b_estimate: s.b,
                var_theta: s.v_theta,
                var_cross: s.v_cross,
                var_b: s.v_b,
            })
            .collect();
        Ok::<_, spinfilter::Error>((states[last], trace))
    })?;
    let mut trace = Vec::new();
    let mut failures = Vec::new();
    let mut finals: Vec<Vec<spinfilter::estimators::KalmanState>> = vec![Vec::new(); config.f_list.len()];
    for ((j, i, spin, seed), r) in jobs(config).into_iter().zip(results) {
        match r {
            Ok((last, rows)) => {
                finals[j].push(last);
                trace.extend(rows);
            }
            Err(e) => failures.push(Failure {
                f: spin.value(),
                trajectory: i,
                seed,
                error: e.to_string(),
            }),
        }
    }
    let points: Vec<KalmanPointRow> = config
        .spins()
        .into_iter()
        .zip(&finals)
        .filter(|(_, f)| !f.is_empty())
        .map(|(spin, f)| KalmanPointRow {
            f: spin.value(),
            b_uncertainty: f[0].b_uncertainty(),
            mean_estimate: stats::mean(&f.iter().map(|s| s.b).collect::<Vec<_>>()),
            n_records: f.len(),
        })
        .collect();
    let files = vec![
        write_rows(&config.output_path, "points", config.output_format, &points)?,
        write_rows(&config.output_path, "trace", config.output_format, &trace)?,
    ];
    Ok(Partial {
        fit_values: points.iter().map(|p| (p.f, p.b_uncertainty)).collect(),
        points: Points::Kalman(points),
        dropped: Vec::new(),
        failures,
        files,
    })
}

fn run_qfunction(config: &ExperimentConfig, workers: usize) -> Result<Partial> {
    let grid = config.grid();
    let nodes = grid.points();
    let results = map_ordered(jobs(config), workers, |(_, i, spin, seed)| {
        let state = simulate_record(&config.model(spin), seed)?.final_state;
        let q = grid.evaluate(&state)?;
        let point = QPointRow {
            f: spin.value(),
            trajectory: i,
            seed,
            normalization: grid.normalization(spin, &q),
            q_max: q.iter().copied().fold(0.0, f64::max),
            n_peaks: grid.local_maxima(&q, config.q_peak_threshold).len(),
            max_peak_separation: grid.max_peak_separation(&q, config.q_peak_threshold),
        };
        Ok::<_, spinfilter::Error>((point, q))
    })?;
    let mut points = Vec::new();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for ((_, i, spin, seed), r) in jobs(config).into_iter().zip(results) {
        match r {
            Ok((point, q)) => {
                rows.extend(nodes.iter().zip(&q).map(|(&(theta, phi), &q)| QGridRow {
                    scenario: config.scenario,
                    f: spin.value(),
                    trajectory: i,
                    seed,
                    theta,
                    phi,
                    q,
                }));
                points.push(point);
            }
            Err(e) => failures.push(Failure {
                f: spin.value(),
                trajectory: i,
                seed,
                error: e.to_string(),
            }),
        }
    }
    let files = vec![
        write_rows(&config.output_path, "points", config.output_format, &points)?,
        write_rows(&config.output_path, "qfunction", config.output_format, &rows)?,
    ];
    Ok(Partial {
        fit_values: Vec::new(),
        points: Points::Qfunction(points),
        dropped: Vec::new(),
        failures,
        files,
    })
}

fn run_trajectory(config: &ExperimentConfig, workers: usize) -> Result<Partial> {
    let stride = config.trace_stride;
    let results = map_ordered(jobs(config), workers, |(_, i, spin, seed)| {
        let params = config.model(spin);
        let sim = simulate_record(&params, seed)?;
        let mut z = 0.0;
        let mut cumulative = Vec::with_capacity(sim.fz.len());
        cumulative.push(0.0);
        for dz in &sim.record.dz {
            z += dz;
            cumulative.push(z);
        }
        let last = sim.fz.len() - 1;
        let trace: Vec<TrajectoryTraceRow> = (0..=last)
            .filter(|k| k % stride == 0 || *k == last)
            .map(|k| TrajectoryTraceRow {
                scenario: config.scenario,
                f: spin.value(),
                trajectory: i,
                seed,
                t: k as f64 * params.dt,
                fz: sim.fz[k],
                z: cumulative[k],
            })
            .collect();
        let point = TrajectoryPointRow {
            f: spin.value(),
            trajectory: i,
            seed,
            final_fz: sim.fz[last],
            final_z: cumulative[last],
        };
        Ok::<_, spinfilter::Error>((point, trace))
    })?;
    let mut points = Vec::new();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for ((_, i, spin, seed), r) in jobs(config).into_iter().zip(results) {
        match r {
            Ok((point, trace)) => {
                points.push(point);
                rows.extend(trace);
            }
            Err(e) => failures.push(Failure {
                f: spin.value(),
                trajectory: i,
                seed,
                error: e.to_string(),
            }),
        }
    }
    let files = vec![
        write_rows(&config.output_path, "points", config.output_format, &points)?,
        write_rows(&config.output_path, "trace", config.output_format, &rows)?,
    ];
    Ok(Partial {
        fit_values: Vec::new(),
        points: Points::Trajectory(points),
        dropped: Vec::new(),
        failures,
        files,
    })
}
