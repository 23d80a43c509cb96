//! Ensembles of independent trajectories and their statistics.
//!
//! Trajectory `i` draws its path from `trajectory_seed(master, i)`, results
//! are collected in index order and reduced sequentially, so the statistics
//! do not depend on the number of worker threads.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::WaveFunction;
use crate::model::ModelSpec;
use crate::operators::StepMode;
use crate::steppers::{evolve, log_log_slope, Engine, StepperConfig, StepperError, TrajectoryResult};
use crate::stochastic::{generate_path, trajectory_seed, PathError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnsembleError {
    #[error("all {0} trajectories terminated early")]
    AllTerminated(usize),
    #[error("need at least {needed} points in the fit window, have {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("invalid ensemble configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Stepper(#[from] StepperError),
    #[error(transparent)]
    Path(#[from] PathError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SeMethod {
    #[default]
    FourthMoment,
    Bootstrap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    pub n_traj: usize,
    pub master_seed: u64,
    pub dt: f64,
    pub dt_fine: f64,
    pub t_final: f64,
    pub output_times: Vec<f64>,
    pub mode: StepMode,
    pub engine: Engine,
    pub se_method: SeMethod,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    pub mean_q: Vec<f64>,
    pub var_q: Vec<f64>,
    pub se_q: Vec<f64>,
    pub se_var_q: Vec<f64>,
    pub mean_sigma2: Vec<f64>,
    pub sd_sigma2: Vec<f64>,
    pub n_completed: usize,
    pub n_terminated: usize,
    pub terminations: BTreeMap<&'static str, usize>,
}

/// Sample mean, unbiased variance, and their standard errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimate {
    pub mean: f64,
    pub var: f64,
    pub se_mean: f64,
    pub se_var: f64,
}

pub fn estimate(xs: &[f64]) -> MomentEstimate {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    let var = m2 * n / (n - 1.0);
    // Var(s^2) ~ (m4 - (n-3)/(n-1) s^4) / n
    let se_var = ((m4 - (n - 3.0) / (n - 1.0) * var * var) / n).max(0.0).sqrt();
    MomentEstimate { mean, var, se_mean: (var / n).sqrt(), se_var }
}

fn unbiased_var(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Bootstrap standard error of the unbiased variance, with a fixed seed.
pub fn bootstrap_se_var(xs: &[f64], resamples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = xs.len();
    let mut buf = vec![0.0; n];
    let vals: Vec<f64> = (0..resamples)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = xs[rng.random_range(0..n)];
            }
            unbiased_var(&buf)
        })
        .collect();
    unbiased_var(&vals).sqrt()
}

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

/// Run `n_traj` trajectories of `spec` from `psi0` and reduce.
pub fn run_ensemble(
    spec: &ModelSpec,
    psi0: &WaveFunction,
    cfg: &EnsembleConfig,
) -> Result<EnsembleStats, EnsembleError> {
    if cfg.n_traj < 2 {
        return Err(EnsembleError::InvalidConfig(format!("need at least 2 trajectories, got {}", cfg.n_traj)));
    }
    if !(cfg.dt_fine.is_finite() && cfg.dt_fine > 0.0 && cfg.t_final.is_finite() && cfg.t_final > 0.0) {
        return Err(EnsembleError::InvalidConfig(format!("dt_fine = {}, t_final = {}", cfg.dt_fine, cfg.t_final)));
    }
    let n_fine = (cfg.t_final / cfg.dt_fine).round() as usize;
    let step_cfg = StepperConfig {
        dt: cfg.dt,
        t_final: cfg.t_final,
        mode: cfg.mode,
        output_times: cfg.output_times.clone(),
        keep_snapshots: false,
    };
    let results: Vec<Result<TrajectoryResult, EnsembleError>> = (0..cfg.n_traj)
        .into_par_iter()
        .map(|i| {
            let path = generate_path(trajectory_seed(cfg.master_seed, i as u64), 0.0, cfg.dt_fine, n_fine)?;
            Ok(evolve(cfg.engine, spec, psi0, Some(&path), &step_cfg)?)
        })
        .collect();

    let mut completed = Vec::new();
    let mut terminations = BTreeMap::new();
    for r in results {
        let r = r?;
        *terminations.entry(r.termination.name()).or_insert(0) += 1;
        if r.termination.is_completed() {
            completed.push(r);
        }
    }
    let n_completed = completed.len();
    if n_completed < 2 {
        return Err(EnsembleError::AllTerminated(cfg.n_traj));
    }
    let times = completed[0].times.clone();
    let mut stats = EnsembleStats {
        times: times.clone(),
        mean_q: Vec::new(),
        var_q: Vec::new(),
        se_q: Vec::new(),
        se_var_q: Vec::new(),
        mean_sigma2: Vec::new(),
        sd_sigma2: Vec::new(),
        n_completed,
        n_terminated: cfg.n_traj - n_completed,
        terminations,
    };
    for j in 0..times.len() {
        let qs: Vec<f64> = completed.iter().map(|r| r.summaries[j].q).collect();
        let ss: Vec<f64> = completed.iter().map(|r| r.summaries[j].sigma2).collect();
        let e = estimate(&qs);
        let se_var = match cfg.se_method {
            SeMethod::FourthMoment => e.se_var,
            SeMethod::Bootstrap => bootstrap_se_var(&qs, BOOTSTRAP_RESAMPLES, cfg.master_seed ^ j as u64),
        };
        let es = estimate(&ss);
        stats.mean_q.push(e.mean);
        stats.var_q.push(e.var);
        stats.se_q.push(e.se_mean);
        stats.se_var_q.push(se_var);
        stats.mean_sigma2.push(es.mean);
        stats.sd_sigma2.push(es.var.sqrt());
    }
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Ballistic,
    Diffusive,
    Saturating,
    Unclassified,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionFit {
    pub exponent: f64,
    pub regime: Regime,
}

pub const MIN_FIT_POINTS: usize = 10;

/// Growth exponent of `sigma2(t) - sigma2(t0)` against `t - t0`, with `t0`
/// the first sample. The fit uses `window` if given, otherwise the later half
/// of the samples.
pub fn diffusion_classifier(
    times: &[f64],
    sigma2: &[f64],
    window: Option<(f64, f64)>,
) -> Result<DiffusionFit, EnsembleError> {
    let n = times.len().min(sigma2.len());
    if n < 2 {
        return Err(EnsembleError::InsufficientData { needed: MIN_FIT_POINTS, got: n });
    }
    let (t0, s0) = (times[0], sigma2[0]);
    let (lo, hi) = window.unwrap_or((times[n / 2], times[n - 1]));
    let (xs, ys): (Vec<f64>, Vec<f64>) = (1..n)
        .filter(|&j| times[j] >= lo && times[j] <= hi && times[j] > t0)
        .map(|j| (times[j] - t0, (sigma2[j] - s0).abs()))
        .unzip();
    if xs.len() < MIN_FIT_POINTS {
        return Err(EnsembleError::InsufficientData { needed: MIN_FIT_POINTS, got: xs.len() });
    }
    let exponent = log_log_slope(&xs, &ys)
        .ok_or(EnsembleError::InsufficientData { needed: MIN_FIT_POINTS, got: xs.len() })?;
    let regime = if exponent > 1.5 {
        Regime::Ballistic
    } else if exponent >= 0.5 {
        Regime::Diffusive
    } else if exponent < 0.25 {
        Regime::Saturating
    } else {
        Regime::Unclassified
    };
    Ok(DiffusionFit { exponent, regime })
}
