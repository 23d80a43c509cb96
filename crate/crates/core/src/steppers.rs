//! Time integration of the two equivalent formulations.
//!
//! [`evolve_prenormalized`] integrates the linear equation
//! `d phi = -i dH phi` with the step maps of [`StepMode`] and divides the
//! norm out after every step into `log_norm`.
//!
//! [`evolve_normalized`] integrates the nonlinear equation for the physical
//! state. With `H1 = H0 + i V0`, `H2 = H_R + i V_R` and `v = <V_R>`:
//!
//! ```text
//!   d psi = -i H1 psi dt
//!         + [ i v H_R - v V_R - <V0> + i/2 <[V_R, H_R]>
//!             - 1/2 <H_R^2> - 1/2 <V_R^2> + 3/2 v^2 ] psi dt
//!         + [ -i H_R + V_R - v ] psi dW
//! ```
//!
//! The `-i H1` part is applied exactly through `exp(-i H1 dt)`, the rest as
//! an Euler-Maruyama increment.

use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::field::{boundary_mass, density_moments, summarize, Basis, GaussianSummary, Grid, WaveFunction};
use crate::model::{decompose_hermitian, ModelSpec};
use crate::operators::{Buffers, CompiledOperator, OperatorError, StepKernel, StepMode};
use crate::stochastic::{PathError, WienerPath};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepperError {
    #[error("invalid stepper configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

pub const BOUNDARY_TOLERANCE: f64 = 1e-6;
pub const EXPECTATION_LIMIT: f64 = 1e12;
const LOG_NORM_JUMP: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Termination {
    Completed,
    WidthCollapse { t: f64 },
    BoundaryOverlap { t: f64 },
    NumericalOverflow { t: f64 },
    ExpectationBlowup { t: f64 },
}

impl Termination {
    pub fn name(&self) -> &'static str {
        match self {
            Termination::Completed => "completed",
            Termination::WidthCollapse { .. } => "width_collapse",
            Termination::BoundaryOverlap { .. } => "boundary_overlap",
            Termination::NumericalOverflow { .. } => "numerical_overflow",
            Termination::ExpectationBlowup { .. } => "expectation_blowup",
        }
    }

    pub fn time(&self) -> Option<f64> {
        match *self {
            Termination::Completed => None,
            Termination::WidthCollapse { t }
            | Termination::BoundaryOverlap { t }
            | Termination::NumericalOverflow { t }
            | Termination::ExpectationBlowup { t } => Some(t),
        }
    }

    pub fn is_completed(&self) -> bool {
        matches!(self, Termination::Completed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepperConfig {
    pub dt: f64,
    pub t_final: f64,
    pub mode: StepMode,
    /// Snapped to multiples of `dt`.
    pub output_times: Vec<f64>,
    /// Keep a copy of the state at every output time.
    pub keep_snapshots: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryResult {
    pub times: Vec<f64>,
    pub summaries: Vec<GaussianSummary>,
    pub log_norms: Vec<f64>,
    pub termination: Termination,
    pub final_state: WaveFunction,
    pub snapshots: Vec<WaveFunction>,
}

struct Plan {
    n_steps: usize,
    output_steps: Vec<usize>,
    increments: Option<Vec<f64>>,
}

fn plan(cfg: &StepperConfig, path: Option<&WienerPath>) -> Result<Plan, StepperError> {
    let StepperConfig { dt, t_final, .. } = *cfg;
    if !(dt.is_finite() && dt > 0.0 && t_final.is_finite() && t_final > 0.0) {
        return Err(StepperError::InvalidConfig(format!("dt = {dt}, t_final = {t_final}")));
    }
    let n_steps = (t_final / dt).round() as usize;
    if n_steps == 0 || ((n_steps as f64) * dt - t_final).abs() > 1e-9 * t_final {
        return Err(StepperError::InvalidConfig(format!("t_final = {t_final} is not a multiple of dt = {dt}")));
    }
    let mut output_steps = Vec::with_capacity(cfg.output_times.len());
    for &t in &cfg.output_times {
        if !(t.is_finite() && t >= 0.0 && t <= t_final * (1.0 + 1e-12)) {
            return Err(StepperError::InvalidConfig(format!("output time {t} outside [0, {t_final}]")));
        }
        output_steps.push(((t / dt).round() as usize).min(n_steps));
    }
    output_steps.sort_unstable();
    output_steps.dedup();
    let increments = match path {
        None => None,
        Some(p) => {
            let m = (dt / p.dt()).round() as usize;
            if m == 0 || ((m as f64) * p.dt() - dt).abs() > 1e-9 * dt {
                return Err(StepperError::InvalidConfig(format!(
                    "dt = {dt} is not a multiple of the path step {}",
                    p.dt()
                )));
            }
            if p.len() < n_steps * m {
                return Err(StepperError::InvalidConfig(format!(
                    "path covers {} of the {} fine steps needed",
                    p.len(),
                    n_steps * m
                )));
            }
            let v = p.values();
            Some((0..n_steps).map(|j| v[(j + 1) * m] - v[j * m]).collect())
        }
    };
    Ok(Plan { n_steps, output_steps, increments })
}

fn l2(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `exp(-weight x^2)` on the grid, or `None` for the plain representation.
fn damping(grid: &Grid, weight: f64) -> Option<Vec<f64>> {
    (weight != 0.0).then(|| grid.x().iter().map(|&x| (-weight * x * x).exp()).collect())
}

/// Shared loop: renormalization, guards and output sampling. `step` maps a
/// unit-norm momentum-basis state to the next unnormalized one.
///
/// For weighted states the norm and the guards refer to the physical state;
/// the carried amplitudes must additionally stay away from the boundary.
fn drive<F>(psi0: &WaveFunction, cfg: &StepperConfig, plan: &Plan, mut step: F) -> TrajectoryResult
where
    F: FnMut(&mut [C64], f64) -> Result<(), ()>,
{
    let grid = psi0.grid().clone();
    let dt = cfg.dt;
    let damp = damping(&grid, psi0.weight());
    let mut psi = psi0.to_momentum();
    let n0 = psi.norm_sq().sqrt();
    let mut log_norm = psi0.log_norm + n0.ln();
    psi.amplitudes_mut().iter_mut().for_each(|a| *a /= n0);

    let sigma2_0 = summarize(psi0).sigma2;
    let floor = (4.0 * grid.dx() * grid.dx()).max(0.01 * sigma2_0);

    let mut times = Vec::new();
    let mut summaries = Vec::new();
    let mut log_norms = Vec::new();
    let mut snapshots = Vec::new();
    let mut next_out = 0;
    let mut xbuf = vec![C64::default(); grid.points()];
    let mut scratch = vec![C64::default(); grid.scratch_len()];

    let mut record = |psi: &WaveFunction, t: f64, log_norm: f64, times: &mut Vec<f64>| {
        times.push(t);
        summaries.push(summarize(psi));
        log_norms.push(log_norm);
        if cfg.keep_snapshots {
            let mut s = psi.clone();
            s.log_norm = log_norm;
            snapshots.push(s);
        }
    };

    let mut termination = Termination::Completed;
    for j in 0..=plan.n_steps {
        let t = j as f64 * dt;
        if next_out < plan.output_steps.len() && plan.output_steps[next_out] == j {
            record(&psi, t, log_norm, &mut times);
            next_out += 1;
        }
        if j == plan.n_steps {
            break;
        }
        let dw = plan.increments.as_ref().map_or(0.0, |v| v[j]);
        let t_next = t + dt;
        if step(psi.amplitudes_mut(), dw).is_err() {
            termination = Termination::ExpectationBlowup { t: t_next };
            break;
        }
        xbuf.copy_from_slice(psi.amplitudes());
        grid.inverse_in_place(&mut xbuf, &mut scratch);
        let mut carried_edge = false;
        let n = match &damp {
            None => l2(psi.amplitudes()),
            Some(d) => {
                carried_edge = boundary_mass(&grid, &xbuf) > BOUNDARY_TOLERANCE;
                for (v, &w) in xbuf.iter_mut().zip(d) {
                    *v *= w;
                }
                l2(&xbuf) * grid.dx().sqrt()
            }
        };
        if !(n.is_finite() && n > 0.0) || n.ln().abs() > LOG_NORM_JUMP {
            termination = Termination::NumericalOverflow { t: t_next };
            break;
        }
        log_norm += n.ln();
        let inv = 1.0 / n;
        psi.amplitudes_mut().iter_mut().for_each(|a| *a *= inv);
        xbuf.iter_mut().for_each(|a| *a *= inv);

        if carried_edge || boundary_mass(&grid, &xbuf) > BOUNDARY_TOLERANCE {
            termination = Termination::BoundaryOverlap { t: t_next };
        } else if density_moments(&grid, &xbuf).2 < floor {
            termination = Termination::WidthCollapse { t: t_next };
        }
        if !termination.is_completed() {
            record(&psi, t_next, log_norm, &mut times);
            break;
        }
    }
    psi.log_norm = log_norm;
    TrajectoryResult { times, summaries, log_norms, termination, final_state: psi, snapshots }
}

/// Integrate the linear equation. `path == None` means a deterministic run
/// with the noise generator ignored.
pub fn evolve_prenormalized(
    spec: &ModelSpec,
    psi0: &WaveFunction,
    path: Option<&WienerPath>,
    cfg: &StepperConfig,
) -> Result<TrajectoryResult, StepperError> {
    let plan = plan(cfg, path)?;
    let mut kernel = StepKernel::new(spec, psi0.grid(), cfg.mode, path.is_some(), psi0.weight())?;
    let dt = cfg.dt;
    Ok(drive(psi0, cfg, &plan, |state, dw| {
        kernel.step(state, dt, dw);
        Ok(())
    }))
}

struct NormalizedTerms {
    v0: CompiledOperator,
    hr: CompiledOperator,
    vr: CompiledOperator,
}

/// Inner products of the physical states behind momentum-basis amplitudes.
struct Inner {
    grid: Grid,
    /// `dx exp(-2 weight x^2)`; `None` when the plain `l2` product applies.
    density: Option<Vec<f64>>,
    xa: Vec<C64>,
    xb: Vec<C64>,
    scratch: Vec<C64>,
}

impl Inner {
    fn new(grid: &Grid, weight: f64) -> Self {
        let n = grid.points();
        let dx = grid.dx();
        Self {
            grid: grid.clone(),
            density: damping(grid, 2.0 * weight).map(|d| d.into_iter().map(|w| w * dx).collect()),
            xa: vec![C64::default(); n],
            xb: vec![C64::default(); n],
            scratch: vec![C64::default(); grid.scratch_len()],
        }
    }

    fn eval(&mut self, a: &[C64], b: &[C64]) -> C64 {
        let Some(d) = &self.density else {
            return a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
        };
        self.xa.copy_from_slice(a);
        self.grid.inverse_in_place(&mut self.xa, &mut self.scratch);
        self.xb.copy_from_slice(b);
        self.grid.inverse_in_place(&mut self.xb, &mut self.scratch);
        self.xa.iter().zip(&self.xb).zip(d).map(|((x, y), &w)| w * x.conj() * y).sum()
    }
}

/// Integrate the nonlinear equation for the normalized state.
pub fn evolve_normalized(
    spec: &ModelSpec,
    psi0: &WaveFunction,
    path: Option<&WienerPath>,
    cfg: &StepperConfig,
) -> Result<TrajectoryResult, StepperError> {
    let plan = plan(cfg, path)?;
    let grid = psi0.grid().clone();
    let weight = psi0.weight();
    let stochastic = path.is_some() && !spec.h2_terms.is_empty();
    let d = decompose_hermitian(spec);
    let terms = NormalizedTerms {
        v0: CompiledOperator::compile_weighted(&d.v0, &grid, weight)?,
        hr: CompiledOperator::compile_weighted(if stochastic { &d.hr } else { &[] }, &grid, weight)?,
        vr: CompiledOperator::compile_weighted(if stochastic { &d.vr } else { &[] }, &grid, weight)?,
    };
    let mut kernel = StepKernel::new(spec, &grid, cfg.mode, false, weight)?;
    let mut bufs = Buffers::new(&grid);
    let mut ip = Inner::new(&grid, weight);
    let n = grid.points();
    let (mut hpsi, mut vpsi, mut tmp, mut tmp2) =
        (vec![C64::default(); n], vec![C64::default(); n], vec![C64::default(); n], vec![C64::default(); n]);
    let dt = cfg.dt;
    let i = C64::i();
    Ok(drive(psi0, cfg, &plan, |psi, dw| {
        terms.v0.apply(&grid, psi, &mut tmp, &mut bufs);
        let v0 = ip.eval(psi, &tmp).re;
        let mut c = C64::new(-v0, 0.0);
        let mut v = 0.0;
        if stochastic {
            terms.hr.apply(&grid, psi, &mut hpsi, &mut bufs);
            terms.vr.apply(&grid, psi, &mut vpsi, &mut bufs);
            v = ip.eval(psi, &vpsi).re;
            let hr2 = ip.eval(&hpsi, &hpsi).re;
            let vr2 = ip.eval(&vpsi, &vpsi).re;
            // <[V_R, H_R]> = <psi|V_R H_R psi> - <psi|H_R V_R psi>
            terms.vr.apply(&grid, &hpsi, &mut tmp, &mut bufs);
            terms.hr.apply(&grid, &vpsi, &mut tmp2, &mut bufs);
            for (a, &b) in tmp.iter_mut().zip(&tmp2) {
                *a -= b;
            }
            let comm = ip.eval(psi, &tmp);
            c += 0.5 * i * comm - 0.5 * hr2 - 0.5 * vr2 + 1.5 * v * v;
            if [v0.abs(), v.abs(), hr2, vr2, comm.norm()].iter().any(|x| !(x.is_finite() && *x <= EXPECTATION_LIMIT)) {
                return Err(());
            }
        } else if !(v0.is_finite() && v0.abs() <= EXPECTATION_LIMIT) {
            return Err(());
        }
        if stochastic {
            for j in 0..n {
                let p = psi[j];
                let drift = i * v * hpsi[j] - v * vpsi[j] + c * p;
                let noise = -i * hpsi[j] + vpsi[j] - v * p;
                psi[j] = p + dt * drift + dw * noise;
            }
        } else {
            for p in psi.iter_mut() {
                *p += dt * c * *p;
            }
        }
        kernel.propagate_h1(psi, dt);
        Ok(())
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Prenormalized,
    Normalized,
}

pub fn evolve(
    engine: Engine,
    spec: &ModelSpec,
    psi0: &WaveFunction,
    path: Option<&WienerPath>,
    cfg: &StepperConfig,
) -> Result<TrajectoryResult, StepperError> {
    match engine {
        Engine::Prenormalized => evolve_prenormalized(spec, psi0, path, cfg),
        Engine::Normalized => evolve_normalized(spec, psi0, path, cfg),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceEntry {
    pub dt: f64,
    /// `|| psi_nonlinear - psi_linear ||` at `t_final`
    pub diff_final: f64,
    /// Root mean square of the same difference over the comparison times.
    pub diff_rms: f64,
    pub terminations: (Termination, Termination),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub entries: Vec<ConvergenceEntry>,
    /// Least-squares slope of `ln diff_rms` against `ln dt`.
    pub slope: Option<f64>,
}

pub const EQUIVALENCE_SAMPLES: usize = 20;

/// Least-squares slope of `ln y` on `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        x.iter().zip(y).filter(|(a, b)| **a > 0.0 && **b > 0.0).map(|(a, b)| (a.ln(), b.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Evolve the same state with both engines on coarse views of one path and
/// compare the normalized states at `EQUIVALENCE_SAMPLES` common times.
pub fn equivalence_check(
    spec: &ModelSpec,
    psi0: &WaveFunction,
    path: Option<&WienerPath>,
    dt_list: &[f64],
    t_final: f64,
    mode: StepMode,
) -> Result<ConvergenceReport, StepperError> {
    if dt_list.is_empty() {
        return Err(StepperError::InvalidConfig("empty dt list".into()));
    }
    let dt_max = dt_list.iter().copied().fold(0.0, f64::max);
    let n_coarse = (t_final / dt_max).round() as usize;
    let every = (n_coarse / EQUIVALENCE_SAMPLES).max(1);
    let output_times: Vec<f64> =
        (1..=n_coarse).filter(|j| j % every == 0 || *j == n_coarse).map(|j| j as f64 * dt_max).collect();
    let mut entries = Vec::with_capacity(dt_list.len());
    for &dt in dt_list {
        let cfg = StepperConfig { dt, t_final, mode, output_times: output_times.clone(), keep_snapshots: true };
        let lin = evolve_prenormalized(spec, psi0, path, &cfg)?;
        let nl = evolve_normalized(spec, psi0, path, &cfg)?;
        let diffs: Vec<f64> = lin.snapshots.iter().zip(&nl.snapshots).map(|(a, b)| a.distance(b)).collect();
        let diff_final = *diffs.last().unwrap_or(&f64::NAN);
        let diff_rms = if diffs.is_empty() {
            f64::NAN
        } else {
            (diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64).sqrt()
        };
        let diff_final = if lin.termination.is_completed() && nl.termination.is_completed() {
            diff_final
        } else {
            f64::NAN
        };
        entries.push(ConvergenceEntry { dt, diff_final, diff_rms, terminations: (lin.termination, nl.termination) });
    }
    let dts: Vec<f64> = entries.iter().map(|e| e.dt).collect();
    let diffs: Vec<f64> = entries.iter().map(|e| e.diff_rms).collect();
    let slope = log_log_slope(&dts, &diffs);
    Ok(ConvergenceReport { entries, slope })
}

/// Convenience: position-basis copy of a trajectory's final state.
pub fn final_density(result: &TrajectoryResult) -> (Grid, Vec<f64>) {
    let x = result.final_state.to_basis(Basis::Position);
    (x.grid().clone(), x.amplitudes().iter().map(|a| a.norm_sqr()).collect())
}
