mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use stochnh::config::{ConfigError, EngineChoice, RunConfig};
use stochnh::field::Basis;
use stochnh::model::{physicality_check, ModelSpec, Preset, SignCheck};
use stochnh::montecarlo::{diffusion_classifier, run_ensemble, EnsembleError};
use stochnh::oracles::{
    default_lattice_cases, deterministic_moments, first_nonpositive_width, lattice_cross_check, q2_limit,
    sigma2_limit, stochastic_coefficients, x_second_moments, DeterministicParams, LatticeCase, OracleError,
    StochasticParams,
};
use stochnh::steppers::{equivalence_check, evolve, Engine, StepperError, Termination, TrajectoryResult};
use stochnh::stochastic::{generate_path, trajectory_seed, WienerPath};

use output::{num, write_csv, Metadata, Table};

/// Exit codes.
const EXIT_OTHER: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_WIDTH_COLLAPSE: u8 = 3;
const EXIT_BOUNDARY: u8 = 4;
const EXIT_TOLERANCE: u8 = 5;
const EXIT_OVERFLOW: u8 = 6;

const LATTICE_TOL: f64 = 1e-3;
const MIN_CONVERGE_SLOPE: f64 = 0.4;
/// Below this every engine difference counts as agreement, whatever the slope.
const DETERMINISTIC_DIFF: f64 = 1e-8;

#[derive(Parser)]
#[command(name = "stochnh", version, about = "Stochastic non-Hermitian wave-packet simulator")]
struct Cli {
    /// Run configuration (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for output files
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads for ensembles (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override `stochastic.seed`
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Integrate a single trajectory
    Evolve,
    /// Run an ensemble of trajectories and reduce their statistics
    Ensemble,
    /// Evaluate the closed-form moments of the configured preset
    Oracle,
    /// Compare the time-sliced lattice propagator with the continuum moments
    LatticeCheck,
    /// Compare the normalized and unnormalized engines under dt refinement
    Converge,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Evolve => "evolve",
            Command::Ensemble => "ensemble",
            Command::Oracle => "oracle",
            Command::LatticeCheck => "lattice-check",
            Command::Converge => "converge",
        }
    }
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Tolerance(String),
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Tolerance(m) => write!(f, "tolerance breach: {m}"),
        }
    }
}

impl std::error::Error for Failure {}

fn exit_code_of(err: &anyhow::Error) -> u8 {
    if let Some(f) = err.downcast_ref::<Failure>() {
        return match f {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Tolerance(_) => EXIT_TOLERANCE,
        };
    }
    let config_like = err.downcast_ref::<ConfigError>().is_some()
        || matches!(err.downcast_ref::<StepperError>(), Some(StepperError::InvalidConfig(_)))
        || matches!(err.downcast_ref::<EnsembleError>(), Some(EnsembleError::InvalidConfig(_)))
        || matches!(
            err.downcast_ref::<EnsembleError>(),
            Some(EnsembleError::Stepper(StepperError::InvalidConfig(_)))
        );
    if config_like {
        EXIT_CONFIG
    } else {
        EXIT_OTHER
    }
}

fn termination_code(t: &Termination) -> u8 {
    match t {
        Termination::Completed => 0,
        Termination::WidthCollapse { .. } => EXIT_WIDTH_COLLAPSE,
        Termination::BoundaryOverlap { .. } => EXIT_BOUNDARY,
        Termination::NumericalOverflow { .. } | Termination::ExpectationBlowup { .. } => EXIT_OVERFLOW,
    }
}

fn describe(t: &Termination) -> String {
    match t.time() {
        None => t.name().to_string(),
        Some(at) => format!("{} at t = {at}", t.name()),
    }
}

fn load_config(cli: &Cli) -> Result<Option<RunConfig>> {
    let Some(path) = &cli.config else {
        return Ok(None);
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = RunConfig::from_toml_str(&text)?;
    if let Some(seed) = cli.seed {
        match cfg.stochastic.as_mut() {
            Some(s) => s.seed = seed,
            None => eprintln!("note: no [stochastic] section, --seed ignored"),
        }
    }
    Ok(Some(cfg))
}

fn require(cfg: Option<&RunConfig>, command: Command) -> Result<&RunConfig> {
    cfg.ok_or_else(|| Failure::Config(format!("`{}` needs --config", command.name())).into())
}

fn warn_physicality(spec: &ModelSpec, cfg: &RunConfig) {
    let r = physicality_check(spec, cfg.init.sigma0);
    let checks = [("lambda2_re", r.lambda2_r_sign), ("lambda_re", r.lambda_r_sign), ("lambda_im", r.lambda_i_sign)];
    for (name, s) in checks {
        match s {
            SignCheck::WarnPositive => eprintln!("warning: {name} > 0"),
            SignCheck::WarnNonnegative => eprintln!("warning: {name} >= 0"),
            SignCheck::Ok | SignCheck::NotApplicable => {}
        }
    }
    if let Some(tc) = r.predicted_tc {
        eprintln!("warning: the packet width reaches zero at t_c = {tc}");
    }
}

/// The path of trajectory 0, or `None` for a deterministic run.
fn single_path(cfg: &RunConfig, spec: &ModelSpec, dt_fine: f64, t_final: f64) -> Result<Option<WienerPath>> {
    if spec.is_deterministic() {
        return Ok(None);
    }
    if cfg.stochastic.is_none() {
        eprintln!("note: no [stochastic] section, the noise term is ignored");
        return Ok(None);
    }
    let n = (t_final / dt_fine).round() as usize;
    Ok(Some(generate_path(trajectory_seed(cfg.seed(), 0), 0.0, dt_fine, n)?))
}

fn trajectory_table(r: &TrajectoryResult) -> Table {
    let mut t = Table::new(&["t", "q", "sigma2", "p_mean", "residual", "log_norm"]);
    for ((&time, s), &ln) in r.times.iter().zip(&r.summaries).zip(&r.log_norms) {
        t.push_nums(&[time, s.q, s.sigma2, s.p_mean, s.residual, ln]);
    }
    t
}

fn snapshot_table(r: &TrajectoryResult) -> Table {
    let mut t = Table::new(&["t", "x", "density"]);
    for (&time, snap) in r.times.iter().zip(&r.snapshots) {
        let psi = snap.unweighted().to_basis(Basis::Position);
        for (a, &x) in psi.amplitudes().iter().zip(snap.grid().x()) {
            t.push_nums(&[time, x, a.norm_sqr()]);
        }
    }
    t
}

fn cmd_evolve(cfg: &RunConfig, out: &Path) -> Result<u8> {
    let spec = cfg.model_spec()?;
    warn_physicality(&spec, cfg);
    let psi0 = cfg.initial_state()?;
    let scfg = cfg.stepper_config()?;
    let path = single_path(cfg, &spec, cfg.dt_fine(), scfg.t_final)?;
    let engines: &[(Engine, &str)] = match cfg.stepper.engine {
        EngineChoice::Prenormalized => &[(Engine::Prenormalized, "prenormalized")],
        EngineChoice::Normalized => &[(Engine::Normalized, "normalized")],
        EngineChoice::Both => &[(Engine::Prenormalized, "prenormalized"), (Engine::Normalized, "normalized")],
    };
    let mut code = 0;
    for &(engine, name) in engines {
        let r = evolve(engine, &spec, &psi0, path.as_ref(), &scfg)?;
        let suffix = if engines.len() > 1 { format!("_{name}") } else { String::new() };
        let meta = Metadata {
            command: "evolve",
            config: Some(cfg),
            extra: vec![("engine".into(), name.into()), ("termination".into(), describe(&r.termination))],
        };
        write_csv(out, &format!("trajectory{suffix}.csv"), &meta, &trajectory_table(&r))?;
        if scfg.keep_snapshots {
            write_csv(out, &format!("snapshots{suffix}.csv"), &meta, &snapshot_table(&r))?;
        }
        let last = r.summaries.last();
        println!(
            "{name}: {} q = {} sigma2 = {}",
            describe(&r.termination),
            last.map_or(f64::NAN, |s| s.q),
            last.map_or(f64::NAN, |s| s.sigma2)
        );
        if code == 0 {
            code = termination_code(&r.termination);
        }
    }
    Ok(code)
}

fn cmd_ensemble(cfg: &RunConfig, out: &Path) -> Result<u8> {
    let spec = cfg.model_spec()?;
    warn_physicality(&spec, cfg);
    let psi0 = cfg.initial_state()?;
    let ecfg = cfg.ensemble_config()?;
    let stats = run_ensemble(&spec, &psi0, &ecfg)?;
    let mut table = Table::new(&["t", "mean_q", "se_q", "var_q", "se_var_q", "mean_sigma2", "n_completed"]);
    for j in 0..stats.times.len() {
        let mut row: Vec<String> = [
            stats.times[j],
            stats.mean_q[j],
            stats.se_q[j],
            stats.var_q[j],
            stats.se_var_q[j],
            stats.mean_sigma2[j],
        ]
        .iter()
        .map(|&v| num(v))
        .collect();
        row.push(stats.n_completed.to_string());
        table.rows.push(row);
    }
    let histogram: Vec<String> = stats.terminations.iter().map(|(k, v)| format!("{k}={v}")).collect();
    let meta = Metadata {
        command: "ensemble",
        config: Some(cfg),
        extra: vec![
            ("trajectories".into(), ecfg.n_traj.to_string()),
            ("n_completed".into(), stats.n_completed.to_string()),
            ("n_terminated".into(), stats.n_terminated.to_string()),
            ("terminations".into(), histogram.join(" ")),
        ],
    };
    write_csv(out, "ensemble.csv", &meta, &table)?;
    let j = stats.times.len() - 1;
    println!(
        "t = {}: mean_q = {} +- {}, var_q = {} +- {}, mean_sigma2 = {}",
        stats.times[j], stats.mean_q[j], stats.se_q[j], stats.var_q[j], stats.se_var_q[j], stats.mean_sigma2[j]
    );
    println!("terminations: {}", histogram.join(" "));
    if let Some([a, b]) = cfg.output.fit_window {
        match diffusion_classifier(&stats.times, &stats.mean_sigma2, Some((a, b))) {
            Ok(fit) => println!("growth exponent on [{a}, {b}]: {} ({:?})", fit.exponent, fit.regime),
            Err(e) => eprintln!("warning: classifier: {e}"),
        }
    }
    Ok(0)
}

fn cmd_oracle(cfg: &RunConfig, out: &Path) -> Result<u8> {
    let spec = cfg.model_spec()?;
    let init = cfg.gaussian_init();
    let times = cfg.output_times()?;
    let meta = Metadata { command: "oracle", config: Some(cfg), extra: vec![] };
    match spec.preset {
        Preset::RandomDissipative { .. } => {
            let p = StochasticParams::from_spec(&spec, init)?;
            println!("sigma2_inf={}", sigma2_limit(&p));
            println!("Eq2_inf={}", q2_limit(&p));
            let mut table =
                Table::new(&["t", "n_r", "n_i", "d_r", "d_i", "sigma2", "ex2_re", "ex2_im", "ex_abs2"]);
            for &t in &times {
                let c = stochastic_coefficients(&p, t);
                let (ex2, eabs) = x_second_moments(p.lambda, t);
                let sigma2 = if c.d_r > 0.0 { c.d_r + c.d_i * c.d_i / c.d_r } else { f64::NAN };
                table.push_nums(&[t, c.n_r, c.n_i, c.d_r, c.d_i, sigma2, ex2.re, ex2.im, eabs]);
            }
            if let Some(t) = first_nonpositive_width(&p, cfg.stepper.t_final) {
                println!("negative_width_at={t}");
            }
            write_csv(out, "oracle.csv", &meta, &table)?;
        }
        Preset::DeterministicNH { lambda1, lambda2 } => {
            let p = DeterministicParams {
                q0: init.q0,
                p0: init.p0,
                sigma0: init.sigma0,
                lambda1: lambda1.value(),
                lambda2: lambda2.value(),
            };
            if let Some(tc) = p.collapse_time() {
                println!("t_c={tc}");
            }
            let mut table = Table::new(&["t", "q", "sigma2"]);
            for &t in &times {
                match deterministic_moments(&p, t) {
                    Ok(m) => table.push_nums(&[t, m.q, m.sigma2]),
                    Err(OracleError::PastCollapse { .. }) => break,
                    Err(e) => return Err(e.into()),
                }
            }
            write_csv(out, "oracle.csv", &meta, &table)?;
        }
        Preset::Custom => {
            return Err(Failure::Config("closed-form moments exist only for the built-in presets".into()).into())
        }
    }
    Ok(0)
}

fn lattice_cases(cfg: Option<&RunConfig>) -> Result<Vec<LatticeCase>> {
    let Some(cfg) = cfg else {
        return Ok(default_lattice_cases());
    };
    let spec = cfg.model_spec()?;
    let (Preset::DeterministicNH { lambda1, lambda2 }, Some(l)) = (spec.preset, cfg.lattice) else {
        return Ok(default_lattice_cases());
    };
    let init = cfg.gaussian_init();
    Ok(vec![LatticeCase {
        params: DeterministicParams {
            q0: init.q0,
            p0: init.p0,
            sigma0: init.sigma0,
            lambda1: lambda1.value(),
            lambda2: lambda2.value(),
        },
        grid: cfg.grid()?,
        t: l.t,
        n_steps: l.n_steps,
    }])
}

fn cmd_lattice_check(cfg: Option<&RunConfig>, out: &Path) -> Result<u8> {
    let cases = lattice_cases(cfg)?;
    let mut table = Table::new(&[
        "lambda2_re",
        "lambda2_im",
        "symbol_rel_error",
        "q_kernel",
        "q_oracle",
        "sigma2_kernel",
        "sigma2_oracle",
        "q_error_over_dx",
        "sigma2_rel_error",
        "pass",
    ]);
    let mut failures = Vec::new();
    for case in &cases {
        let r = lattice_cross_check(case)?;
        let pass = r.passes(LATTICE_TOL);
        let l2 = case.params.lambda2;
        let mut row: Vec<String> = [
            l2.re,
            l2.im,
            r.symbol_rel_error,
            r.q_kernel,
            r.q_oracle,
            r.sigma2_kernel,
            r.sigma2_oracle,
            r.q_error_over_dx,
            r.sigma2_rel_error,
        ]
        .iter()
        .map(|&v| num(v))
        .collect();
        row.push(pass.to_string());
        table.rows.push(row);
        println!(
            "lambda2 = {l2}: sigma2 {} vs {}, q {} vs {}, symbol error {:.3e}: {}",
            r.sigma2_kernel,
            r.sigma2_oracle,
            r.q_kernel,
            r.q_oracle,
            r.symbol_rel_error,
            if pass { "ok" } else { "FAIL" }
        );
        if !pass {
            failures.push(format!(
                "lambda2 = {l2}: sigma2 measured {} expected {}, q measured {} expected {}, symbol error {}",
                r.sigma2_kernel, r.sigma2_oracle, r.q_kernel, r.q_oracle, r.symbol_rel_error
            ));
        }
    }
    let meta = Metadata {
        command: "lattice-check",
        config: cfg,
        extra: vec![("tolerance".into(), num(LATTICE_TOL))],
    };
    write_csv(out, "lattice_check.csv", &meta, &table)?;
    if failures.is_empty() {
        Ok(0)
    } else {
        Err(Failure::Tolerance(failures.join("; ")).into())
    }
}

fn cmd_converge(cfg: &RunConfig, out: &Path) -> Result<u8> {
    let conv = cfg.converge.as_ref().ok_or_else(|| Failure::Config("`converge` needs a [converge] section".into()))?;
    if conv.dt_list.len() < 2 {
        return Err(Failure::Config("converge.dt_list needs at least two entries to fit a slope".into()).into());
    }
    let spec = cfg.model_spec()?;
    let psi0 = cfg.initial_state()?;
    let t_final = cfg.stepper.t_final;
    let dt_fine = cfg.stochastic.and_then(|s| s.dt_fine).unwrap_or(conv.dt_list.iter().copied().fold(f64::INFINITY, f64::min));
    let path = single_path(cfg, &spec, dt_fine, t_final)?;
    let rep = equivalence_check(&spec, &psi0, path.as_ref(), &conv.dt_list, t_final, cfg.stepper.mode)?;
    let slope = rep.slope.unwrap_or(f64::NAN);
    let mut table = Table::new(&["dt", "diff", "diff_final", "fitted_slope"]);
    for e in &rep.entries {
        table.push_nums(&[e.dt, e.diff_rms, e.diff_final, slope]);
    }
    let meta = Metadata { command: "converge", config: Some(cfg), extra: vec![("dt_fine".into(), num(dt_fine))] };
    write_csv(out, "converge.csv", &meta, &table)?;
    for e in &rep.entries {
        println!("dt = {}: diff = {}", e.dt, e.diff_rms);
    }
    println!("slope = {slope}");
    let max_diff = rep.entries.iter().map(|e| e.diff_rms).fold(0.0, f64::max);
    if max_diff < DETERMINISTIC_DIFF || slope >= MIN_CONVERGE_SLOPE {
        Ok(0)
    } else {
        Err(Failure::Tolerance(format!("slope measured {slope}, expected at least {MIN_CONVERGE_SLOPE}")).into())
    }
}

fn run(cli: &Cli) -> Result<u8> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker threads")?;
    }
    let cfg = load_config(cli)?;
    let out = &cli.out;
    match cli.command {
        Command::Evolve => cmd_evolve(require(cfg.as_ref(), cli.command)?, out),
        Command::Ensemble => cmd_ensemble(require(cfg.as_ref(), cli.command)?, out),
        Command::Oracle => cmd_oracle(require(cfg.as_ref(), cli.command)?, out),
        Command::LatticeCheck => cmd_lattice_check(cfg.as_ref(), out),
        Command::Converge => cmd_converge(require(cfg.as_ref(), cli.command)?, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_of(&e))
        }
    }
}
