//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

#[path = "../../core/tests/props/mod.rs"]
mod props;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use stochnh::config::RunConfig;
use stochnh::field::GaussianInit;
use stochnh::model::{build_model, ComplexParam, ModelInput};
use stochnh::montecarlo::{diffusion_classifier, estimate, run_ensemble};
use stochnh::operators::StepMode;
use stochnh::oracles::{
    default_lattice_cases, lattice_cross_check, per_path_check, q2_limit, x_second_moments, StochasticParams,
};
use stochnh::steppers::{equivalence_check, evolve_prenormalized, Termination};
use stochnh::stochastic::{derive_x, generate_path, trajectory_seed};
use stochnh::C64;

type Outcome = Result<String, String>;

fn config(name: &str) -> RunConfig {
    let path: PathBuf = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    RunConfig::from_toml_str(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: f64) -> bool {
    elapsed.as_secs_f64() < limit
}

fn free_spreading() -> Outcome {
    let cfg = config("free_spreading.toml");
    let start = Instant::now();
    let r = evolve_prenormalized(&cfg.model_spec().unwrap(), &cfg.initial_state().unwrap(), None, &cfg.stepper_config().unwrap())
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let worst = r.times.iter().zip(&r.summaries).map(|(&t, s)| (s.sigma2 / (1.0 + t * t) - 1.0).abs()).fold(0.0, f64::max);
    check(
        r.termination.is_completed() && worst < 0.02 && within(elapsed, 10.0),
        format!("max rel error {worst:.2e}, {:.2} s", elapsed.as_secs_f64()),
    )
}

fn diffusive() -> Outcome {
    let cfg = config("diffusive.toml");
    let r = evolve_prenormalized(&cfg.model_spec().unwrap(), &cfg.initial_state().unwrap(), None, &cfg.stepper_config().unwrap())
        .map_err(|e| e.to_string())?;
    let worst = r.times.iter().zip(&r.summaries).map(|(&t, s)| (s.sigma2 / (1.0 + 0.5 * t) - 1.0).abs()).fold(0.0, f64::max);
    let s2: Vec<f64> = r.summaries.iter().map(|s| s.sigma2).collect();
    let fit = diffusion_classifier(&r.times, &s2, Some((4.0, 10.0))).map_err(|e| e.to_string())?;
    check(
        r.termination.is_completed() && worst < 0.02 && (fit.exponent - 1.0).abs() <= 0.15,
        format!("max rel error {worst:.2e}, exponent {:.4}", fit.exponent),
    )
}

fn collapse() -> Outcome {
    let cfg = config("collapse.toml");
    let r = evolve_prenormalized(&cfg.model_spec().unwrap(), &cfg.initial_state().unwrap(), None, &cfg.stepper_config().unwrap())
        .map_err(|e| e.to_string())?;
    match r.termination {
        Termination::WidthCollapse { t } => check((1.8..=2.0).contains(&t), format!("width collapse at t = {t:.4}")),
        other => Err(format!("terminated with {other:?}")),
    }
}

fn localization() -> Outcome {
    let cfg = config("localization.toml");
    let spec = cfg.model_spec().unwrap();
    let start = Instant::now();
    let path = generate_path(trajectory_seed(cfg.seed(), 0), 0.0, cfg.dt_fine(), 12_000).map_err(|e| e.to_string())?;
    let r = evolve_prenormalized(&spec, &cfg.initial_state().unwrap(), Some(&path), &cfg.stepper_config().unwrap())
        .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let s = r.summaries.last().unwrap().sigma2;
    check(
        r.termination.is_completed() && (s / 0.5 - 1.0).abs() < 0.02 && within(elapsed, 60.0),
        format!("sigma2(12) = {s:.10}, {:.2} s", elapsed.as_secs_f64()),
    )
}

fn steady_state() -> Outcome {
    let cfg = config("steady_state.toml");
    let spec = cfg.model_spec().unwrap();
    let psi0 = cfg.initial_state().unwrap();
    let ens = cfg.ensemble_config().unwrap();
    let target = q2_limit(&StochasticParams::from_spec(&spec, cfg.gaussian_init()).unwrap());
    let start = Instant::now();
    let s = run_ensemble(&spec, &psi0, &ens).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let j = s.times.len() - 1;
    let var_ok = (s.var_q[j] - target).abs() < 3.0 * s.se_var_q[j];
    let mean_ok = s.mean_q[j].abs() < 3.0 * s.se_q[j];

    // thread independence on a subset with the same seeds
    let mut small = ens.clone();
    small.n_traj = 24;
    let in_pool = |threads| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| run_ensemble(&spec, &psi0, &small))
    };
    let reproducible = match (in_pool(1), in_pool(4)) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    check(
        var_ok && mean_ok && reproducible && within(elapsed, 1800.0),
        format!(
            "var_q = {:.5} +- {:.5} (target {target}), mean_q = {:.5} +- {:.5}, {} of {} completed, bitwise {}, {:.0} s",
            s.var_q[j],
            s.se_var_q[j],
            s.mean_q[j],
            s.se_q[j],
            s.n_completed,
            ens.n_traj,
            if reproducible { "reproducible" } else { "NOT reproducible" },
            elapsed.as_secs_f64()
        ),
    )
}

fn x_moments() -> Outcome {
    let lambda = C64::new(-1.0, -1.0);
    let (t, dt) = (2.0, 1e-3);
    let xs: Vec<C64> = (0..10_000)
        .map(|i| *derive_x(&generate_path(trajectory_seed(6, i), 0.0, dt, 2000).unwrap(), lambda).x.last().unwrap())
        .collect();
    let (ex2, eabs) = x_second_moments(lambda, t);
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for (f, expected) in [
        (Box::new(|x: &C64| (x * x).re) as Box<dyn Fn(&C64) -> f64>, ex2.re),
        (Box::new(|x: &C64| (x * x).im), ex2.im),
        (Box::new(|x: &C64| x.norm_sqr()), eabs),
    ] {
        let e = estimate(&xs.iter().map(f).collect::<Vec<_>>());
        let z = (e.mean - expected).abs() / e.se_mean;
        worst = worst.max(z);
        ok &= z < 3.0;
    }
    check(ok, format!("largest deviation {worst:.2} SE"))
}

fn per_path() -> Outcome {
    let gamma = 0.5;
    let spec = build_model(ModelInput::RandomDissipative {
        mass: 1.0,
        lambda: ComplexParam::new(-1.0, -1.0).unwrap(),
        gamma: ComplexParam::new(gamma, 0.0).unwrap(),
    })
    .unwrap();
    let cfg = config("localization.toml");
    let init = GaussianInit { q0: 0.0, p0: 0.0, sigma0: 1.0 };
    let psi0 = cfg.initial_state().unwrap();
    let (dt, t) = (1e-3, 2.0);
    let dt_fine = dt / 64.0;
    let (mut e1, mut e2): (f64, f64) = (0.0, 0.0);
    for i in 0..20 {
        let path = generate_path(trajectory_seed(99, i), 0.0, dt_fine, (t / dt_fine).round() as usize).map_err(|e| e.to_string())?;
        let a = per_path_check(&spec, init, &psi0, &path, dt, t, StepMode::Exp2).map_err(|e| e.to_string())?;
        let b = per_path_check(&spec, init, &psi0, &path, dt / 2.0, t, StepMode::Exp2).map_err(|e| e.to_string())?;
        if !(a.termination.is_completed() && b.termination.is_completed()) {
            return Err(format!("path {i} terminated early"));
        }
        e1 = e1.max(a.q_error());
        e2 = e2.max(b.q_error());
    }
    let bound = 5.0 * dt.sqrt() * (1.0 + gamma);
    let ratio = e2 / e1;
    check(
        e1 < bound && (0.35..=0.65).contains(&ratio),
        format!("max |dq| = {e1:.3e} (bound {bound:.3e}), ratio at dt/2 = {ratio:.3}"),
    )
}

fn lattice() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for case in default_lattice_cases() {
        let r = lattice_cross_check(&case).map_err(|e| e.to_string())?;
        ok &= r.passes(1e-3);
        worst = worst.max(r.symbol_rel_error).max(r.sigma2_rel_error);
    }
    let dir = std::env::temp_dir().join(format!("stochnh-acceptance-{}", std::process::id()));
    let status = Command::new(env!("CARGO_BIN_EXE_stochnh"))
        .arg("--out")
        .arg(&dir)
        .arg("lattice-check")
        .output()
        .map_err(|e| e.to_string())?
        .status;
    let _ = std::fs::remove_dir_all(&dir);
    check(ok && status.success(), format!("worst relative error {worst:.2e}, lattice-check exit {:?}", status.code()))
}

fn equivalence() -> Outcome {
    let cfg = config("converge.toml");
    let spec = cfg.model_spec().unwrap();
    let psi0 = cfg.initial_state().unwrap();
    let dts = cfg.converge.as_ref().unwrap().dt_list.clone();
    let t = cfg.stepper.t_final;
    let n = (t / cfg.dt_fine()).round() as usize;
    let path = generate_path(trajectory_seed(cfg.seed(), 0), 0.0, cfg.dt_fine(), n).map_err(|e| e.to_string())?;
    let rep = equivalence_check(&spec, &psi0, Some(&path), &dts, t, StepMode::Exp2).map_err(|e| e.to_string())?;
    let slope = rep.slope.unwrap_or(f64::NAN);

    let noiseless = build_model(ModelInput::RandomDissipative {
        mass: 1.0,
        lambda: ComplexParam::new(-1.0, -1.0).unwrap(),
        gamma: ComplexParam::new(0.0, 0.0).unwrap(),
    })
    .unwrap();
    let det = equivalence_check(&noiseless, &psi0, None, &dts, t, StepMode::Exp2).map_err(|e| e.to_string())?;
    let det_max = det.entries.iter().map(|e| e.diff_final.max(e.diff_rms)).fold(0.0, f64::max);
    check(slope >= 0.5 && det_max < 1e-8, format!("slope {slope:.4}, deterministic difference {det_max:.2e}"))
}

fn properties() -> Outcome {
    let start = Instant::now();
    let suites: [(&str, fn() -> Result<(), String>); 5] = [
        ("linearity", props::linearity),
        ("recomposition", props::recomposition),
        ("parseval", props::parseval),
        ("quadratic variation", props::quadratic_variation),
        ("gaussian round trip", props::gaussian_round_trip),
    ];
    let mut failed = Vec::new();
    for (name, suite) in suites {
        if let Err(e) = suite() {
            failed.push(format!("{name}: {e}"));
        }
    }
    let elapsed = start.elapsed();
    if !within(elapsed, 120.0) {
        failed.push(format!("took {:.1} s", elapsed.as_secs_f64()));
    }
    check(failed.is_empty(), if failed.is_empty() { format!("5 suites, {:.2} s", elapsed.as_secs_f64()) } else { failed.join("; ") })
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("free spreading", free_spreading),
        ("diffusive spreading", diffusive),
        ("width collapse", collapse),
        ("single-path localization", localization),
        ("steady-state ensemble", steady_state),
        ("X moments", x_moments),
        ("per-path oracle", per_path),
        ("lattice cross-check", lattice),
        ("engine equivalence", equivalence),
        ("property suites", properties),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(d) => println!("PASS {:>2} {name}: {d}", i + 1),
            Err(d) => {
                failures += 1;
                println!("FAIL {:>2} {name}: {d}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
