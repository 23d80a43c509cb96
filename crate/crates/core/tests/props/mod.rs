//! Property suites, shared by the `properties` and `acceptance` targets.
//! Every runner uses a fixed RNG so a pass or failure reproduces exactly.

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use stochnh::field::{init_gaussian, init_gaussian_weighted, summarize, Basis, GaussianInit, Grid, WaveFunction};
use stochnh::model::{build_model, canonicalize, hermitian_split, ComplexParam, ModelInput, OperatorTerm};
use stochnh::operators::{apply_terms, StepMode};
use stochnh::steppers::{evolve_prenormalized, StepperConfig};
use stochnh::stochastic::generate_path;
use stochnh::C64;

fn runner(cases: u32) -> TestRunner {
    let cfg = Config { cases, failure_persistence: None, ..Config::default() };
    TestRunner::new_with_rng(cfg, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn finish<T: std::fmt::Debug>(r: Result<(), proptest::test_runner::TestError<T>>) -> Result<(), String> {
    r.map_err(|e| e.to_string())
}

fn cp(re: f64, im: f64) -> ComplexParam {
    ComplexParam::new(re, im).unwrap()
}

fn true_scale(psi: &WaveFunction) -> Vec<C64> {
    let s = psi.log_norm.exp();
    psi.to_momentum().amplitudes().iter().map(|a| a * s).collect()
}

fn rel_diff(a: &[C64], b: &[C64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let n: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (d / n).sqrt()
}

/// One fixed path, two packets and their combination; the unnormalized flow
/// must commute with the combination once log-norms are restored.
pub fn linearity() -> Result<(), String> {
    let rd = build_model(ModelInput::RandomDissipative { mass: 1.0, lambda: cp(-1.0, -1.0), gamma: cp(0.5, 0.0) })
        .unwrap();
    let drifting = build_model(ModelInput::Custom {
        h1_terms: vec![
            OperatorTerm::derivative(2, C64::new(-0.5, -0.05)),
            OperatorTerm::derivative(1, C64::new(0.0, 0.2)),
        ],
        h2_terms: vec![OperatorTerm::derivative(1, C64::new(0.0, -0.4))],
    })
    .unwrap();
    let strat = (
        (-0.5f64..0.5, -1.0f64..1.0, 0.75f64..0.9),
        (-0.5f64..0.5, -1.0f64..1.0, 0.75f64..0.9),
        (-2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0, -2.0f64..2.0),
        any::<u64>(),
        any::<bool>(),
    );
    finish(runner(12).run(&strat, |(a, b, (ar, ai, br, bi), seed, weighted)| {
        let (spec, grid, w) = if weighted {
            (&rd, Grid::new(22.0, 128).unwrap(), 0.4)
        } else {
            (&drifting, Grid::new(20.0, 128).unwrap(), 0.0)
        };
        let ga = init_gaussian_weighted(&grid, GaussianInit { q0: a.0, p0: a.1, sigma0: a.2 }, w).unwrap();
        let gb = init_gaussian_weighted(&grid, GaussianInit { q0: b.0, p0: b.1, sigma0: b.2 }, w).unwrap();
        let (alpha, beta) = (C64::new(ar, ai), C64::new(br, bi));
        let comb: Vec<C64> =
            ga.amplitudes().iter().zip(gb.amplitudes()).map(|(x, y)| alpha * x + beta * y).collect();
        let comb = WaveFunction::new_weighted(grid.clone(), Basis::Momentum, comb, w).unwrap();
        let path = generate_path(seed, 0.0, 1e-3, 500).unwrap();
        let cfg = StepperConfig { dt: 1e-3, t_final: 0.5, mode: StepMode::Exp2, output_times: vec![], keep_snapshots: false };
        let mut runs = Vec::new();
        for psi in [&comb, &ga, &gb] {
            let r = evolve_prenormalized(spec, psi, Some(&path), &cfg).unwrap();
            prop_assert!(r.termination.is_completed(), "{:?}", r.termination);
            runs.push(true_scale(&r.final_state));
        }
        let (lhs, ra, rb) = (&runs[0], &runs[1], &runs[2]);
        let rhs: Vec<C64> = ra.iter().zip(rb.iter()).map(|(x, y)| alpha * x + beta * y).collect();
        let e = rel_diff(lhs, &rhs);
        prop_assert!(e < 1e-8, "relative deviation {e:e}");
        Ok(())
    }))
}

fn term_strategy() -> impl Strategy<Value = OperatorTerm> {
    let c = (-2.0f64..2.0, -2.0f64..2.0).prop_map(|(r, i)| C64::new(r, i));
    prop_oneof![
        (0u32..5, c.clone()).prop_map(|(o, c)| OperatorTerm::derivative(o, c)),
        c.clone().prop_map(OperatorTerm::dx_x),
        c.prop_map(OperatorTerm::x_dx),
    ]
}

fn key(t: &OperatorTerm) -> (u8, u32) {
    match *t {
        OperatorTerm::DerivativePoly { order, .. } => (0, order),
        OperatorTerm::MixedDxX { .. } => (1, 0),
        OperatorTerm::MixedXDx { .. } => (2, 0),
    }
}

fn scaled(t: &OperatorTerm, s: C64) -> OperatorTerm {
    match *t {
        OperatorTerm::DerivativePoly { order, coeff } => OperatorTerm::derivative(order, s * coeff.value()),
        OperatorTerm::MixedDxX { coeff } => OperatorTerm::dx_x(s * coeff.value()),
        OperatorTerm::MixedXDx { coeff } => OperatorTerm::x_dx(s * coeff.value()),
    }
}

/// `H = H_R + i V_R` term by term, both parts self-adjoint, and the same
/// identity for the operators acting on a state.
pub fn recomposition() -> Result<(), String> {
    let grid = Grid::new(20.0, 64).unwrap();
    let psi = init_gaussian(&grid, GaussianInit { q0: 0.3, p0: 0.7, sigma0: 1.3 }).unwrap();
    finish(runner(200).run(&proptest::collection::vec(term_strategy(), 1..6), |terms| {
        let parts = hermitian_split(&terms);
        let mut joined = parts.hermitian.clone();
        joined.extend(parts.anti_hermitian.iter().map(|t| scaled(t, C64::i())));
        let joined = canonicalize(&joined);
        let orig = canonicalize(&terms);
        let scale = terms.iter().map(|t| t.coeff().norm()).fold(1.0, f64::max);
        for t in joined.iter().chain(&orig) {
            let a = orig.iter().find(|u| key(u) == key(t)).map_or(C64::default(), |u| u.coeff());
            let b = joined.iter().find(|u| key(u) == key(t)).map_or(C64::default(), |u| u.coeff());
            prop_assert!((a - b).norm() <= 8.0 * f64::EPSILON * scale, "{t:?}: {a} vs {b}");
        }
        for part in [&parts.hermitian, &parts.anti_hermitian] {
            let adj = canonicalize(&part.iter().map(OperatorTerm::adjoint).collect::<Vec<_>>());
            for t in part {
                let a = adj.iter().find(|u| key(u) == key(t)).map_or(C64::default(), |u| u.coeff());
                prop_assert!((a - t.coeff()).norm() <= 8.0 * f64::EPSILON * scale, "not self-adjoint: {t:?}");
            }
        }
        let h = apply_terms(&parts.hermitian, &psi).unwrap().to_momentum();
        let v = apply_terms(&parts.anti_hermitian, &psi).unwrap().to_momentum();
        let full = apply_terms(&terms, &psi).unwrap().to_momentum();
        let sum: Vec<C64> = h.amplitudes().iter().zip(v.amplitudes()).map(|(x, y)| x + C64::i() * y).collect();
        let e = rel_diff(&sum, full.amplitudes());
        prop_assert!(e < 1e-12, "applied recomposition off by {e:e}");
        Ok(())
    }))
}

pub fn parseval() -> Result<(), String> {
    let strat = (5.0f64..80.0, 4u32..9, any::<u64>());
    finish(runner(64).run(&strat, |(length, log_n, seed)| {
        let n = 1usize << log_n;
        let grid = Grid::new(length, n).unwrap();
        let mut rng = TestRng::from_seed(RngAlgorithm::ChaCha, &seed_bytes(seed));
        let amps: Vec<C64> = (0..n).map(|_| C64::new(rng.random_f64() - 0.5, rng.random_f64() - 0.5)).collect();
        let psi = WaveFunction::new(grid, Basis::Position, amps.clone()).unwrap();
        let k = psi.to_momentum();
        let (nx, nk) = (psi.norm_sq(), k.norm_sq());
        prop_assert!((nx - nk).abs() <= 1e-13 * nx, "{nx} vs {nk}");
        let back = k.to_position();
        prop_assert!(rel_diff(back.amplitudes(), &amps) < 1e-14);
        Ok(())
    }))
}

fn seed_bytes(seed: u64) -> [u8; 32] {
    let mut b = [0u8; 32];
    b[..8].copy_from_slice(&seed.to_le_bytes());
    b
}

trait Uniform {
    fn random_f64(&mut self) -> f64;
}

impl Uniform for TestRng {
    fn random_f64(&mut self) -> f64 {
        use proptest::prelude::RngCore;
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// Sum of squared increments over `[0, T]` concentrates at `T`.
pub fn quadratic_variation() -> Result<(), String> {
    let strat = (any::<u64>(), prop_oneof![Just(1e-3), Just(1e-4)], 0.5f64..4.0);
    finish(runner(32).run(&strat, |(seed, dt, t)| {
        let n = (t / dt).round() as usize;
        let t = n as f64 * dt;
        let path = generate_path(seed, 0.0, dt, n).unwrap();
        let qv: f64 = path.increments().iter().map(|d| d * d).sum();
        // sd of the sum is T sqrt(2 / n)
        let sd = t * (2.0 / n as f64).sqrt();
        prop_assert!((qv - t).abs() < 6.0 * sd, "QV {qv} vs {t} (sd {sd})");
        let end = path.values()[n];
        prop_assert!((end - path.increments().iter().sum::<f64>()).abs() < 1e-12);
        Ok(())
    }))
}

/// Initial packets carry their parameters into the measured moments, in
/// both representations.
pub fn gaussian_round_trip() -> Result<(), String> {
    let grid = Grid::new(40.0, 256).unwrap();
    let strat = (-3.0f64..3.0, -2.0f64..2.0, 0.7f64..2.0, 0.0f64..0.8);
    finish(runner(64).run(&strat, |(q0, p0, sigma0, frac)| {
        let init = GaussianInit { q0, p0, sigma0 };
        let weight = frac * 0.5 / (sigma0 * sigma0);
        for psi in [init_gaussian(&grid, init).unwrap(), init_gaussian_weighted(&grid, init, weight).unwrap()] {
            let s = summarize(&psi);
            prop_assert!((s.q - q0).abs() < 1e-9, "q {} vs {q0}", s.q);
            prop_assert!((s.p_mean - p0).abs() < 1e-9, "p {} vs {p0}", s.p_mean);
            prop_assert!((s.sigma2 / (sigma0 * sigma0) - 1.0).abs() < 1e-9, "sigma2 {}", s.sigma2);
            prop_assert!(s.residual < 1e-9, "residual {}", s.residual);
            prop_assert!((psi.norm_sq() - 1.0).abs() < 1e-12);
        }
        Ok(())
    }))
}
