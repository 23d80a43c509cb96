//! Closed-form Gaussian results used as references.
//!
//! A Gaussian `exp(-(x - mu)^2 / (2 s))` has density centre and squared width
//!
//! ```text
//!   q = Re mu + (Im s / Re s) Im mu,     sigma2 = Re s + (Im s)^2 / Re s
//! ```
//!
//! Deterministic model (`-i H1 = -l1 d - l2 d^2`):
//!
//! ```text
//!   s(t) = sigma0^2 - 2 l2 t,            mu(t) = q0 + i sigma0^2 p0 + l1 t
//! ```
//!
//! Random dissipative model:
//!
//! ```text
//!   s(t) = sigma0^2 e^{2 l t} + i (e^{2 l t} - 1) / (2 m l)
//!   mu(t) = (q0 + i p0 sigma0^2) e^{l t} + gamma X(t)
//! ```
//!
//! with `D = s` and `N = (q0 + i p0 sigma0^2) e^{l t}`.

use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::field::{density_moments, init_gaussian, summarize, GaussianInit, Grid, WaveFunction};
use crate::model::{ModelSpec, Preset};
use crate::operators::StepMode;
use crate::steppers::{evolve_prenormalized, StepperConfig, StepperError, Termination};
use crate::stochastic::{derive_x, WienerPath};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("t = {t} is past the collapse time t_c = {t_c}")]
    PastCollapse { t: f64, t_c: f64 },
    #[error("D_R = {d_r} <= 0 at t = {t}")]
    NegativeWidth { t: f64, d_r: f64 },
    #[error("oracle only defined for the {0} preset")]
    WrongPreset(&'static str),
    #[error(transparent)]
    Stepper(#[from] StepperError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeterministicParams {
    pub q0: f64,
    pub p0: f64,
    pub sigma0: f64,
    pub lambda1: C64,
    pub lambda2: C64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeterministicMoments {
    pub q: f64,
    pub sigma2: f64,
}

impl DeterministicParams {
    pub fn collapse_time(&self) -> Option<f64> {
        (self.lambda2.re > 0.0).then(|| self.sigma0 * self.sigma0 / (2.0 * self.lambda2.re))
    }
}

pub fn deterministic_moments(p: &DeterministicParams, t: f64) -> Result<DeterministicMoments, OracleError> {
    let s0 = p.sigma0 * p.sigma0;
    let den = s0 - 2.0 * p.lambda2.re * t;
    if den <= 0.0 {
        return Err(OracleError::PastCollapse { t, t_c: p.collapse_time().unwrap_or(f64::NAN) });
    }
    let q = p.q0 + p.lambda1.re * t - 2.0 * p.lambda2.im * t * (p.lambda1.im * t + s0 * p.p0) / den;
    let sigma2 = den + 4.0 * p.lambda2.im * p.lambda2.im * t * t / den;
    Ok(DeterministicMoments { q, sigma2 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StochasticParams {
    pub q0: f64,
    pub p0: f64,
    pub sigma0: f64,
    pub mass: f64,
    pub lambda: C64,
    pub gamma: C64,
}

impl StochasticParams {
    pub fn from_spec(spec: &ModelSpec, init: GaussianInit) -> Result<Self, OracleError> {
        match spec.preset {
            Preset::RandomDissipative { mass, lambda, gamma } => Ok(Self {
                q0: init.q0,
                p0: init.p0,
                sigma0: init.sigma0,
                mass,
                lambda: lambda.value(),
                gamma: gamma.value(),
            }),
            _ => Err(OracleError::WrongPreset("random-dissipative")),
        }
    }
}

/// `N_R, N_I, D_R, D_I` at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StochasticMoments {
    pub n_r: f64,
    pub n_i: f64,
    pub d_r: f64,
    pub d_i: f64,
}

/// `(e^{z} - 1) / z`, accurate for small `z`.
fn expm1_over(z: C64) -> C64 {
    if z.norm() < 1e-5 {
        1.0 + z / 2.0 + z * z / 6.0
    } else {
        (z.exp() - 1.0) / z
    }
}

pub fn stochastic_coefficients(p: &StochasticParams, t: f64) -> StochasticMoments {
    let s0 = p.sigma0 * p.sigma0;
    let e1 = (p.lambda * t).exp();
    let e2 = e1 * e1;
    // i (e^{2lt} - 1) / (2 m l) = i t / m * (e^{2lt} - 1) / (2 l t)
    let d = s0 * e2 + C64::i() * (t / p.mass) * expm1_over(2.0 * p.lambda * t);
    let n = C64::new(p.q0, p.p0 * s0) * e1;
    StochasticMoments { n_r: n.re, n_i: n.im, d_r: d.re, d_i: d.im }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketMoments {
    pub q: f64,
    pub sigma2: f64,
}

pub fn stochastic_moments(p: &StochasticParams, t: f64, x: C64) -> Result<PacketMoments, OracleError> {
    let c = stochastic_coefficients(p, t);
    if c.d_r <= 0.0 {
        return Err(OracleError::NegativeWidth { t, d_r: c.d_r });
    }
    let gx = p.gamma * x;
    let r = c.d_i / c.d_r;
    Ok(PacketMoments { q: c.n_r + gx.re + r * (c.n_i + gx.im), sigma2: c.d_r + c.d_i * r })
}

pub fn sigma2_limit(p: &StochasticParams) -> f64 {
    1.0 / (2.0 * p.mass * (-p.lambda.im))
}

pub fn q2_limit(p: &StochasticParams) -> f64 {
    let (lr, li) = (p.lambda.re, p.lambda.im);
    let (gr, gi) = (p.gamma.re, p.gamma.im);
    -gi * gi * lr / (2.0 * li * li) - p.gamma.norm_sqr() / (4.0 * lr) - gr * gi / (2.0 * li)
}

/// `E[X(t)^2]` and `E[|X(t)|^2]`.
pub fn x_second_moments(lambda: C64, t: f64) -> (C64, f64) {
    let ex2 = t * expm1_over(2.0 * lambda * t);
    let eabs = t * expm1_over(C64::new(2.0 * lambda.re * t, 0.0)).re;
    (ex2, eabs)
}

/// First `t` in `(0, t_final]` with `D_R(t) <= 0`: a scan on 1000 points
/// followed by bisection.
pub fn first_nonpositive_width(p: &StochasticParams, t_final: f64) -> Option<f64> {
    let n = 1000;
    let dr = |t: f64| stochastic_coefficients(p, t).d_r;
    let mut prev = 0.0;
    for j in 1..=n {
        let t = t_final * j as f64 / n as f64;
        if dr(t) <= 0.0 {
            let (mut a, mut b) = (prev, t);
            for _ in 0..100 {
                let m = 0.5 * (a + b);
                if dr(m) <= 0.0 {
                    b = m;
                } else {
                    a = m;
                }
            }
            return Some(b);
        }
        prev = t;
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PropagatorFlavor {
    /// `c(k)^N` of the time-sliced lattice
    Lattice,
    /// `exp(-t sum_n l_n (ik)^n)`
    Continuum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticePropagator {
    pub grid: Grid,
    pub t: f64,
    pub n_steps: u64,
    pub c: Vec<C64>,
    pub lattice: Vec<C64>,
    pub continuum: Vec<C64>,
}

impl LatticePropagator {
    pub fn symbol(&self, flavor: PropagatorFlavor) -> &[C64] {
        match flavor {
            PropagatorFlavor::Lattice => &self.lattice,
            PropagatorFlavor::Continuum => &self.continuum,
        }
    }

    /// `max_k |c^N / e^{-t symbol} - 1|`
    pub fn max_symbol_rel_error(&self) -> f64 {
        self.lattice.iter().zip(&self.continuum).map(|(a, b)| (a / b - 1.0).norm()).fold(0.0, f64::max)
    }

    /// `K(j dx) = 1/L sum_k e^{i k j dx} symbol(k)`, `j = 0..N`.
    pub fn kernel_row(&self, flavor: PropagatorFlavor) -> Vec<C64> {
        let g = &self.grid;
        let sym = self.symbol(flavor);
        let inv_l = 1.0 / g.length();
        (0..g.points())
            .map(|j| {
                let d = j as f64 * g.dx();
                g.k().iter().zip(sym).map(|(&k, &v)| C64::from_polar(1.0, k * d) * v).sum::<C64>() * inv_l
            })
            .collect()
    }
}

/// `lambdas[n-1]` multiplies `(ik)^n`.
pub fn lattice_propagator(lambdas: &[C64], grid: &Grid, t: f64, n_steps: u64) -> LatticePropagator {
    let n_steps = n_steps.max(1);
    let dt = t / n_steps as f64;
    let symbol = |k: f64| -> C64 {
        lambdas.iter().enumerate().map(|(n, &l)| l * C64::new(0.0, k).powu(n as u32 + 1)).sum()
    };
    let mut c = Vec::with_capacity(grid.points());
    let mut lattice = Vec::with_capacity(grid.points());
    let mut continuum = Vec::with_capacity(grid.points());
    for &k in grid.k() {
        let s = symbol(k);
        let ck = 1.0 - dt * s;
        // exp(N Log c) equals c^N on every branch because N is an integer
        lattice.push((n_steps as f64 * ck.ln()).exp());
        continuum.push((-t * s).exp());
        c.push(ck);
    }
    LatticePropagator { grid: grid.clone(), t, n_steps, c, lattice, continuum }
}

/// Periodic convolution `psi_f(x_n) = sum_m K(x_n - x_m) psi0(x_m) dx`.
pub fn convolve(grid: &Grid, kernel: &[C64], psi0: &[C64]) -> Vec<C64> {
    let n = grid.points();
    (0..n)
        .map(|i| (0..n).map(|m| kernel[(i + n - m) % n] * psi0[m]).sum::<C64>() * grid.dx())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeCase {
    pub params: DeterministicParams,
    pub grid: Grid,
    pub t: f64,
    pub n_steps: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeCheckReport {
    pub symbol_rel_error: f64,
    pub q_kernel: f64,
    pub q_oracle: f64,
    pub sigma2_kernel: f64,
    pub sigma2_oracle: f64,
    /// `|q_kernel - q_oracle| / dx`
    pub q_error_over_dx: f64,
    pub sigma2_rel_error: f64,
}

impl LatticeCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.symbol_rel_error < tol && self.q_error_over_dx < tol && self.sigma2_rel_error < tol
    }
}

/// Evolve a sampled Gaussian with the lattice kernel and compare its density
/// moments with [`deterministic_moments`].
pub fn lattice_cross_check(case: &LatticeCase) -> Result<LatticeCheckReport, OracleError> {
    let p = case.params;
    let oracle = deterministic_moments(&p, case.t)?;
    let lp = lattice_propagator(&[p.lambda1, p.lambda2], &case.grid, case.t, case.n_steps);
    let kernel = lp.kernel_row(PropagatorFlavor::Lattice);
    let psi0 = init_gaussian(&case.grid, GaussianInit { q0: p.q0, p0: p.p0, sigma0: p.sigma0 })
        .map_err(|_| OracleError::WrongPreset("resolvable initial packet"))?;
    let psi_f = convolve(&case.grid, &kernel, psi0.amplitudes());
    let (_, q, sigma2) = density_moments(&case.grid, &psi_f);
    Ok(LatticeCheckReport {
        symbol_rel_error: lp.max_symbol_rel_error(),
        q_kernel: q,
        q_oracle: oracle.q,
        sigma2_kernel: sigma2,
        sigma2_oracle: oracle.sigma2,
        q_error_over_dx: (q - oracle.q).abs() / case.grid.dx(),
        sigma2_rel_error: (sigma2 / oracle.sigma2 - 1.0).abs(),
    })
}

/// The four sign quadrants of `lambda2` with the remaining defaults.
pub fn default_lattice_cases() -> Vec<LatticeCase> {
    let grid = Grid::new(32.0, 128).expect("valid default grid");
    [(-0.1, -0.3), (-0.1, 0.3), (0.1, -0.3), (0.1, 0.3)]
        .into_iter()
        .map(|(re, im)| LatticeCase {
            params: DeterministicParams {
                q0: 0.5,
                p0: 0.3,
                sigma0: 1.0,
                lambda1: C64::new(0.5, 0.2),
                lambda2: C64::new(re, im),
            },
            grid: grid.clone(),
            t: 1.0,
            n_steps: 10_000_000,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerPathReport {
    pub x_t: C64,
    pub q_num: f64,
    pub q_oracle: f64,
    pub sigma2_num: f64,
    pub sigma2_oracle: f64,
    pub termination: Termination,
}

impl PerPathReport {
    pub fn q_error(&self) -> f64 {
        (self.q_num - self.q_oracle).abs()
    }

    pub fn sigma2_error(&self) -> f64 {
        (self.sigma2_num - self.sigma2_oracle).abs()
    }
}

/// Integrate one path numerically at step `dt` (a coarse view of `path`)
/// and compare with the closed form evaluated on `X(t)` from the fine path.
pub fn per_path_check(
    spec: &ModelSpec,
    init: GaussianInit,
    psi0: &WaveFunction,
    path: &WienerPath,
    dt: f64,
    t: f64,
    mode: StepMode,
) -> Result<PerPathReport, OracleError> {
    let params = StochasticParams::from_spec(spec, init)?;
    let cfg = StepperConfig { dt, t_final: t, mode, output_times: vec![t], keep_snapshots: false };
    let res = evolve_prenormalized(spec, psi0, Some(path), &cfg)?;
    let fine_steps = (t / path.dt()).round() as usize;
    let derived = derive_x(path, params.lambda);
    let x_t = derived.x[fine_steps.min(derived.x.len() - 1)];
    let oracle = stochastic_moments(&params, t, x_t)?;
    let s = summarize(&res.final_state);
    Ok(PerPathReport {
        x_t,
        q_num: s.q,
        q_oracle: oracle.q,
        sigma2_num: s.sigma2,
        sigma2_oracle: oracle.sigma2,
        termination: res.termination,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn det(l1: C64, l2: C64) -> DeterministicParams {
        DeterministicParams { q0: 0.0, p0: 0.0, sigma0: 1.0, lambda1: l1, lambda2: l2 }
    }

    #[test]
    fn deterministic_examples() {
        let m = deterministic_moments(&det(C64::new(1.0, 0.0), C64::default()), 3.0).unwrap();
        assert_relative_eq!(m.q, 3.0);
        assert_relative_eq!(m.sigma2, 1.0);
        let m = deterministic_moments(&det(C64::default(), C64::new(0.0, -0.5)), 1.0).unwrap();
        assert_relative_eq!(m.q, 0.0);
        assert_relative_eq!(m.sigma2, 2.0);
        assert_eq!(
            deterministic_moments(&det(C64::default(), C64::new(0.25, 0.0)), 2.0),
            Err(OracleError::PastCollapse { t: 2.0, t_c: 2.0 })
        );
    }

    #[test]
    fn deterministic_matches_gaussian_parameter_form() {
        // independent evaluation through s and mu
        let p = DeterministicParams {
            q0: 0.4,
            p0: -0.7,
            sigma0: 1.3,
            lambda1: C64::new(0.5, 0.2),
            lambda2: C64::new(-0.1, 0.3),
        };
        for &t in &[0.0, 0.5, 1.7, 4.0] {
            let s = p.sigma0 * p.sigma0 - 2.0 * p.lambda2 * t;
            let mu = C64::new(p.q0, p.sigma0 * p.sigma0 * p.p0) + p.lambda1 * t;
            let m = deterministic_moments(&p, t).unwrap();
            assert_relative_eq!(m.q, mu.re + s.im / s.re * mu.im, epsilon = 1e-12);
            assert_relative_eq!(m.sigma2, s.norm_sqr() / s.re, epsilon = 1e-12);
        }
    }

    fn rd(gamma: C64) -> StochasticParams {
        StochasticParams { q0: 0.5, p0: 0.3, sigma0: 1.0, mass: 1.0, lambda: C64::new(-1.0, -1.0), gamma }
    }

    #[test]
    fn stochastic_initial_values() {
        let p = rd(C64::new(0.5, 0.0));
        let c = stochastic_coefficients(&p, 0.0);
        assert_eq!((c.n_r, c.n_i, c.d_r, c.d_i), (0.5, 0.3, 1.0, 0.0));
        let m = stochastic_moments(&p, 0.0, C64::default()).unwrap();
        assert_eq!((m.q, m.sigma2), (0.5, 1.0));
    }

    #[test]
    fn width_limit() {
        let p = rd(C64::new(1.0, 0.0));
        assert_relative_eq!(sigma2_limit(&p), 0.5);
        let m = stochastic_moments(&p, 10.0, C64::new(0.3, -0.2)).unwrap();
        assert!((m.sigma2 - 0.5).abs() < 1e-3);
        // once e^{2 lr t} < 1e-9 the finite-time value sits on the limit
        let t = 11.0;
        assert!((2.0 * p.lambda.re * t).exp() < 1e-9);
        assert!((stochastic_moments(&p, t, C64::default()).unwrap().sigma2 - sigma2_limit(&p)).abs() < 1e-6);
    }

    /// `E[q(t)^2]` evaluated from the Gaussian parameters and the second
    /// moments of `X`, independently of the closed-form limit.
    fn q2_at(p: &StochasticParams, t: f64) -> f64 {
        let c = stochastic_coefficients(p, t);
        let r = c.d_i / c.d_r;
        let mean = c.n_r + r * c.n_i;
        let w = C64::new(1.0, -r) * p.gamma; // Re(gX) + r Im(gX) = Re(w X)
        let (ex2, eabs) = x_second_moments(p.lambda, t);
        mean * mean + 0.5 * (w.norm_sqr() * eabs + (w * w * ex2).re)
    }

    #[test]
    fn position_variance_limit() {
        assert_relative_eq!(q2_limit(&rd(C64::new(1.0, 0.0))), 0.25);
        for (l, g) in [
            (C64::new(-1.0, -1.0), C64::new(1.0, 0.0)),
            (C64::new(-0.5, -2.0), C64::new(0.7, -0.4)),
            (C64::new(-1.5, -0.3), C64::new(-0.2, 1.1)),
        ] {
            let p = StochasticParams { q0: 0.2, p0: 0.1, sigma0: 1.0, mass: 1.0, lambda: l, gamma: g };
            assert_relative_eq!(q2_at(&p, 60.0), q2_limit(&p), epsilon = 1e-9);
        }
    }

    #[test]
    fn x_moment_limits() {
        let l = C64::new(-1.0, -1.0);
        let (ex2, eabs) = x_second_moments(l, 50.0);
        assert!((ex2 - C64::new(0.25, -0.25)).norm() < 1e-12);
        assert_relative_eq!(eabs, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn negative_width_detection() {
        // growing envelope with an imaginary drift pushes D_R through zero
        let p = StochasticParams {
            q0: 0.0,
            p0: 0.0,
            sigma0: 1.0,
            mass: 1.0,
            lambda: C64::new(0.3, 2.0),
            gamma: C64::new(0.5, 0.0),
        };
        let tz = first_nonpositive_width(&p, 10.0).expect("crossing exists");
        assert!(stochastic_coefficients(&p, tz).d_r <= 0.0);
        assert!(stochastic_coefficients(&p, tz - 1e-6).d_r > 0.0);
        assert!(matches!(stochastic_moments(&p, tz + 1e-9, C64::default()), Err(OracleError::NegativeWidth { .. })));
        assert_eq!(first_nonpositive_width(&rd(C64::new(1.0, 0.0)), 10.0), None);
    }

    #[test]
    fn lattice_identity_is_delta() {
        let g = Grid::new(8.0, 32).unwrap();
        let lp = lattice_propagator(&[C64::default(), C64::default()], &g, 1.0, 10);
        let row = lp.kernel_row(PropagatorFlavor::Lattice);
        assert_relative_eq!(row[0].re, 1.0 / g.dx(), epsilon = 1e-12);
        for r in &row[1..] {
            assert!(r.norm() < 1e-12);
        }
    }

    #[test]
    fn lattice_symbol_limit_single_mode() {
        let g = Grid::new(8.0, 32).unwrap();
        let lp = lattice_propagator(&[C64::new(1.0, 0.0)], &g, 1.0, 1_000_000);
        let j = 3;
        let rel = (lp.lattice[j] / lp.continuum[j] - 1.0).norm();
        assert!(rel < 1e-5, "rel = {rel}");
        let k = g.k()[j];
        assert!((lp.continuum[j] - C64::new(0.0, -k).exp()).norm() < 1e-14);
        // repeated multiplication agrees with the log form
        let mut direct = C64::new(1.0, 0.0);
        for _ in 0..lp.n_steps {
            direct *= lp.c[j];
        }
        assert!((direct / lp.lattice[j] - 1.0).norm() < 1e-8);
    }

    #[test]
    fn lattice_cross_check_quadrants() {
        for case in default_lattice_cases() {
            let r = lattice_cross_check(&case).unwrap();
            assert!(r.passes(1e-3), "{:?}: {r:?}", case.params.lambda2);
        }
    }

    #[test]
    fn oracles_are_pure() {
        let p = rd(C64::new(0.5, 0.1));
        let a = stochastic_moments(&p, 1.3, C64::new(0.2, 0.1)).unwrap();
        let b = stochastic_moments(&p, 1.3, C64::new(0.2, 0.1)).unwrap();
        assert_eq!(a.q.to_bits(), b.q.to_bits());
        assert_eq!(a.sigma2.to_bits(), b.sigma2.to_bits());
    }
}
