//! Periodic grid, wave-function storage and the spectral transform.
//!
//! The position grid is centred, `x_j = -L/2 + j dx`, and wavenumbers are kept
//! in FFT order. The transform pair is scaled so that it is unitary with
//! respect to the `dx`-weighted inner product:
//!
//! ```text
//!   psi~(k) = dx / sqrt(L) * sum_j exp(-i k x_j) psi(x_j)
//!   psi(x)  = 1 / sqrt(L)  * sum_k exp( i k x  ) psi~(k)
//!   sum_k |psi~|^2 = dx * sum_j |psi|^2
//! ```

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("grid size {0} is not a power of two >= 16")]
    InvalidPoints(usize),
    #[error("grid length must be finite and positive, got {0}")]
    InvalidLength(f64),
    #[error("initial packet is not resolved: {0}")]
    UnresolvedPacket(String),
    #[error("wave function has zero or non-finite norm")]
    ZeroNorm,
    #[error("weight must be finite and non-negative, got {0}")]
    InvalidWeight(f64),
    #[error("weight {weight} is not below 1 / (2 sigma0^2) = {limit}")]
    WeightTooLarge { weight: f64, limit: f64 },
    #[error("amplitude vector has length {got}, grid has {expected} points")]
    LengthMismatch { expected: usize, got: usize },
}

struct GridInner {
    length: f64,
    points: usize,
    dx: f64,
    x: Vec<f64>,
    k: Vec<f64>,
    /// exp(i k L/2) = (-1)^j for the centred grid
    phase: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

/// Periodic uniform grid. Cheap to clone.
#[derive(Clone)]
pub struct Grid(Arc<GridInner>);

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid").field("length", &self.0.length).field("points", &self.0.points).finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
            || (self.0.length.to_bits() == other.0.length.to_bits() && self.0.points == other.0.points)
    }
}

impl Grid {
    pub fn new(length: f64, points: usize) -> Result<Self, FieldError> {
        if !(length.is_finite() && length > 0.0) {
            return Err(FieldError::InvalidLength(length));
        }
        if points < 16 || !points.is_power_of_two() {
            return Err(FieldError::InvalidPoints(points));
        }
        let dx = length / points as f64;
        let x = (0..points).map(|j| -0.5 * length + j as f64 * dx).collect();
        let k = (0..points)
            .map(|j| {
                let m = if j < points / 2 { j as f64 } else { j as f64 - points as f64 };
                2.0 * PI * m / length
            })
            .collect();
        let phase = (0..points).map(|j| if j % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(points);
        let inv = planner.plan_fft_inverse(points);
        Ok(Grid(Arc::new(GridInner { length, points, dx, x, k, phase, fwd, inv })))
    }

    pub fn length(&self) -> f64 {
        self.0.length
    }

    pub fn points(&self) -> usize {
        self.0.points
    }

    pub fn dx(&self) -> f64 {
        self.0.dx
    }

    pub fn x(&self) -> &[f64] {
        &self.0.x
    }

    /// Wavenumbers in FFT order.
    pub fn k(&self) -> &[f64] {
        &self.0.k
    }

    pub fn k_max(&self) -> f64 {
        PI / self.0.dx
    }

    pub fn scratch_len(&self) -> usize {
        self.0.fwd.get_inplace_scratch_len().max(self.0.inv.get_inplace_scratch_len())
    }

    pub(crate) fn phase(&self) -> &[f64] {
        &self.0.phase
    }

    /// Unscaled transforms without the centring phase, for callers that fold
    /// both into their own loops.
    pub(crate) fn forward_raw(&self, data: &mut [C64], scratch: &mut [C64]) {
        self.0.fwd.process_with_scratch(data, scratch);
    }

    pub(crate) fn inverse_raw(&self, data: &mut [C64], scratch: &mut [C64]) {
        self.0.inv.process_with_scratch(data, scratch);
    }

    /// In-place position -> momentum transform.
    pub fn forward_in_place(&self, data: &mut [C64], scratch: &mut [C64]) {
        self.0.fwd.process_with_scratch(data, scratch);
        let s = self.0.dx / self.0.length.sqrt();
        for (d, p) in data.iter_mut().zip(&self.0.phase) {
            *d *= s * p;
        }
    }

    /// In-place momentum -> position transform.
    pub fn inverse_in_place(&self, data: &mut [C64], scratch: &mut [C64]) {
        for (d, p) in data.iter_mut().zip(&self.0.phase) {
            *d *= *p;
        }
        self.0.inv.process_with_scratch(data, scratch);
        let s = 1.0 / self.0.length.sqrt();
        for d in data.iter_mut() {
            *d *= s;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    Position,
    Momentum,
}

/// Amplitudes on a grid. With a nonzero `weight` the stored amplitudes are
/// `exp(weight x^2) psi(x)`; norms, distances and summaries always refer to
/// `psi` itself.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveFunction {
    grid: Grid,
    basis: Basis,
    amplitudes: Vec<C64>,
    weight: f64,
    /// Logarithm of the norm that was divided out of `amplitudes`.
    pub log_norm: f64,
}

impl WaveFunction {
    pub fn new(grid: Grid, basis: Basis, amplitudes: Vec<C64>) -> Result<Self, FieldError> {
        if amplitudes.len() != grid.points() {
            return Err(FieldError::LengthMismatch { expected: grid.points(), got: amplitudes.len() });
        }
        Ok(Self { grid, basis, amplitudes, weight: 0.0, log_norm: 0.0 })
    }

    /// Amplitudes that already carry the factor `exp(weight x^2)`.
    pub fn new_weighted(grid: Grid, basis: Basis, amplitudes: Vec<C64>, weight: f64) -> Result<Self, FieldError> {
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(FieldError::InvalidWeight(weight));
        }
        let mut psi = Self::new(grid, basis, amplitudes)?;
        psi.weight = weight;
        Ok(psi)
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// The same state with the weight divided out, in the position basis.
    pub fn unweighted(&self) -> WaveFunction {
        let mut x = self.to_position();
        if x.weight != 0.0 {
            for (a, &xj) in x.amplitudes.iter_mut().zip(self.grid.x()) {
                *a *= (-x.weight * xj * xj).exp();
            }
            x.weight = 0.0;
        }
        x
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn amplitudes_mut(&mut self) -> &mut [C64] {
        &mut self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amplitudes
    }

    /// `integral |psi|^2 dx`, the same in either basis.
    pub fn norm_sq(&self) -> f64 {
        if self.weight != 0.0 {
            return self.unweighted().norm_sq();
        }
        let s: f64 = self.amplitudes.iter().map(|a| a.norm_sqr()).sum();
        match self.basis {
            Basis::Position => s * self.grid.dx(),
            Basis::Momentum => s,
        }
    }

    /// Scale to unit norm, accumulating the removed factor in `log_norm`.
    pub fn normalize(&mut self) -> Result<(), FieldError> {
        let n = self.norm_sq().sqrt();
        if !(n.is_finite() && n > 0.0) {
            return Err(FieldError::ZeroNorm);
        }
        let inv = 1.0 / n;
        for a in &mut self.amplitudes {
            *a *= inv;
        }
        self.log_norm += n.ln();
        Ok(())
    }

    pub fn to_basis(&self, basis: Basis) -> WaveFunction {
        if basis == self.basis {
            return self.clone();
        }
        let mut data = self.amplitudes.clone();
        let mut scratch = vec![C64::default(); self.grid.scratch_len()];
        match basis {
            Basis::Momentum => self.grid.forward_in_place(&mut data, &mut scratch),
            Basis::Position => self.grid.inverse_in_place(&mut data, &mut scratch),
        }
        WaveFunction { amplitudes: data, basis, ..self.clone_header() }
    }

    fn clone_header(&self) -> WaveFunction {
        WaveFunction {
            grid: self.grid.clone(),
            basis: self.basis,
            amplitudes: Vec::new(),
            weight: self.weight,
            log_norm: self.log_norm,
        }
    }

    pub fn to_momentum(&self) -> WaveFunction {
        self.to_basis(Basis::Momentum)
    }

    pub fn to_position(&self) -> WaveFunction {
        self.to_basis(Basis::Position)
    }

    /// L2 distance `|| a - b ||` between two states on the same grid.
    pub fn distance(&self, other: &WaveFunction) -> f64 {
        let (a, b) = if self.weight == 0.0 && other.weight == 0.0 {
            (self.to_momentum(), other.to_momentum())
        } else {
            (self.unweighted().to_momentum(), other.unweighted().to_momentum())
        };
        a.amplitudes.iter().zip(&b.amplitudes).map(|(u, v)| (u - v).norm_sqr()).sum::<f64>().sqrt()
    }
}

pub fn transform_to_k(psi: &WaveFunction) -> WaveFunction {
    psi.to_momentum()
}

pub fn transform_to_x(psi: &WaveFunction) -> WaveFunction {
    psi.to_position()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianInit {
    pub q0: f64,
    pub p0: f64,
    pub sigma0: f64,
}

impl GaussianInit {
    fn check(&self, grid: &Grid) -> Result<(), FieldError> {
        let GaussianInit { q0, p0, sigma0 } = *self;
        if !(q0.is_finite() && p0.is_finite() && sigma0.is_finite() && sigma0 > 0.0) {
            return Err(FieldError::UnresolvedPacket(format!("non-finite or non-positive parameter in {self:?}")));
        }
        if sigma0 < 4.0 * grid.dx() {
            return Err(FieldError::UnresolvedPacket(format!(
                "sigma0 = {sigma0} is below 4 dx = {}",
                4.0 * grid.dx()
            )));
        }
        if 6.0 * sigma0 > 0.5 * grid.length() - q0.abs() {
            return Err(FieldError::UnresolvedPacket(format!(
                "6 sigma0 = {} does not fit between q0 = {q0} and the boundary",
                6.0 * sigma0
            )));
        }
        if p0.abs() > 0.5 * grid.k_max() {
            return Err(FieldError::UnresolvedPacket(format!("p0 = {p0} is above half the Nyquist wavenumber")));
        }
        Ok(())
    }
}

/// Sampled Gaussian `exp(-(x-q0)^2 / (2 sigma0^2) + i p0 x)`, normalized, in
/// the position basis.
pub fn init_gaussian(grid: &Grid, init: GaussianInit) -> Result<WaveFunction, FieldError> {
    init.check(grid)?;
    let GaussianInit { q0, p0, sigma0 } = init;
    let amps = grid
        .x()
        .iter()
        .map(|&x| {
            let r = -(x - q0).powi(2) / (2.0 * sigma0 * sigma0);
            C64::from_polar(r.exp(), p0 * x)
        })
        .collect();
    let mut psi = WaveFunction::new(grid.clone(), Basis::Position, amps)?;
    psi.normalize()?;
    psi.log_norm = 0.0;
    Ok(psi)
}

/// The same packet built directly from its analytic Fourier transform, in
/// the momentum basis. Every mode carries full relative precision, which
/// matters when the dynamics amplifies high wavenumbers.
pub fn init_gaussian_spectral(grid: &Grid, init: GaussianInit) -> Result<WaveFunction, FieldError> {
    init_gaussian_weighted(grid, init, 0.0)
}

/// Spectral initialization of `exp(weight x^2) psi0`, itself a Gaussian
/// `exp(-a x^2 + (b + i p0) x)` with `a = 1/(2 sigma0^2) - weight` and
/// `b = q0 / sigma0^2`.
pub fn init_gaussian_weighted(grid: &Grid, init: GaussianInit, weight: f64) -> Result<WaveFunction, FieldError> {
    init.check(grid)?;
    if !(weight.is_finite() && weight >= 0.0) {
        return Err(FieldError::InvalidWeight(weight));
    }
    let GaussianInit { q0, p0, sigma0 } = init;
    let limit = 0.5 / (sigma0 * sigma0);
    if weight >= limit {
        return Err(FieldError::WeightTooLarge { weight, limit });
    }
    let a = limit - weight;
    let b = q0 / (sigma0 * sigma0);
    // log of the transform, up to a constant: (b + i (p0 - k))^2 / (4a) - i k x_0
    let z: Vec<C64> = grid.k().iter().map(|&k| C64::new(b, p0 - k).powi(2) / (4.0 * a)).collect();
    let peak = z.iter().map(|v| v.re).fold(f64::NEG_INFINITY, f64::max);
    let amps = z.iter().map(|v| (v - peak).exp()).collect();
    let mut psi = WaveFunction::new_weighted(grid.clone(), Basis::Momentum, amps, weight)?;
    psi.normalize()?;
    psi.log_norm = 0.0;
    Ok(psi)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianSummary {
    pub q: f64,
    pub sigma2: f64,
    pub p_mean: f64,
    /// Relative L2 distance between the density and the Gaussian with the
    /// same first two moments.
    pub residual: f64,
}

/// Density moments `(mass, q, sigma2)` of position-basis amplitudes, where
/// `sigma2` is twice the variance, matching `exp(-(x-q)^2 / sigma2)`.
pub fn density_moments(grid: &Grid, x_amps: &[C64]) -> (f64, f64, f64) {
    let mut m0 = 0.0;
    let mut m1 = 0.0;
    for (a, &x) in x_amps.iter().zip(grid.x()) {
        let r = a.norm_sqr();
        m0 += r;
        m1 += r * x;
    }
    let q = m1 / m0;
    let m2: f64 = x_amps.iter().zip(grid.x()).map(|(a, &x)| a.norm_sqr() * (x - q) * (x - q)).sum();
    (m0 * grid.dx(), q, 2.0 * m2 / m0)
}

/// Fraction of the density in the outer 10% of grid points (5% each side).
pub fn boundary_mass(grid: &Grid, x_amps: &[C64]) -> f64 {
    let n = grid.points();
    let edge = (n / 20).max(1);
    let total: f64 = x_amps.iter().map(|a| a.norm_sqr()).sum();
    let outer: f64 =
        x_amps[..edge].iter().chain(&x_amps[n - edge..]).map(|a| a.norm_sqr()).sum();
    outer / total
}

pub fn summarize(psi: &WaveFunction) -> GaussianSummary {
    let grid = psi.grid();
    let xs = psi.unweighted();
    let ks = xs.to_momentum();
    let (_, q, sigma2) = density_moments(grid, xs.amplitudes());
    let (mut pk, mut nk) = (0.0, 0.0);
    for (a, &k) in ks.amplitudes().iter().zip(grid.k()) {
        pk += a.norm_sqr() * k;
        nk += a.norm_sqr();
    }
    let z: f64 = xs.amplitudes().iter().map(|a| a.norm_sqr()).sum::<f64>() * grid.dx();
    let gnorm = 1.0 / (PI * sigma2).sqrt();
    let (mut num, mut den) = (0.0, 0.0);
    for (a, &x) in xs.amplitudes().iter().zip(grid.x()) {
        let rho = a.norm_sqr() / z;
        let g = gnorm * (-(x - q).powi(2) / sigma2).exp();
        num += (rho - g).powi(2);
        den += rho * rho;
    }
    GaussianSummary { q, sigma2, p_mean: pk / nk, residual: (num / den).sqrt() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid() -> Grid {
        Grid::new(32.0, 256).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(matches!(Grid::new(10.0, 100), Err(FieldError::InvalidPoints(100))));
        assert!(matches!(Grid::new(10.0, 8), Err(FieldError::InvalidPoints(8))));
        assert!(matches!(Grid::new(-1.0, 64), Err(FieldError::InvalidLength(_))));
        let g = Grid::new(10.0, 64).unwrap();
        assert_eq!(g.x()[0], -5.0);
        assert_relative_eq!(g.k()[1], 2.0 * PI / 10.0);
        assert_relative_eq!(g.k()[32], -PI / g.dx());
    }

    #[test]
    fn round_trip_identity() {
        let g = grid();
        let psi = init_gaussian(&g, GaussianInit { q0: 1.0, p0: 0.7, sigma0: 1.3 }).unwrap();
        let back = psi.to_momentum().to_position();
        for (a, b) in psi.amplitudes().iter().zip(back.amplitudes()) {
            assert!((a - b).norm() < 1e-14);
        }
    }

    #[test]
    fn parseval() {
        let g = grid();
        let psi = init_gaussian(&g, GaussianInit { q0: -2.0, p0: 1.5, sigma0: 0.9 }).unwrap();
        assert_relative_eq!(psi.norm_sq(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(psi.to_momentum().norm_sq(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn gaussian_summary_matches_parameters() {
        let g = grid();
        let psi = init_gaussian(&g, GaussianInit { q0: 0.5, p0: 0.3, sigma0: 1.0 }).unwrap();
        let s = summarize(&psi);
        assert_relative_eq!(s.q, 0.5, epsilon = 1e-12);
        assert_relative_eq!(s.sigma2, 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.p_mean, 0.3, epsilon = 1e-12);
        assert!(s.residual < 1e-10);
    }

    #[test]
    fn spectral_and_sampled_initial_states_agree() {
        let g = grid();
        let init = GaussianInit { q0: 0.5, p0: 0.3, sigma0: 1.0 };
        let a = init_gaussian(&g, init).unwrap();
        let b = init_gaussian_spectral(&g, init).unwrap();
        assert!(a.distance(&b) < 1e-12);
    }

    #[test]
    fn unresolved_packets_are_rejected() {
        let g = grid();
        for init in [
            GaussianInit { q0: 0.0, p0: 0.0, sigma0: 0.2 },
            GaussianInit { q0: 12.0, p0: 0.0, sigma0: 1.0 },
            GaussianInit { q0: 0.0, p0: 20.0, sigma0: 1.0 },
            GaussianInit { q0: 0.0, p0: 0.0, sigma0: -1.0 },
        ] {
            assert!(matches!(init_gaussian(&g, init), Err(FieldError::UnresolvedPacket(_))));
        }
    }

    #[test]
    fn boundary_mass_of_centred_packet_is_tiny() {
        let g = grid();
        let psi = init_gaussian(&g, GaussianInit { q0: 0.0, p0: 0.0, sigma0: 1.0 }).unwrap();
        assert!(boundary_mass(&g, psi.amplitudes()) < 1e-30);
    }

    #[test]
    fn normalize_tracks_log_norm() {
        let g = grid();
        let psi = init_gaussian(&g, GaussianInit { q0: 0.0, p0: 0.0, sigma0: 1.0 }).unwrap();
        let mut scaled = psi.clone();
        for a in scaled.amplitudes_mut() {
            *a *= 3.0;
        }
        scaled.normalize().unwrap();
        assert_relative_eq!(scaled.log_norm, 3.0f64.ln(), epsilon = 1e-14);
        let mut zero = WaveFunction::new(g.clone(), Basis::Position, vec![C64::default(); 256]).unwrap();
        assert_eq!(zero.normalize(), Err(FieldError::ZeroNorm));
    }
}
