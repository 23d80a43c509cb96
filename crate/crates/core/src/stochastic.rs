//! Wiener paths on a fine grid, exact coarse views, and the derived
//! Ornstein-Uhlenbeck-type processes that enter the closed-form oracles.
//!
//! ```text
//!   X(t) = int_0^t exp(lambda (t - tau)) dW(tau)
//!   Y(t) = int_0^t exp(lambda (t - tau)) W(tau) dtau
//!   X    = W + lambda Y
//! ```

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Recorded in output metadata so runs can be reproduced.
pub const GENERATOR_NAME: &str = "rand_chacha::ChaCha12Rng + rand_distr::StandardNormal";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error("coarsening factor {factor} does not divide {len} fine increments")]
    IncompatibleCoarsening { factor: usize, len: usize },
    #[error("invalid path parameters: {0}")]
    InvalidParameters(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WienerPath {
    t0: f64,
    dt: f64,
    increments: Vec<f64>,
    /// `cumulative[j] = W(t0 + j dt) - W(t0)`, length `increments.len() + 1`.
    cumulative: Vec<f64>,
}

fn cumulate(increments: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(increments.len() + 1);
    let mut s = 0.0;
    out.push(0.0);
    for &d in increments {
        s += d;
        out.push(s);
    }
    out
}

impl WienerPath {
    /// Build from explicit increments.
    pub fn from_increments(t0: f64, dt: f64, increments: Vec<f64>) -> Result<Self, PathError> {
        if !(dt.is_finite() && dt > 0.0 && t0.is_finite()) {
            return Err(PathError::InvalidParameters(format!("t0 = {t0}, dt = {dt}")));
        }
        if increments.iter().any(|d| !d.is_finite()) {
            return Err(PathError::InvalidParameters("non-finite increment".into()));
        }
        let cumulative = cumulate(&increments);
        Ok(Self { t0, dt, increments, cumulative })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.increments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.increments.is_empty()
    }

    pub fn t_end(&self) -> f64 {
        self.t0 + self.dt * self.len() as f64
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// `W(t0 + j dt) - W(t0)` for `j = 0..=len`.
    pub fn values(&self) -> &[f64] {
        &self.cumulative
    }

    /// View with step `factor * dt`. Coarse increments are differences of the
    /// fine cumulative sum, so coarsening twice equals coarsening once by the
    /// product, bit for bit.
    pub fn coarsen(&self, factor: usize) -> Result<WienerPath, PathError> {
        if factor == 0 || self.len() % factor != 0 {
            return Err(PathError::IncompatibleCoarsening { factor, len: self.len() });
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let cumulative: Vec<f64> = self.cumulative.iter().step_by(factor).copied().collect();
        let increments = cumulative.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(WienerPath { t0: self.t0, dt: self.dt * factor as f64, increments, cumulative })
    }
}

/// Standard normal increments scaled by `sqrt(dt)`, `n_steps` of them.
pub fn generate_path(seed: u64, t0: f64, dt: f64, n_steps: usize) -> Result<WienerPath, PathError> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(PathError::InvalidParameters(format!("dt = {dt}")));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let s = dt.sqrt();
    let increments = (0..n_steps)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            z * s
        })
        .collect();
    WienerPath::from_increments(t0, dt, increments)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trajectory `index` under `master`. Independent of thread count.
pub fn trajectory_seed(master: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Derived processes sampled on the path's grid, `len + 1` values each.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedProcesses {
    pub times: Vec<f64>,
    pub w: Vec<f64>,
    pub x: Vec<C64>,
    pub y: Vec<C64>,
}

/// Exact-kernel recursions on each interval, with `W` frozen at the left
/// end for `Y`:
///
/// ```text
///   X_{j+1} = e^{lambda h} X_j + dW_j
///   Y_{j+1} = e^{lambda h} Y_j + W_j (e^{lambda h} - 1) / lambda
/// ```
pub fn derive_x(path: &WienerPath, lambda: C64) -> DerivedProcesses {
    let h = path.dt();
    let e = (lambda * h).exp();
    let phi = if lambda.norm() * h < 1e-8 {
        C64::new(h, 0.0) * (1.0 + 0.5 * lambda * h)
    } else {
        (e - 1.0) / lambda
    };
    let n = path.len();
    let mut x = Vec::with_capacity(n + 1);
    let mut y = Vec::with_capacity(n + 1);
    let (mut xv, mut yv) = (C64::default(), C64::default());
    x.push(xv);
    y.push(yv);
    for (j, &d) in path.increments().iter().enumerate() {
        yv = e * yv + path.values()[j] * phi;
        xv = e * xv + d;
        x.push(xv);
        y.push(yv);
    }
    let times = (0..=n).map(|j| path.t0() + j as f64 * h).collect();
    DerivedProcesses { times, w: path.values().to_vec(), x, y }
}
