//! Simulation of stochastic non-Hermitian single-particle dynamics.
//!
//! A state evolves under the Hamiltonian increment
//!
//! ```text
//!   dH = (H1 + i/2 H2^2) dt + H2 dW
//! ```
//!
//! either through the linear equation for the unnormalized state or the
//! nonlinear equation for the normalized one. Gaussian packets under the two
//! built-in models have closed-form moments, which [`oracles`] provides as
//! references for the numerics.

pub mod config;
pub mod field;
pub mod model;
pub mod montecarlo;
pub mod operators;
pub mod oracles;
pub mod steppers;
pub mod stochastic;

pub use num_complex::Complex64 as C64;
