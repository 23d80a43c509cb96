//! Model specification: the two generators of the stochastic Hamiltonian
//! integral, written as short lists of differential-operator terms.
//!
//! ```text
//!   dH = (H1 + i/2 H2^2) dt + H2 dW
//! ```
//!
//! A term is one of
//!
//! ```text
//!   DerivativePoly(n, c) = c d^n/dx^n       (n = 0..=4)
//!   MixedDxX(c)          = c d/dx (x .)
//!   MixedXDx(c)          = c x d/dx
//! ```
//!
//! `MixedXDx` is the adjoint partner of `MixedDxX`; it only appears in the
//! Hermitian parts produced by [`decompose_hermitian`] but is accepted in
//! custom models as well.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const MAX_ORDER: u32 = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("derivative order {0} is not supported (maximum is {MAX_ORDER})")]
    UnsupportedOrder(u32),
    #[error("non-finite coefficient in {0}")]
    NonFinite(&'static str),
    #[error("the deterministic generator H1 has no non-zero terms")]
    EmptyModel,
    #[error("mass must be finite and non-zero, got {0}")]
    InvalidMass(f64),
}

/// A finite complex coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComplexParam {
    pub re: f64,
    pub im: f64,
}

impl ComplexParam {
    pub fn new(re: f64, im: f64) -> Result<Self, ModelError> {
        if re.is_finite() && im.is_finite() {
            Ok(Self { re, im })
        } else {
            Err(ModelError::NonFinite("complex parameter"))
        }
    }

    pub fn value(self) -> C64 {
        C64::new(self.re, self.im)
    }

    fn from_c64(z: C64) -> Self {
        Self { re: z.re, im: z.im }
    }
}

impl From<ComplexParam> for C64 {
    fn from(p: ComplexParam) -> C64 {
        p.value()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OperatorTerm {
    DerivativePoly { order: u32, coeff: ComplexParam },
    MixedDxX { coeff: ComplexParam },
    MixedXDx { coeff: ComplexParam },
}

impl OperatorTerm {
    pub fn derivative(order: u32, coeff: C64) -> Self {
        OperatorTerm::DerivativePoly { order, coeff: ComplexParam::from_c64(coeff) }
    }

    pub fn dx_x(coeff: C64) -> Self {
        OperatorTerm::MixedDxX { coeff: ComplexParam::from_c64(coeff) }
    }

    pub fn x_dx(coeff: C64) -> Self {
        OperatorTerm::MixedXDx { coeff: ComplexParam::from_c64(coeff) }
    }

    pub fn coeff(&self) -> C64 {
        match *self {
            OperatorTerm::DerivativePoly { coeff, .. }
            | OperatorTerm::MixedDxX { coeff }
            | OperatorTerm::MixedXDx { coeff } => coeff.value(),
        }
    }

    fn with_coeff(&self, c: C64) -> Self {
        match *self {
            OperatorTerm::DerivativePoly { order, .. } => Self::derivative(order, c),
            OperatorTerm::MixedDxX { .. } => Self::dx_x(c),
            OperatorTerm::MixedXDx { .. } => Self::x_dx(c),
        }
    }

    /// Sort key used when merging like terms.
    fn kind_key(&self) -> (u8, u32) {
        match *self {
            OperatorTerm::DerivativePoly { order, .. } => (0, order),
            OperatorTerm::MixedDxX { .. } => (1, 0),
            OperatorTerm::MixedXDx { .. } => (2, 0),
        }
    }

    /// Formal adjoint with respect to the L2 inner product on a periodic domain.
    pub fn adjoint(&self) -> Self {
        let c = self.coeff().conj();
        match *self {
            OperatorTerm::DerivativePoly { order, .. } => {
                let sign = if order % 2 == 0 { 1.0 } else { -1.0 };
                Self::derivative(order, c * sign)
            }
            OperatorTerm::MixedDxX { .. } => Self::x_dx(-c),
            OperatorTerm::MixedXDx { .. } => Self::dx_x(-c),
        }
    }

    fn validate(&self, what: &'static str) -> Result<(), ModelError> {
        if let OperatorTerm::DerivativePoly { order, .. } = *self {
            if order > MAX_ORDER {
                return Err(ModelError::UnsupportedOrder(order));
            }
        }
        let c = self.coeff();
        if c.re.is_finite() && c.im.is_finite() {
            Ok(())
        } else {
            Err(ModelError::NonFinite(what))
        }
    }
}

/// Which named family a model was built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Preset {
    Custom,
    DeterministicNH { lambda1: ComplexParam, lambda2: ComplexParam },
    RandomDissipative { mass: f64, lambda: ComplexParam, gamma: ComplexParam },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelInput {
    Custom { h1_terms: Vec<OperatorTerm>, h2_terms: Vec<OperatorTerm> },
    DeterministicNH { lambda1: ComplexParam, lambda2: ComplexParam },
    RandomDissipative { mass: f64, lambda: ComplexParam, gamma: ComplexParam },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub h1_terms: Vec<OperatorTerm>,
    pub h2_terms: Vec<OperatorTerm>,
    pub mass: Option<f64>,
    pub preset: Preset,
}

impl ModelSpec {
    pub fn is_deterministic(&self) -> bool {
        self.h2_terms.is_empty()
    }
}

/// Merge like terms and drop exact zeros. Order of the result is canonical.
pub fn canonicalize(terms: &[OperatorTerm]) -> Vec<OperatorTerm> {
    let mut sorted: Vec<OperatorTerm> = terms.to_vec();
    sorted.sort_by_key(|t| t.kind_key());
    let mut out: Vec<OperatorTerm> = Vec::with_capacity(sorted.len());
    for t in sorted {
        match out.last_mut() {
            Some(last) if last.kind_key() == t.kind_key() => {
                *last = last.with_coeff(last.coeff() + t.coeff());
            }
            _ => out.push(t),
        }
    }
    out.retain(|t| t.coeff() != C64::new(0.0, 0.0));
    out
}

pub fn build_model(input: ModelInput) -> Result<ModelSpec, ModelError> {
    let i = C64::i();
    let (h1, h2, mass, preset) = match input {
        ModelInput::Custom { h1_terms, h2_terms } => (h1_terms, h2_terms, None, Preset::Custom),
        ModelInput::DeterministicNH { lambda1, lambda2 } => {
            // -i H1 = -lambda1 d/dx - lambda2 d^2/dx^2
            let h1 = vec![
                OperatorTerm::derivative(1, -i * lambda1.value()),
                OperatorTerm::derivative(2, -i * lambda2.value()),
            ];
            (h1, Vec::new(), None, Preset::DeterministicNH { lambda1, lambda2 })
        }
        ModelInput::RandomDissipative { mass, lambda, gamma } => {
            if !mass.is_finite() || mass == 0.0 {
                return Err(ModelError::InvalidMass(mass));
            }
            let (l, g) = (lambda.value(), gamma.value());
            // H1 = p^2/2m + i/2 g^2 d^2 - i l d(x .),  H2 = -i g d
            let h1 = vec![
                OperatorTerm::derivative(2, C64::new(-0.5 / mass, 0.0) + 0.5 * i * g * g),
                OperatorTerm::dx_x(-i * l),
            ];
            let h2 = vec![OperatorTerm::derivative(1, -i * g)];
            (h1, h2, Some(mass), Preset::RandomDissipative { mass, lambda, gamma })
        }
    };
    for t in &h1 {
        t.validate("H1")?;
    }
    for t in &h2 {
        t.validate("H2")?;
    }
    let h1_terms = canonicalize(&h1);
    let h2_terms = canonicalize(&h2);
    if h1_terms.is_empty() {
        return Err(ModelError::EmptyModel);
    }
    Ok(ModelSpec { h1_terms, h2_terms, mass, preset })
}

/// `H = H_R + i V_R` with both parts formally self-adjoint.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianParts {
    pub hermitian: Vec<OperatorTerm>,
    pub anti_hermitian: Vec<OperatorTerm>,
}

pub fn hermitian_split(terms: &[OperatorTerm]) -> HermitianParts {
    let half = C64::new(0.5, 0.0);
    let half_i = C64::new(0.0, -0.5); // 1/(2i)
    let mut herm = Vec::new();
    let mut anti = Vec::new();
    for t in terms {
        let a = t.adjoint();
        herm.push(t.with_coeff(t.coeff() * half));
        herm.push(a.with_coeff(a.coeff() * half));
        anti.push(t.with_coeff(t.coeff() * half_i));
        anti.push(a.with_coeff(-a.coeff() * half_i));
    }
    HermitianParts { hermitian: canonicalize(&herm), anti_hermitian: canonicalize(&anti) }
}

/// Hermitian and anti-Hermitian parts of both generators:
/// `H1 = H0 + i V0`, `H2 = H_R + i V_R`.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub h0: Vec<OperatorTerm>,
    pub v0: Vec<OperatorTerm>,
    pub hr: Vec<OperatorTerm>,
    pub vr: Vec<OperatorTerm>,
}

pub fn decompose_hermitian(spec: &ModelSpec) -> Decomposition {
    let p1 = hermitian_split(&spec.h1_terms);
    let p2 = hermitian_split(&spec.h2_terms);
    Decomposition { h0: p1.hermitian, v0: p1.anti_hermitian, hr: p2.hermitian, vr: p2.anti_hermitian }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignCheck {
    Ok,
    WarnPositive,
    WarnNonnegative,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalityReport {
    pub lambda2_r_sign: SignCheck,
    pub lambda_r_sign: SignCheck,
    pub lambda_i_sign: SignCheck,
    /// Time at which the packet width reaches zero, when anti-diffusion is present.
    pub predicted_tc: Option<f64>,
}

impl PhysicalityReport {
    pub fn has_warnings(&self) -> bool {
        [self.lambda2_r_sign, self.lambda_r_sign, self.lambda_i_sign]
            .iter()
            .any(|s| matches!(s, SignCheck::WarnPositive | SignCheck::WarnNonnegative))
    }
}

fn coefficient_of(terms: &[OperatorTerm], key: (u8, u32)) -> C64 {
    terms.iter().filter(|t| t.kind_key() == key).map(|t| t.coeff()).sum()
}

/// Sign diagnostics. `sigma0` is the initial packet width.
pub fn physicality_check(spec: &ModelSpec, sigma0: f64) -> PhysicalityReport {
    let i = C64::i();
    let (lambda2, lambda) = match spec.preset {
        Preset::DeterministicNH { lambda2, .. } => (Some(lambda2.value()), None),
        Preset::RandomDissipative { lambda, .. } => (None, Some(lambda.value())),
        Preset::Custom => {
            // -i c d^2 = -lambda2 d^2 and -i c d(x.) = -lambda d(x.)
            let c2 = coefficient_of(&spec.h1_terms, (0, 2));
            let cm = coefficient_of(&spec.h1_terms, (1, 0));
            (
                (c2 != C64::default()).then_some(i * c2),
                (cm != C64::default()).then_some(i * cm),
            )
        }
    };
    let (lambda2_r_sign, predicted_tc) = match lambda2 {
        Some(l2) if l2.re > 0.0 => (SignCheck::WarnPositive, Some(sigma0 * sigma0 / (2.0 * l2.re))),
        Some(_) => (SignCheck::Ok, None),
        None => (SignCheck::NotApplicable, None),
    };
    let (lambda_r_sign, lambda_i_sign) = match lambda {
        Some(l) => (
            if l.re > 0.0 { SignCheck::WarnPositive } else { SignCheck::Ok },
            if l.im >= 0.0 { SignCheck::WarnNonnegative } else { SignCheck::Ok },
        ),
        None => (SignCheck::NotApplicable, SignCheck::NotApplicable),
    };
    PhysicalityReport { lambda2_r_sign, lambda_r_sign, lambda_i_sign, predicted_tc }
}
