//! Spectral application of operator terms and the per-step propagators.
//!
//! States are held in the momentum basis. A derivative term is diagonal with
//! symbol `c (ik)^n`; the two mixed terms need one round trip through position
//! space each:
//!
//! ```text
//!   c d(x psi)  ->  c ik F[x F^-1 psi~]
//!   c x d psi   ->  c F[x F^-1 (ik psi~)]
//! ```
//!
//! On the grid these two are exact adjoints of each other up to the sign and
//! conjugation of `c`, so Hermitian parts stay Hermitian after discretization.
//!
//! Step maps ([`StepMode`]):
//!
//! * `Exp2`: `psi <- exp(-i dH) psi` with the realized increment
//!   `dH = (H1 + i/2 H2^2) dt + H2 dW`. For diagonal generators this is exact
//!   per mode; otherwise a scaled Taylor series is summed to round-off.
//! * `Euler`: `psi <- exp(-i H1 dt) (psi - i H2 psi dW)`.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{Basis, Grid, WaveFunction};
use crate::model::{ModelSpec, OperatorTerm};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("operands live on different grids")]
    GridMismatch,
    #[error("dense materialization limited to {max} points, grid has {got}")]
    TooLarge { max: usize, got: usize },
    #[error("operator contains position-dependent terms and has no spectral symbol")]
    NotDiagonal,
    #[error("derivative order {0} is not supported in a weighted representation (max 2)")]
    WeightedOrder(u32),
}

pub const DENSE_MAX_POINTS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StepMode {
    #[default]
    Exp2,
    Euler,
}

/// Values of a position-independent operator on the wavenumbers of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSymbol {
    pub values: Vec<C64>,
}

pub fn spectral_symbol(terms: &[OperatorTerm], grid: &Grid) -> Result<SpectralSymbol, OperatorError> {
    let op = CompiledOperator::compile(terms, grid);
    if op.is_diagonal() {
        Ok(SpectralSymbol { values: op.diag })
    } else {
        Err(OperatorError::NotDiagonal)
    }
}

/// A term list specialized to one grid:
/// `diag(k) + dx_x d x + x_dx x d + x1 x + x2 x^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledOperator {
    diag: Vec<C64>,
    dx_x: C64,
    x_dx: C64,
    x1: C64,
    x2: C64,
}

fn ik_pow(k: f64, n: u32) -> C64 {
    C64::new(0.0, k).powu(n)
}

impl CompiledOperator {
    pub fn compile(terms: &[OperatorTerm], grid: &Grid) -> Self {
        Self::compile_weighted(terms, grid, 0.0).expect("unweighted compilation accepts every order")
    }

    /// The term list conjugated by `exp(weight x^2)`, i.e. with `d` replaced
    /// by `d - 2 weight x`. Derivative orders above 2 have no closed form in
    /// this representation and are rejected when `weight != 0`.
    pub fn compile_weighted(terms: &[OperatorTerm], grid: &Grid, weight: f64) -> Result<Self, OperatorError> {
        let mut op = Self::zero(grid.points());
        let w2 = -2.0 * weight;
        for t in terms {
            match *t {
                OperatorTerm::DerivativePoly { order, coeff } => {
                    let c = coeff.value();
                    for (d, &k) in op.diag.iter_mut().zip(grid.k()) {
                        *d += c * ik_pow(k, order);
                    }
                    if weight != 0.0 {
                        match order {
                            0 => {}
                            1 => op.x1 += w2 * c,
                            2 => {
                                op.dx_x += w2 * c;
                                op.x_dx += w2 * c;
                                op.x2 += w2 * w2 * c;
                            }
                            _ => return Err(OperatorError::WeightedOrder(order)),
                        }
                    }
                }
                OperatorTerm::MixedDxX { coeff } => {
                    op.dx_x += coeff.value();
                    op.x2 += w2 * coeff.value();
                }
                OperatorTerm::MixedXDx { coeff } => {
                    op.x_dx += coeff.value();
                    op.x2 += w2 * coeff.value();
                }
            }
        }
        Ok(op)
    }

    pub fn zero(n: usize) -> Self {
        let z = C64::default();
        Self { diag: vec![z; n], dx_x: z, x_dx: z, x1: z, x2: z }
    }

    pub fn is_diagonal(&self) -> bool {
        let z = C64::default();
        self.dx_x == z && self.x_dx == z && self.x1 == z && self.x2 == z
    }

    pub fn diag(&self) -> &[C64] {
        &self.diag
    }

    /// `self <- a * A + b * B`
    fn set_combination(&mut self, a: C64, op_a: &CompiledOperator, b: C64, op_b: &CompiledOperator) {
        for ((d, &x), &y) in self.diag.iter_mut().zip(&op_a.diag).zip(&op_b.diag) {
            *d = a * x + b * y;
        }
        self.dx_x = a * op_a.dx_x + b * op_b.dx_x;
        self.x_dx = a * op_a.x_dx + b * op_b.x_dx;
        self.x1 = a * op_a.x1 + b * op_b.x1;
        self.x2 = a * op_a.x2 + b * op_b.x2;
    }

    /// `self <- self + a * A`
    fn add_scaled(&mut self, a: C64, op: &CompiledOperator) {
        for (d, &x) in self.diag.iter_mut().zip(&op.diag) {
            *d += a * x;
        }
        self.dx_x += a * op.dx_x;
        self.x_dx += a * op.x_dx;
        self.x1 += a * op.x1;
        self.x2 += a * op.x2;
    }

    /// Upper bound on the operator 2-norm on the grid.
    pub fn norm_bound(&self, grid: &Grid) -> f64 {
        let d = self.diag.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let xm = 0.5 * grid.length();
        d + (self.dx_x.norm() + self.x_dx.norm()) * grid.k_max() * xm + self.x1.norm() * xm + self.x2.norm() * xm * xm
    }

    /// `out <- self(input)`, both in the momentum basis.
    pub fn apply(&self, grid: &Grid, input: &[C64], out: &mut [C64], bufs: &mut Buffers) {
        let zero = C64::default();
        let mult = self.x1 != zero || self.x2 != zero;
        let (left, right) = (self.x_dx != zero, self.dx_x != zero);
        if !(mult || left || right) {
            for ((o, &d), &v) in out.iter_mut().zip(&self.diag).zip(input) {
                *o = d * v;
            }
            return;
        }
        // The centring phase and the 1/N of the transform pair are folded in
        // here instead of going through forward_in_place / inverse_in_place.
        let Buffers { a, b, fft } = bufs;
        let (k, x, ph) = (grid.k(), grid.x(), grid.phase());
        for (((((o, &u), &d), av), bv), (&p, &kj)) in
            out.iter_mut().zip(input).zip(&self.diag).zip(a.iter_mut()).zip(b.iter_mut()).zip(ph.iter().zip(k))
        {
            *o = d * u;
            *av = u * p;
            *bv = *av * C64::new(0.0, kj);
        }
        let plain = mult || right;
        if plain {
            grid.inverse_raw(a, fft);
        } else {
            a.iter_mut().for_each(|v| *v = zero);
        }
        let s = 1.0 / input.len() as f64;
        let (c1, c2, cr) = (self.x1 * s, self.x2 * s, self.dx_x * s);
        if left {
            grid.inverse_raw(b, fft);
            let cl = self.x_dx * s;
            for ((av, bv), &xj) in a.iter_mut().zip(b.iter_mut()).zip(x) {
                let xu = xj * *av;
                *bv = (c1 + c2 * xj) * xu + cl * xj * *bv;
                *av = cr * xu;
            }
        } else {
            for ((av, bv), &xj) in a.iter_mut().zip(b.iter_mut()).zip(x) {
                let xu = xj * *av;
                *bv = (c1 + c2 * xj) * xu;
                *av = cr * xu;
            }
        }
        grid.forward_raw(b, fft);
        if right {
            grid.forward_raw(a, fft);
            for (((o, &bv), &av), (&p, &kj)) in out.iter_mut().zip(b.iter()).zip(a.iter()).zip(ph.iter().zip(k)) {
                *o += p * (bv + C64::new(0.0, kj) * av);
            }
        } else {
            for ((o, &bv), &p) in out.iter_mut().zip(b.iter()).zip(ph) {
                *o += p * bv;
            }
        }
    }
}

/// Temporaries for one operator application.
#[derive(Debug, Clone)]
pub struct Buffers {
    a: Vec<C64>,
    b: Vec<C64>,
    fft: Vec<C64>,
}

impl Buffers {
    pub fn new(grid: &Grid) -> Self {
        let z = vec![C64::default(); grid.points()];
        Self { a: z.clone(), b: z, fft: vec![C64::default(); grid.scratch_len()] }
    }

    pub fn fft_scratch(&mut self) -> &mut [C64] {
        &mut self.fft
    }
}

/// Buffers reused across operator applications on one grid.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub bufs: Buffers,
    pub tmp: Vec<C64>,
    sq: Vec<C64>,
    term: Vec<C64>,
    next: Vec<C64>,
    acc: Vec<C64>,
}

impl Workspace {
    pub fn new(grid: &Grid) -> Self {
        let z = vec![C64::default(); grid.points()];
        Self {
            bufs: Buffers::new(grid),
            tmp: z.clone(),
            sq: z.clone(),
            term: z.clone(),
            next: z.clone(),
            acc: z,
        }
    }
}

/// `G = lin + c * S^2`, the exponent of one step.
#[derive(Debug, Clone)]
struct Generator {
    lin: CompiledOperator,
    square: Option<(C64, CompiledOperator)>,
}

impl Generator {
    fn is_diagonal(&self) -> bool {
        self.lin.is_diagonal() && self.square.is_none()
    }

    fn norm_bound(&self, grid: &Grid) -> f64 {
        let s = self.square.as_ref().map_or(0.0, |(c, op)| c.norm() * op.norm_bound(grid).powi(2));
        self.lin.norm_bound(grid) + s
    }

    fn apply(&self, grid: &Grid, input: &[C64], out: &mut [C64], tmp: &mut [C64], sq: &mut [C64], bufs: &mut Buffers) {
        self.lin.apply(grid, input, out, bufs);
        if let Some((c, op)) = &self.square {
            op.apply(grid, input, tmp, bufs);
            op.apply(grid, tmp, sq, bufs);
            for (o, &s) in out.iter_mut().zip(sq.iter()) {
                *o += c * s;
            }
        }
    }
}

const TAYLOR_THETA: f64 = 2.0;
const TAYLOR_MAX_TERMS: usize = 60;

/// `state <- exp(G) state`.
fn expm_apply(gen: &Generator, grid: &Grid, state: &mut [C64], ws: &mut Workspace) {
    if gen.is_diagonal() {
        for (s, &d) in state.iter_mut().zip(&gen.lin.diag) {
            *s *= d.exp();
        }
        return;
    }
    let beta = gen.norm_bound(grid);
    let substeps = ((beta / TAYLOR_THETA).ceil() as usize).max(1);
    let scale = 1.0 / substeps as f64;
    let Workspace { bufs, tmp, sq, term, next, acc } = ws;
    for _ in 0..substeps {
        term.copy_from_slice(state);
        acc.copy_from_slice(state);
        for n in 1..=TAYLOR_MAX_TERMS {
            gen.apply(grid, term, next, tmp, sq, bufs);
            let f = scale / n as f64;
            let (mut tn, mut an) = (0.0, 0.0);
            for ((t, &v), a) in term.iter_mut().zip(next.iter()).zip(acc.iter_mut()) {
                *t = v * f;
                *a += *t;
                tn += t.norm_sqr();
                an += a.norm_sqr();
            }
            if tn.sqrt() <= f64::EPSILON * an.sqrt() || !acc[0].re.is_finite() {
                break;
            }
        }
        state.copy_from_slice(acc);
    }
}

/// `(c0 + c1 d)^2` as a term list, when `terms` only has derivatives of
/// order 0 and 1.
fn first_order_square(terms: &[OperatorTerm]) -> Option<Vec<OperatorTerm>> {
    let (mut c0, mut c1) = (C64::default(), C64::default());
    for t in terms {
        match *t {
            OperatorTerm::DerivativePoly { order: 0, coeff } => c0 += coeff.value(),
            OperatorTerm::DerivativePoly { order: 1, coeff } => c1 += coeff.value(),
            _ => return None,
        }
    }
    Some(vec![
        OperatorTerm::derivative(0, c0 * c0),
        OperatorTerm::derivative(1, 2.0 * c0 * c1),
        OperatorTerm::derivative(2, c1 * c1),
    ])
}

/// Both generators of a model on one grid, plus buffers for stepping.
#[derive(Debug, Clone)]
pub struct StepKernel {
    grid: Grid,
    h1: CompiledOperator,
    h2: Option<CompiledOperator>,
    /// `H2^2` in closed form, when it is representable.
    h2_sq: Option<CompiledOperator>,
    mode: StepMode,
    gen: Generator,
    /// Cached `exp(-i H1 dt)` per mode when H1 is diagonal.
    h1_factor: Option<(u64, Vec<C64>)>,
    ws: Workspace,
}

impl StepKernel {
    /// With `stochastic == false` the noise generator is dropped entirely.
    /// `weight` selects the representation `exp(weight x^2) psi`.
    pub fn new(
        spec: &ModelSpec,
        grid: &Grid,
        mode: StepMode,
        stochastic: bool,
        weight: f64,
    ) -> Result<Self, OperatorError> {
        let n = grid.points();
        let h1 = CompiledOperator::compile_weighted(&spec.h1_terms, grid, weight)?;
        let h2 = if stochastic && !spec.h2_terms.is_empty() {
            Some(CompiledOperator::compile_weighted(&spec.h2_terms, grid, weight)?)
        } else {
            None
        };
        let h2_sq = match (&h2, first_order_square(&spec.h2_terms)) {
            (Some(_), Some(sq)) => Some(CompiledOperator::compile_weighted(&sq, grid, weight)?),
            _ => None,
        };
        Ok(Self {
            grid: grid.clone(),
            h1,
            h2,
            h2_sq,
            mode,
            gen: Generator { lin: CompiledOperator::zero(n), square: None },
            h1_factor: None,
            ws: Workspace::new(grid),
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn workspace(&mut self) -> &mut Workspace {
        &mut self.ws
    }

    /// `state <- exp(-i H1 dt) state`
    pub fn propagate_h1(&mut self, state: &mut [C64], dt: f64) {
        let mi = C64::new(0.0, -1.0);
        if self.h1.is_diagonal() {
            let key = dt.to_bits();
            if self.h1_factor.as_ref().map(|(k, _)| *k) != Some(key) {
                let f = self.h1.diag.iter().map(|&d| (mi * dt * d).exp()).collect();
                self.h1_factor = Some((key, f));
            }
            let (_, f) = self.h1_factor.as_ref().expect("factor cached above");
            for (s, &m) in state.iter_mut().zip(f) {
                *s *= m;
            }
            return;
        }
        let zero = CompiledOperator::zero(self.grid.points());
        self.gen.lin.set_combination(mi * dt, &self.h1, C64::default(), &zero);
        self.gen.square = None;
        expm_apply(&self.gen, &self.grid, state, &mut self.ws);
    }

    /// `out <- H2 input`; zero for deterministic kernels.
    pub fn apply_h2(&mut self, input: &[C64], out: &mut [C64]) {
        match &self.h2 {
            Some(op) => op.apply(&self.grid, input, out, &mut self.ws.bufs),
            None => out.iter_mut().for_each(|o| *o = C64::default()),
        }
    }

    /// One step of the unnormalized flow, in the momentum basis.
    pub fn step(&mut self, state: &mut [C64], dt: f64, dw: f64) {
        let mi = C64::new(0.0, -1.0);
        let Some(h2) = &self.h2 else {
            self.propagate_h1(state, dt);
            return;
        };
        match self.mode {
            StepMode::Exp2 => {
                self.gen.lin.set_combination(mi * dt, &self.h1, mi * dw, h2);
                if h2.is_diagonal() {
                    for (g, &s) in self.gen.lin.diag.iter_mut().zip(&h2.diag) {
                        *g += 0.5 * dt * s * s;
                    }
                    self.gen.square = None;
                } else if let Some(sq) = &self.h2_sq {
                    self.gen.lin.add_scaled(C64::new(0.5 * dt, 0.0), sq);
                    self.gen.square = None;
                } else {
                    self.gen.square = Some((C64::new(0.5 * dt, 0.0), h2.clone()));
                }
                expm_apply(&self.gen, &self.grid, state, &mut self.ws);
            }
            StepMode::Euler => {
                let mut hpsi = std::mem::take(&mut self.ws.tmp);
                h2.apply(&self.grid, state, &mut hpsi, &mut self.ws.bufs);
                for (s, &h) in state.iter_mut().zip(&hpsi) {
                    *s += mi * dw * h;
                }
                self.ws.tmp = hpsi;
                self.propagate_h1(state, dt);
            }
        }
    }
}

fn check_grid(a: &Grid, b: &Grid) -> Result<(), OperatorError> {
    if a == b {
        Ok(())
    } else {
        Err(OperatorError::GridMismatch)
    }
}

/// Apply a term list to a state; the result is in the state's basis and
/// representation.
pub fn apply_terms(terms: &[OperatorTerm], psi: &WaveFunction) -> Result<WaveFunction, OperatorError> {
    let grid = psi.grid().clone();
    let op = CompiledOperator::compile_weighted(terms, &grid, psi.weight())?;
    let k = psi.to_momentum();
    let mut out = vec![C64::default(); grid.points()];
    op.apply(&grid, k.amplitudes(), &mut out, &mut Buffers::new(&grid));
    let mut res =
        WaveFunction::new_weighted(grid, Basis::Momentum, out, psi.weight()).expect("length and weight already valid");
    res.log_norm = psi.log_norm;
    Ok(res.to_basis(psi.basis()))
}

pub fn apply_h1(spec: &ModelSpec, psi: &WaveFunction) -> Result<WaveFunction, OperatorError> {
    apply_terms(&spec.h1_terms, psi)
}

pub fn apply_h2(spec: &ModelSpec, psi: &WaveFunction) -> Result<WaveFunction, OperatorError> {
    apply_terms(&spec.h2_terms, psi)
}

/// The realized Hamiltonian increment applied to a state:
/// `(H1 + i/2 H2^2) psi dt + H2 psi dW`.
pub fn apply_dh(spec: &ModelSpec, psi: &WaveFunction, dt: f64, dw: f64) -> Result<WaveFunction, OperatorError> {
    let h1 = apply_h1(spec, psi)?.to_momentum();
    let h2 = apply_h2(spec, psi)?.to_momentum();
    let h22 = apply_h2(spec, &h2)?.to_momentum();
    let half_i = C64::new(0.0, 0.5);
    let amps = h1
        .amplitudes()
        .iter()
        .zip(h2.amplitudes())
        .zip(h22.amplitudes())
        .map(|((&a, &b), &c)| (a + half_i * c) * dt + b * dw)
        .collect();
    let out = WaveFunction::new_weighted(psi.grid().clone(), Basis::Momentum, amps, psi.weight())
        .expect("length and weight already valid");
    Ok(out.to_basis(psi.basis()))
}

/// One discrete step of the unnormalized flow, without renormalization.
pub fn step_map(
    spec: &ModelSpec,
    psi: &WaveFunction,
    dt: f64,
    dw: f64,
    mode: StepMode,
) -> Result<WaveFunction, OperatorError> {
    let grid = psi.grid().clone();
    let mut kernel = StepKernel::new(spec, &grid, mode, true, psi.weight())?;
    let mut k = psi.to_momentum();
    kernel.step(k.amplitudes_mut(), dt, dw);
    Ok(k.to_basis(psi.basis()))
}

/// Row-major `N x N` matrix in the position basis.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOperator {
    pub n: usize,
    pub data: Vec<C64>,
}

impl DenseOperator {
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.n + j]
    }

    pub fn adjoint(&self) -> Self {
        let n = self.n;
        let mut data = vec![C64::default(); n * n];
        for i in 0..n {
            for j in 0..n {
                data[j * n + i] = self.data[i * n + j].conj();
            }
        }
        Self { n, data }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|a| a.norm()).fold(0.0, f64::max)
    }

    pub fn mul(&self, other: &Self) -> Self {
        let n = self.n;
        let mut data = vec![C64::default(); n * n];
        for i in 0..n {
            for l in 0..n {
                let a = self.data[i * n + l];
                if a == C64::default() {
                    continue;
                }
                for j in 0..n {
                    data[i * n + j] += a * other.data[l * n + j];
                }
            }
        }
        Self { n, data }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self { n: self.n, data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect() }
    }
}

pub fn materialize_dense(terms: &[OperatorTerm], grid: &Grid) -> Result<DenseOperator, OperatorError> {
    let n = grid.points();
    if n > DENSE_MAX_POINTS {
        return Err(OperatorError::TooLarge { max: DENSE_MAX_POINTS, got: n });
    }
    let op = CompiledOperator::compile(terms, grid);
    let mut bufs = Buffers::new(grid);
    let mut data = vec![C64::default(); n * n];
    let mut col = vec![C64::default(); n];
    let mut out = vec![C64::default(); n];
    for j in 0..n {
        col.iter_mut().for_each(|c| *c = C64::default());
        col[j] = C64::new(1.0, 0.0);
        grid.forward_in_place(&mut col, bufs.fft_scratch());
        op.apply(grid, &col, &mut out, &mut bufs);
        grid.inverse_in_place(&mut out, bufs.fft_scratch());
        for i in 0..n {
            data[i * n + j] = out[i];
        }
    }
    Ok(DenseOperator { n, data })
}

/// Checks that a compiled operator and a state agree on the grid.
pub fn ensure_same_grid(psi: &WaveFunction, grid: &Grid) -> Result<(), OperatorError> {
    check_grid(psi.grid(), grid)
}
