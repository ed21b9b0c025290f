//! Flows of vector fields on Euclidean charts.
//!
//! Three kinds of flow live behind the [`Flow`] trait:
//!
//! * [`BlockLinearField`]: real block-diagonal linear fields, evolved in closed
//!   form (1D exponential blocks and 2D spiral blocks).
//! * [`NumericFlow`]: an arbitrary [`VectorFieldFn`] integrated with fixed-step
//!   classical RK4.
//! * [`GluedHeteroclinicSystem`](crate::glued::GluedHeteroclinicSystem): two
//!   linear charts joined by a linear transit map (see [`crate::glued`]).

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while evaluating a flow.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("spiral block with zero angular rate")]
    ZeroAngularRate,
    #[error("non-finite {what}")]
    NonFinite { what: &'static str },
    #[error("RK4 step budget exceeded: {needed} steps > {max}")]
    StepBudgetExceeded { needed: usize, max: usize },
    #[error("invalid step size {0}")]
    InvalidStep(f64),
    #[error("trajectory leaves the modelled region at t = {time}")]
    OutOfDomain { time: f64 },
}

/// One invariant block of a block-diagonal linear field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Block {
    /// `x' = rate * x` on a line.
    Real { rate: f64 },
    /// `x' = [[a, -b], [b, a]] x` on a plane.
    Spiral { a: f64, b: f64 },
}

impl Block {
    pub fn dim(&self) -> usize {
        match self {
            Block::Real { .. } => 1,
            Block::Spiral { .. } => 2,
        }
    }

    /// Real part of the block's eigenvalues.
    pub fn rate(&self) -> f64 {
        match *self {
            Block::Real { rate } => rate,
            Block::Spiral { a, .. } => a,
        }
    }

    /// Modulus of the block's eigenvalues.
    pub fn modulus(&self) -> f64 {
        match *self {
            Block::Real { rate } => rate.abs(),
            Block::Spiral { a, b } => a.hypot(b),
        }
    }

    #[inline]
    fn evolve_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match *self {
            Block::Real { rate } => out[0] = x[0] * (rate * t).exp(),
            Block::Spiral { a, b } => {
                let g = (a * t).exp();
                let (s, c) = (b * t).sin_cos();
                out[0] = g * (c * x[0] - s * x[1]);
                out[1] = g * (s * x[0] + c * x[1]);
            }
        }
    }

    #[inline]
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        match *self {
            Block::Real { rate } => out[0] = rate * x[0],
            Block::Spiral { a, b } => {
                out[0] = a * x[0] - b * x[1];
                out[1] = b * x[0] + a * x[1];
            }
        }
    }
}

/// A real block-diagonal linear vector field `x' = diag(B_1, ..., B_k) x`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockLinearField {
    blocks: Vec<Block>,
    #[serde(skip)]
    dim: usize,
}

impl<'de> Deserialize<'de> for BlockLinearField {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            blocks: Vec<Block>,
        }
        let raw = Raw::deserialize(d)?;
        BlockLinearField::new(raw.blocks).map_err(serde::de::Error::custom)
    }
}

impl BlockLinearField {
    pub fn new(blocks: Vec<Block>) -> Result<Self, FlowError> {
        for b in &blocks {
            match *b {
                Block::Real { rate } if !rate.is_finite() => {
                    return Err(FlowError::NonFinite { what: "block rate" })
                }
                Block::Spiral { a, b } => {
                    if !a.is_finite() || !b.is_finite() {
                        return Err(FlowError::NonFinite { what: "block rate" });
                    }
                    if b == 0.0 {
                        return Err(FlowError::ZeroAngularRate);
                    }
                }
                _ => {}
            }
        }
        let dim = blocks.iter().map(Block::dim).sum();
        Ok(Self { blocks, dim })
    }

    /// The zero field on `R^dim` (every block a `Real { rate: 0 }`).
    pub fn zero(dim: usize) -> Self {
        Self::new(vec![Block::Real { rate: 0.0 }; dim]).expect("zero blocks are valid")
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Largest eigenvalue modulus.
    pub fn spectral_radius(&self) -> f64 {
        self.blocks.iter().map(Block::modulus).fold(0.0, f64::max)
    }

    /// Largest `|Re λ|` over the blocks.
    pub fn max_abs_rate(&self) -> f64 {
        self.blocks.iter().map(|b| b.rate().abs()).fold(0.0, f64::max)
    }

    /// Exact flow `e^{tA} x`.
    pub fn evolve(&self, t: f64, x: &[f64]) -> Result<Vec<f64>, FlowError> {
        self.check_dim(x)?;
        if !t.is_finite() {
            return Err(FlowError::NonFinite { what: "time" });
        }
        let mut out = vec![0.0; self.dim];
        self.evolve_into(t, x, &mut out);
        Ok(out)
    }

    /// Allocation-free variant of [`evolve`](Self::evolve); no checks.
    #[inline]
    pub fn evolve_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let mut k = 0;
        for b in &self.blocks {
            let d = b.dim();
            b.evolve_into(t, &x[k..k + d], &mut out[k..k + d]);
            k += d;
        }
    }

    /// Field value `A x`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>, FlowError> {
        self.check_dim(x)?;
        let mut out = vec![0.0; self.dim];
        self.apply_into(x, &mut out);
        Ok(out)
    }

    #[inline]
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let mut k = 0;
        for b in &self.blocks {
            let d = b.dim();
            b.apply_into(&x[k..k + d], &mut out[k..k + d]);
            k += d;
        }
    }

    /// Dense matrix of the field.
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        let mut k = 0;
        for b in &self.blocks {
            match *b {
                Block::Real { rate } => m[(k, k)] = rate,
                Block::Spiral { a, b } => {
                    m[(k, k)] = a;
                    m[(k, k + 1)] = -b;
                    m[(k + 1, k)] = b;
                    m[(k + 1, k + 1)] = a;
                }
            }
            k += b.dim();
        }
        m
    }

    /// Concatenate two fields block-wise.
    pub fn direct_sum(&self, other: &BlockLinearField) -> BlockLinearField {
        let mut blocks = self.blocks.clone();
        blocks.extend_from_slice(&other.blocks);
        BlockLinearField::new(blocks).expect("blocks already validated")
    }

    /// Wrap the field as a general [`VectorFieldFn`].
    pub fn to_vector_field(&self) -> VectorFieldFn {
        let me = self.clone();
        VectorFieldFn::new(self.dim, move |x, out| me.apply_into(x, out))
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), FlowError> {
        if x.len() != self.dim {
            return Err(FlowError::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        Ok(())
    }
}

type FieldFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// An autonomous vector field given by a closure `x ↦ X(x)` writing into `out`.
#[derive(Clone)]
pub struct VectorFieldFn {
    dim: usize,
    f: Arc<FieldFn>,
}

impl fmt::Debug for VectorFieldFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorFieldFn").field("dim", &self.dim).finish_non_exhaustive()
    }
}

impl VectorFieldFn {
    pub fn new(dim: usize, f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        Self { dim, f: Arc::new(f) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }
}

/// Fixed-step RK4 settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rk4Config {
    pub step: f64,
    pub max_steps: usize,
}

impl Default for Rk4Config {
    fn default() -> Self {
        Self { step: 1e-3, max_steps: 10_000_000 }
    }
}

/// Classical fixed-step RK4 from `x` over signed time `t`.
///
/// The final step is shortened so the integration lands exactly on `t`.
pub fn evolve_rk4(field: &VectorFieldFn, t: f64, x: &[f64], cfg: &Rk4Config) -> Result<Vec<f64>, FlowError> {
    let n = field.dim;
    if x.len() != n {
        return Err(FlowError::DimensionMismatch { expected: n, got: x.len() });
    }
    if !(cfg.step > 0.0) || !cfg.step.is_finite() {
        return Err(FlowError::InvalidStep(cfg.step));
    }
    if !t.is_finite() {
        return Err(FlowError::NonFinite { what: "time" });
    }
    let mut y = x.to_vec();
    if t == 0.0 {
        return Ok(y);
    }
    let span = t.abs();
    let full = (span / cfg.step).floor();
    let needed = full as usize + 1;
    if needed > cfg.max_steps {
        return Err(FlowError::StepBudgetExceeded { needed, max: cfg.max_steps });
    }
    let dir = t.signum();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut done = 0.0;
    let mut i = 0usize;
    while done < span {
        i += 1;
        // Step i ends at i*step, or at span for the last one.
        let target = if (i as f64) * cfg.step >= span { span } else { (i as f64) * cfg.step };
        let h = (target - done) * dir;
        if h == 0.0 {
            break;
        }
        field.eval_into(&y, &mut k1);
        for j in 0..n {
            tmp[j] = y[j] + 0.5 * h * k1[j];
        }
        field.eval_into(&tmp, &mut k2);
        for j in 0..n {
            tmp[j] = y[j] + 0.5 * h * k2[j];
        }
        field.eval_into(&tmp, &mut k3);
        for j in 0..n {
            tmp[j] = y[j] + h * k3[j];
        }
        field.eval_into(&tmp, &mut k4);
        for j in 0..n {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(FlowError::NonFinite { what: "field value" });
        }
        done = target;
    }
    Ok(y)
}

/// A flow together with a Euclidean embedding used to measure distances.
///
/// `distance(a, b)` is the Euclidean distance between `embed(a)` and
/// `embed(b)`. For ambient flows the embedding is the identity.
pub trait Flow: Sync {
    type State: Clone + Send + Sync + fmt::Debug;

    /// Dimension of the embedding space.
    fn dim(&self) -> usize;

    fn evolve(&self, t: f64, x: &Self::State) -> Result<Self::State, FlowError>;

    fn embed_into(&self, x: &Self::State, out: &mut [f64]);

    fn embed(&self, x: &Self::State) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.embed_into(x, &mut out);
        out
    }

    fn distance(&self, a: &Self::State, b: &Self::State) -> f64 {
        euclidean(&self.embed(a), &self.embed(b))
    }

    /// Embedded orbit of `x` at the given times, written row by row into `out`
    /// (`times.len() * dim()` values). Fails at the first time the orbit is
    /// undefined.
    fn embed_orbit(&self, x: &Self::State, times: &[f64], out: &mut [f64]) -> Result<(), FlowError> {
        let d = self.dim();
        for (k, &t) in times.iter().enumerate() {
            let y = self.evolve(t, x)?;
            self.embed_into(&y, &mut out[k * d..(k + 1) * d]);
        }
        Ok(())
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl Flow for BlockLinearField {
    type State = Vec<f64>;

    fn dim(&self) -> usize {
        self.dim
    }

    fn evolve(&self, t: f64, x: &Vec<f64>) -> Result<Vec<f64>, FlowError> {
        BlockLinearField::evolve(self, t, x)
    }

    fn embed_into(&self, x: &Vec<f64>, out: &mut [f64]) {
        out.copy_from_slice(x);
    }

    fn embed_orbit(&self, x: &Vec<f64>, times: &[f64], out: &mut [f64]) -> Result<(), FlowError> {
        self.check_dim(x)?;
        let d = self.dim;
        for (k, &t) in times.iter().enumerate() {
            self.evolve_into(t, x, &mut out[k * d..(k + 1) * d]);
        }
        Ok(())
    }
}

/// A [`VectorFieldFn`] evolved with fixed-step RK4.
#[derive(Debug, Clone)]
pub struct NumericFlow {
    pub field: VectorFieldFn,
    pub rk4: Rk4Config,
}

impl NumericFlow {
    pub fn new(field: VectorFieldFn, rk4: Rk4Config) -> Self {
        Self { field, rk4 }
    }
}

impl Flow for NumericFlow {
    type State = Vec<f64>;

    fn dim(&self) -> usize {
        self.field.dim
    }

    fn evolve(&self, t: f64, x: &Vec<f64>) -> Result<Vec<f64>, FlowError> {
        evolve_rk4(&self.field, t, x, &self.rk4)
    }

    fn embed_into(&self, x: &Vec<f64>, out: &mut [f64]) {
        out.copy_from_slice(x);
    }
}
