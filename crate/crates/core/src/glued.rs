//! Glued heteroclinic model: two linear saddle charts joined by a linear transit.
//!
//! Chart coordinates put the fixed point at the origin. The `Q` chart is ordered
//! `(unstable, stable)` and the `P` chart `(stable, unstable)`. Both sections
//! carry `n - 1` offset coordinates: the `Q` section lists an orthonormal basis
//! of the part of the unstable subspace orthogonal to the flow direction first,
//! then the stable axes; the `P` section lists the stable complement first, then
//! the unstable axes. `K` is the matrix of the transit in these section bases.
//!
//! A point on the `Q` section with offset `u` spends time `tau` in transit and
//! arrives at `a_p + B_p K u`. In between its offset is `E(s) u` with
//! `E(s) = (1 - s/tau) I + (s/tau) K`.
//!
//! Distances are measured in an unfolded tube frame: arclength along the
//! reference orbit plus the section offset. Inside each linear chart this frame
//! is an isometry of the chart coordinates, and it is continuous across both
//! sections.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{norm, Block, BlockLinearField, Flow, FlowError};

/// Every stable rate must be `<= -SPECTRAL_GAP`, every unstable rate `>= SPECTRAL_GAP`.
pub const SPECTRAL_GAP: f64 = 0.05;

const SCAN_STEP: f64 = 0.02;
const SIDE_TOL: f64 = 1e-12;
const CROSSING_HORIZON: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GluedError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("{role} point: rate {rate} violates the spectral gap of {SPECTRAL_GAP}")]
    SpectralGap { role: &'static str, rate: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid anchor: {0}")]
    Anchor(String),
    #[error("transit time must be positive and finite, got {0}")]
    Tau(f64),
    #[error("chart radius must be positive and finite, got {0}")]
    Radius(f64),
    #[error("transit map is singular or has a real eigenvalue <= 0 ({0}); the interpolant would degenerate")]
    SingularTransit(String),
    #[error("point is not on the section (offset {0:e} along the flow)")]
    NotOnSection(f64),
    #[error("point lies outside the chart radius")]
    OutOfChart,
    #[error("fixture: {0}")]
    Fixture(String),
}

/// Linearization at one hyperbolic fixed point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperbolicPointSpec {
    pub stable: BlockLinearField,
    pub unstable: BlockLinearField,
}

impl HyperbolicPointSpec {
    pub fn new(stable: Vec<Block>, unstable: Vec<Block>, role: &'static str) -> Result<Self, GluedError> {
        let stable = BlockLinearField::new(stable)?;
        let unstable = BlockLinearField::new(unstable)?;
        for b in stable.blocks() {
            if b.rate() > -SPECTRAL_GAP {
                return Err(GluedError::SpectralGap { role, rate: b.rate() });
            }
        }
        for b in unstable.blocks() {
            if b.rate() < SPECTRAL_GAP {
                return Err(GluedError::SpectralGap { role, rate: b.rate() });
            }
        }
        Ok(Self { stable, unstable })
    }

    pub fn dim(&self) -> usize {
        self.stable.dim() + self.unstable.dim()
    }
}

/// Block lists as they appear in fixture files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointFixture {
    pub stable: Vec<Block>,
    pub unstable: Vec<Block>,
}

fn default_radius() -> f64 {
    1.0
}

/// On-disk description of a glued system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemFixture {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub n: usize,
    pub p: PointFixture,
    pub q: PointFixture,
    pub a_q: Vec<f64>,
    pub tau: f64,
    #[serde(rename = "K")]
    pub k: Vec<Vec<f64>>,
    #[serde(default = "default_radius")]
    pub chart_radius: f64,
    /// Arrival point in the `P` chart; defaults to `|a_q|` on the first stable axis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_p: Option<Vec<f64>>,
    /// Measured defect constant of the glued pseudotrajectory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
}

impl SystemFixture {
    pub fn from_json(s: &str) -> Result<Self, GluedError> {
        serde_json::from_str(s).map_err(|e| GluedError::Fixture(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, GluedError> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| GluedError::Fixture(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }

    pub fn build(&self) -> Result<GluedHeteroclinicSystem, GluedError> {
        let p = HyperbolicPointSpec::new(self.p.stable.clone(), self.p.unstable.clone(), "p")?;
        let q = HyperbolicPointSpec::new(self.q.stable.clone(), self.q.unstable.clone(), "q")?;
        if p.dim() != self.n || q.dim() != self.n {
            return Err(GluedError::Dimension(format!(
                "n = {} but p has dimension {} and q has dimension {}",
                self.n,
                p.dim(),
                q.dim()
            )));
        }
        let m = self.n - 1;
        if self.k.len() != m || self.k.iter().any(|r| r.len() != m) {
            return Err(GluedError::Dimension(format!("K must be {m}x{m}")));
        }
        let k = DMatrix::from_fn(m, m, |i, j| self.k[i][j]);
        build_glued_system(p, q, k, self.tau, self.a_q.clone(), self.chart_radius, self.a_p.clone())
    }
}

/// Which piece of the model a point lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Chart {
    Q,
    Transit,
    P,
}

/// A state of the glued flow.
///
/// For `Q` and `P` the coordinates are chart coordinates (length `n`). For
/// `Transit` they are the offset `u` on the `Q` section where the transit
/// started (length `n - 1`) and `transit_s` is the time spent in transit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartPoint {
    pub chart: Chart,
    pub coords: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transit_s: Option<f64>,
}

impl ChartPoint {
    pub fn q(coords: Vec<f64>) -> Self {
        Self { chart: Chart::Q, coords, transit_s: None }
    }

    pub fn p(coords: Vec<f64>) -> Self {
        Self { chart: Chart::P, coords, transit_s: None }
    }

    pub fn transit(s: f64, u: Vec<f64>) -> Self {
        Self { chart: Chart::Transit, coords: u, transit_s: Some(s) }
    }

    /// The point with section offset `u` on the `Q` section.
    pub fn on_q_section(u: Vec<f64>) -> Self {
        Self::transit(0.0, u)
    }
}

/// Two hyperbolic charts joined by a linear transit of duration `tau`.
#[derive(Debug, Clone)]
pub struct GluedHeteroclinicSystem {
    n: usize,
    p_spec: HyperbolicPointSpec,
    q_spec: HyperbolicPointSpec,
    field_q: BlockLinearField,
    field_p: BlockLinearField,
    a_q: Vec<f64>,
    a_p: Vec<f64>,
    v_q: Vec<f64>,
    v_p: Vec<f64>,
    vhat_q: Vec<f64>,
    vhat_p: Vec<f64>,
    tau: f64,
    k: DMatrix<f64>,
    k_inv: DMatrix<f64>,
    b_q: DMatrix<f64>,
    b_p: DMatrix<f64>,
    chart_radius: f64,
    // row-major copies for the hot paths
    bq_t: Vec<f64>,
    bp_t: Vec<f64>,
    k_flat: Vec<f64>,
}

/// Validate inputs and assemble the model. `a_p` defaults to `|a_q|` times
/// the first stable axis of `p`.
pub fn build_glued_system(
    p_spec: HyperbolicPointSpec,
    q_spec: HyperbolicPointSpec,
    k: DMatrix<f64>,
    tau: f64,
    a_q: Vec<f64>,
    chart_radius: f64,
    a_p: Option<Vec<f64>>,
) -> Result<GluedHeteroclinicSystem, GluedError> {
    let n = q_spec.dim();
    if p_spec.dim() != n {
        return Err(GluedError::Dimension(format!("p has dimension {}, q has {}", p_spec.dim(), n)));
    }
    if n < 2 {
        return Err(GluedError::Dimension("ambient dimension must be at least 2".into()));
    }
    let (uq, sp) = (q_spec.unstable.dim(), p_spec.stable.dim());
    if uq == 0 || sp == 0 {
        return Err(GluedError::Dimension("q needs an unstable and p a stable direction".into()));
    }
    if k.nrows() != n - 1 || k.ncols() != n - 1 {
        return Err(GluedError::Dimension(format!("K must be {0}x{0}", n - 1)));
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(GluedError::Tau(tau));
    }
    if !(chart_radius > 0.0) || !chart_radius.is_finite() {
        return Err(GluedError::Radius(chart_radius));
    }
    if a_q.len() != n {
        return Err(GluedError::Dimension(format!("a_q has length {}, expected {n}", a_q.len())));
    }
    if a_q[uq..].iter().any(|&x| x != 0.0) {
        return Err(GluedError::Anchor("a_q must lie in the unstable subspace of q".into()));
    }
    let a_p = a_p.unwrap_or_else(|| {
        let mut v = vec![0.0; n];
        v[0] = norm(&a_q);
        v
    });
    if a_p.len() != n {
        return Err(GluedError::Dimension(format!("a_p has length {}, expected {n}", a_p.len())));
    }
    if a_p[sp..].iter().any(|&x| x != 0.0) {
        return Err(GluedError::Anchor("a_p must lie in the stable subspace of p".into()));
    }
    for (name, a) in [("a_q", &a_q), ("a_p", &a_p)] {
        if a.iter().any(|x| !x.is_finite()) || norm(a) == 0.0 {
            return Err(GluedError::Anchor(format!("{name} must be finite and nonzero")));
        }
        if norm(a) >= chart_radius {
            return Err(GluedError::Anchor(format!("{name} lies outside the chart radius")));
        }
    }
    if k.iter().any(|x| !x.is_finite()) {
        return Err(GluedError::SingularTransit("non-finite entry".into()));
    }
    check_interpolant(&k)?;
    let k_inv = k.clone().try_inverse().ok_or_else(|| GluedError::SingularTransit("K not invertible".into()))?;

    let field_q = q_spec.unstable.direct_sum(&q_spec.stable);
    let field_p = p_spec.stable.direct_sum(&p_spec.unstable);
    let v_q = field_q.apply(&a_q)?;
    let v_p = field_p.apply(&a_p)?;
    let vhat_q: Vec<f64> = v_q.iter().map(|x| x / norm(&v_q)).collect();
    let vhat_p: Vec<f64> = v_p.iter().map(|x| x / norm(&v_p)).collect();

    let b_q = section_basis(n, &vhat_q[..uq], 0, uq);
    let b_p = section_basis(n, &vhat_p[..sp], 0, sp);
    let flat_t = |b: &DMatrix<f64>| {
        let mut out = Vec::with_capacity(n * (n - 1));
        for j in 0..n - 1 {
            for i in 0..n {
                out.push(b[(i, j)]);
            }
        }
        out
    };
    let mut k_flat = Vec::with_capacity((n - 1) * (n - 1));
    for i in 0..n - 1 {
        for j in 0..n - 1 {
            k_flat.push(k[(i, j)]);
        }
    }
    Ok(GluedHeteroclinicSystem {
        n,
        bq_t: flat_t(&b_q),
        bp_t: flat_t(&b_p),
        k_flat,
        p_spec,
        q_spec,
        field_q,
        field_p,
        a_q,
        a_p,
        v_q,
        v_p,
        vhat_q,
        vhat_p,
        tau,
        k,
        k_inv,
        b_q,
        b_p,
        chart_radius,
    })
}

/// `(1 - θ) I + θ K` is invertible for all θ in [0, 1] iff K has no real
/// eigenvalue in (-inf, 0].
fn check_interpolant(k: &DMatrix<f64>) -> Result<(), GluedError> {
    let scale = k.norm().max(1.0);
    for ev in k.complex_eigenvalues().iter() {
        if ev.im.abs() <= 1e-12 * scale && ev.re <= 1e-12 * scale {
            return Err(GluedError::SingularTransit(format!("eigenvalue {:.6}", ev.re)));
        }
    }
    Ok(())
}

/// Orthonormal basis (n x (n-1)) of the section: the complement of `vhat`
/// inside the subspace spanned by axes `[off, off + len)`, followed by the
/// remaining axes in order.
///
/// The complement drops the axis with the largest `|vhat_k|` (lowest index on
/// ties) and runs Gram-Schmidt on the others against `vhat`.
fn section_basis(n: usize, vhat: &[f64], off: usize, len: usize) -> DMatrix<f64> {
    let mut drop = 0;
    for k in 1..len {
        if vhat[k].abs() > vhat[drop].abs() {
            drop = k;
        }
    }
    let mut basis: Vec<Vec<f64>> = vec![vhat.to_vec()];
    for k in (0..len).filter(|&k| k != drop) {
        let mut v = vec![0.0; len];
        v[k] = 1.0;
        for b in &basis {
            let c: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= c * y;
            }
        }
        let nv = norm(&v);
        for x in &mut v {
            *x /= nv;
        }
        basis.push(v);
    }
    let mut m = DMatrix::zeros(n, n - 1);
    let mut col = 0;
    for b in basis.iter().skip(1) {
        for (k, x) in b.iter().enumerate() {
            m[(off + k, col)] = *x;
        }
        col += 1;
    }
    for axis in (0..n).filter(|&a| a < off || a >= off + len) {
        m[(axis, col)] = 1.0;
        col += 1;
    }
    m
}

enum Scan {
    Done(Vec<f64>),
    Event { time: f64, y: Vec<f64> },
}

/// Flow `y0` for signed `duration`, stopping at the first time `valid` fails.
fn scan(field: &BlockLinearField, y0: &[f64], duration: f64, valid: impl Fn(&[f64]) -> bool) -> Scan {
    let span = duration.abs();
    let dir = duration.signum();
    let steps = (span / SCAN_STEP).ceil().max(1.0) as usize;
    let mut y = vec![0.0; y0.len()];
    let mut prev = 0.0;
    for k in 1..=steps {
        let tk = ((k as f64) * SCAN_STEP).min(span);
        field.evolve_into(dir * tk, y0, &mut y);
        if !valid(&y) {
            let (mut lo, mut hi) = (prev, tk);
            for _ in 0..100 {
                if hi - lo <= 1e-15 * hi.max(1.0) {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                field.evolve_into(dir * mid, y0, &mut y);
                if valid(&y) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            field.evolve_into(dir * hi, y0, &mut y);
            return Scan::Event { time: dir * hi, y };
        }
        prev = tk;
    }
    field.evolve_into(duration, y0, &mut y);
    Scan::Done(y)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl GluedHeteroclinicSystem {
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn tau(&self) -> f64 {
        self.tau
    }
    pub fn chart_radius(&self) -> f64 {
        self.chart_radius
    }
    pub fn p_spec(&self) -> &HyperbolicPointSpec {
        &self.p_spec
    }
    pub fn q_spec(&self) -> &HyperbolicPointSpec {
        &self.q_spec
    }
    /// Linear field in the `Q` chart, ordered (unstable, stable).
    pub fn field_q(&self) -> &BlockLinearField {
        &self.field_q
    }
    /// Linear field in the `P` chart, ordered (stable, unstable).
    pub fn field_p(&self) -> &BlockLinearField {
        &self.field_p
    }
    pub fn a_q(&self) -> &[f64] {
        &self.a_q
    }
    pub fn a_p(&self) -> &[f64] {
        &self.a_p
    }
    pub fn v_q(&self) -> &[f64] {
        &self.v_q
    }
    pub fn v_p(&self) -> &[f64] {
        &self.v_p
    }
    /// Transit matrix in section coordinates.
    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }
    pub fn k_inv(&self) -> &DMatrix<f64> {
        &self.k_inv
    }
    /// Section basis of `Q` as columns in chart coordinates.
    pub fn b_q(&self) -> &DMatrix<f64> {
        &self.b_q
    }
    pub fn b_p(&self) -> &DMatrix<f64> {
        &self.b_p
    }
    /// Dimension of the unstable subspace of `q`.
    pub fn dim_uq(&self) -> usize {
        self.q_spec.unstable.dim()
    }
    pub fn dim_sq(&self) -> usize {
        self.q_spec.stable.dim()
    }
    pub fn dim_sp(&self) -> usize {
        self.p_spec.stable.dim()
    }
    pub fn dim_up(&self) -> usize {
        self.p_spec.unstable.dim()
    }

    /// Signed offset of `x` from the `Q` section along the flow direction.
    pub fn side_q(&self, x: &[f64]) -> f64 {
        self.vhat_q.iter().zip(x.iter().zip(&self.a_q)).map(|(v, (x, a))| v * (x - a)).sum()
    }

    pub fn side_p(&self, x: &[f64]) -> f64 {
        self.vhat_p.iter().zip(x.iter().zip(&self.a_p)).map(|(v, (x, a))| v * (x - a)).sum()
    }

    fn offset_into(bt: &[f64], a: &[f64], x: &[f64], out: &mut [f64]) {
        let n = a.len();
        for (j, o) in out.iter_mut().enumerate() {
            let row = &bt[j * n..(j + 1) * n];
            *o = row.iter().zip(x.iter().zip(a)).map(|(b, (x, a))| b * (x - a)).sum();
        }
    }

    /// `B_q^T (x - a_q)`.
    pub fn q_offset(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n - 1];
        Self::offset_into(&self.bq_t, &self.a_q, x, &mut out);
        out
    }

    pub fn p_offset(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n - 1];
        Self::offset_into(&self.bp_t, &self.a_p, x, &mut out);
        out
    }

    /// `a_q + B_q u`.
    pub fn q_section_point(&self, u: &[f64]) -> Vec<f64> {
        let mut x = self.a_q.clone();
        for (j, uj) in u.iter().enumerate() {
            for i in 0..self.n {
                x[i] += self.bq_t[j * self.n + i] * uj;
            }
        }
        x
    }

    pub fn p_section_point(&self, w: &[f64]) -> Vec<f64> {
        let mut x = self.a_p.clone();
        for (j, wj) in w.iter().enumerate() {
            for i in 0..self.n {
                x[i] += self.bp_t[j * self.n + i] * wj;
            }
        }
        x
    }

    /// `K u` in section coordinates.
    pub fn apply_k(&self, u: &[f64]) -> Vec<f64> {
        let m = self.n - 1;
        (0..m).map(|i| dot(&self.k_flat[i * m..(i + 1) * m], u)).collect()
    }

    pub fn apply_k_inv(&self, w: &[f64]) -> Vec<f64> {
        let v = &self.k_inv * nalgebra::DVector::from_column_slice(w);
        v.iter().copied().collect()
    }

    /// Arclength coordinate of the reference orbit after `s` units of transit.
    fn arclength(&self, s: f64) -> f64 {
        let (vq, vp) = (norm(&self.v_q), norm(&self.v_p));
        vq * s + (vp - vq) * s * s / (2.0 * self.tau)
    }

    fn within_radius(&self, x: &[f64]) -> bool {
        norm(x) <= self.chart_radius * (1.0 + 1e-12)
    }

    fn tube_q(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.side_q(x);
        Self::offset_into(&self.bq_t, &self.a_q, x, &mut out[1..]);
    }

    fn tube_p(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.arclength(self.tau) + self.side_p(x);
        Self::offset_into(&self.bp_t, &self.a_p, x, &mut out[1..]);
    }

    fn tube_transit(&self, s: f64, u: &[f64], ku: &[f64], out: &mut [f64]) {
        let th = s / self.tau;
        out[0] = self.arclength(s);
        for j in 0..u.len() {
            out[1 + j] = (1.0 - th) * u[j] + th * ku[j];
        }
    }

    fn check_point(&self, x: &ChartPoint) -> Result<(), FlowError> {
        let m = self.n - 1;
        let oob = Err(FlowError::OutOfDomain { time: 0.0 });
        match x.chart {
            Chart::Q | Chart::P => {
                if x.coords.len() != self.n {
                    return Err(FlowError::DimensionMismatch { expected: self.n, got: x.coords.len() });
                }
                if x.transit_s.is_some() || !self.within_radius(&x.coords) {
                    return oob;
                }
                let bad_side = match x.chart {
                    Chart::Q => self.side_q(&x.coords) > SIDE_TOL,
                    _ => self.side_p(&x.coords) < -SIDE_TOL,
                };
                if bad_side {
                    return oob;
                }
            }
            Chart::Transit => {
                if x.coords.len() != m {
                    return Err(FlowError::DimensionMismatch { expected: m, got: x.coords.len() });
                }
                match x.transit_s {
                    Some(s) if (0.0..=self.tau).contains(&s) => {}
                    _ => return oob,
                }
            }
        }
        if x.coords.iter().any(|c| !c.is_finite()) {
            return Err(FlowError::NonFinite { what: "coordinates" });
        }
        Ok(())
    }

    /// Exact glued flow with continuous monitoring of chart exits.
    pub fn evolve_glued(&self, t: f64, x: &ChartPoint) -> Result<ChartPoint, FlowError> {
        if !t.is_finite() {
            return Err(FlowError::NonFinite { what: "time" });
        }
        self.check_point(x)?;
        let r = self.chart_radius * (1.0 + 1e-12);
        let mut state = x.clone();
        let mut remaining = t;
        let mut elapsed = 0.0;
        loop {
            match state.chart {
                Chart::Transit => {
                    let s = state.transit_s.expect("transit time");
                    let s_end = s + remaining;
                    if (0.0..self.tau).contains(&s_end) || (s_end == self.tau && remaining == 0.0) {
                        return Ok(ChartPoint::transit(s_end, state.coords));
                    }
                    if s_end >= self.tau {
                        let used = self.tau - s;
                        let w = self.apply_k(&state.coords);
                        state = ChartPoint::p(self.p_section_point(&w));
                        elapsed += used;
                        remaining -= used;
                        if remaining == 0.0 {
                            return Ok(state);
                        }
                    } else {
                        elapsed -= s;
                        remaining += s;
                        state = ChartPoint::q(self.q_section_point(&state.coords));
                    }
                }
                Chart::Q => {
                    if remaining == 0.0 {
                        return Ok(state);
                    }
                    if remaining > 0.0 && self.side_q(&state.coords) >= -SIDE_TOL {
                        state = ChartPoint::on_q_section(self.q_offset(&state.coords));
                        continue;
                    }
                    let valid = |y: &[f64]| norm(y) <= r && self.side_q(y) < 0.0;
                    match scan(&self.field_q, &state.coords, remaining, valid) {
                        Scan::Done(y) => return Ok(ChartPoint::q(y)),
                        Scan::Event { time, y } => {
                            let at = elapsed + time;
                            if norm(&y) > r || remaining < 0.0 {
                                return Err(FlowError::OutOfDomain { time: at });
                            }
                            state = ChartPoint::on_q_section(self.q_offset(&y));
                            elapsed = at;
                            remaining -= time;
                        }
                    }
                }
                Chart::P => {
                    if remaining == 0.0 {
                        return Ok(state);
                    }
                    let forward = remaining > 0.0;
                    let valid = |y: &[f64]| {
                        norm(y) <= r && if forward { self.side_p(y) >= -SIDE_TOL } else { self.side_p(y) >= 0.0 }
                    };
                    match scan(&self.field_p, &state.coords, remaining, valid) {
                        Scan::Done(y) => return Ok(ChartPoint::p(y)),
                        Scan::Event { time, y } => {
                            let at = elapsed + time;
                            if norm(&y) > r || forward {
                                return Err(FlowError::OutOfDomain { time: at });
                            }
                            let u = self.apply_k_inv(&self.p_offset(&y));
                            state = ChartPoint::transit(self.tau, u);
                            elapsed = at;
                            remaining -= time;
                        }
                    }
                }
            }
        }
    }

    /// Transit map on the `Q` section: `a_p + B_p K B_q^T (x - a_q)`.
    pub fn poincare(&self, x: &[f64]) -> Result<Vec<f64>, GluedError> {
        if x.len() != self.n {
            return Err(GluedError::Dimension(format!("point has length {}", x.len())));
        }
        if !self.within_radius(x) {
            return Err(GluedError::OutOfChart);
        }
        let side = self.side_q(x);
        if side.abs() > 1e-9 {
            return Err(GluedError::NotOnSection(side));
        }
        Ok(self.p_section_point(&self.apply_k(&self.q_offset(x))))
    }

    /// Precomputed orbit for repeated evaluation.
    pub fn orbit(&self, x: &ChartPoint) -> Result<GluedOrbit<'_>, FlowError> {
        GluedOrbit::new(self, x)
    }
}

#[derive(Debug, Clone)]
enum Segments {
    /// Crosses the `Q` section at `t_q` with offset `u`.
    Through { t_q: f64, q0: Vec<f64>, u: Vec<f64>, ku: Vec<f64>, p0: Vec<f64> },
    QOnly(Vec<f64>),
    POnly(Vec<f64>),
}

/// An orbit of the glued flow, split into chart segments once.
///
/// Chart radius and section sides are checked only at the queried times.
#[derive(Debug, Clone)]
pub struct GluedOrbit<'a> {
    sys: &'a GluedHeteroclinicSystem,
    seg: Segments,
}

impl<'a> GluedOrbit<'a> {
    pub fn new(sys: &'a GluedHeteroclinicSystem, x: &ChartPoint) -> Result<Self, FlowError> {
        sys.check_point(x)?;
        let through = |t_q: f64, u: Vec<f64>| {
            let ku = sys.apply_k(&u);
            Segments::Through { t_q, q0: sys.q_section_point(&u), p0: sys.p_section_point(&ku), u, ku }
        };
        let seg = match x.chart {
            Chart::Transit => through(-x.transit_s.expect("transit time"), x.coords.clone()),
            Chart::Q => match scan(sys.field_q(), &x.coords, CROSSING_HORIZON, |y| sys.side_q(y) < 0.0) {
                Scan::Event { time, y } => through(time, sys.q_offset(&y)),
                Scan::Done(_) => Segments::QOnly(x.coords.clone()),
            },
            Chart::P => match scan(sys.field_p(), &x.coords, -CROSSING_HORIZON, |y| sys.side_p(y) >= 0.0) {
                Scan::Event { time, y } => {
                    through(time - sys.tau, sys.apply_k_inv(&sys.p_offset(&y)))
                }
                Scan::Done(_) => Segments::POnly(x.coords.clone()),
            },
        };
        Ok(Self { sys, seg })
    }

    /// Time at which the orbit sits on the `Q` section, if it crosses.
    pub fn section_time(&self) -> Option<f64> {
        match &self.seg {
            Segments::Through { t_q, .. } => Some(*t_q),
            _ => None,
        }
    }

    /// Section offset at the `Q` crossing, if it crosses.
    pub fn section_offset(&self) -> Option<&[f64]> {
        match &self.seg {
            Segments::Through { u, .. } => Some(u),
            _ => None,
        }
    }

    fn q_at(&self, t: f64, x0: &[f64], dt: f64, out: &mut [f64], scratch: &mut [f64]) -> Result<(), FlowError> {
        let sys = self.sys;
        sys.field_q.evolve_into(dt, x0, scratch);
        if !sys.within_radius(scratch) || sys.side_q(scratch) > SIDE_TOL {
            return Err(FlowError::OutOfDomain { time: t });
        }
        sys.tube_q(scratch, out);
        Ok(())
    }

    fn p_at(&self, t: f64, x0: &[f64], dt: f64, out: &mut [f64], scratch: &mut [f64]) -> Result<(), FlowError> {
        let sys = self.sys;
        sys.field_p.evolve_into(dt, x0, scratch);
        if !sys.within_radius(scratch) || sys.side_p(scratch) < -SIDE_TOL {
            return Err(FlowError::OutOfDomain { time: t });
        }
        sys.tube_p(scratch, out);
        Ok(())
    }

    /// Tube-frame embedding at time `t`; `scratch` needs length `n`.
    pub fn embed_at(&self, t: f64, out: &mut [f64], scratch: &mut [f64]) -> Result<(), FlowError> {
        match &self.seg {
            Segments::Through { t_q, q0, u, ku, p0 } => {
                let s = t - t_q;
                if s < 0.0 {
                    self.q_at(t, q0, s, out, scratch)
                } else if s < self.sys.tau {
                    self.sys.tube_transit(s, u, ku, out);
                    Ok(())
                } else {
                    self.p_at(t, p0, s - self.sys.tau, out, scratch)
                }
            }
            Segments::QOnly(x0) => self.q_at(t, x0, t, out, scratch),
            Segments::POnly(x0) => self.p_at(t, x0, t, out, scratch),
        }
    }

    /// Chart point at time `t` (no domain monitoring between queries).
    pub fn state_at(&self, t: f64) -> Result<ChartPoint, FlowError> {
        let sys = self.sys;
        let mut y = vec![0.0; sys.n];
        let mut out = vec![0.0; sys.n];
        self.embed_at(t, &mut out, &mut y)?;
        Ok(match &self.seg {
            Segments::Through { t_q, u, .. } => {
                let s = t - t_q;
                if s < 0.0 {
                    ChartPoint::q(y)
                } else if s < sys.tau {
                    ChartPoint::transit(s, u.clone())
                } else {
                    ChartPoint::p(y)
                }
            }
            Segments::QOnly(_) => ChartPoint::q(y),
            Segments::POnly(_) => ChartPoint::p(y),
        })
    }
}

impl Flow for GluedHeteroclinicSystem {
    type State = ChartPoint;

    fn dim(&self) -> usize {
        self.n
    }

    fn evolve(&self, t: f64, x: &ChartPoint) -> Result<ChartPoint, FlowError> {
        self.evolve_glued(t, x)
    }

    fn embed_into(&self, x: &ChartPoint, out: &mut [f64]) {
        match x.chart {
            Chart::Q => self.tube_q(&x.coords, out),
            Chart::P => self.tube_p(&x.coords, out),
            Chart::Transit => {
                let ku = self.apply_k(&x.coords);
                self.tube_transit(x.transit_s.unwrap_or(0.0), &x.coords, &ku, out)
            }
        }
    }

    fn embed_orbit(&self, x: &ChartPoint, times: &[f64], out: &mut [f64]) -> Result<(), FlowError> {
        let orbit = GluedOrbit::new(self, x)?;
        let n = self.n;
        let mut scratch = vec![0.0; n];
        for (k, &t) in times.iter().enumerate() {
            orbit.embed_at(t, &mut out[k * n..(k + 1) * n], &mut scratch)?;
        }
        Ok(())
    }
}
