//! Projectors, tangent spaces, transversality and the sign obstruction of a
//! glued heteroclinic model.
//!
//! Vectors here live in section coordinates (length `n - 1`) unless noted:
//! `Q` offsets are `(flow complement in U_q, S_q)` and `P` offsets are
//! `(flow complement in S_p, U_p)`, both in block order.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{Block, FlowError};
use crate::glued::{ChartPoint, GluedHeteroclinicSystem};
use crate::pseudo::SampledPseudotrajectory;
use crate::repar::PiecewiseLinearRepar;
use crate::shadow::ProbeTarget;

/// Relative singular-value cutoff for ranks.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HeteroError {
    #[error("the connection is transversal; no obstruction frame exists")]
    TransversalSystem,
    #[error("no stable block of q is seen by the chosen unstable direction of p")]
    NoActiveBlock,
    #[error("unsupported configuration: {0}")]
    UnsupportedCase(String),
    #[error("candidate leaves the charts while probing the {0} window")]
    ChartExit(&'static str),
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

/// Coordinate selectors in chart coordinates (`n x n`).
#[derive(Debug, Clone, PartialEq)]
pub struct Projections {
    /// One selector per stable block of `q`.
    pub q_blocks: Vec<DMatrix<f64>>,
    pub q: DMatrix<f64>,
    /// One selector per unstable block of `p`.
    pub p_blocks: Vec<DMatrix<f64>>,
    pub p: DMatrix<f64>,
}

fn block_ranges(blocks: &[Block], start: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(blocks.len());
    let mut k = start;
    for b in blocks {
        out.push((k, b.dim()));
        k += b.dim();
    }
    out
}

fn selector(n: usize, ranges: &[(usize, usize)]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for &(s, len) in ranges {
        for k in s..s + len {
            m[(k, k)] = 1.0;
        }
    }
    m
}

/// Ranges `(start, len)` of the stable blocks of `q` in `Q` section coordinates.
pub fn q_stable_ranges(sys: &GluedHeteroclinicSystem) -> Vec<(usize, usize)> {
    block_ranges(sys.q_spec().stable.blocks(), sys.dim_uq() - 1)
}

/// Ranges of the unstable blocks of `p` in `P` section coordinates.
pub fn p_unstable_ranges(sys: &GluedHeteroclinicSystem) -> Vec<(usize, usize)> {
    block_ranges(sys.p_spec().unstable.blocks(), sys.dim_sp() - 1)
}

pub fn projections(sys: &GluedHeteroclinicSystem) -> Projections {
    let n = sys.n();
    let qr = block_ranges(sys.q_spec().stable.blocks(), sys.dim_uq());
    let pr = block_ranges(sys.p_spec().unstable.blocks(), sys.dim_sp());
    Projections {
        q_blocks: qr.iter().map(|r| selector(n, &[*r])).collect(),
        q: selector(n, &qr),
        p_blocks: pr.iter().map(|r| selector(n, &[*r])).collect(),
        p: selector(n, &pr),
    }
}

/// Column-orthonormal basis of the span of `m`'s columns and its rank.
pub fn orthonormal_span(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.ncols() == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| smax > 0.0 && svd.singular_values[k] > RANK_TOL * smax.max(1.0))
        .collect();
    DMatrix::from_fn(m.nrows(), keep.len(), |i, j| u[(i, keep[j])])
}

pub fn rank(m: &DMatrix<f64>) -> usize {
    orthonormal_span(m).ncols()
}

/// Tangent spaces of the two invariant manifolds at `a_p`, in `P` chart coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentSpaces {
    /// Orthonormal basis of `K Σ̃_q + span(v_p)`.
    pub wu_q: DMatrix<f64>,
    /// Orthonormal basis of `Σ̃_p + span(v_p)`.
    pub ws_p: DMatrix<f64>,
}

pub fn tangent_spaces(sys: &GluedHeteroclinicSystem) -> TangentSpaces {
    let n = sys.n();
    let (cq, cp) = (sys.dim_uq() - 1, sys.dim_sp() - 1);
    let kmap = sys.b_p() * sys.k();
    let vp = DVector::from_column_slice(sys.v_p());
    let mut wu = DMatrix::zeros(n, cq + 1);
    for j in 0..cq {
        wu.set_column(j, &kmap.column(j));
    }
    wu.set_column(cq, &vp);
    let mut ws = DMatrix::zeros(n, cp + 1);
    for j in 0..cp {
        ws.set_column(j, &sys.b_p().column(j));
    }
    ws.set_column(cp, &vp);
    TangentSpaces { wu_q: orthonormal_span(&wu), ws_p: orthonormal_span(&ws) }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransversalityVerdict {
    Transversal,
    Nontransversal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transversality {
    pub verdict: TransversalityVerdict,
    /// `n - rank(T Wu(q) + T Ws(p))`.
    pub defect_dim: usize,
    pub dim_wu_q: usize,
    pub dim_ws_p: usize,
    pub n: usize,
}

pub fn transversality(sys: &GluedHeteroclinicSystem) -> Transversality {
    let ts = tangent_spaces(sys);
    let n = sys.n();
    let mut both = DMatrix::zeros(n, ts.wu_q.ncols() + ts.ws_p.ncols());
    for j in 0..ts.wu_q.ncols() {
        both.set_column(j, &ts.wu_q.column(j));
    }
    for j in 0..ts.ws_p.ncols() {
        both.set_column(ts.wu_q.ncols() + j, &ts.ws_p.column(j));
    }
    let r = rank(&both);
    Transversality {
        verdict: if r == n { TransversalityVerdict::Transversal } else { TransversalityVerdict::Nontransversal },
        defect_dim: n - r,
        dim_wu_q: ts.wu_q.ncols(),
        dim_ws_p: ts.ws_p.ncols(),
        n,
    }
}

/// Unit vectors `e_p`, `e_q` and the functional reading the `e_p` coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstructionFrame {
    /// Index of the chosen unstable block of `p`.
    pub block: usize,
    /// Unit vector in that block, `P` section coordinates.
    pub e_p: Vec<f64>,
    /// Row functional on `P` offsets: `e_p` coefficient of the block component,
    /// taken along the image of `Σ̃_q` (orthogonally when that image is trivial).
    pub ell: Vec<f64>,
    /// Unit vector in `S_q`, `Q` section coordinates.
    pub e_q: Vec<f64>,
    /// Stable blocks of `q` that the functional sees through `K`.
    pub active: Vec<usize>,
    /// True for the probe frame of a transversal system.
    pub probe: bool,
}

impl ObstructionFrame {
    /// Rank-one projector `e_p ⊗ ell` on `P` offsets.
    pub fn proj_ep(&self) -> DMatrix<f64> {
        let m = self.e_p.len();
        DMatrix::from_fn(m, m, |i, j| self.e_p[i] * self.ell[j])
    }

    /// `ell(y)`.
    pub fn read(&self, y: &[f64]) -> f64 {
        self.ell.iter().zip(y).map(|(a, b)| a * b).sum()
    }

    /// Row vector `ell K` on `Q` offsets.
    pub fn ell_k(&self, sys: &GluedHeteroclinicSystem) -> Vec<f64> {
        let k = sys.k();
        (0..k.ncols()).map(|j| (0..k.nrows()).map(|i| self.ell[i] * k[(i, j)]).sum()).collect()
    }
}

fn first_nonzero_positive(v: &mut [f64]) {
    if let Some(&x) = v.iter().find(|x| x.abs() > 1e-14) {
        if x < 0.0 {
            for y in v.iter_mut() {
                *y = -*y;
            }
        }
    }
    // no negative zeros
    for y in v.iter_mut() {
        *y += 0.0;
    }
}

fn assemble_e_q(sys: &GluedHeteroclinicSystem, ell: &[f64]) -> Result<(Vec<f64>, Vec<usize>), HeteroError> {
    let k = sys.k();
    let m = sys.n() - 1;
    let scale = k.norm().max(1.0);
    let mut e_q = vec![0.0; m];
    let mut active = Vec::new();
    for (j, &(s, len)) in q_stable_ranges(sys).iter().enumerate() {
        let r: Vec<f64> = (s..s + len).map(|c| (0..m).map(|i| ell[i] * k[(i, c)]).sum()).collect();
        let nr = crate::flow::norm(&r);
        if nr <= 1e-12 * scale {
            continue;
        }
        active.push(j);
        for (c, rc) in r.iter().enumerate() {
            e_q[s + c] = -rc / nr;
        }
    }
    if active.is_empty() {
        return Err(HeteroError::NoActiveBlock);
    }
    let len = (active.len() as f64).sqrt();
    for x in &mut e_q {
        *x /= len;
    }
    Ok((e_q, active))
}

/// Choose `(e_p, e_q)` for a nontransversal system.
///
/// Takes the first unstable block of `p` not covered by the image of `Σ̃_q`.
/// Supported: a 2D block hit in a line, or a 1D block missed entirely.
pub fn select_obstruction_frame(sys: &GluedHeteroclinicSystem) -> Result<ObstructionFrame, HeteroError> {
    if transversality(sys).verdict == TransversalityVerdict::Transversal {
        return Err(HeteroError::TransversalSystem);
    }
    let k = sys.k();
    let m = sys.n() - 1;
    let cq = sys.dim_uq() - 1;
    for (i, &(s, len)) in p_unstable_ranges(sys).iter().enumerate() {
        let sub = DMatrix::from_fn(len, cq, |r, c| k[(s + r, c)]);
        let img = orthonormal_span(&sub);
        if img.ncols() == len {
            continue;
        }
        let mut e_p = vec![0.0; m];
        let mut ell = vec![0.0; m];
        match (len, img.ncols()) {
            (1, 0) => {
                e_p[s] = 1.0;
                ell[s] = 1.0;
            }
            (2, 1) => {
                let (k0, k1) = (img[(0, 0)], img[(1, 0)]);
                let mut ep = [-k1, k0];
                first_nonzero_positive(&mut ep);
                // y = c e_p + c' k̂  =>  c = det(k̂, y) / det(k̂, e_p)
                let det = k0 * ep[1] - k1 * ep[0];
                e_p[s] = ep[0];
                e_p[s + 1] = ep[1];
                ell[s] = -k1 / det;
                ell[s + 1] = k0 / det;
            }
            (l, r) => {
                return Err(HeteroError::UnsupportedCase(format!(
                    "unstable block {i} of dimension {l} with image of dimension {r}"
                )))
            }
        }
        let (e_q, active) = assemble_e_q(sys, &ell)?;
        return Ok(ObstructionFrame { block: i, e_p, ell, e_q, active, probe: false });
    }
    Err(HeteroError::UnsupportedCase("every unstable block is covered separately".into()))
}

/// Frame for running the glued construction on any system with an unstable
/// direction at `p`: `e_p` is the first unstable axis, read orthogonally.
pub fn probe_frame(sys: &GluedHeteroclinicSystem) -> Result<ObstructionFrame, HeteroError> {
    let ranges = p_unstable_ranges(sys);
    let &(s, _) = ranges.first().ok_or_else(|| HeteroError::Input("p has no unstable direction".into()))?;
    let m = sys.n() - 1;
    let mut e_p = vec![0.0; m];
    e_p[s] = 1.0;
    let ell = e_p.clone();
    let (e_q, active) = assemble_e_q(sys, &ell)?;
    Ok(ObstructionFrame { block: 0, e_p, ell, e_q, active, probe: true })
}

/// Frame for the nontransversal case, probe frame otherwise.
pub fn frame_for(sys: &GluedHeteroclinicSystem) -> Result<ObstructionFrame, HeteroError> {
    match select_obstruction_frame(sys) {
        Err(HeteroError::TransversalSystem) => probe_frame(sys),
        other => other,
    }
}

/// Residual checks of a frame: `max |ell K Σ̃_q|` and the per-block signs
/// `ell K Π_j e_q` (negative for active blocks).
pub fn frame_diagnostics(sys: &GluedHeteroclinicSystem, frame: &ObstructionFrame) -> (f64, Vec<f64>) {
    let lk = frame.ell_k(sys);
    let cq = sys.dim_uq() - 1;
    let leak = lk[..cq].iter().map(|x| x.abs()).fold(0.0, f64::max);
    let signs = q_stable_ranges(sys)
        .iter()
        .map(|&(s, len)| (s..s + len).map(|c| lk[c] * frame.e_q[c]).sum())
        .collect();
    (leak, signs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObstructionVerdict {
    BackViolated,
    FwdViolated,
    SignContradiction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstructionReport {
    /// `ell K Π_q ω`.
    pub w: f64,
    /// `ell` applied to the arrival offset on the `P` section.
    pub v: f64,
    pub r_back: f64,
    pub r_fwd: f64,
    /// Time shift used for the forward window, within `± shift_bound`.
    pub h_shift: f64,
    pub shift_bound: f64,
    /// `L * d`.
    pub threshold: f64,
    pub window_back: (f64, f64),
    pub window_fwd: (f64, f64),
    pub verdict: ObstructionVerdict,
}

/// Inputs of [`obstruction_report`] besides the system and frame.
#[derive(Debug, Clone)]
pub struct ObstructionQuery<'a> {
    pub g: &'a SampledPseudotrajectory<ChartPoint>,
    /// Candidate start: offset on the `Q` section.
    pub omega: &'a [f64],
    pub h: &'a PiecewiseLinearRepar,
    pub d: f64,
    pub lipschitz: f64,
    /// Window lengths before 0 and after `tau`.
    pub t_back: f64,
    pub t_fwd: f64,
    /// Defect constant of the glued construction.
    pub c1: f64,
}

/// Evaluate a shadowing candidate against the sign obstruction.
///
/// The forward residual is minimized over a constant time shift `H` with
/// `|H| <= 2 L C1 d / |v_p|`.
pub fn obstruction_report(
    sys: &GluedHeteroclinicSystem,
    frame: &ObstructionFrame,
    q: &ObstructionQuery<'_>,
) -> Result<ObstructionReport, HeteroError> {
    let m = sys.n() - 1;
    if q.omega.len() != m {
        return Err(HeteroError::Input(format!("candidate offset must have length {m}")));
    }
    let g = q.g;
    let tau = sys.tau();
    let wb = ((-q.t_back).max(g.t0), 0.0);
    let wf = (tau, (tau + q.t_fwd).min(g.t_end()));
    let x = ChartPoint::on_q_section(q.omega.to_vec());
    let back = ProbeTarget::new(sys, g, wb).map_err(|e| HeteroError::Input(e.to_string()))?;
    let fwd = ProbeTarget::new(sys, g, wf).map_err(|e| HeteroError::Input(e.to_string()))?;
    let r_back = back.residual(sys, &x, q.h, 0.0);
    if r_back == crate::shadow::RESIDUAL_MAX {
        return Err(HeteroError::ChartExit("backward"));
    }
    let speed = crate::flow::norm(sys.v_p());
    let bound = 2.0 * q.lipschitz * q.c1 * q.d / speed;
    let (h_shift, r_fwd) = minimize_shift(|s| fwd.residual(sys, &x, q.h, s), bound);
    if r_fwd == crate::shadow::RESIDUAL_MAX {
        return Err(HeteroError::ChartExit("forward"));
    }
    let mut piq = q.omega.to_vec();
    for c in piq.iter_mut().take(sys.dim_uq() - 1) {
        *c = 0.0;
    }
    let w: f64 = frame.ell_k(sys).iter().zip(&piq).map(|(a, b)| a * b).sum();
    let v = frame.read(&sys.apply_k(q.omega));
    let threshold = q.lipschitz * q.d;
    let verdict = if r_back > threshold {
        ObstructionVerdict::BackViolated
    } else if r_fwd > threshold {
        ObstructionVerdict::FwdViolated
    } else {
        ObstructionVerdict::SignContradiction
    };
    Ok(ObstructionReport {
        w,
        v,
        r_back,
        r_fwd,
        h_shift,
        shift_bound: bound,
        threshold,
        window_back: wb,
        window_fwd: wf,
        verdict,
    })
}

/// Grid plus golden-section search of a scalar function on `[-b, b]`.
fn minimize_shift(f: impl Fn(f64) -> f64, b: f64) -> (f64, f64) {
    if !(b > 0.0) {
        return (0.0, f(0.0));
    }
    let n = 40;
    let mut best = (0.0, f(0.0));
    let mut at = n / 2;
    for k in 0..=n {
        let s = -b + 2.0 * b * k as f64 / n as f64;
        let v = f(s);
        if v < best.1 {
            best = (s, v);
            at = k;
        }
    }
    let h = 2.0 * b / n as f64;
    let (mut lo, mut hi) = ((-b + h * at as f64 - h).max(-b), (-b + h * at as f64 + h).min(b));
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut x1, mut x2) = (hi - phi * (hi - lo), lo + phi * (hi - lo));
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..40 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = f(x2);
        }
    }
    for (x, v) in [(x1, f1), (x2, f2)] {
        if v < best.1 {
            best = (x, v);
        }
    }
    best
}
