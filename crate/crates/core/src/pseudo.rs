//! Grid-sampled pseudotrajectories and their defect.
//!
//! A [`SampledPseudotrajectory`] stores nodes `x_i` at times `t0 + i*dt`; between
//! nodes it follows the flow, `g(t) = φ(t - t_i, x_i)` on `[t_i, t_{i+1})`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{euclidean, Flow, FlowError};
use crate::glued::{ChartPoint, GluedHeteroclinicSystem};
use crate::hetero::ObstructionFrame;

/// Largest node spacing; keeps at least two pieces inside any unit window.
pub const MAX_DT: f64 = 0.5;

/// Probe grids are `dt / PROBE_REFINE`.
pub const PROBE_REFINE: usize = 8;

const NODE_SNAP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PseudoError {
    #[error("time {t} outside the window [{t0}, {t1}]")]
    OutOfWindow { t: f64, t0: f64, t1: f64 },
    #[error("node spacing {0} must lie in (0, {MAX_DT}]")]
    Step(f64),
    #[error("need at least two nodes spanning one time unit")]
    TooShort,
    #[error("construction leaves the charts: {0}")]
    WindowExceedsChart(FlowError),
    #[error("times must be integer multiples of the node spacing: {0}")]
    Grid(String),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledPseudotrajectory<S> {
    pub t0: f64,
    pub dt: f64,
    pub nodes: Vec<S>,
}

impl<S: Clone + Send + Sync> SampledPseudotrajectory<S> {
    pub fn new(t0: f64, dt: f64, nodes: Vec<S>) -> Result<Self, PseudoError> {
        if !(dt > 0.0 && dt <= MAX_DT) || !t0.is_finite() {
            return Err(PseudoError::Step(dt));
        }
        if nodes.len() < 2 {
            return Err(PseudoError::TooShort);
        }
        Ok(Self { t0, dt, nodes })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.nodes.len() - 1)
    }

    pub fn node_times(&self) -> Vec<f64> {
        (0..self.nodes.len()).map(|i| self.time(i)).collect()
    }

    /// Node index and offset into its piece. Times within `1e-12` of a node snap to it.
    pub fn locate(&self, t: f64) -> Result<(usize, f64), PseudoError> {
        let t1 = self.t_end();
        let tol = NODE_SNAP * t.abs().max(1.0);
        if !(t >= self.t0 - tol && t <= t1 + tol) {
            return Err(PseudoError::OutOfWindow { t, t0: self.t0, t1 });
        }
        let x = (t - self.t0) / self.dt;
        let k = x.round();
        if k >= 0.0 && (k as usize) < self.nodes.len() && (t - self.time(k as usize)).abs() <= tol {
            return Ok((k as usize, 0.0));
        }
        let i = (x.floor().max(0.0) as usize).min(self.nodes.len() - 2);
        Ok((i, t - self.time(i)))
    }

    /// `g(t)`; exact (a clone of the node) at node times.
    pub fn eval<F: Flow<State = S>>(&self, flow: &F, t: f64) -> Result<S, PseudoError> {
        let (i, off) = self.locate(t)?;
        if off == 0.0 {
            return Ok(self.nodes[i].clone());
        }
        Ok(flow.evolve(off, &self.nodes[i])?)
    }

    /// Embedded values `g(t)` at sorted times, written row by row.
    pub fn embed_times<F: Flow<State = S>>(&self, flow: &F, times: &[f64], out: &mut [f64]) -> Result<(), PseudoError> {
        let n = flow.dim();
        let mut start = 0;
        while start < times.len() {
            let (i, _) = self.locate(times[start])?;
            let mut end = start + 1;
            while end < times.len() && self.locate(times[end])?.0 == i {
                end += 1;
            }
            let ti = self.time(i);
            let offs: Vec<f64> = times[start..end].iter().map(|t| t - ti).collect();
            flow.embed_orbit(&self.nodes[i], &offs, &mut out[start * n..end * n])?;
            // node times are reproduced exactly
            for (k, &o) in offs.iter().enumerate() {
                if self.locate(times[start + k])?.1 == 0.0 && o != 0.0 {
                    flow.embed_into(&self.nodes[i], &mut out[(start + k) * n..(start + k + 1) * n]);
                }
            }
            start = end;
        }
        Ok(())
    }

    /// One CSV row per node: `t,x0,..,x{n-1}` in the flow's distance frame.
    pub fn write_csv<F: Flow<State = S>, W: Write>(&self, flow: &F, w: W) -> Result<(), PseudoError> {
        let mut wr = csv::Writer::from_writer(w);
        let n = flow.dim();
        let mut header = vec!["t".to_string()];
        header.extend((0..n).map(|k| format!("x{k}")));
        wr.write_record(&header).map_err(|e| PseudoError::Io(e.to_string()))?;
        for (i, x) in self.nodes.iter().enumerate() {
            let mut row = vec![self.time(i).to_string()];
            row.extend(flow.embed(x).iter().map(|v| v.to_string()));
            wr.write_record(&row).map_err(|e| PseudoError::Io(e.to_string()))?;
        }
        wr.flush().map_err(|e| PseudoError::Io(e.to_string()))?;
        Ok(())
    }
}

/// Evenly spaced probe times over `[t0, t1]` that contain every node time of
/// `g` when `step` divides `dt`.
pub fn probe_times(t0: f64, t1: f64, step: f64) -> Vec<f64> {
    let n = ((t1 - t0) / step - 1e-9).ceil().max(0.0) as usize;
    let mut ts: Vec<f64> = (0..=n).map(|k| t0 + k as f64 * step).collect();
    if let Some(last) = ts.last_mut() {
        *last = last.min(t1);
    }
    ts
}

/// Grid estimate of the defect of a pseudotrajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectEstimate {
    /// Supremum over the probe grid of `dist(g(s + t), φ(t, g(s)))`, `|t| < 1`.
    pub defect: f64,
    pub grid_step: f64,
    /// Anchor time `s` and offset `t` attaining the supremum.
    pub argmax: (f64, f64),
}

/// Defect on the probe grid with spacing `dt / 8`.
pub fn pseudo_defect<F: Flow>(flow: &F, g: &SampledPseudotrajectory<F::State>) -> Result<DefectEstimate, PseudoError> {
    pseudo_defect_refined(flow, g, PROBE_REFINE)
}

/// Defect on the probe grid with spacing `dt / refine`.
pub fn pseudo_defect_refined<F: Flow>(
    flow: &F,
    g: &SampledPseudotrajectory<F::State>,
    refine: usize,
) -> Result<DefectEstimate, PseudoError> {
    if g.t_end() - g.t0 < 1.0 - 1e-12 {
        return Err(PseudoError::TooShort);
    }
    let step = g.dt / refine.max(1) as f64;
    let nk = ((g.t_end() - g.t0) / step).round() as usize;
    let times: Vec<f64> = (0..=nk).map(|k| g.t0 + k as f64 * step).collect();
    let n = flow.dim();
    let mut gv = vec![0.0; times.len() * n];
    g.embed_times(flow, &times, &mut gv)?;
    // |j| * step < 1
    let jmax = ((1.0 / step) - 1e-9).ceil() as i64 - 1;
    let rows: Vec<Result<(f64, usize, i64), PseudoError>> = (0..times.len())
        .into_par_iter()
        .map(|k| {
            let x = g.eval(flow, times[k])?;
            let lo = (-(jmax)).max(-(k as i64));
            let hi = jmax.min((nk - k) as i64);
            let offs: Vec<f64> = (lo..=hi).map(|j| j as f64 * step).collect();
            let mut orb = vec![0.0; offs.len() * n];
            flow.embed_orbit(&x, &offs, &mut orb)?;
            let mut best = (0.0, k, 0);
            for (c, j) in (lo..=hi).enumerate() {
                let kk = (k as i64 + j) as usize;
                let dist = euclidean(&orb[c * n..(c + 1) * n], &gv[kk * n..(kk + 1) * n]);
                if dist > best.0 {
                    best = (dist, k, j);
                }
            }
            Ok(best)
        })
        .collect();
    let mut best = (0.0, 0usize, 0i64);
    for r in rows {
        let r = r?;
        if r.0 > best.0 {
            best = r;
        }
    }
    Ok(DefectEstimate { defect: best.0, grid_step: step, argmax: (times[best.1], best.2 as f64 * step) })
}

/// Sample a true orbit of `x0` (at time 0) on the node grid and add noise
/// uniform in the ball of radius `noise`.
pub fn pseudo_from_orbit<F: Flow<State = Vec<f64>>>(
    flow: &F,
    x0: &[f64],
    window: (f64, f64),
    dt: f64,
    noise: f64,
    seed: u64,
) -> Result<SampledPseudotrajectory<Vec<f64>>, PseudoError> {
    if !(dt > 0.0 && dt <= MAX_DT) {
        return Err(PseudoError::Step(dt));
    }
    let count = ((window.1 - window.0) / dt - 1e-9).ceil().max(1.0) as usize + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = x0.to_vec();
    let mut nodes = Vec::with_capacity(count);
    for i in 0..count {
        let t = window.0 + i as f64 * dt;
        let mut x = flow.evolve(t, &x0)?;
        if noise > 0.0 {
            let e = ball_sample(&mut rng, x.len());
            for (xi, ei) in x.iter_mut().zip(e) {
                *xi += noise * ei;
            }
        }
        nodes.push(x);
    }
    SampledPseudotrajectory::new(window.0, dt, nodes)
}

/// Uniform sample from the closed unit ball in `R^n`.
pub fn ball_sample<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let len = crate::flow::norm(&v);
    let r: f64 = rng.gen::<f64>().powf(1.0 / n as f64);
    for x in &mut v {
        *x *= r / len;
    }
    v
}

/// Node layout of the glued construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GluedLayout {
    /// Index of the node at time 0.
    pub origin: usize,
    /// Index of the node at time `tau`.
    pub arrival: usize,
}

impl GluedLayout {
    pub fn for_pseudo(sys: &GluedHeteroclinicSystem, g: &SampledPseudotrajectory<ChartPoint>) -> Self {
        let origin = (-g.t0 / g.dt).round() as usize;
        Self { origin, arrival: origin + (sys.tau() / g.dt).round() as usize }
    }
}

/// Node spacing used by the glued construction: the largest `tau / k <= 0.5`.
pub fn glued_dt(tau: f64) -> f64 {
    tau / (tau / MAX_DT).ceil()
}

/// The three-piece pseudotrajectory of the glued model.
///
/// `g(t) = φ(t, a_q + d e_q)` for `t < 0`, `φ(t, a_q)` on `[0, tau)` and
/// `φ(t - tau, a_p + d e_p)` afterwards, on `[-t_back, tau + t_fwd]` (both
/// rounded up to the node grid).
pub fn pseudo_glued(
    sys: &GluedHeteroclinicSystem,
    frame: &ObstructionFrame,
    d: f64,
    t_back: f64,
    t_fwd: f64,
) -> Result<SampledPseudotrajectory<ChartPoint>, PseudoError> {
    let dt = glued_dt(sys.tau());
    let kb = (t_back / dt - 1e-9).ceil().max(1.0) as usize;
    let m = (sys.tau() / dt).round() as usize;
    let kf = (t_fwd / dt - 1e-9).ceil().max(1.0) as usize;
    let t0 = -(kb as f64) * dt;
    let back = ChartPoint::on_q_section(frame.e_q.iter().map(|x| d * x).collect());
    let ep: Vec<f64> = frame.e_p.iter().map(|x| d * x).collect();
    let fwd = ChartPoint::p(sys.p_section_point(&ep));
    let chart = PseudoError::WindowExceedsChart;
    let mut nodes = Vec::with_capacity(kb + m + kf + 1);
    for i in 0..kb {
        let t = -((kb - i) as f64) * dt;
        nodes.push(sys.evolve_glued(t, &back).map_err(chart)?);
    }
    for i in 0..m {
        nodes.push(ChartPoint::transit(i as f64 * dt, vec![0.0; sys.n() - 1]));
    }
    nodes.push(fwd.clone());
    for i in 1..=kf {
        nodes.push(sys.evolve_glued(i as f64 * dt, &fwd).map_err(chart)?);
    }
    SampledPseudotrajectory::new(t0, dt, nodes)
}

/// Two-piece pseudotrajectory `φ(t, r)` for `t < tau0`, `φ(t - tau0 - tau1, alpha)`
/// from `tau0` on; the jump node at `tau0` belongs to the second piece.
///
/// `tau0` and `tau1` must be integer multiples of `dt`. The window is
/// `[-t_back, tau0 + tau1 + t_tail]` rounded outward to the node grid.
#[allow(clippy::too_many_arguments)]
pub fn pseudo_jump<F: Flow>(
    flow: &F,
    r: &F::State,
    alpha: &F::State,
    tau0: f64,
    tau1: f64,
    dt: f64,
    t_back: f64,
    t_tail: f64,
) -> Result<SampledPseudotrajectory<F::State>, PseudoError> {
    if !(dt > 0.0 && dt <= MAX_DT) {
        return Err(PseudoError::Step(dt));
    }
    let steps = |x: f64, what: &str| -> Result<usize, PseudoError> {
        let k = (x / dt).round();
        if !(x > 0.0) || (x - k * dt).abs() > 1e-9 * x.max(1.0) {
            return Err(PseudoError::Grid(format!("{what} = {x}, dt = {dt}")));
        }
        Ok(k as usize)
    };
    let n0 = steps(tau0, "tau0")?;
    let n1 = steps(tau1, "tau1")?;
    let kb = (t_back / dt - 1e-9).ceil().max(0.0) as usize;
    let kt = (t_tail / dt - 1e-9).ceil().max(0.0) as usize;
    let chart = PseudoError::WindowExceedsChart;
    let mut nodes = Vec::with_capacity(kb + n0 + n1 + kt + 1);
    for i in 0..kb + n0 {
        let t = (i as f64 - kb as f64) * dt;
        nodes.push(if t == 0.0 { r.clone() } else { flow.evolve(t, r).map_err(chart)? });
    }
    for j in 0..=n1 + kt {
        let t = (j as f64 - n1 as f64) * dt;
        nodes.push(if t == 0.0 { alpha.clone() } else { flow.evolve(t, alpha).map_err(chart)? });
    }
    SampledPseudotrajectory::new(-(kb as f64) * dt, dt, nodes)
}
