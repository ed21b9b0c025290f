//! Brute-force check that a jump pseudotrajectory near a planar saddle
//! connection has no oriented shadow.
//!
//! The pseudotrajectory follows the connection orbit of `base` until
//! `t_jump`, then jumps onto the orbit that leaves `p` along its unstable
//! axis and reaches `jump_target` at `t_jump + t_lead`. Every start point `x`
//! on a square grid around `base` is paired with sampled monotone `h`, and a
//! time where `dist(g(t), φ(h(t), x)) > eps` is recorded for every pair.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{euclidean, norm, Flow};
use crate::glued::{ChartPoint, GluedHeteroclinicSystem};
use crate::pseudo::{probe_times, pseudo_jump, PseudoError, SampledPseudotrajectory, PROBE_REFINE};
use crate::repar::PiecewiseLinearRepar;

/// Coarse backward scan step.
const COARSE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NosubsetError {
    #[error("the planar construction needs n = 2, got n = {0}")]
    Dimension(usize),
    #[error("eps = {eps} violates: {condition} (bound {bound})")]
    InvalidEps { condition: &'static str, bound: f64, eps: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Pseudo(#[from] PseudoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpsChoice {
    Auto,
    #[serde(untagged)]
    Value(f64),
}

/// Upper bounds `eps` must stay strictly below.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsConditions {
    /// Distance from the jump target to the local stable manifold of `p`.
    pub target_gap: f64,
    /// Room around `base` inside the `P` chart, on the far side of its section.
    pub base_room: f64,
    /// Depth of the `Q` section, which backward-escaping points must cross.
    pub section_depth: f64,
}

impl EpsConditions {
    pub fn check(&self, eps: f64) -> Result<(), NosubsetError> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(NosubsetError::InvalidEps { condition: "eps must be positive", bound: 0.0, eps });
        }
        let conds = [
            (self.target_gap, "distance from the jump target to the local stable manifold of p must exceed eps"),
            (self.base_room, "the eps-box around the base point must stay inside the P chart"),
            (self.section_depth, "backward escape: eps must stay below the depth of the Q section"),
        ];
        for (bound, condition) in conds {
            if eps >= bound {
                return Err(NosubsetError::InvalidEps { condition, bound, eps });
            }
        }
        Ok(())
    }

    /// Half the smallest bound.
    pub fn auto(&self) -> f64 {
        0.5 * self.target_gap.min(self.base_room).min(self.section_depth)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NosubsetConfig {
    pub eps: EpsChoice,
    /// `P` chart coordinates; defaults to the reference orbit one time unit past `a_p`.
    pub base: Option<Vec<f64>>,
    /// `P` chart coordinates; defaults to `0.6` along the unstable axis of `p`.
    pub jump_target: Option<Vec<f64>>,
    pub t_jump: f64,
    pub t_lead: f64,
    pub t_back: f64,
    pub t_tail: f64,
    pub dt: f64,
    /// Points per axis of the start grid.
    pub x_grid: usize,
    pub h_samples: usize,
    /// Breakpoint spacing of sampled `h`.
    pub h_step: f64,
    pub slope_range: (f64, f64),
    pub seed: u64,
    /// Keep one record per grid point in the report.
    pub keep_points: bool,
}

impl Default for NosubsetConfig {
    fn default() -> Self {
        Self {
            eps: EpsChoice::Auto,
            base: None,
            jump_target: None,
            t_jump: 8.0,
            t_lead: 8.0,
            t_back: 30.0,
            t_tail: 1.0,
            dt: 0.5,
            x_grid: 200,
            h_samples: 1000,
            h_step: 1.0,
            slope_range: (0.5, 2.0),
            seed: 0,
            keep_points: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    /// Every recorded failure is at a negative time.
    Backward,
    /// Every recorded failure is at `t_jump + t_lead`.
    Arrival,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    /// `P` chart coordinates.
    pub x: Vec<f64>,
    /// On the unstable manifold of `q` (the stable axis of `p`).
    pub on_wu: bool,
    pub branch: Branch,
    /// Range of recorded failure times over all `h`.
    pub t_min: f64,
    pub t_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub x: Vec<f64>,
    pub h_index: usize,
    pub h: PiecewiseLinearRepar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NosubsetReport {
    pub feasible: bool,
    pub eps: f64,
    pub conditions: EpsConditions,
    pub base: Vec<f64>,
    pub jump_target: Vec<f64>,
    pub jump_size: f64,
    pub t_arrival: f64,
    pub grid_points: usize,
    pub grid_spacing: f64,
    pub h_samples: usize,
    pub probe_step: f64,
    pub pairs: u64,
    pub on_wu_points: usize,
    pub backward_points: usize,
    pub arrival_points: usize,
    pub other_points: usize,
    /// Off-manifold points fail backward and on-manifold points fail at arrival.
    pub dichotomy_holds: bool,
    /// Latest backward failure time over off-manifold points.
    pub latest_backward_failure: Option<f64>,
    pub witness: Option<Witness>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub points: Vec<PointRecord>,
}

/// Bounds on `eps` for the given base point and jump target.
pub fn eps_conditions(sys: &GluedHeteroclinicSystem, base: &[f64], jump_target: &[f64]) -> EpsConditions {
    let sp = sys.dim_sp();
    let target_gap = norm(&jump_target[sp..]);
    let base_room = (sys.chart_radius() - norm(base)).min(sys.side_p(base));
    let vq = sys.v_q();
    let section_depth = sys.a_q().iter().zip(vq).map(|(a, v)| a * v).sum::<f64>().abs() / norm(vq);
    EpsConditions { target_gap, base_room, section_depth }
}

fn default_base(sys: &GluedHeteroclinicSystem) -> Vec<f64> {
    sys.field_p().evolve(1.0, sys.a_p()).expect("dimension checked")
}

fn default_target(sys: &GluedHeteroclinicSystem) -> Vec<f64> {
    let mut t = vec![0.0; sys.n()];
    t[sys.dim_sp()] = 0.6;
    t
}

fn sample_h<R: Rng>(rng: &mut R, nodes: &[f64], range: (f64, f64)) -> PiecewiseLinearRepar {
    let (lo, hi) = (range.0.ln(), range.1.ln());
    let slopes: Vec<f64> = (0..nodes.len() - 1).map(|_| rng.gen_range(lo..=hi).exp()).collect();
    PiecewiseLinearRepar::on_grid(nodes, &slopes).expect("positive slopes on an increasing grid")
}

struct Scan<'a> {
    sys: &'a GluedHeteroclinicSystem,
    eps: f64,
    times: Vec<f64>,
    gvals: Vec<f64>,
    /// `h_j(times[k])` at `hv[j * times.len() + k]`.
    hv: Vec<f64>,
    origin: usize,
    arrival: usize,
}

impl Scan<'_> {
    fn fails(&self, orbit: &crate::glued::GluedOrbit<'_>, j: usize, k: usize, out: &mut [f64], scratch: &mut [f64]) -> bool {
        let n = self.sys.n();
        let t = self.hv[j * self.times.len() + k];
        match orbit.embed_at(t, out, scratch) {
            Err(_) => true,
            Ok(()) => euclidean(out, &self.gvals[k * n..(k + 1) * n]) > self.eps,
        }
    }

    /// Index of a failing probe time for `(x, h_j)`, trying `cached` first.
    fn failure(&self, orbit: &crate::glued::GluedOrbit<'_>, on_wu: bool, j: usize, cached: Option<usize>) -> Option<usize> {
        let n = self.sys.n();
        let (mut out, mut scratch) = (vec![0.0; n], vec![0.0; n]);
        let mut f = |k: usize| self.fails(orbit, j, k, &mut out, &mut scratch);
        if let Some(k) = cached {
            if f(k) {
                return Some(k);
            }
        }
        if on_wu && f(self.arrival) {
            return Some(self.arrival);
        }
        let stride = ((COARSE / (self.times[1] - self.times[0])).round() as usize).max(1);
        let mut k = self.origin;
        while k >= stride {
            k -= stride;
            if f(k) {
                return Some(k);
            }
        }
        let coarse = |k: usize| k < self.origin && (self.origin - k) % stride == 0;
        if let Some(k) = (0..self.origin).rev().find(|&k| !coarse(k) && f(k)) {
            return Some(k);
        }
        (self.origin..self.times.len()).find(|&k| f(k))
    }
}

/// Search for an `eps`-shadow of the jump pseudotrajectory over a start grid
/// and sampled reparametrizations.
pub fn nosubset_feasibility(sys: &GluedHeteroclinicSystem, cfg: &NosubsetConfig) -> Result<NosubsetReport, NosubsetError> {
    let n = sys.n();
    if n != 2 {
        return Err(NosubsetError::Dimension(n));
    }
    if cfg.x_grid < 2 || cfg.x_grid % 2 != 0 {
        return Err(NosubsetError::Config(format!("x_grid must be even and at least 2, got {}", cfg.x_grid)));
    }
    if cfg.h_samples == 0 || !(cfg.h_step > 0.0) {
        return Err(NosubsetError::Config("need at least one h sample and a positive breakpoint step".into()));
    }
    let (slo, shi) = cfg.slope_range;
    if !(slo > 0.0 && slo <= 1.0 && shi >= 1.0 && shi.is_finite()) {
        return Err(NosubsetError::Config(format!("slope range ({slo}, {shi}) must bracket 1 and be positive")));
    }
    let base = cfg.base.clone().unwrap_or_else(|| default_base(sys));
    let jump_target = cfg.jump_target.clone().unwrap_or_else(|| default_target(sys));
    if base.len() != n || jump_target.len() != n {
        return Err(NosubsetError::Config("base and jump target need two coordinates".into()));
    }
    let conditions = eps_conditions(sys, &base, &jump_target);
    let eps = match cfg.eps {
        EpsChoice::Auto => conditions.auto(),
        EpsChoice::Value(e) => e,
    };
    conditions.check(eps)?;

    let g: SampledPseudotrajectory<ChartPoint> = pseudo_jump(
        sys,
        &ChartPoint::p(base.clone()),
        &ChartPoint::p(jump_target.clone()),
        cfg.t_jump,
        cfg.t_lead,
        cfg.dt,
        cfg.t_back,
        cfg.t_tail,
    )?;
    let step = g.dt / PROBE_REFINE as f64;
    let times = probe_times(g.t0, g.t_end(), step);
    let mut gvals = vec![0.0; times.len() * n];
    g.embed_times(sys, &times, &mut gvals)?;
    let origin = times.iter().position(|t| t.abs() < 1e-9).ok_or_else(|| NosubsetError::Config("0 is not a probe time".into()))?;
    let t_arrival = cfg.t_jump + cfg.t_lead;
    let arrival = times
        .iter()
        .position(|t| (t - t_arrival).abs() < 1e-9)
        .ok_or_else(|| NosubsetError::Config("arrival time is not a probe time".into()))?;
    let jump_size = {
        let before = sys.evolve(cfg.t_jump, &ChartPoint::p(base.clone())).map_err(PseudoError::from)?;
        let after = sys.evolve(-cfg.t_lead, &ChartPoint::p(jump_target.clone())).map_err(PseudoError::from)?;
        sys.distance(&before, &after)
    };

    let lo = (g.t0 / cfg.h_step).floor() as i64 - 1;
    let hi = (g.t_end() / cfg.h_step).ceil() as i64 + 1;
    let hnodes: Vec<f64> = (lo..=hi).map(|k| k as f64 * cfg.h_step).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let hs: Vec<PiecewiseLinearRepar> = (0..cfg.h_samples)
        .map(|j| if j == 0 { PiecewiseLinearRepar::identity() } else { sample_h(&mut rng, &hnodes, (slo, shi)) })
        .collect();
    let nt = times.len();
    let mut hv = vec![0.0; hs.len() * nt];
    for (j, h) in hs.iter().enumerate() {
        h.eval_sorted_into(&times, &mut hv[j * nt..(j + 1) * nt]);
    }
    let scan = Scan { sys, eps, times, gvals, hv, origin, arrival };

    let half = cfg.x_grid / 2;
    let spacing = eps / half as f64;
    let sp = sys.dim_sp();
    let points: Vec<(Vec<f64>, bool)> = (0..cfg.x_grid)
        .flat_map(|i| (0..cfg.x_grid).map(move |j| (i, j)))
        .map(|(i, j)| {
            let x = vec![
                base[0] + (i as f64 - half as f64) * spacing,
                base[1] + (j as f64 - half as f64) * spacing,
            ];
            // the stable axis of p carries the connection
            let on_wu = x[sp] == 0.0;
            (x, on_wu)
        })
        .collect();

    type PointOut = (PointRecord, Option<usize>);
    let results: Vec<PointOut> = points
        .par_iter()
        .map(|(x, on_wu)| {
            let start = ChartPoint::p(x.clone());
            let orbit = match sys.orbit(&start) {
                Ok(o) => o,
                Err(_) => {
                    // outside the charts: fails at t = 0 for every h
                    let rec = PointRecord { x: x.clone(), on_wu: *on_wu, branch: Branch::Other, t_min: 0.0, t_max: 0.0 };
                    return (rec, None);
                }
            };
            let mut cached = None;
            let (mut tmin, mut tmax) = (f64::INFINITY, f64::NEG_INFINITY);
            let mut all_back = true;
            let mut all_arrival = true;
            for j in 0..hs.len() {
                match scan.failure(&orbit, *on_wu, j, cached) {
                    Some(k) => {
                        cached = Some(k);
                        let t = scan.times[k];
                        tmin = tmin.min(t);
                        tmax = tmax.max(t);
                        all_back &= k < scan.origin;
                        all_arrival &= k == scan.arrival;
                    }
                    None => {
                        let rec = PointRecord { x: x.clone(), on_wu: *on_wu, branch: Branch::Other, t_min: tmin, t_max: tmax };
                        return (rec, Some(j));
                    }
                }
            }
            let branch = if all_back {
                Branch::Backward
            } else if all_arrival {
                Branch::Arrival
            } else {
                Branch::Other
            };
            (PointRecord { x: x.clone(), on_wu: *on_wu, branch, t_min: tmin, t_max: tmax }, None)
        })
        .collect();

    let witness = results.iter().find_map(|(rec, w)| {
        w.map(|j| Witness { x: rec.x.clone(), h_index: j, h: hs[j].clone() })
    });
    let count = |b: Branch| results.iter().filter(|(r, _)| r.branch == b).count();
    let dichotomy_holds = witness.is_none()
        && results.iter().all(|(r, _)| {
            if r.on_wu {
                r.branch == Branch::Arrival
            } else {
                r.branch == Branch::Backward
            }
        });
    let latest_backward_failure = results
        .iter()
        .filter(|(r, _)| !r.on_wu && r.branch == Branch::Backward)
        .map(|(r, _)| r.t_max)
        .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.max(t))));
    Ok(NosubsetReport {
        feasible: witness.is_some(),
        eps,
        conditions,
        base,
        jump_target,
        jump_size,
        t_arrival,
        grid_points: results.len(),
        grid_spacing: spacing,
        h_samples: hs.len(),
        probe_step: step,
        pairs: (results.len() * hs.len()) as u64,
        on_wu_points: results.iter().filter(|(r, _)| r.on_wu).count(),
        backward_points: count(Branch::Backward),
        arrival_points: count(Branch::Arrival),
        other_points: count(Branch::Other),
        dichotomy_holds,
        latest_backward_failure,
        witness,
        points: if cfg.keep_points { results.into_iter().map(|(r, _)| r).collect() } else { Vec::new() },
    })
}
