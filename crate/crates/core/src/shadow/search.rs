//! Seeded multi-start search for a shadowing orbit and reparametrization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::nelder_mead::{nelder_mead, NmOptions};
use super::{Parametrized, ProbeTarget, RESIDUAL_MAX};
use crate::pseudo::{ball_sample, PseudoError, SampledPseudotrajectory};
use crate::repar::{PiecewiseLinearRepar, MIN_SLOPE};

/// Search settings. `budget` counts residual evaluations per start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowConfig {
    pub class_a: f64,
    pub starts: usize,
    pub budget: usize,
    pub seed: u64,
    /// Defaults to the whole pseudotrajectory.
    #[serde(default)]
    pub window: Option<(f64, f64)>,
    /// Stop a start as soon as its residual is at most this value.
    #[serde(default)]
    pub target: Option<f64>,
}

impl ShadowConfig {
    pub fn new(class_a: f64, starts: usize, budget: usize, seed: u64) -> Self {
        Self { class_a, starts, budget, seed, window: None, target: None }
    }
}

/// A caller-supplied starting candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchStart {
    pub p: Vec<f64>,
    /// Slopes on the search grid; projected into the class box. Identity when absent.
    pub slopes: Option<Vec<f64>>,
}

impl SearchStart {
    pub fn point(p: Vec<f64>) -> Self {
        Self { p, slopes: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowingResult {
    /// Probe-grid residual of `(p_star, h_star)`.
    pub best_eps: f64,
    /// Start parameter; a `Q` section offset for glued systems.
    pub p_star: Vec<f64>,
    pub h_star: PiecewiseLinearRepar,
    pub class_a: f64,
    /// The target, when the best residual meets it.
    pub feasible_at: Option<f64>,
    pub starts: usize,
    pub budget: usize,
    pub seed: u64,
    /// Index of the start that produced the best candidate.
    pub best_start: usize,
    pub evals: usize,
    pub window: (f64, f64),
}

impl ShadowingResult {
    /// Search-grid slopes of `h_star`, usable as a warm start.
    pub fn as_start(&self) -> SearchStart {
        SearchStart { p: self.p_star.clone(), slopes: Some(self.h_star.slopes().to_vec()) }
    }
}

/// Breakpoints for `h`: node times inside `window`, with 0 added if missing.
pub fn repar_grid<S: Clone + Send + Sync>(g: &SampledPseudotrajectory<S>, window: (f64, f64)) -> Vec<f64> {
    let tol = 1e-9 * g.dt;
    let mut grid: Vec<f64> = g
        .node_times()
        .into_iter()
        .filter(|&t| t >= window.0 - tol && t <= window.1 + tol)
        .map(|t| if t.abs() < tol { 0.0 } else { t })
        .collect();
    if !grid.contains(&0.0) {
        grid.push(0.0);
        grid.sort_by(f64::total_cmp);
    }
    grid
}

struct Problem<'a, F: Parametrized> {
    flow: &'a F,
    target: ProbeTarget,
    grid: Vec<f64>,
    np: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl<F: Parametrized> Problem<'_, F> {
    fn nslopes(&self) -> usize {
        if self.grid.len() == 1 {
            1
        } else {
            self.grid.len() - 1
        }
    }

    fn repar(&self, slopes: &[f64]) -> PiecewiseLinearRepar {
        PiecewiseLinearRepar::on_grid(&self.grid, slopes).expect("slopes inside the class box")
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let (p, s) = x.split_at(self.np);
        if p.iter().any(|v| !v.is_finite()) {
            return RESIDUAL_MAX;
        }
        let h = self.repar(s);
        self.target.residual(self.flow, &self.flow.state_of(p), &h, 0.0)
    }

    fn clamp_slopes(&self, s: &[f64]) -> Vec<f64> {
        s.iter().zip(&self.lo[self.np..]).zip(&self.hi[self.np..]).map(|((v, l), h)| v.clamp(*l, *h)).collect()
    }
}

struct Outcome {
    f: f64,
    x: Vec<f64>,
    evals: usize,
}

fn run_start<F: Parametrized>(pb: &Problem<'_, F>, x0: Vec<f64>, budget: usize, target: Option<f64>) -> Outcome {
    let np = pb.np;
    let ns = pb.nslopes();
    let hit = |f: f64| target.is_some_and(|t| f <= t);
    let mut best = Outcome { f: pb.eval(&x0), x: x0, evals: 1 };
    let left = |o: &Outcome| budget.saturating_sub(o.evals);
    let width = pb.hi[np] - pb.lo[np];
    let base_p = if best.f < RESIDUAL_MAX && best.f > 0.0 { best.f } else { 1e-3 };

    // stage 1: start point only
    if np > 0 && ns > 0 && width > 0.0 && !hit(best.f) {
        let slopes = best.x[np..].to_vec();
        let stage = (budget / 4).min(left(&best));
        if stage > np + 1 {
            let r = nelder_mead(
                |p: &[f64]| {
                    let mut x = p.to_vec();
                    x.extend_from_slice(&slopes);
                    pb.eval(&x)
                },
                &best.x[..np],
                &vec![base_p; np],
                &pb.lo[..np],
                &pb.hi[..np],
                NmOptions { max_evals: stage, ..Default::default() },
            );
            best.evals += r.evals;
            if r.f < best.f {
                best.f = r.f;
                best.x[..np].copy_from_slice(&r.x);
            }
        }
    }

    // stage 2: joint, restarting from the incumbent with shrinking steps
    let free = if width > 0.0 { best.x.len() } else { np };
    let mut scale = 1.0;
    let mut stalls = 0;
    while free > 0 && left(&best) > free + 1 && !hit(best.f) && stalls < 3 {
        let sp = if best.f < RESIDUAL_MAX && best.f > 0.0 { best.f } else { base_p };
        let mut step = vec![sp * scale; np];
        step.extend(std::iter::repeat(0.5 * width * scale).take(free - np));
        let before = best.f;
        let fixed = best.x[free..].to_vec();
        let r = nelder_mead(
            |x: &[f64]| {
                let mut full = x.to_vec();
                full.extend_from_slice(&fixed);
                pb.eval(&full)
            },
            &best.x[..free],
            &step,
            &pb.lo[..free],
            &pb.hi[..free],
            NmOptions { max_evals: left(&best), ..Default::default() },
        );
        best.evals += r.evals;
        if r.f < best.f {
            best.f = r.f;
            best.x[..free].copy_from_slice(&r.x);
        }
        if best.f < before * (1.0 - 1e-9) {
            stalls = 0;
        } else {
            stalls += 1;
            scale *= 0.1;
        }
    }
    best
}

/// Multi-start derivative-free minimization of the shadowing residual over
/// start points and piecewise-linear reparametrizations in `Rep(class_a)`.
///
/// Starts: `g(0)`, the left limit `g(0-)`, the caller's extras, midpoints of
/// those, then random draws around them. Start `k` draws from a stream keyed
/// by `(seed, k)`; the result does not depend on the thread count.
pub fn shadow_search<F: Parametrized>(
    flow: &F,
    g: &SampledPseudotrajectory<F::State>,
    cfg: &ShadowConfig,
    extra_starts: &[SearchStart],
) -> Result<ShadowingResult, PseudoError> {
    let window = cfg.window.unwrap_or((g.t0, g.t_end()));
    if !(window.0 <= 0.0 && window.1 >= 0.0) {
        return Err(PseudoError::OutOfWindow { t: 0.0, t0: window.0, t1: window.1 });
    }
    let target = ProbeTarget::new(flow, g, window)?;
    let grid = repar_grid(g, window);
    let np = flow.param_dim();
    let ns = if grid.len() == 1 { 1 } else { grid.len() - 1 };
    let a = cfg.class_a.max(0.0);
    let mut lo = vec![f64::NEG_INFINITY; np];
    let mut hi = vec![f64::INFINITY; np];
    lo.extend(std::iter::repeat((1.0 - a).max(MIN_SLOPE)).take(ns));
    hi.extend(std::iter::repeat(1.0 + a).take(ns));
    let pb = Problem { flow, target, grid, np, lo, hi };

    let ident = vec![1.0; ns];
    let mut seeds: Vec<Vec<f64>> = Vec::new();
    let mk = |p: Vec<f64>, s: Option<&[f64]>| {
        let mut x = p;
        x.extend(pb.clamp_slopes(s.unwrap_or(&ident)));
        x
    };
    let at0 = g.eval(flow, 0.0)?;
    if let Some(p) = flow.param_of(&at0) {
        seeds.push(mk(p, None));
    }
    let (i, off) = g.locate(0.0)?;
    if off == 0.0 && i > 0 {
        if let Ok(y) = flow.evolve(g.time(i) - g.time(i - 1), &g.nodes[i - 1]) {
            if let Some(p) = flow.param_of(&y) {
                seeds.push(mk(p, None));
            }
        }
    }
    for s in extra_starts {
        if s.p.len() == np {
            seeds.push(mk(s.p.clone(), s.slopes.as_deref().filter(|v| v.len() == ns)));
        }
    }
    if seeds.is_empty() {
        seeds.push(mk(vec![0.0; np], None));
    }
    let base = seeds.len();
    for j in 0..base {
        for k in j + 1..base {
            let mid: Vec<f64> = seeds[j].iter().zip(&seeds[k]).map(|(u, v)| 0.5 * (u + v)).collect();
            seeds.push(mid);
        }
    }
    let spread: Vec<f64> = seeds[..base]
        .iter()
        .map(|x| {
            let f = pb.eval(x);
            if f < RESIDUAL_MAX && f > 0.0 {
                f
            } else {
                1e-3
            }
        })
        .collect();

    let starts = cfg.starts.max(1);
    let budget = cfg.budget.max(1);
    let runs: Vec<(usize, Outcome)> = (0..starts)
        .into_par_iter()
        .map(|k| {
            let x0 = if k < seeds.len() {
                seeds[k].clone()
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(k as u64);
                let j = k % base;
                let dir = ball_sample(&mut rng, np.max(1));
                let mut x: Vec<f64> = seeds[j][..np].iter().zip(&dir).map(|(v, e)| v + 2.0 * spread[j] * e).collect();
                for s in 0..ns {
                    x.push(if pb.hi[np + s] > pb.lo[np + s] { rng.gen_range(pb.lo[np + s]..=pb.hi[np + s]) } else { 1.0 });
                }
                x
            };
            (k, run_start(&pb, x0, budget, cfg.target))
        })
        .collect();
    let evals = runs.iter().map(|(_, o)| o.evals).sum();
    let (best_start, best) = runs
        .into_iter()
        .min_by(|a, b| a.1.f.total_cmp(&b.1.f).then(a.0.cmp(&b.0)))
        .expect("at least one start");
    let h_star = pb.repar(&best.x[np..]);
    Ok(ShadowingResult {
        best_eps: best.f,
        p_star: best.x[..np].to_vec(),
        h_star,
        class_a: cfg.class_a,
        feasible_at: cfg.target.filter(|&t| best.f <= t),
        starts,
        budget,
        seed: cfg.seed,
        best_start,
        evals,
        window,
    })
}
