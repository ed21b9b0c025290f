//! Window/threshold certificates for expanding planar spirals and lines.
//!
//! For `ẋ = D x` with `D = [[a, -b], [b, a]]` (or `ẋ = a x` on the line) and
//! `a > 0`, a certificate `(T, d0)` claims: whenever `d < d0`, `|x0| >= d`,
//! `h ∈ Rep(L d)` and `|φ(t, x0) - φ(h(t), x1)| < L d` on `[0, T]`, the
//! directions of `x0` and `x1` differ by less than `eps` (the relative
//! distance, on the line). Certificates are checked by an adversarial search.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::repar::{PiecewiseLinearRepar, MIN_SLOPE};

/// Segments of adversarial reparametrizations on `[0, T]`.
pub const H_SEGMENTS: usize = 8;
/// Trials refined by local search after the random phase.
pub const REFINE_TOP: usize = 200;
/// Doublings of `T` tried by [`cert_search`].
pub const MAX_ESCALATIONS: usize = 8;
/// Relative slack on the residual bound absorbing grid effects.
pub const RESIDUAL_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SpiralKind {
    Spiral2d,
    Line1d,
}

impl SpiralKind {
    pub fn dim(self) -> usize {
        match self {
            SpiralKind::Spiral2d => 2,
            SpiralKind::Line1d => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpiralError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no certificate after {escalations} escalations; worst deviation {}", worst.deviation)]
    CertificationFailed { escalations: usize, worst: Box<ViolationRecord> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpiralParams {
    pub kind: SpiralKind,
    pub a: f64,
    /// Angular rate; ignored on the line.
    pub b: f64,
    pub eps: f64,
    #[serde(rename = "L")]
    pub l: f64,
}

impl SpiralParams {
    pub fn spiral(a: f64, b: f64, eps: f64, l: f64) -> Self {
        Self { kind: SpiralKind::Spiral2d, a, b, eps, l }
    }

    pub fn line(a: f64, eps: f64, l: f64) -> Self {
        Self { kind: SpiralKind::Line1d, a, b: 0.0, eps, l }
    }

    pub fn validate(&self) -> Result<(), SpiralError> {
        let bad = |m: String| Err(SpiralError::InvalidParameter(m));
        if !(self.a > 0.0 && self.a.is_finite()) {
            return bad(format!("expansion rate a = {} must be positive", self.a));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return bad(format!("eps = {} must be positive", self.eps));
        }
        if !(self.l > 0.0 && self.l.is_finite()) {
            return bad(format!("L = {} must be positive", self.l));
        }
        if self.kind == SpiralKind::Spiral2d && !(self.b != 0.0 && self.b.is_finite()) {
            return bad(format!("angular rate b = {} must be nonzero", self.b));
        }
        Ok(())
    }

    fn rot(&self) -> f64 {
        match self.kind {
            SpiralKind::Spiral2d => self.b,
            SpiralKind::Line1d => 0.0,
        }
    }
}

/// A hypothesis-satisfying adversarial trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationRecord {
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub h: PiecewiseLinearRepar,
    pub d: f64,
    pub deviation: f64,
    /// Grid maximum of `|φ(t, x0) - φ(h(t), x1)|` over `[0, T]`.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpiralCertificate {
    pub kind: SpiralKind,
    pub a: f64,
    pub b: f64,
    pub eps: f64,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub d0: f64,
    pub trials: usize,
    /// Largest deviation among admissible trials.
    pub worst: f64,
    pub seed: u64,
    pub escalations: usize,
    /// Trials satisfying every hypothesis.
    pub admissible: usize,
    pub worst_trial: Option<ViolationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub pass: bool,
    pub admissible: usize,
    /// Largest deviation among admissible trials, if any.
    pub worst: Option<ViolationRecord>,
}

impl Validation {
    pub fn worst_deviation(&self) -> f64 {
        self.worst.as_ref().map_or(0.0, |w| w.deviation)
    }
}

/// Closed-form candidate: `T = ln(8L / min(eps, 1)) / a + 1` and
/// `d0 = min(eps / (8 (|b| + 1) L T), 0.1)`, with `b = 0` on the line.
pub fn cert_estimate(p: &SpiralParams) -> Result<(f64, f64), SpiralError> {
    p.validate()?;
    let t = (8.0 * p.l / p.eps.min(1.0)).ln() / p.a + 1.0;
    let t = t.max(1.0);
    let d0 = (p.eps / (8.0 * (p.rot().abs() + 1.0) * p.l * t)).min(0.1);
    Ok((t, d0))
}

/// Arc distance between the directions of two nonzero plane vectors, in `[0, π]`.
pub fn arc_distance(x: &[f64], y: &[f64]) -> f64 {
    let cross = x[0] * y[1] - x[1] * y[0];
    let dot = x[0] * y[0] + x[1] * y[1];
    cross.atan2(dot).abs()
}

#[derive(Debug, Clone, PartialEq)]
struct Trial {
    d: f64,
    x0: [f64; 2],
    x1: [f64; 2],
    slopes: [f64; H_SEGMENTS],
}

/// Residual grid and shared tables for one candidate `(T, d0)`.
struct Checker {
    p: SpiralParams,
    t: f64,
    d0: f64,
    times: Vec<f64>,
    /// `e^{a t_k}`, `cos(b t_k)`, `sin(b t_k)`.
    ex: Vec<f64>,
    co: Vec<f64>,
    si: Vec<f64>,
    knots: [f64; H_SEGMENTS + 1],
}

impl Checker {
    fn new(p: SpiralParams, t: f64, d0: f64) -> Self {
        let step = d0 / 4.0;
        let n = (t / step - 1e-9).ceil().max(1.0) as usize;
        let times: Vec<f64> = (0..=n).map(|k| (k as f64 * step).min(t)).collect();
        let b = p.rot();
        let ex = times.iter().map(|s| (p.a * s).exp()).collect();
        let co = times.iter().map(|s| (b * s).cos()).collect();
        let si = times.iter().map(|s| (b * s).sin()).collect();
        let mut knots = [0.0; H_SEGMENTS + 1];
        for (j, k) in knots.iter_mut().enumerate() {
            *k = t * j as f64 / H_SEGMENTS as f64;
        }
        knots[H_SEGMENTS] = t;
        Self { p, t, d0, times, ex, co, si, knots }
    }

    fn class(&self, d: f64) -> f64 {
        self.p.l * d
    }

    fn slope_box(&self, d: f64) -> (f64, f64) {
        let a = self.class(d);
        ((1.0 - a).max(MIN_SLOPE), 1.0 + a)
    }

    fn h_values(&self, slopes: &[f64; H_SEGMENTS]) -> [f64; H_SEGMENTS + 1] {
        let mut v = [0.0; H_SEGMENTS + 1];
        for j in 0..H_SEGMENTS {
            v[j + 1] = v[j] + slopes[j] * (self.knots[j + 1] - self.knots[j]);
        }
        v
    }

    fn repar(&self, slopes: &[f64; H_SEGMENTS]) -> PiecewiseLinearRepar {
        PiecewiseLinearRepar::on_grid(&self.knots, slopes).expect("increasing knots and positive slopes")
    }

    /// `φ(s, x)` for the flow.
    fn flow(&self, s: f64, x: [f64; 2]) -> [f64; 2] {
        let e = (self.p.a * s).exp();
        let (sn, cs) = (self.p.rot() * s).sin_cos();
        [e * (cs * x[0] - sn * x[1]), e * (sn * x[0] + cs * x[1])]
    }

    /// Grid residual, or `None` as soon as it reaches `bound`.
    fn residual(&self, tr: &Trial, bound: f64) -> Option<f64> {
        let hv = self.h_values(&tr.slopes);
        let (a, b) = (self.p.a, self.p.rot());
        let mut worst = 0.0f64;
        let mut seg = 0usize;
        // running value of φ(h(t_k), x1) by a multiplicative recurrence,
        // resynchronised at every segment start
        let mut z = self.flow(0.0, tr.x1);
        let mut w = [1.0, 0.0];
        let mut fresh = true;
        for (k, &t) in self.times.iter().enumerate() {
            while seg + 1 < H_SEGMENTS && t >= self.knots[seg + 1] {
                seg += 1;
                fresh = true;
            }
            let s = tr.slopes[seg];
            if fresh || k + 1 == self.times.len() {
                let h = hv[seg] + s * (t - self.knots[seg]);
                z = self.flow(h, tr.x1);
                let dt = self.times.get(1).copied().unwrap_or(0.0) - self.times[0];
                let e = (a * s * dt).exp();
                let (sn, cs) = (b * s * dt).sin_cos();
                w = [e * cs, e * sn];
                fresh = false;
            } else {
                z = [w[0] * z[0] - w[1] * z[1], w[1] * z[0] + w[0] * z[1]];
            }
            let (e, c, sn) = (self.ex[k], self.co[k], self.si[k]);
            let y0 = [e * (c * tr.x0[0] - sn * tr.x0[1]), e * (sn * tr.x0[0] + c * tr.x0[1])];
            let r = ((y0[0] - z[0]).powi(2) + (y0[1] - z[1]).powi(2)).sqrt();
            if r > worst {
                worst = r;
                if worst >= bound {
                    return None;
                }
            }
        }
        Some(worst)
    }

    fn deviation(&self, tr: &Trial) -> f64 {
        match self.p.kind {
            SpiralKind::Spiral2d => arc_distance(&tr.x0, &tr.x1),
            SpiralKind::Line1d => (tr.x1[0] - tr.x0[0]).abs() / tr.x0[0].abs(),
        }
    }

    /// Residual if every hypothesis holds.
    fn admissible(&self, tr: &Trial) -> Option<f64> {
        if !(tr.d > 0.0 && tr.d < self.d0) {
            return None;
        }
        let norm0 = (tr.x0[0] * tr.x0[0] + tr.x0[1] * tr.x0[1]).sqrt();
        if norm0 < tr.d {
            return None;
        }
        let (lo, hi) = self.slope_box(tr.d);
        if tr.slopes.iter().any(|&s| !(s >= lo && s <= hi)) {
            return None;
        }
        let bound = self.class(tr.d) * (1.0 - RESIDUAL_MARGIN);
        self.residual(tr, bound)
    }

    fn draw(&self, seed: u64, index: usize) -> Trial {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        let line = self.p.kind == SpiralKind::Line1d;
        let d = self.d0 * (0.5 + 0.5 * rng.gen::<f64>());
        let r0 = d * (1.0 + 2.0 * rng.gen::<f64>());
        let x0 = if line {
            [if rng.gen::<bool>() { r0 } else { -r0 }, 0.0]
        } else {
            let th = rng.gen_range(0.0..std::f64::consts::TAU);
            [r0 * th.cos(), r0 * th.sin()]
        };
        let (lo, hi) = self.slope_box(d);
        let mut slopes = [1.0; H_SEGMENTS];
        match rng.gen_range(0..4) {
            0 => slopes.iter_mut().for_each(|s| *s = hi),
            1 => slopes.iter_mut().for_each(|s| *s = lo),
            2 => {
                // distorted early, faithful late
                let cut = rng.gen_range(1..H_SEGMENTS);
                let v = if rng.gen::<bool>() { hi } else { lo };
                slopes.iter_mut().take(cut).for_each(|s| *s = v);
            }
            _ => slopes.iter_mut().for_each(|s| *s = rng.gen_range(lo..=hi)),
        }
        let h_t = self.h_values(&slopes)[H_SEGMENTS];
        let base = self.flow(self.t - h_t, x0);
        let m = self.class(d) * (-self.p.a * h_t).exp() * rng.gen::<f64>().powf(0.25) * 1.05;
        let dir = if line {
            [if rng.gen::<bool>() { 1.0 } else { -1.0 }, 0.0]
        } else {
            let nb = (base[0] * base[0] + base[1] * base[1]).sqrt();
            let u = [base[0] / nb, base[1] / nb];
            match rng.gen_range(0..4) {
                0 => [-u[0], -u[1]],
                1 => [-u[1], u[0]],
                2 => [u[1], -u[0]],
                _ => {
                    let th = rng.gen_range(0.0..std::f64::consts::TAU);
                    [th.cos(), th.sin()]
                }
            }
        };
        let x1 = [base[0] + m * dir[0], base[1] + m * dir[1]];
        Trial { d, x0, x1, slopes }
    }

    /// Coordinate ascent on the deviation over `x1` and the slopes, keeping
    /// every hypothesis.
    fn refine(&self, mut tr: Trial) -> Trial {
        let dim = self.p.kind.dim();
        let mut dev = self.deviation(&tr);
        let mut xs = 0.1 * self.class(tr.d);
        let mut ss = 0.25 * self.class(tr.d);
        for _ in 0..40 {
            let mut moved = false;
            for c in 0..dim + H_SEGMENTS {
                for sign in [1.0, -1.0] {
                    let mut cand = tr.clone();
                    if c < dim {
                        cand.x1[c] += sign * xs;
                    } else {
                        cand.slopes[c - dim] += sign * ss;
                    }
                    if self.admissible(&cand).is_some() {
                        let dv = self.deviation(&cand);
                        if dv > dev {
                            tr = cand;
                            dev = dv;
                            moved = true;
                            break;
                        }
                    }
                }
            }
            if !moved {
                xs *= 0.5;
                ss *= 0.5;
            }
        }
        tr
    }

    fn record(&self, tr: &Trial, residual: f64) -> ViolationRecord {
        let dim = self.p.kind.dim();
        ViolationRecord {
            x0: tr.x0[..dim].to_vec(),
            x1: tr.x1[..dim].to_vec(),
            h: self.repar(&tr.slopes),
            d: tr.d,
            deviation: self.deviation(tr),
            residual,
        }
    }
}

/// One trial evaluated against the window `(T, d0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialCheck {
    pub admissible: bool,
    /// Grid residual over `[0, T]`, step `d0/4`.
    pub residual: f64,
    pub deviation: f64,
}

/// Evaluate `(x0, x1, h, d)` where `h` has the given slopes on the
/// [`H_SEGMENTS`] equal segments of `[0, T]`. Points are planar; the line
/// uses the first coordinate only.
pub fn check_trial(
    p: &SpiralParams,
    t: f64,
    d0: f64,
    x0: [f64; 2],
    x1: [f64; 2],
    slopes: [f64; H_SEGMENTS],
    d: f64,
) -> Result<TrialCheck, SpiralError> {
    p.validate()?;
    if !(t > 0.0 && t.is_finite() && d0 > 0.0 && d0.is_finite()) {
        return Err(SpiralError::InvalidParameter(format!("T = {t} and d0 = {d0} must be positive")));
    }
    let ck = Checker::new(*p, t, d0);
    let tr = Trial { d, x0, x1, slopes };
    let residual = ck.residual(&tr, f64::INFINITY).unwrap_or(f64::INFINITY);
    Ok(TrialCheck { admissible: ck.admissible(&tr).is_some(), residual, deviation: ck.deviation(&tr) })
}

/// Adversarial check of a candidate `(T, d0)`.
///
/// Random trials aim `x1` at the orbit of `x0` shifted by `h(T) - T` and add
/// a perturbation at the edge of the residual budget; the most deviating
/// admissible trials are then pushed further by coordinate ascent. Every
/// counted trial satisfies the hypotheses on the residual grid of step `d0/4`.
pub fn cert_validate(p: &SpiralParams, t: f64, d0: f64, trials: usize, seed: u64) -> Result<Validation, SpiralError> {
    p.validate()?;
    if !(t > 0.0 && t.is_finite() && d0 > 0.0 && d0.is_finite()) {
        return Err(SpiralError::InvalidParameter(format!("T = {t} and d0 = {d0} must be positive")));
    }
    let ck = Checker::new(*p, t, d0);
    let scored: Vec<Option<f64>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let tr = ck.draw(seed, i);
            ck.admissible(&tr).map(|_| ck.deviation(&tr))
        })
        .collect();
    let admissible = scored.iter().filter(|s| s.is_some()).count();
    let mut ranked: Vec<(f64, usize)> = scored.iter().enumerate().filter_map(|(i, s)| s.map(|v| (v, i))).collect();
    ranked.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    ranked.truncate(REFINE_TOP);
    let refined: Vec<(f64, usize, Trial, f64)> = ranked
        .par_iter()
        .map(|&(_, i)| {
            let tr = ck.refine(ck.draw(seed, i));
            let r = ck.admissible(&tr).expect("refinement keeps admissibility");
            (ck.deviation(&tr), i, tr, r)
        })
        .collect();
    let worst = refined
        .into_iter()
        .max_by(|x, y| x.0.total_cmp(&y.0).then(y.1.cmp(&x.1)))
        .map(|(_, _, tr, r)| ck.record(&tr, r));
    let pass = worst.as_ref().map_or(true, |w| w.deviation < p.eps);
    Ok(Validation { pass, admissible, worst })
}

/// Start from [`cert_estimate`]; on failure double `T` and halve `d0`, up to
/// [`MAX_ESCALATIONS`] times.
pub fn cert_search(p: &SpiralParams, trials: usize, seed: u64) -> Result<SpiralCertificate, SpiralError> {
    let (mut t, mut d0) = cert_estimate(p)?;
    let mut last = None;
    for escalations in 0..=MAX_ESCALATIONS {
        let v = cert_validate(p, t, d0, trials, seed)?;
        if v.pass {
            return Ok(SpiralCertificate {
                kind: p.kind,
                a: p.a,
                b: p.rot(),
                eps: p.eps,
                l: p.l,
                t,
                d0,
                trials,
                worst: v.worst_deviation(),
                seed,
                escalations,
                admissible: v.admissible,
                worst_trial: v.worst,
            });
        }
        last = v.worst;
        t *= 2.0;
        d0 *= 0.5;
    }
    Err(SpiralError::CertificationFailed {
        escalations: MAX_ESCALATIONS,
        worst: Box::new(last.expect("a failing validation has a worst trial")),
    })
}
