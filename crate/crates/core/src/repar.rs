//! Monotone piecewise-linear reparametrizations anchored at the origin.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slopes drawn by the sampler are clipped from below at this value.
pub const MIN_SLOPE: f64 = 1e-6;

/// Breakpoints closer than this are merged by [`compose`] and [`invert`].
pub const MERGE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReparError {
    #[error("breakpoints must be finite and strictly increasing")]
    NotIncreasing,
    #[error("breakpoints must contain 0")]
    MissingOrigin,
    #[error("expected {expected} slopes, got {got}")]
    SlopeCount { expected: usize, got: usize },
    #[error("slope {0} is not a positive finite number")]
    BadSlope(f64),
    #[error("invalid sampler parameters: {0}")]
    BadSampler(&'static str),
}

/// An increasing piecewise-linear homeomorphism `h` of the real line with `h(0) = 0`.
///
/// `slopes[k]` is the slope on `[breakpoints[k], breakpoints[k+1]]`; the first
/// and last slopes continue to `-inf` and `+inf`. A single breakpoint (which
/// must then be 0) carries one slope used on both sides.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiecewiseLinearRepar {
    breakpoints: Vec<f64>,
    slopes: Vec<f64>,
    #[serde(skip)]
    values: Vec<f64>,
}

impl<'de> Deserialize<'de> for PiecewiseLinearRepar {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            breakpoints: Vec<f64>,
            slopes: Vec<f64>,
        }
        let raw = Raw::deserialize(d)?;
        PiecewiseLinearRepar::new(raw.breakpoints, raw.slopes).map_err(serde::de::Error::custom)
    }
}

impl PiecewiseLinearRepar {
    pub fn new(breakpoints: Vec<f64>, slopes: Vec<f64>) -> Result<Self, ReparError> {
        if breakpoints.is_empty() || breakpoints.iter().any(|b| !b.is_finite()) {
            return Err(ReparError::NotIncreasing);
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ReparError::NotIncreasing);
        }
        let expected = (breakpoints.len() - 1).max(1);
        if slopes.len() != expected {
            return Err(ReparError::SlopeCount { expected, got: slopes.len() });
        }
        if let Some(&s) = slopes.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
            return Err(ReparError::BadSlope(s));
        }
        let zero = breakpoints.iter().position(|&b| b == 0.0).ok_or(ReparError::MissingOrigin)?;
        let mut values = vec![0.0; breakpoints.len()];
        for k in zero + 1..breakpoints.len() {
            values[k] = values[k - 1] + slopes[k - 1] * (breakpoints[k] - breakpoints[k - 1]);
        }
        for k in (0..zero).rev() {
            values[k] = values[k + 1] - slopes[k] * (breakpoints[k + 1] - breakpoints[k]);
        }
        Ok(Self { breakpoints, slopes, values })
    }

    pub fn identity() -> Self {
        Self::linear(1.0).expect("unit slope")
    }

    /// `h(t) = slope * t`.
    pub fn linear(slope: f64) -> Result<Self, ReparError> {
        Self::new(vec![0.0], vec![slope])
    }

    /// Build from knots with explicit extension slopes, padding knots where the
    /// extension slope differs from the adjacent segment slope.
    fn from_knots(knots: Vec<f64>, seg: Vec<f64>, left: f64, right: f64) -> Result<Self, ReparError> {
        if knots.len() == 1 && left == right {
            return Self::new(knots, vec![left]);
        }
        let mut b = Vec::with_capacity(knots.len() + 2);
        let mut s = Vec::with_capacity(seg.len() + 2);
        let first = knots[0];
        let last = *knots.last().expect("nonempty");
        if seg.first().map_or(true, |&s0| s0 != left) {
            b.push(first - 1.0);
            s.push(left);
        }
        b.extend_from_slice(&knots);
        s.extend_from_slice(&seg);
        if seg.last().map_or(true, |&sl| sl != right) {
            b.push(last + 1.0);
            s.push(right);
        }
        Self::new(b, s)
    }

    /// Slopes on the given node grid; `nodes` must contain 0. Left and right
    /// extensions reuse the outer slopes.
    pub fn on_grid(nodes: &[f64], slopes: &[f64]) -> Result<Self, ReparError> {
        Self::new(nodes.to_vec(), slopes.to_vec())
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    fn left_slope(&self) -> f64 {
        self.slopes[0]
    }

    fn right_slope(&self) -> f64 {
        *self.slopes.last().expect("nonempty")
    }

    /// Slope of the piece containing `t` (right-continuous at breakpoints).
    pub fn slope_at(&self, t: f64) -> f64 {
        let b = &self.breakpoints;
        if b.len() == 1 || t < b[0] {
            return self.left_slope();
        }
        if t >= b[b.len() - 1] {
            return self.right_slope();
        }
        let k = b.partition_point(|&x| x <= t) - 1;
        self.slopes[k]
    }

    /// `h(t)`.
    pub fn eval(&self, t: f64) -> f64 {
        let b = &self.breakpoints;
        let last = b.len() - 1;
        if t <= b[0] {
            return self.values[0] + self.left_slope() * (t - b[0]);
        }
        if t >= b[last] {
            return self.values[last] + self.right_slope() * (t - b[last]);
        }
        let k = b.partition_point(|&x| x <= t) - 1;
        self.values[k] + self.slopes[k] * (t - b[k])
    }

    /// Evaluate at sorted times, walking the breakpoints once.
    pub fn eval_sorted_into(&self, times: &[f64], out: &mut [f64]) {
        let b = &self.breakpoints;
        let last = b.len() - 1;
        let mut k = 0usize;
        for (o, &t) in out.iter_mut().zip(times) {
            *o = if t <= b[0] {
                self.values[0] + self.left_slope() * (t - b[0])
            } else if t >= b[last] {
                self.values[last] + self.right_slope() * (t - b[last])
            } else {
                while b[k + 1] <= t {
                    k += 1;
                }
                self.values[k] + self.slopes[k] * (t - b[k])
            };
        }
    }

    /// Least `a` with `h ∈ Rep(a)`: the largest deviation of a slope from 1.
    pub fn min_class(&self) -> f64 {
        self.slopes.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn in_class(&self, a: f64) -> bool {
        self.min_class() <= a + 1e-12
    }

    pub fn invert(&self) -> Self {
        invert(self)
    }
}

/// `outer ∘ inner`.
pub fn compose(outer: &PiecewiseLinearRepar, inner: &PiecewiseLinearRepar) -> PiecewiseLinearRepar {
    let inv = invert(inner);
    let mut knots: Vec<f64> = inner.breakpoints.clone();
    knots.extend(outer.breakpoints.iter().map(|&b| inv.eval(b)));
    knots.sort_by(f64::total_cmp);
    let knots = dedupe(knots);
    let seg: Vec<f64> = knots
        .windows(2)
        .map(|w| {
            let mid = 0.5 * (w[0] + w[1]);
            outer.slope_at(inner.eval(mid)) * inner.slope_at(mid)
        })
        .collect();
    let left = outer.left_slope() * inner.left_slope();
    let right = outer.right_slope() * inner.right_slope();
    PiecewiseLinearRepar::from_knots(knots, seg, left, right).expect("composition of valid reparametrizations")
}

/// Exact inverse `h^{-1}`.
pub fn invert(h: &PiecewiseLinearRepar) -> PiecewiseLinearRepar {
    let knots = h.values.clone();
    let seg: Vec<f64> = if h.breakpoints.len() == 1 {
        Vec::new()
    } else {
        h.slopes.iter().map(|s| 1.0 / s).collect()
    };
    let left = 1.0 / h.left_slope();
    let right = 1.0 / h.right_slope();
    // Values can collide after roundoff only for absurd slopes; fall back to merging.
    let (knots, seg) = if knots.windows(2).all(|w| w[1] - w[0] > MERGE_TOL) {
        (knots, seg)
    } else {
        let k = dedupe(knots);
        let s = k.windows(2).map(|w| 1.0 / h.slope_at(h_inv_mid(h, w))).collect();
        (k, s)
    };
    PiecewiseLinearRepar::from_knots(knots, seg, left, right).expect("inverse of a valid reparametrization")
}

fn h_inv_mid(h: &PiecewiseLinearRepar, w: &[f64]) -> f64 {
    // Bisection for h^{-1}(mid); only used on the degenerate path.
    let y = 0.5 * (w[0] + w[1]);
    let (mut lo, mut hi) = (-1.0, 1.0);
    while h.eval(lo) > y {
        lo *= 2.0;
    }
    while h.eval(hi) < y {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let m = 0.5 * (lo + hi);
        if h.eval(m) < y {
            lo = m
        } else {
            hi = m
        }
    }
    0.5 * (lo + hi)
}

fn dedupe(sorted: Vec<f64>) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(sorted.len());
    for x in sorted {
        match out.last() {
            Some(&l) if x - l <= MERGE_TOL => {
                // keep an exact 0 if one of the merged points is 0
                if x == 0.0 {
                    *out.last_mut().expect("nonempty") = 0.0;
                }
            }
            _ => out.push(x),
        }
    }
    out
}

/// Random member of `Rep(a)` with breakpoints on multiples of `grid` covering
/// `window` (and 0); slopes uniform in `[1-a, 1+a]`, clipped at [`MIN_SLOPE`].
pub fn rep_random(a: f64, window: (f64, f64), grid: f64, seed: u64) -> Result<PiecewiseLinearRepar, ReparError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rep_random_with(a, window, grid, &mut rng)
}

pub fn rep_random_with<R: Rng>(
    a: f64,
    window: (f64, f64),
    grid: f64,
    rng: &mut R,
) -> Result<PiecewiseLinearRepar, ReparError> {
    if !(a >= 0.0) || !a.is_finite() {
        return Err(ReparError::BadSampler("class bound must be finite and >= 0"));
    }
    if !(grid > 0.0) || !grid.is_finite() || !(window.0 <= window.1) {
        return Err(ReparError::BadSampler("grid must be positive and window ordered"));
    }
    let k0 = ((window.0 / grid).floor() as i64).min(0);
    let k1 = ((window.1 / grid).ceil() as i64).max(0);
    if k1 == k0 {
        return PiecewiseLinearRepar::linear(sample_slope(a, rng));
    }
    let breakpoints: Vec<f64> = (k0..=k1).map(|k| k as f64 * grid).collect();
    let slopes = (0..breakpoints.len() - 1).map(|_| sample_slope(a, rng)).collect();
    PiecewiseLinearRepar::new(breakpoints, slopes)
}

fn sample_slope<R: Rng>(a: f64, rng: &mut R) -> f64 {
    if a == 0.0 {
        return 1.0;
    }
    rng.gen_range(1.0 - a..=1.0 + a).max(MIN_SLOPE)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_piece() -> PiecewiseLinearRepar {
        PiecewiseLinearRepar::new(vec![0.0, 1.0], vec![2.0]).unwrap()
    }

    #[test]
    fn eval_basics() {
        assert_eq!(PiecewiseLinearRepar::identity().eval(3.7), 3.7);
        let h = PiecewiseLinearRepar::new(vec![-1.0, 0.0, 1.0], vec![0.8, 1.3]).unwrap();
        assert!((h.eval(2.0) - 2.6).abs() < 1e-15);
        assert!((h.eval(-2.0) + 1.6).abs() < 1e-15);
        assert_eq!(h.eval(0.0), 0.0);
        assert!((h.min_class() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn piecewise_sum() {
        // slope 2 on [0,1], 1 afterwards
        let h = PiecewiseLinearRepar::new(vec![0.0, 1.0, 2.0], vec![2.0, 1.0]).unwrap();
        assert_eq!(h.eval(2.0), 3.0);
        assert_eq!(h.eval(5.0), 6.0);
        assert_eq!(two_piece().eval(-1.0), -2.0);
    }

    #[test]
    fn class_boundary() {
        let a = 0.25;
        let h = PiecewiseLinearRepar::linear(1.0 + a).unwrap();
        assert!(h.in_class(a));
        assert!(!h.in_class(a - 1e-6));
        assert!(PiecewiseLinearRepar::identity().in_class(0.0));
    }

    #[test]
    fn invalid_inputs() {
        assert_eq!(PiecewiseLinearRepar::new(vec![1.0, 2.0], vec![1.0]).unwrap_err(), ReparError::MissingOrigin);
        assert_eq!(PiecewiseLinearRepar::new(vec![0.0, 0.0], vec![1.0]).unwrap_err(), ReparError::NotIncreasing);
        assert!(matches!(PiecewiseLinearRepar::new(vec![0.0], vec![0.0]), Err(ReparError::BadSlope(_))));
        assert!(matches!(
            PiecewiseLinearRepar::new(vec![0.0, 1.0, 2.0], vec![1.0]),
            Err(ReparError::SlopeCount { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn invert_slope_two() {
        let inv = invert(&PiecewiseLinearRepar::linear(2.0).unwrap());
        assert_eq!(inv.slopes(), &[0.5]);
        assert_eq!(inv.eval(3.0), 1.5);
    }

    #[test]
    fn compose_identity_and_extensions() {
        let h = PiecewiseLinearRepar::new(vec![-1.0, 0.0, 2.0], vec![0.5, 1.5]).unwrap();
        let c = compose(&PiecewiseLinearRepar::identity(), &h);
        for t in [-10.0, -1.0, -0.3, 0.0, 1.1, 2.0, 9.0] {
            assert!((c.eval(t) - h.eval(t)).abs() < 1e-12);
        }
        let hi = compose(&h, &invert(&h));
        for t in [-7.0, -0.5, 0.0, 0.25, 3.0, 11.0] {
            assert!((hi.eval(t) - t).abs() < 1e-12);
        }
    }

    #[test]
    fn compose_identity_outer_keeps_extension_slopes() {
        // inner with left extension different from its interior slope
        let inner = PiecewiseLinearRepar::new(vec![0.0, 1.0, 3.0], vec![2.0, 0.5]).unwrap();
        let outer = PiecewiseLinearRepar::new(vec![-1.0, 0.0], vec![3.0]).unwrap();
        let c = compose(&outer, &inner);
        for t in [-5.0, -0.1, 0.5, 1.0, 2.9, 8.0] {
            assert!((c.eval(t) - outer.eval(inner.eval(t))).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn random_is_deterministic_and_in_class() {
        let a = rep_random(0.3, (-2.0, 3.0), 0.25, 7).unwrap();
        let b = rep_random(0.3, (-2.0, 3.0), 0.25, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.in_class(0.3));
        assert_eq!(a.breakpoints().len(), 21);
        let id = rep_random(0.0, (-2.0, 3.0), 0.25, 7).unwrap();
        assert_eq!(id.min_class(), 0.0);
        assert!(rep_random(-0.1, (0.0, 1.0), 0.25, 0).is_err());
    }

    #[test]
    fn sorted_eval_matches_pointwise() {
        let h = rep_random(0.4, (-3.0, 3.0), 0.5, 3).unwrap();
        let ts: Vec<f64> = (0..200).map(|i| -5.0 + 0.05 * i as f64).collect();
        let mut out = vec![0.0; ts.len()];
        h.eval_sorted_into(&ts, &mut out);
        for (t, o) in ts.iter().zip(&out) {
            assert_eq!(*o, h.eval(*t));
        }
    }

    #[test]
    fn json_round_trip() {
        let h = PiecewiseLinearRepar::new(vec![-1.0, 0.0, 2.0], vec![0.5, 1.5]).unwrap();
        let s = serde_json::to_string(&h).unwrap();
        assert_eq!(s, r#"{"breakpoints":[-1.0,0.0,2.0],"slopes":[0.5,1.5]}"#);
        let back: PiecewiseLinearRepar = serde_json::from_str(&s).unwrap();
        assert_eq!(back, h);
        assert!(serde_json::from_str::<PiecewiseLinearRepar>(r#"{"breakpoints":[1.0],"slopes":[1.0]}"#).is_err());
    }
}
