//! Shadowing as a minimax problem over start points and reparametrizations.

mod nelder_mead;
mod nosubset;
mod search;
mod sweep;

pub use nelder_mead::{nelder_mead, NmOptions, NmResult};
pub use nosubset::{
    eps_conditions, nosubset_feasibility, Branch, EpsChoice, EpsConditions, NosubsetConfig, NosubsetError,
    NosubsetReport, PointRecord, Witness,
};
pub use search::{repar_grid, shadow_search, SearchStart, ShadowConfig, ShadowingResult};
pub use sweep::{glued_windows, lipschitz_sweep, LipVerdict, SweepConfig, SweepError, SweepRow, SweepTable, SWEEP_CSV_HEADER};

use crate::flow::{euclidean, BlockLinearField, Flow, NumericFlow};
use crate::glued::{Chart, ChartPoint, GluedHeteroclinicSystem};
use crate::pseudo::{probe_times, PseudoError, SampledPseudotrajectory, PROBE_REFINE};
use crate::repar::PiecewiseLinearRepar;

/// Residual reported when the candidate orbit leaves the modelled region.
pub const RESIDUAL_MAX: f64 = f64::MAX;

/// Flows whose start points are searched through a flat parameter vector.
pub trait Parametrized: Flow {
    fn param_dim(&self) -> usize;
    fn state_of(&self, p: &[f64]) -> Self::State;
    /// Parameter of a state, when the state is representable.
    fn param_of(&self, x: &Self::State) -> Option<Vec<f64>>;
}

impl Parametrized for BlockLinearField {
    fn param_dim(&self) -> usize {
        self.dim()
    }
    fn state_of(&self, p: &[f64]) -> Vec<f64> {
        p.to_vec()
    }
    fn param_of(&self, x: &Vec<f64>) -> Option<Vec<f64>> {
        Some(x.clone())
    }
}

impl Parametrized for NumericFlow {
    fn param_dim(&self) -> usize {
        self.field.dim()
    }
    fn state_of(&self, p: &[f64]) -> Vec<f64> {
        p.to_vec()
    }
    fn param_of(&self, x: &Vec<f64>) -> Option<Vec<f64>> {
        Some(x.clone())
    }
}

/// Start points of glued systems are offsets on the `Q` section.
impl Parametrized for GluedHeteroclinicSystem {
    fn param_dim(&self) -> usize {
        self.n() - 1
    }
    fn state_of(&self, p: &[f64]) -> ChartPoint {
        ChartPoint::on_q_section(p.to_vec())
    }
    fn param_of(&self, x: &ChartPoint) -> Option<Vec<f64>> {
        match x.chart {
            Chart::Transit if x.transit_s == Some(0.0) => Some(x.coords.clone()),
            Chart::Q if self.side_q(&x.coords).abs() <= 1e-9 => Some(self.q_offset(&x.coords)),
            _ => None,
        }
    }
}

/// A pseudotrajectory sampled on a probe grid, ready for residual evaluation.
#[derive(Debug, Clone)]
pub struct ProbeTarget {
    times: Vec<f64>,
    values: Vec<f64>,
    dim: usize,
}

impl ProbeTarget {
    /// Probe grid of spacing `g.dt / 8` over `window`.
    pub fn new<F: Flow>(
        flow: &F,
        g: &SampledPseudotrajectory<F::State>,
        window: (f64, f64),
    ) -> Result<Self, PseudoError> {
        let times = probe_times(window.0, window.1, g.dt / PROBE_REFINE as f64);
        let dim = flow.dim();
        let mut values = vec![0.0; times.len() * dim];
        g.embed_times(flow, &times, &mut values)?;
        Ok(Self { times, values, dim })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Embedded `g` at probe `k`.
    pub fn value(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    /// `max_k dist(φ(h(t_k) + shift, x), g(t_k))`, or [`RESIDUAL_MAX`] on a chart exit.
    pub fn residual<F: Flow>(&self, flow: &F, x: &F::State, h: &PiecewiseLinearRepar, shift: f64) -> f64 {
        let mut ht = vec![0.0; self.times.len()];
        h.eval_sorted_into(&self.times, &mut ht);
        if shift != 0.0 {
            ht.iter_mut().for_each(|t| *t += shift);
        }
        let mut orb = vec![0.0; self.values.len()];
        if flow.embed_orbit(x, &ht, &mut orb).is_err() {
            return RESIDUAL_MAX;
        }
        let d = self.dim;
        let mut worst = 0.0f64;
        for k in 0..self.times.len() {
            let e = euclidean(&orb[k * d..(k + 1) * d], &self.values[k * d..(k + 1) * d]);
            if !(e <= worst) {
                worst = if e.is_nan() { RESIDUAL_MAX } else { e };
            }
        }
        worst
    }
}

/// `sup_t dist(φ(h(t), p), g(t))` over the probe grid of `window`.
pub fn residual<F: Flow>(
    flow: &F,
    g: &SampledPseudotrajectory<F::State>,
    p: &F::State,
    h: &PiecewiseLinearRepar,
    window: (f64, f64),
) -> Result<f64, PseudoError> {
    Ok(ProbeTarget::new(flow, g, window)?.residual(flow, p, h, 0.0))
}
