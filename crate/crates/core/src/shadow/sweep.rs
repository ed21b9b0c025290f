//! Lipschitz sweeps over `(L, d)` on glued models.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::search::{shadow_search, SearchStart, ShadowConfig, ShadowingResult};
use crate::glued::{GluedError, GluedHeteroclinicSystem};
use crate::hetero::{obstruction_report, HeteroError, ObstructionFrame, ObstructionQuery, ObstructionReport, ObstructionVerdict};
use crate::pseudo::{pseudo_defect, pseudo_glued, PseudoError};

pub const SWEEP_CSV_HEADER: [&str; 7] = ["L", "d", "best_eps", "ratio", "class_a", "verdict", "obstruction_verdict"];

/// Offsets decay or grow by this factor across the default windows.
const WINDOW_FACTOR: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LipVerdict {
    #[serde(rename = "LipOK")]
    LipOk,
    LipFail,
}

impl LipVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            LipVerdict::LipOk => "LipOK",
            LipVerdict::LipFail => "LipFail",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub l_list: Vec<f64>,
    pub d_list: Vec<f64>,
    pub starts: usize,
    pub budget: usize,
    pub seed: u64,
    /// Window lengths before 0 and after `tau`; see [`glued_windows`].
    #[serde(default)]
    pub t_back: Option<f64>,
    #[serde(default)]
    pub t_fwd: Option<f64>,
    /// Defect constant; measured per cell when absent.
    #[serde(default)]
    pub c1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "L")]
    pub l: f64,
    pub d: f64,
    pub best_eps: f64,
    pub ratio: f64,
    pub class_a: f64,
    pub verdict: LipVerdict,
    /// `None` for probe frames and for reports that could not be evaluated.
    pub obstruction_verdict: Option<ObstructionVerdict>,
    /// Grid defect of the cell's pseudotrajectory.
    pub defect: f64,
    pub result: ShadowingResult,
    pub report: Option<ObstructionReport>,
    /// Set when the obstruction report failed.
    pub report_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub t_back: f64,
    pub t_fwd: f64,
    pub probe_frame: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error(transparent)]
    Glued(#[from] GluedError),
    #[error(transparent)]
    Hetero(#[from] HeteroError),
    #[error(transparent)]
    Pseudo(#[from] PseudoError),
    #[error("io: {0}")]
    Io(String),
}

/// Default windows: `ln 50` over the slowest stable rate of `q` (backward)
/// and the slowest unstable rate of `p` (forward).
pub fn glued_windows(sys: &GluedHeteroclinicSystem) -> (f64, f64) {
    let slowest = |bs: &[crate::flow::Block]| bs.iter().map(|b| b.rate().abs()).fold(f64::INFINITY, f64::min);
    let back = slowest(sys.q_spec().stable.blocks());
    let fwd = slowest(sys.p_spec().unstable.blocks());
    let w = |r: f64| if r.is_finite() && r > 0.0 { WINDOW_FACTOR.ln() / r } else { 4.0 };
    (w(back), w(fwd))
}

fn verdict_label(v: Option<ObstructionVerdict>) -> &'static str {
    match v {
        Some(ObstructionVerdict::BackViolated) => "BackViolated",
        Some(ObstructionVerdict::FwdViolated) => "FwdViolated",
        Some(ObstructionVerdict::SignContradiction) => "SignContradiction",
        None => "n/a",
    }
}

impl SweepRow {
    /// LipFail with a residual-violation verdict from the obstruction report.
    pub fn corroborated_fail(&self) -> bool {
        self.verdict == LipVerdict::LipFail
            && matches!(
                self.obstruction_verdict,
                Some(ObstructionVerdict::BackViolated) | Some(ObstructionVerdict::FwdViolated)
            )
    }
}

impl SweepTable {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), SweepError> {
        let io = |e: csv::Error| SweepError::Io(e.to_string());
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(SWEEP_CSV_HEADER).map_err(io)?;
        for r in &self.rows {
            wr.write_record([
                r.l.to_string(),
                r.d.to_string(),
                r.best_eps.to_string(),
                r.ratio.to_string(),
                r.class_a.to_string(),
                r.verdict.as_str().to_string(),
                verdict_label(r.obstruction_verdict).to_string(),
            ])
            .map_err(io)?;
        }
        wr.flush().map_err(|e| SweepError::Io(e.to_string()))
    }
}

/// Run the glued construction and a shadowing search on every `(L, d)` cell
/// with `class_a = L d`.
///
/// Cells with the same `d` are warm-started from the optimum of every
/// smaller `L` already computed. Each cell derives its seed from `cfg.seed`
/// and its position in the grid.
pub fn lipschitz_sweep(
    sys: &GluedHeteroclinicSystem,
    frame: &ObstructionFrame,
    cfg: &SweepConfig,
) -> Result<SweepTable, SweepError> {
    let (wb, wf) = glued_windows(sys);
    let t_back = cfg.t_back.unwrap_or(wb);
    let t_fwd = cfg.t_fwd.unwrap_or(wf);
    let mut rows = Vec::with_capacity(cfg.l_list.len() * cfg.d_list.len());
    for (di, &d) in cfg.d_list.iter().enumerate() {
        let g = pseudo_glued(sys, frame, d, t_back, t_fwd)?;
        let defect = pseudo_defect(sys, &g)?.defect;
        let c1 = cfg.c1.unwrap_or(defect / d);
        let extras = vec![
            SearchStart::point(frame.e_q.iter().map(|x| d * x).collect()),
            SearchStart::point(sys.apply_k_inv(&frame.e_p.iter().map(|x| d * x).collect::<Vec<_>>())),
            SearchStart::point(vec![0.0; sys.n() - 1]),
        ];
        let mut done: Vec<(f64, SearchStart)> = Vec::new();
        for (li, &l) in cfg.l_list.iter().enumerate() {
            let class_a = l * d;
            let mut starts = extras.clone();
            starts.extend(done.iter().filter(|(lp, _)| *lp <= l).map(|(_, s)| s.clone()));
            let scfg = ShadowConfig {
                class_a,
                starts: cfg.starts,
                budget: cfg.budget,
                seed: cfg.seed.wrapping_add((di * cfg.l_list.len() + li) as u64),
                window: None,
                target: None,
            };
            let result = shadow_search(sys, &g, &scfg, &starts)?;
            let verdict = if result.best_eps <= class_a { LipVerdict::LipOk } else { LipVerdict::LipFail };
            let (report, report_error) = if frame.probe {
                (None, None)
            } else {
                let q = ObstructionQuery {
                    g: &g,
                    omega: &result.p_star,
                    h: &result.h_star,
                    d,
                    lipschitz: l,
                    t_back: -g.t0,
                    t_fwd: g.t_end() - sys.tau(),
                    c1,
                };
                match obstruction_report(sys, frame, &q) {
                    Ok(r) => (Some(r), None),
                    Err(e) => (None, Some(e.to_string())),
                }
            };
            done.push((l, result.as_start()));
            rows.push(SweepRow {
                l,
                d,
                best_eps: result.best_eps,
                ratio: result.best_eps / d,
                class_a,
                verdict,
                obstruction_verdict: report.as_ref().map(|r| r.verdict),
                defect,
                result,
                report,
                report_error,
            });
        }
    }
    Ok(SweepTable { rows, t_back, t_fwd, probe_frame: frame.probe })
}
