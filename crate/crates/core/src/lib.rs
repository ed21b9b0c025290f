//! Numerical experiments on shadowing of pseudotrajectories for flows near
//! hyperbolic equilibria.
//!
//! - [`flow`]: block-linear fields with exact exponentials, RK4 for general fields.
//! - [`repar`]: piecewise-linear reparametrizations and their distortion class.
//! - [`pseudo`]: sampled pseudotrajectories, defects and the standard constructions.
//! - [`glued`]: two saddles joined by a linear transit map.
//! - [`hetero`]: transversality and the sign obstruction of a glued model.
//! - [`spiral`]: adversarially checked window certificates for expanding spirals.
//! - [`shadow`]: shadowing as minimax search, Lipschitz sweeps, the planar brute force.
//! - [`experiments`]: the command-line experiments.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod experiments;
pub mod flow;
pub mod glued;
pub mod hetero;
pub mod pseudo;
pub mod repar;
pub mod shadow;
pub mod spiral;

pub use flow::{Block, BlockLinearField, Flow, FlowError};
pub use glued::{ChartPoint, GluedHeteroclinicSystem, SystemFixture};
pub use pseudo::SampledPseudotrajectory;
pub use repar::PiecewiseLinearRepar;
