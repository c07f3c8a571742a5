//! Linearisation of stochastic differential equations about deterministic
//! trajectories: flow maps, Gaussian laws of the linearised solution,
//! strong-error bounds, coupled Monte-Carlo validation and stochastic
//! sensitivity fields.

// `!(x > 0.0)` rejects NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod error;
pub mod error_analysis;
pub mod flow;
pub mod io;
pub mod linalg;
pub mod linearisation;
pub mod model_catalog;
pub mod ode;
pub mod rng;
pub mod sde_sampler;
pub mod sensitivity;

pub use bounds::{BdgPolicy, BoundBreakdown, BoundConstants};
pub use error::{Error, Result};
pub use error_analysis::{Basis, BootstrapFit, InitFamily, ScalingFit, StrongError, SweepCell, SweepResult};
pub use flow::FlowResult;
pub use io::Provenance;
pub use linearisation::{GaussianState, InitKind, InitialCondition, LinearisationOptions};
pub use model_catalog::{builtin_model, BoxDomain, Model, ModelSpec, VectorField};
pub use sde_sampler::{SamplePairBatch, Scheme, SimulationConfig};
pub use sensitivity::{GridAxis, RobustSet, S2Field};
