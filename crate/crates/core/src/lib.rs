//! Adaptive multiresolution finite volume solver for one-dimensional
//! strongly degenerate parabolic equations with discontinuous flux.
//!
//! The uniform reference scheme lives in [`fvcore`], the multiresolution
//! representation in [`mrtree`], adaptive time stepping in [`mrsolver`],
//! and measurement utilities in [`harness`].

// negated comparisons are how NaN gets rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod fvcore;
pub mod harness;
pub mod io;
pub mod models;
pub mod mrsolver;
pub mod mrtree;
pub mod quadrature;

pub use error::{Error, Result};
pub use fvcore::{cfl_max_dt, eo_flux, run_uniform, step_uniform, StepRule, UniformState};
pub use models::{ModelSpec, presets::{preset, Preset}};
pub use mrsolver::{run_mr, MrRun};
pub use mrtree::{GradedTree, MRConfig};
