//! Multiresolution representation: the cell-average transform and the
//! graded dynamic tree built on it.

mod transform;
mod tree;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use transform::{
    decode, encode, level_tolerance, predict, predict_bounded, predict_pair, project, reference_tolerance, threshold,
    Pyramid,
};
pub use tree::{count_ndjson_leaves, GradedTree, LeafCell, NodeKey, NodeKind, TreeStats};

/// Weight of the centred difference in the prediction operator.
pub const PREDICTION_WEIGHT: f64 = -1.0 / 8.0;
/// Half-width of the prediction stencil.
pub const PREDICTION_STENCIL: usize = 1;
/// Same-level cousins required on each side of a leaf.
pub const FLUX_COUSINS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MRConfig {
    /// Finest level `L`.
    pub max_level: u32,
    /// Number of level-0 cells.
    pub roots: usize,
    /// Threshold at the finest level; zero disables coarsening.
    pub epsilon: f64,
    /// Assumed convergence order of the reference scheme.
    pub alpha: f64,
    /// Constant in the reference tolerance.
    pub tolerance_factor: f64,
    /// Levels below this are always refined.
    pub min_level: u32,
}

impl Default for MRConfig {
    fn default() -> Self {
        MRConfig { max_level: 10, roots: 1, epsilon: 1e-3, alpha: 0.5, tolerance_factor: 1.0, min_level: 2 }
    }
}

impl MRConfig {
    pub fn finest_cells(&self) -> usize {
        self.roots << self.max_level
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_level < 1 || self.max_level > 24 {
            return Err(Error::Config(format!("max_level must be in 1..=24, got {}", self.max_level)));
        }
        if self.roots == 0 {
            return Err(Error::Config("roots must be positive".into()));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be finite and >= 0, got {}", self.epsilon)));
        }
        if self.min_level > self.max_level {
            return Err(Error::Config("min_level exceeds max_level".into()));
        }
        Ok(())
    }
}
