//! Multi-relation item graph built from training sequences.

mod build;
mod cooccurrence;
mod io;
mod relations;
mod subgraph;

pub use build::{build_graph, CrossSessionGraph, Edge};
pub use cooccurrence::{edge_weight, epsilon_cooccurrence, Cooccurrence};
pub use io::{GRAPH_MAGIC, GRAPH_VERSION};
pub use relations::{build_relation_table, RelationKind, RelationTable};
pub use subgraph::{subgraph_for_batch, SubGraph};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GraphConfig {
    /// Neighbourhood radius in positions.
    pub epsilon: usize,
    /// Incoming edges kept per node and relation.
    pub top_n: usize,
    /// Number of category pairs that get their own relation.
    pub top_q: usize,
    /// Frequency damping exponent.
    pub alpha: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            epsilon: 2,
            top_n: 12,
            top_q: 5,
            alpha: 0.75,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon < 1 {
            return Err(Error::Config("epsilon must be at least 1".into()));
        }
        if self.top_n < 1 {
            return Err(Error::Config("top_n must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha must be in (0, 1], got {}", self.alpha)));
        }
        if self.top_q > u16::MAX as usize - 3 {
            return Err(Error::Config(format!("top_q {} is too large", self.top_q)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
