use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyper-parameters and ablation switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub layers: usize,
    pub t_max: usize,
    pub num_items: usize,
    pub num_categories: usize,
    /// Named relations plus the same, drift and self relations.
    pub num_relations: usize,
    /// One parameter set reused by every graph layer.
    pub shared_layers: bool,
    /// L2-normalize general item embeddings after each graph layer.
    pub layer_norm: bool,
    /// Aggregate over the cross-session graph; off leaves only self edges.
    pub general_context: bool,
    /// Gate item embeddings with the session's virtual node.
    pub personalization: bool,
    /// Use item categories (category context and typed relations).
    pub side_information: bool,
}

impl ModelConfig {
    pub fn new(dim: usize, layers: usize, t_max: usize, num_items: usize, num_categories: usize, num_relations: usize) -> Self {
        ModelConfig {
            dim,
            layers,
            t_max,
            num_items,
            num_categories,
            num_relations,
            shared_layers: false,
            layer_norm: false,
            general_context: true,
            personalization: true,
            side_information: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim),
            ("t_max", self.t_max),
            ("num_items", self.num_items),
            ("num_categories", self.num_categories),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.num_relations < 3 {
            return Err(Error::Config("num_relations must be at least 3".into()));
        }
        Ok(())
    }
}
