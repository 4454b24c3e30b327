//! Loss, optimizer, training loop and checkpoints.

mod adam;
mod checkpoint;
mod loss;
mod trainer;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{batch_loss, loss_value, LossParts, PROB_FLOOR};
pub use trainer::{grad_check_model, probe_kl, EpochMetrics, Trainer};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::LabelConfig;
use crate::model::ModelConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dim: usize,
    pub layers: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    /// Decoupled weight decay coefficient.
    pub l2: f64,
    /// Weight of the soft-label term.
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Temperature applied to cosine scores.
    pub score_scale: f64,
    pub shared_layers: bool,
    pub layer_norm: bool,
    pub general_context: bool,
    pub personalization: bool,
    pub side_information: bool,
    pub label: LabelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 256,
            layers: 2,
            batch_size: 100,
            lr: 0.001,
            lr_decay: 0.8,
            lr_decay_every: 3,
            l2: 1e-5,
            lambda: 0.1,
            epochs: 10,
            seed: 42,
            score_scale: 12.0,
            shared_layers: false,
            layer_norm: false,
            general_context: true,
            personalization: true,
            side_information: true,
            label: LabelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if self.dim == 0 || self.batch_size == 0 || self.lr_decay_every == 0 {
            return fail("dim, batch_size and lr_decay_every must be positive");
        }
        if !(self.lr > 0.0 && self.lr_decay > 0.0 && self.score_scale > 0.0) {
            return fail("lr, lr_decay and score_scale must be positive");
        }
        if !(self.l2 >= 0.0 && self.lambda >= 0.0) {
            return fail("l2 and lambda must be non-negative");
        }
        if self.lambda > 0.0 && self.label.hash_dim >= self.dim {
            return fail("label.hash_dim must be below dim");
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let steps = epoch.saturating_sub(1) / self.lr_decay_every;
        self.lr * self.lr_decay.powi(steps as i32)
    }

    pub fn model_config(&self, t_max: usize, num_items: usize, num_categories: usize, num_relations: usize) -> ModelConfig {
        let mut m = ModelConfig::new(self.dim, self.layers, t_max, num_items, num_categories, num_relations);
        m.shared_layers = self.shared_layers;
        m.layer_norm = self.layer_norm;
        m.general_context = self.general_context;
        m.personalization = self.personalization;
        m.side_information = self.side_information;
        m
    }
}
