//! Soft labels from similar recent sessions, found by SimHash.

mod pool;
mod simhash;

pub use pool::{retrieve, soft_label, CandidatePool, PoolRecord, Retrieved, SoftLabel};
pub use simhash::{hamming, Fingerprint, HashProjector};

use rayon::prelude::*;

use crate::autodiff::Tensor;
use crate::data::ItemId;

/// Source of per-session target distributions for the distillation term.
pub trait SoftLabelProvider {
    /// Soft labels for each row of `session_vectors` (detached, `B × d`),
    /// then records the batch's `targets` for later queries.
    fn labels(&mut self, session_vectors: &Tensor<f64>, targets: &[ItemId]) -> Vec<Option<SoftLabel>>;
}

/// A provider that never has a label; training reduces to cross entropy.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoSoftLabels;

impl SoftLabelProvider for NoSoftLabels {
    fn labels(&mut self, session_vectors: &Tensor<f64>, _targets: &[ItemId]) -> Vec<Option<SoftLabel>> {
        vec![None; session_vectors.rows()]
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct LabelConfig {
    /// Fingerprint width in bits; must be below the model dimension.
    pub hash_dim: usize,
    pub pool_size: usize,
    pub retrieve_k: usize,
    pub seed: u64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        LabelConfig {
            hash_dim: 64,
            pool_size: 1500,
            retrieve_k: 50,
            seed: 0x5eed,
        }
    }
}

/// Fingerprints sessions, retrieves neighbours from the pool, then adds
/// the batch to the pool.
#[derive(Debug, Clone)]
pub struct LabelCollaborator {
    pub projector: HashProjector,
    pub pool: CandidatePool,
    pub k: usize,
}

impl LabelCollaborator {
    pub fn new(dim: usize, config: &LabelConfig) -> crate::Result<Self> {
        if config.retrieve_k < 1 || config.pool_size < 1 {
            return Err(crate::Error::Config("retrieve_k and pool_size must be at least 1".into()));
        }
        Ok(LabelCollaborator {
            projector: HashProjector::new(dim, config.hash_dim, config.seed)?,
            pool: CandidatePool::new(config.pool_size),
            k: config.retrieve_k,
        })
    }
}

impl SoftLabelProvider for LabelCollaborator {
    fn labels(&mut self, session_vectors: &Tensor<f64>, targets: &[ItemId]) -> Vec<Option<SoftLabel>> {
        let fps: Vec<Fingerprint> = (0..session_vectors.rows())
            .map(|r| self.projector.fingerprint(session_vectors.row(r)))
            .collect();
        let pool = &self.pool;
        let k = self.k;
        let labels = fps
            .par_iter()
            .map(|fp| {
                let hit = retrieve(pool, fp, k);
                (!hit.targets.is_empty()).then(|| soft_label(&hit.targets, &hit.weights))
            })
            .collect();
        self.pool.update(fps.into_iter().zip(targets.iter().copied()));
        labels
    }
}
