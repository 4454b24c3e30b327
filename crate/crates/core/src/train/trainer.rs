use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{batch_loss, Adam, Checkpoint, TrainConfig};
use crate::autodiff::{grad_check, GradCheckReport, Real, Tape, Tensor, Var};
use crate::data::{CategoryId, ItemId, Session};
use crate::error::{Error, Result};
use crate::graph::CrossSessionGraph;
use crate::label::{LabelCollaborator, LabelConfig, NoSoftLabels, SoftLabel, SoftLabelProvider};
use crate::model::{forward, score_logits, BatchPlan, Model, ModelLayout};

use super::LossParts;

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub ce: f64,
    pub kl: f64,
    pub wall_seconds: f64,
}

pub struct Trainer<'g, T: Real> {
    pub model: Model<T>,
    pub optimizer: Adam<T>,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    graph: &'g CrossSessionGraph,
    categories: &'g [CategoryId],
    provider: Box<dyn SoftLabelProvider + Send + 'g>,
}

fn default_provider<'g>(config: &TrainConfig) -> Result<Box<dyn SoftLabelProvider + Send + 'g>> {
    Ok(if config.lambda > 0.0 {
        Box::new(LabelCollaborator::new(config.dim, &config.label)?)
    } else {
        Box::new(NoSoftLabels)
    })
}

fn plan_for(batch: &[&Session], graph: &CrossSessionGraph, categories: &[CategoryId], model: &crate::model::ModelConfig) -> BatchPlan {
    let items: Vec<&[ItemId]> = batch.iter().map(|s| s.items.as_slice()).collect();
    BatchPlan::new(&items, graph, categories, model)
}

impl<'g, T: Real> Trainer<'g, T> {
    /// Fresh parameters seeded from `config.seed`.
    pub fn new(config: TrainConfig, graph: &'g CrossSessionGraph, categories: &'g [CategoryId], t_max: usize) -> Result<Self> {
        config.validate()?;
        let num_categories = categories.iter().max().map_or(1, |&c| c as usize + 1);
        let model_config = config.model_config(
            t_max,
            graph.num_nodes(),
            num_categories,
            graph.relations().num_relations(),
        );
        model_config.validate()?;
        let model = Model::init(model_config, config.seed);
        let optimizer = Adam::new(&model.params, config.l2);
        Ok(Trainer {
            provider: default_provider(&config)?,
            model,
            optimizer,
            config,
            epoch: 0,
            graph,
            categories,
        })
    }

    /// Resumes from a checkpoint; the candidate pool starts empty.
    pub fn from_checkpoint(ckpt: Checkpoint<T>, graph: &'g CrossSessionGraph, categories: &'g [CategoryId]) -> Result<Self> {
        if ckpt.model.config.num_items != graph.num_nodes()
            || ckpt.model.config.num_relations != graph.relations().num_relations()
        {
            return Err(Error::Config("checkpoint does not fit the graph".into()));
        }
        Ok(Trainer {
            provider: default_provider(&ckpt.train_config)?,
            model: ckpt.model,
            optimizer: ckpt.optimizer,
            config: ckpt.train_config,
            epoch: ckpt.epoch,
            graph,
            categories,
        })
    }

    pub fn set_provider(&mut self, provider: Box<dyn SoftLabelProvider + Send + 'g>) {
        self.provider = provider;
    }

    /// Forward, soft labels, loss, backward and one optimizer update.
    pub fn train_step(&mut self, batch: &[&Session], lr: f64, batch_index: usize) -> Result<LossParts> {
        let plan = plan_for(batch, self.graph, self.categories, &self.model.config);
        let targets: Vec<ItemId> = batch.iter().map(|s| s.target).collect();
        let (grads, parts) = {
            let mut tape = Tape::new();
            let vars: Vec<Var> = self.model.params.tensors().iter().map(|t| tape.param(t)).collect();
            let mv = self.model.layout.vars(&vars);
            let hs = forward(&mut tape, &mv, &plan, &self.model.config);
            let labels = self.provider.labels(&tape.value(hs).cast::<f64>(), &targets);
            let logits = score_logits(&mut tape, &mv, hs, self.config.score_scale);
            let (loss, parts) = batch_loss(&mut tape, logits, &targets, &labels, self.config.lambda);
            if !parts.loss.is_finite() || !tape.value(loss).item().as_f64().is_finite() {
                let dump = tape.dump();
                log::error!("non-finite loss; recorded operations:\n{dump}");
                return Err(Error::NonFiniteLoss {
                    epoch: self.epoch + 1,
                    batch: batch_index,
                    detail: format!("loss {} (ce {}, kl {})", parts.loss, parts.ce, parts.kl),
                });
            }
            let g = tape.backward(loss).expect("loss is scalar");
            let grads: Vec<Option<Tensor<T>>> = vars.iter().map(|&v| g.get(v).cloned()).collect();
            (grads, parts)
        };
        self.optimizer.update(&mut self.model.params, &grads, lr);
        Ok(parts)
    }

    /// One pass over `samples` in an order shuffled from the seed and epoch.
    pub fn train_epoch(&mut self, samples: &[Session]) -> Result<EpochMetrics> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset("no training samples".into()));
        }
        let start = Instant::now();
        let epoch = self.epoch + 1;
        let lr = self.config.lr_at(epoch);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);

        let (mut ce, mut kl) = (0.0, 0.0);
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let batch: Vec<&Session> = chunk.iter().map(|&i| &samples[i]).collect();
            let parts = self.train_step(&batch, lr, b)?;
            let n = batch.len() as f64;
            ce += parts.ce * n;
            kl += parts.kl * n;
        }
        let n = samples.len() as f64;
        let (ce, kl) = (ce / n, kl / n);
        self.epoch = epoch;
        Ok(EpochMetrics {
            epoch,
            lr,
            loss: ce + self.config.lambda * kl,
            ce,
            kl,
            wall_seconds: start.elapsed().as_secs_f64(),
        })
    }

    pub fn checkpoint(&self, vocab_hash: &str) -> Checkpoint<T> {
        Checkpoint {
            model: self.model.clone(),
            train_config: self.config.clone(),
            vocab_hash: vocab_hash.to_string(),
            graph_hash: self.graph.hash(),
            epoch: self.epoch,
            optimizer: self.optimizer.clone(),
            lr: self.config.lr_at(self.epoch.max(1)),
        }
    }
}

/// Mean KL divergence between soft labels and predictions over `samples`,
/// with soft labels produced the way training produces them (a fresh pool,
/// queried and then filled batch by batch) but without updating
/// parameters. Returns 0 when no sample received a label.
pub fn probe_kl<T: Real>(
    model: &Model<T>,
    graph: &CrossSessionGraph,
    categories: &[CategoryId],
    samples: &[Session],
    label: &LabelConfig,
    batch_size: usize,
    score_scale: f64,
) -> Result<f64> {
    let mut provider = LabelCollaborator::new(model.config.dim, label)?;
    let (mut total, mut labeled) = (0.0, 0usize);
    for chunk in samples.chunks(batch_size.max(1)) {
        let batch: Vec<&Session> = chunk.iter().collect();
        let plan = plan_for(&batch, graph, categories, &model.config);
        let targets: Vec<ItemId> = chunk.iter().map(|s| s.target).collect();
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape);
        let hs = forward(&mut tape, &vars, &plan, &model.config);
        let labels = provider.labels(&tape.value(hs).cast::<f64>(), &targets);
        let logits = score_logits(&mut tape, &vars, hs, score_scale);
        let (_, parts) = batch_loss(&mut tape, logits, &targets, &labels, 1.0);
        total += parts.kl * chunk.len() as f64;
        labeled += parts.labeled;
    }
    Ok(if labeled == 0 { 0.0 } else { total / labeled as f64 })
}

/// Central-difference check of the full loss with fixed soft labels.
#[allow(clippy::too_many_arguments)]
pub fn grad_check_model(
    model: &mut Model<f64>,
    graph: &CrossSessionGraph,
    categories: &[CategoryId],
    batch: &[Session],
    labels: &[Option<SoftLabel>],
    lambda: f64,
    score_scale: f64,
    h: f64,
    tolerance: f64,
) -> GradCheckReport {
    let refs: Vec<&Session> = batch.iter().collect();
    let plan = plan_for(&refs, graph, categories, &model.config);
    let targets: Vec<ItemId> = batch.iter().map(|s| s.target).collect();
    let config = model.config.clone();
    let layout: ModelLayout = model.layout.clone();
    grad_check(&mut model.params, h, tolerance, move |tape, vars| {
        let mv = layout.vars(vars);
        let hs = forward(tape, &mv, &plan, &config);
        let logits = score_logits(tape, &mv, hs, score_scale);
        batch_loss(tape, logits, &targets, labels, lambda).0
    })
}
