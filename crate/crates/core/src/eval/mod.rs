//! Full-catalog ranking and cutoff metrics.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tape, Tensor};
use crate::data::{CategoryId, ItemId, Session};
use crate::error::{Error, Result};
use crate::graph::CrossSessionGraph;
use crate::model::{forward, score_logits, BatchPlan, Model};

pub const DEFAULT_CUTOFF: usize = 20;

/// 1-based rank of `target`. Items tied with the target count as ranked
/// ahead of it.
pub fn rank_target<T: Real>(scores: &[T], target: ItemId) -> usize {
    let t = target as usize;
    let s = scores[t];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &x)| j != t && x >= s)
        .count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub p_at_20: f64,
    pub mrr_at_20: f64,
    /// Target rank per case, in test-set order.
    #[serde(skip)]
    pub ranks: Vec<usize>,
}

impl EvalReport {
    pub fn from_ranks(ranks: Vec<usize>, cutoff: usize) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::EmptyDataset("no test cases to evaluate".into()));
        }
        let (mut hits, mut rr) = (0usize, 0.0f64);
        for &r in &ranks {
            if r <= cutoff {
                hits += 1;
                rr += 1.0 / r as f64;
            }
        }
        let n = ranks.len();
        Ok(EvalReport {
            n,
            p_at_20: hits as f64 / n as f64,
            mrr_at_20: rr / n as f64,
            ranks,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    /// `session<TAB>rank` lines with a header.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("session\trank\n");
        for (i, r) in self.ranks.iter().enumerate() {
            let _ = writeln!(out, "{i}\t{r}");
        }
        out
    }

    pub fn save_tsv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()).map_err(|source| Error::Write {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Cosine scores of every catalog item for each session, `B × m`.
/// Ranking is invariant to the softmax temperature so none is applied.
pub fn score_sessions<T: Real>(
    model: &Model<T>,
    graph: &CrossSessionGraph,
    categories: &[CategoryId],
    sessions: &[&[ItemId]],
) -> Tensor<T> {
    let plan = BatchPlan::new(sessions, graph, categories, &model.config);
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let hs = forward(&mut tape, &vars, &plan, &model.config);
    let scores = score_logits(&mut tape, &vars, hs, 1.0);
    tape.value(scores).clone()
}

/// Session representations `h_s`, `B × d`, in `f64`.
pub fn session_vectors<T: Real>(
    model: &Model<T>,
    graph: &CrossSessionGraph,
    categories: &[CategoryId],
    sessions: &[&[ItemId]],
) -> Tensor<f64> {
    let plan = BatchPlan::new(sessions, graph, categories, &model.config);
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape);
    let hs = forward(&mut tape, &vars, &plan, &model.config);
    tape.value(hs).cast()
}

/// Ranks every test case against the full catalog. Batches are scored in
/// parallel and merged in test-set order.
pub fn evaluate<T: Real>(
    model: &Model<T>,
    graph: &CrossSessionGraph,
    categories: &[CategoryId],
    test: &[Session],
    batch_size: usize,
    cutoff: usize,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::EmptyDataset("no test cases to evaluate".into()));
    }
    let ranks: Vec<usize> = test
        .par_chunks(batch_size.max(1))
        .map(|chunk| {
            let items: Vec<&[ItemId]> = chunk.iter().map(|s| s.items.as_slice()).collect();
            let scores = score_sessions(model, graph, categories, &items);
            chunk
                .iter()
                .enumerate()
                .map(|(b, s)| rank_target(scores.row(b), s.target))
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    EvalReport::from_ranks(ranks, cutoff)
}

/// The `k` best items for one session, by score and then by item id.
pub fn recommend<T: Real>(
    model: &Model<T>,
    graph: &CrossSessionGraph,
    categories: &[CategoryId],
    items: &[ItemId],
    k: usize,
) -> Vec<(ItemId, f64)> {
    let scores = score_sessions(model, graph, categories, &[items]);
    let mut ranked: Vec<(ItemId, f64)> = scores
        .row(0)
        .iter()
        .enumerate()
        .map(|(i, s)| (i as ItemId, s.as_f64()))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(k);
    ranked
}
