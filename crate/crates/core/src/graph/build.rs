use std::collections::HashMap;

use super::{build_relation_table, edge_weight, epsilon_cooccurrence, GraphConfig, RelationTable};
use crate::data::{CategoryId, ItemId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub src: ItemId,
    pub dst: ItemId,
    pub rel: u16,
    pub weight: f64,
}

/// Weighted typed edges grouped by destination.
///
/// Edges are stored sorted by `(dst, src)`; `offsets[v]..offsets[v + 1]`
/// indexes the incoming edges of `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossSessionGraph {
    pub(crate) num_nodes: usize,
    pub(crate) offsets: Vec<usize>,
    pub(crate) edges: Vec<Edge>,
    pub(crate) relations: RelationTable,
    pub(crate) config: GraphConfig,
    pub(crate) vocab_hash: String,
}

impl CrossSessionGraph {
    /// Sorts edges into CSR order; panics on out-of-range ids.
    pub fn from_edges(
        num_nodes: usize,
        mut edges: Vec<Edge>,
        relations: RelationTable,
        config: GraphConfig,
        vocab_hash: String,
    ) -> Self {
        edges.sort_unstable_by_key(|e| (e.dst, e.src, e.rel));
        let mut offsets = vec![0usize; num_nodes + 1];
        for e in &edges {
            assert!((e.src as usize) < num_nodes && (e.dst as usize) < num_nodes, "edge {e:?} out of range");
            offsets[e.dst as usize + 1] += 1;
        }
        for v in 0..num_nodes {
            offsets[v + 1] += offsets[v];
        }
        CrossSessionGraph {
            num_nodes,
            offsets,
            edges,
            relations,
            config,
            vocab_hash,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn incoming(&self, v: ItemId) -> &[Edge] {
        &self.edges[self.offsets[v as usize]..self.offsets[v as usize + 1]]
    }

    pub fn relations(&self) -> &RelationTable {
        &self.relations
    }

    pub fn config(&self) -> &GraphConfig {
        &self.config
    }

    /// Hash of the vocabulary the graph was built against.
    pub fn vocab_hash(&self) -> &str {
        &self.vocab_hash
    }
}

/// Builds the pruned graph from training sequences.
///
/// Every ordered pair of distinct items `(i, j)` with nonzero
/// co-occurrence yields an edge `j -> i` typed by `(c_i, c_j)`. For each
/// destination and relation only the `top_n` heaviest incoming edges are
/// kept, lower source id first on ties.
pub fn build_graph(
    sequences: &[Vec<ItemId>],
    item_categories: &[CategoryId],
    vocab_hash: &str,
    config: &GraphConfig,
) -> Result<CrossSessionGraph> {
    config.validate()?;
    if sequences.iter().all(|s| s.is_empty()) {
        return Err(Error::EmptyDataset("no training sequences to build a graph from".into()));
    }
    let m = item_categories.len();
    let cooc = epsilon_cooccurrence(sequences, m, config.epsilon);
    let relations = build_relation_table(&cooc, item_categories, config.top_q);

    let mut groups: HashMap<(ItemId, u16), Vec<Edge>> = HashMap::new();
    for (&(i, j), &n) in &cooc.counts {
        if i == j {
            continue;
        }
        let rel = relations.relation(item_categories[i as usize], item_categories[j as usize]);
        let weight = edge_weight(n, cooc.freq[i as usize], cooc.freq[j as usize], config.alpha);
        groups.entry((i, rel)).or_default().push(Edge {
            src: j,
            dst: i,
            rel,
            weight,
        });
    }
    let mut edges = Vec::new();
    for (_, mut group) in groups {
        group.sort_unstable_by(|a, b| b.weight.total_cmp(&a.weight).then(a.src.cmp(&b.src)));
        group.truncate(config.top_n);
        edges.extend(group);
    }
    let graph = CrossSessionGraph::from_edges(m, edges, relations, config.clone(), vocab_hash.to_string());
    log::info!(
        "graph: {} nodes, {} edges, {} relations",
        graph.num_nodes(),
        graph.num_edges(),
        graph.relations().num_relations()
    );
    Ok(graph)
}
