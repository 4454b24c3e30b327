use std::collections::hash_map::{Entry, HashMap};

use super::{CrossSessionGraph, Edge};
use crate::data::ItemId;

/// The part of a graph that message passing over a batch can reach.
#[derive(Debug, Clone, PartialEq)]
pub struct SubGraph {
    /// Global item ids, ascending; position is the local index.
    pub nodes: Vec<ItemId>,
    /// Parent edges with both endpoints in `nodes`, sorted by `(dst, src)`.
    pub edges: Vec<Edge>,
    local: HashMap<ItemId, usize>,
}

impl SubGraph {
    pub fn local_index(&self, item: ItemId) -> Option<usize> {
        self.local.get(&item).copied()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn contains(&self, item: ItemId) -> bool {
        self.local.contains_key(&item)
    }
}

/// Batch items plus every node that reaches one of them along at most
/// `hops` incoming edges.
///
/// Only edges into nodes fewer than `hops` steps from the batch are kept;
/// those are the messages an `hops`-layer encoder propagates to the batch
/// items, so `hops = 0` yields no edges.
pub fn subgraph_for_batch<'s, I>(graph: &CrossSessionGraph, batch_items: I, hops: usize) -> SubGraph
where
    I: IntoIterator<Item = &'s ItemId>,
{
    let mut depth: HashMap<ItemId, usize> = HashMap::new();
    let mut frontier: Vec<ItemId> = Vec::new();
    for &v in batch_items {
        if depth.insert(v, 0).is_none() {
            frontier.push(v);
        }
    }
    let mut edges = Vec::new();
    for h in 0..hops {
        let mut next = Vec::new();
        for &v in &frontier {
            for e in graph.incoming(v) {
                edges.push(*e);
                if let Entry::Vacant(slot) = depth.entry(e.src) {
                    slot.insert(h + 1);
                    next.push(e.src);
                }
            }
        }
        frontier = next;
    }
    let mut nodes: Vec<ItemId> = depth.into_keys().collect();
    nodes.sort_unstable();
    edges.sort_unstable_by_key(|e| (e.dst, e.src, e.rel));
    let local = nodes.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    SubGraph { nodes, edges, local }
}
