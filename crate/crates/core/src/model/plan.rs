use super::ModelConfig;
use crate::autodiff::Segments;
use crate::data::{CategoryId, ItemId};
use crate::graph::{subgraph_for_batch, CrossSessionGraph};

/// Attention edges over subgraph nodes, self edges included.
#[derive(Debug, Clone)]
pub struct EdgeList {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub rel: Vec<usize>,
    pub weight: Vec<f64>,
    /// Edges grouped by destination node.
    pub groups: Segments,
}

impl EdgeList {
    /// Builds the list from `(src, dst, rel, weight)` tuples over `num_nodes`
    /// nodes, prepending one self edge per node.
    pub fn with_self_edges(num_nodes: usize, self_relation: usize, edges: impl IntoIterator<Item = (usize, usize, usize, f64)>) -> Self {
        let (mut src, mut dst, mut rel, mut weight): (Vec<_>, Vec<_>, Vec<_>, Vec<_>) =
            ((0..num_nodes).collect(), (0..num_nodes).collect(), vec![self_relation; num_nodes], vec![1.0; num_nodes]);
        for (s, d, r, w) in edges {
            src.push(s);
            dst.push(d);
            rel.push(r);
            weight.push(w);
        }
        let groups = Segments::new(dst.clone(), num_nodes);
        EdgeList {
            src,
            dst,
            rel,
            weight,
            groups,
        }
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

/// Index bookkeeping for one batch: which subgraph node and catalog item
/// each session position refers to, plus the positional lookups.
///
/// Occurrences are laid out session by session, in click order.
#[derive(Debug, Clone)]
pub struct BatchPlan {
    /// Catalog ids of the subgraph nodes.
    pub nodes: Vec<ItemId>,
    pub edges: EdgeList,
    pub occ_node: Vec<usize>,
    pub occ_item: Vec<usize>,
    pub occ_category: Vec<usize>,
    pub occ_session: Vec<usize>,
    /// Reverse position: 0 for the last click of a session.
    pub occ_position: Vec<usize>,
    /// Length-table row: session length minus one.
    pub occ_length: Vec<usize>,
    /// Occurrence index of each session's last click.
    pub last: Vec<usize>,
    pub sessions: Segments,
}

impl BatchPlan {
    /// Panics on an empty session or one longer than `t_max`.
    pub fn new(sessions: &[&[ItemId]], graph: &CrossSessionGraph, item_categories: &[CategoryId], config: &ModelConfig) -> Self {
        let relations = graph.relations();
        assert_eq!(
            relations.num_relations(),
            config.num_relations,
            "graph relation count does not match the model"
        );
        let hops = if config.general_context { config.layers } else { 0 };
        let sub = subgraph_for_batch(graph, sessions.iter().flat_map(|s| s.iter()), hops);
        let same = relations.same() as usize;
        let edges = EdgeList::with_self_edges(
            sub.num_nodes(),
            relations.self_relation() as usize,
            sub.edges.iter().map(|e| {
                let rel = if config.side_information { e.rel as usize } else { same };
                (
                    sub.local_index(e.src).expect("edge source in subgraph"),
                    sub.local_index(e.dst).expect("edge destination in subgraph"),
                    rel,
                    e.weight,
                )
            }),
        );

        let total: usize = sessions.iter().map(|s| s.len()).sum();
        let mut plan = BatchPlan {
            nodes: sub.nodes.clone(),
            edges,
            occ_node: Vec::with_capacity(total),
            occ_item: Vec::with_capacity(total),
            occ_category: Vec::with_capacity(total),
            occ_session: Vec::with_capacity(total),
            occ_position: Vec::with_capacity(total),
            occ_length: Vec::with_capacity(total),
            last: Vec::with_capacity(sessions.len()),
            sessions: Segments::new(Vec::new(), 0),
        };
        for (s, items) in sessions.iter().enumerate() {
            let t = items.len();
            assert!(t >= 1 && t <= config.t_max, "session {s} has length {t}, expected 1..={}", config.t_max);
            for (p, &item) in items.iter().enumerate() {
                plan.occ_node.push(sub.local_index(item).expect("session item in subgraph"));
                plan.occ_item.push(item as usize);
                plan.occ_category.push(item_categories[item as usize] as usize);
                plan.occ_session.push(s);
                plan.occ_position.push(t - 1 - p);
                plan.occ_length.push(t - 1);
            }
            plan.last.push(plan.occ_item.len() - 1);
        }
        plan.sessions = Segments::new(plan.occ_session.clone(), sessions.len());
        plan
    }

    pub fn batch_size(&self) -> usize {
        self.last.len()
    }

    pub fn num_occurrences(&self) -> usize {
        self.occ_item.len()
    }
}
