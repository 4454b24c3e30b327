use std::collections::HashMap;

use serde::Serialize;

use super::Cooccurrence;
use crate::data::CategoryId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    Named,
    Same,
    Drift,
    SelfLoop,
}

/// Maps ordered category pairs to dense relation ids.
///
/// Ids `0..q` are the named pairs in rank order, followed by the same-
/// category fallback, the cross-category fallback and the self relation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationTable {
    named: Vec<((CategoryId, CategoryId), u64)>,
    lookup: HashMap<(CategoryId, CategoryId), u16>,
}

impl RelationTable {
    pub(crate) fn from_named(named: Vec<((CategoryId, CategoryId), u64)>) -> Self {
        let lookup = named
            .iter()
            .enumerate()
            .map(|(id, &(pair, _))| (pair, id as u16))
            .collect();
        RelationTable { named, lookup }
    }

    /// Named pairs with the co-occurrence count they were ranked by.
    pub fn named(&self) -> &[((CategoryId, CategoryId), u64)] {
        &self.named
    }

    pub fn num_named(&self) -> usize {
        self.named.len()
    }

    pub fn same(&self) -> u16 {
        self.named.len() as u16
    }

    pub fn drift(&self) -> u16 {
        self.named.len() as u16 + 1
    }

    pub fn self_relation(&self) -> u16 {
        self.named.len() as u16 + 2
    }

    pub fn num_relations(&self) -> usize {
        self.named.len() + 3
    }

    pub fn relation(&self, c_i: CategoryId, c_j: CategoryId) -> u16 {
        match self.lookup.get(&(c_i, c_j)) {
            Some(&id) => id,
            None if c_i == c_j => self.same(),
            None => self.drift(),
        }
    }

    pub fn kind(&self, rel: u16) -> RelationKind {
        match rel as usize {
            r if r < self.named.len() => RelationKind::Named,
            r if r == self.named.len() => RelationKind::Same,
            r if r == self.named.len() + 1 => RelationKind::Drift,
            _ => RelationKind::SelfLoop,
        }
    }
}

/// Ranks ordered category pairs by total co-occurrence count of distinct
/// item pairs and names the first `top_q`. Ties go to the smaller pair.
pub fn build_relation_table(cooc: &Cooccurrence, item_categories: &[CategoryId], top_q: usize) -> RelationTable {
    let mut totals: HashMap<(CategoryId, CategoryId), u64> = HashMap::new();
    for (&(i, j), &n) in &cooc.counts {
        if i != j {
            let pair = (item_categories[i as usize], item_categories[j as usize]);
            *totals.entry(pair).or_insert(0) += n;
        }
    }
    let mut ranked: Vec<_> = totals.into_iter().collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(top_q);
    RelationTable::from_named(ranked)
}
