use std::collections::VecDeque;

use super::{hamming, Fingerprint};
use crate::data::ItemId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolRecord {
    pub fingerprint: Fingerprint,
    pub target: ItemId,
    /// Insertion counter; larger is newer.
    pub seq: u64,
}

/// Fixed-capacity window over the most recent training samples.
#[derive(Debug, Clone)]
pub struct CandidatePool {
    capacity: usize,
    records: VecDeque<PoolRecord>,
    next_seq: u64,
}

impl CandidatePool {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "pool capacity must be positive");
        CandidatePool {
            capacity,
            records: VecDeque::with_capacity(capacity),
            next_seq: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records from oldest to newest.
    pub fn records(&self) -> impl ExactSizeIterator<Item = &PoolRecord> {
        self.records.iter()
    }

    pub fn push(&mut self, fingerprint: Fingerprint, target: ItemId) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(PoolRecord {
            fingerprint,
            target,
            seq: self.next_seq,
        });
        self.next_seq += 1;
    }

    /// Appends in order, evicting the oldest records beyond capacity.
    pub fn update(&mut self, batch: impl IntoIterator<Item = (Fingerprint, ItemId)>) {
        for (fp, target) in batch {
            self.push(fp, target);
        }
    }

    pub fn clear(&mut self) {
        self.records.clear();
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Retrieved {
    pub targets: Vec<ItemId>,
    pub weights: Vec<f64>,
    pub distances: Vec<u32>,
}

/// The `k` records nearest to `query` in Hamming distance, newer first on
/// ties, weighted by `m − distance` and normalized. If every distance is
/// `m` the weights are uniform.
pub fn retrieve(pool: &CandidatePool, query: &Fingerprint, k: usize) -> Retrieved {
    assert!(k >= 1, "k must be at least 1");
    let mut scored: Vec<(u32, u64, ItemId)> = pool
        .records
        .iter()
        .map(|r| (hamming(&r.fingerprint, query), u64::MAX - r.seq, r.target))
        .collect();
    let k = k.min(scored.len());
    if k == 0 {
        return Retrieved::default();
    }
    if k < scored.len() {
        scored.select_nth_unstable(k - 1);
        scored.truncate(k);
    }
    scored.sort_unstable();

    let m = query.len() as f64;
    let raw: Vec<f64> = scored.iter().map(|&(dist, ..)| m - dist as f64).collect();
    let total: f64 = raw.iter().sum();
    let weights = if total > 0.0 {
        raw.iter().map(|w| w / total).collect()
    } else {
        vec![1.0 / k as f64; k]
    };
    Retrieved {
        targets: scored.iter().map(|s| s.2).collect(),
        weights,
        distances: scored.iter().map(|s| s.0).collect(),
    }
}

/// Sparse distribution over items, sorted by item id.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabel {
    pub entries: Vec<(ItemId, f64)>,
}

impl SoftLabel {
    pub fn get(&self, item: ItemId) -> f64 {
        self.entries
            .binary_search_by_key(&item, |e| e.0)
            .map_or(0.0, |i| self.entries[i].1)
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }
}

/// Weighted sum of one-hot targets; repeated targets accumulate.
pub fn soft_label(targets: &[ItemId], weights: &[f64]) -> SoftLabel {
    assert_eq!(targets.len(), weights.len());
    let mut entries: Vec<(ItemId, f64)> = targets.iter().copied().zip(weights.iter().copied()).collect();
    entries.sort_by_key(|e| e.0);
    let mut merged: Vec<(ItemId, f64)> = Vec::with_capacity(entries.len());
    for (item, w) in entries {
        match merged.last_mut() {
            Some(last) if last.0 == item => last.1 += w,
            _ => merged.push((item, w)),
        }
    }
    SoftLabel { entries: merged }
}
