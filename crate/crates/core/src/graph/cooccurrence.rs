use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use crate::data::ItemId;

/// Neighbourhood co-occurrence counts and item frequencies.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Cooccurrence {
    /// `(v, u) -> n`: `u` sat within epsilon positions of `v` (excluding
    /// `v`'s own position) `n` times. Same-item pairs at distinct positions
    /// are counted too.
    pub counts: BTreeMap<(ItemId, ItemId), u64>,
    /// Total occurrences per item id.
    pub freq: Vec<u64>,
}

impl Cooccurrence {
    pub fn count(&self, v: ItemId, u: ItemId) -> u64 {
        self.counts.get(&(v, u)).copied().unwrap_or(0)
    }
}

type Partial = (HashMap<(ItemId, ItemId), u64>, Vec<u64>);

fn merge(mut a: Partial, b: Partial) -> Partial {
    if a.0.len() < b.0.len() {
        return merge(b, a);
    }
    for (k, n) in b.0 {
        *a.0.entry(k).or_insert(0) += n;
    }
    for (x, y) in a.1.iter_mut().zip(b.1) {
        *x += y;
    }
    a
}

/// Counts, for every position `k` and every other position `j` with
/// `|j - k| <= epsilon`, one co-occurrence of `(s[k], s[j])`.
///
/// Sessions are processed in parallel and merged; counts are integers so
/// the result does not depend on the schedule.
pub fn epsilon_cooccurrence(sequences: &[Vec<ItemId>], num_items: usize, epsilon: usize) -> Cooccurrence {
    let (counts, freq) = sequences
        .par_iter()
        .fold(
            || (HashMap::new(), vec![0u64; num_items]),
            |(mut counts, mut freq): Partial, seq| {
                for (k, &v) in seq.iter().enumerate() {
                    freq[v as usize] += 1;
                    let lo = k.saturating_sub(epsilon);
                    let hi = (k + epsilon).min(seq.len() - 1);
                    for (j, &u) in seq.iter().enumerate().take(hi + 1).skip(lo) {
                        if j != k {
                            *counts.entry((v, u)).or_insert(0) += 1;
                        }
                    }
                }
                (counts, freq)
            },
        )
        .reduce(|| (HashMap::new(), vec![0u64; num_items]), merge);
    Cooccurrence {
        counts: counts.into_iter().collect(),
        freq,
    }
}

/// `cooc / ((alpha ln f_i + 1)(alpha ln f_j + 1))`.
pub fn edge_weight(cooc: u64, freq_i: u64, freq_j: u64, alpha: f64) -> f64 {
    debug_assert!(freq_i >= 1 && freq_j >= 1);
    let damp = |f: u64| alpha * (f as f64).ln() + 1.0;
    cooc as f64 / (damp(freq_i) * damp(freq_j))
}
