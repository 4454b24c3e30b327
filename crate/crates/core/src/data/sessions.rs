//! Session construction, temporal split, frequency filtering and
//! prefix augmentation.

use std::collections::HashMap;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ingest::RawEvent;
use crate::error::{Error, Result};

/// Dense item id in `[0, m)`.
pub type ItemId = u32;
/// Dense category id in `[0, l)`.
pub type CategoryId = u32;

/// Bijections between raw keys and dense ids, plus each item's category.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    item_keys: Vec<String>,
    category_keys: Vec<String>,
    item_category: Vec<CategoryId>,
    item_index: HashMap<String, ItemId>,
    category_index: HashMap<String, CategoryId>,
}

#[derive(Serialize, Deserialize)]
struct VocabItem {
    id: ItemId,
    key: String,
    category: CategoryId,
}

#[derive(Serialize, Deserialize)]
struct VocabCategory {
    id: CategoryId,
    key: String,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    items: Vec<VocabItem>,
    categories: Vec<VocabCategory>,
}

impl Vocab {
    /// Interns `item` with `category`. An item already present keeps its
    /// first category; returns false when the new category disagrees.
    pub fn intern(&mut self, item: &str, category: &str) -> (ItemId, bool) {
        let cat = match self.category_index.get(category) {
            Some(&c) => c,
            None => {
                let c = self.category_keys.len() as CategoryId;
                self.category_keys.push(category.to_string());
                self.category_index.insert(category.to_string(), c);
                c
            }
        };
        match self.item_index.get(item) {
            Some(&id) => (id, self.item_category[id as usize] == cat),
            None => {
                let id = self.item_keys.len() as ItemId;
                self.item_keys.push(item.to_string());
                self.item_category.push(cat);
                self.item_index.insert(item.to_string(), id);
                (id, true)
            }
        }
    }

    pub fn num_items(&self) -> usize {
        self.item_keys.len()
    }

    pub fn num_categories(&self) -> usize {
        self.category_keys.len()
    }

    pub fn item_id(&self, key: &str) -> Option<ItemId> {
        self.item_index.get(key).copied()
    }

    pub fn item_key(&self, id: ItemId) -> &str {
        &self.item_keys[id as usize]
    }

    pub fn category_key(&self, id: CategoryId) -> &str {
        &self.category_keys[id as usize]
    }

    pub fn category_of(&self, item: ItemId) -> CategoryId {
        self.item_category[item as usize]
    }

    pub fn item_categories(&self) -> &[CategoryId] {
        &self.item_category
    }

    pub fn to_json(&self) -> String {
        let file = VocabFile {
            items: self
                .item_keys
                .iter()
                .enumerate()
                .map(|(i, k)| VocabItem {
                    id: i as ItemId,
                    key: k.clone(),
                    category: self.item_category[i],
                })
                .collect(),
            categories: self
                .category_keys
                .iter()
                .enumerate()
                .map(|(i, k)| VocabCategory {
                    id: i as CategoryId,
                    key: k.clone(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("vocab serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(text)?;
        let mut vocab = Vocab::default();
        for (i, c) in file.categories.iter().enumerate() {
            if c.id as usize != i || vocab.category_index.insert(c.key.clone(), c.id).is_some() {
                return Err(Error::format("vocab", format!("category {} out of order or duplicated", c.key)));
            }
            vocab.category_keys.push(c.key.clone());
        }
        for (i, it) in file.items.iter().enumerate() {
            if it.id as usize != i
                || it.category as usize >= vocab.category_keys.len()
                || vocab.item_index.insert(it.key.clone(), it.id).is_some()
            {
                return Err(Error::format("vocab", format!("item {} invalid", it.key)));
            }
            vocab.item_keys.push(it.key.clone());
            vocab.item_category.push(it.category);
        }
        Ok(vocab)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

/// A time-ordered click sequence before target extraction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClickSequence {
    pub items: Vec<ItemId>,
    pub start_time: i64,
    pub end_time: i64,
}

/// A prefix of clicks and the item that followed it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub items: Vec<ItemId>,
    pub target: ItemId,
}

impl Session {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub min_item_freq: usize,
    pub t_max: usize,
    /// Sessions ending strictly after this epoch second go to the test set.
    /// `None` puts the boundary 7 days before the last observed click.
    pub split_boundary: Option<i64>,
    pub augmentation: bool,
    pub augment_test: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            min_item_freq: 5,
            t_max: 20,
            split_boundary: None,
            augmentation: true,
            augment_test: true,
        }
    }
}

pub const DEFAULT_TEST_WINDOW_SECS: i64 = 7 * 24 * 3600;

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_item_freq < 1 {
            return Err(Error::Config("min_item_freq must be at least 1".into()));
        }
        if self.t_max < 2 {
            return Err(Error::Config("t_max must be at least 2".into()));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Train/test samples over a compact vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<Session>,
    pub test: Vec<Session>,
    /// Filtered, truncated training sequences before augmentation; the
    /// cross-session graph is built from these.
    pub train_sequences: Vec<Vec<ItemId>>,
    pub test_sequences: Vec<Vec<ItemId>>,
    pub vocab: Vocab,
    pub config: PreprocessConfig,
    pub config_fingerprint: String,
}

/// Groups events by session key and orders each group by time.
///
/// Ties keep input order. Sequences are returned in chronological order of
/// their first click; the returned vocabulary assigns ids by first
/// appearance in that order.
pub fn build_sessions(events: &[RawEvent]) -> (Vec<ClickSequence>, Vocab) {
    let mut groups: IndexMap<&str, Vec<usize>> = IndexMap::new();
    for (i, ev) in events.iter().enumerate() {
        groups.entry(ev.session_key.as_str()).or_default().push(i);
    }
    let mut ordered: Vec<Vec<usize>> = groups
        .into_values()
        .map(|mut idx| {
            idx.sort_by_key(|&i| events[i].timestamp);
            idx
        })
        .collect();
    ordered.sort_by_key(|idx| (events[idx[0]].timestamp, idx.iter().min().copied()));

    let mut vocab = Vocab::default();
    let mut conflicts = 0usize;
    let sequences = ordered
        .iter()
        .map(|idx| {
            let items = idx
                .iter()
                .map(|&i| {
                    let (id, consistent) = vocab.intern(&events[i].item_key, &events[i].category_key);
                    conflicts += usize::from(!consistent);
                    id
                })
                .collect();
            ClickSequence {
                items,
                start_time: events[idx[0]].timestamp,
                end_time: events[*idx.last().unwrap()].timestamp,
            }
        })
        .collect();
    if conflicts > 0 {
        log::warn!("{conflicts} click(s) carried a category different from the item's first one; first category kept");
    }
    (sequences, vocab)
}

/// A sequence is a test sequence iff its last click is after `boundary`.
pub fn split_by_time(
    sequences: Vec<ClickSequence>,
    boundary: i64,
) -> (Vec<ClickSequence>, Vec<ClickSequence>) {
    if let (Some(min), Some(max)) = (
        sequences.iter().map(|s| s.end_time).min(),
        sequences.iter().map(|s| s.end_time).max(),
    ) {
        if boundary >= max {
            log::warn!("split boundary {boundary} is at or after the last session end {max}; test set is empty");
        } else if boundary < min {
            log::warn!("split boundary {boundary} is before the first session end {min}; train set is empty");
        }
    }
    sequences.into_iter().partition(|s| s.end_time <= boundary)
}

/// Every prefix paired with its next item, longest prefix first.
pub fn augment(sequence: &[ItemId]) -> Vec<Session> {
    (1..sequence.len())
        .rev()
        .map(|k| Session {
            items: sequence[..k].to_vec(),
            target: sequence[k],
        })
        .collect()
}

/// The whole sequence as a single sample: all but the last click, then the last.
pub fn last_item_sample(sequence: &[ItemId]) -> Option<Session> {
    (sequence.len() >= 2).then(|| Session {
        items: sequence[..sequence.len() - 1].to_vec(),
        target: sequence[sequence.len() - 1],
    })
}

/// Truncates to the most recent `t_max` clicks, then removes rare items and
/// short sequences until nothing changes, reindexes the vocabulary over the
/// surviving training items and expands sequences into samples.
pub fn filter_dataset(
    train: Vec<ClickSequence>,
    test: Vec<ClickSequence>,
    vocab: &Vocab,
    config: &PreprocessConfig,
) -> Result<Dataset> {
    config.validate()?;
    let truncate = |s: ClickSequence| -> Vec<ItemId> {
        let skip = s.items.len().saturating_sub(config.t_max);
        s.items[skip..].to_vec()
    };
    let mut train: Vec<Vec<ItemId>> = train.into_iter().map(truncate).collect();
    let mut test: Vec<Vec<ItemId>> = test.into_iter().map(truncate).collect();

    let m = vocab.num_items();
    loop {
        let mut freq = vec![0usize; m];
        for s in &train {
            for &i in s {
                freq[i as usize] += 1;
            }
        }
        let keep = |i: &ItemId| freq[*i as usize] >= config.min_item_freq;
        let mut changed = false;
        for set in [&mut train, &mut test] {
            for s in set.iter_mut() {
                let before = s.len();
                s.retain(keep);
                changed |= s.len() != before;
            }
            let before = set.len();
            set.retain(|s| s.len() >= 2);
            changed |= set.len() != before;
        }
        if !changed {
            break;
        }
    }
    if train.is_empty() {
        return Err(Error::EmptyDataset(
            "no training session survives filtering".into(),
        ));
    }
    if test.is_empty() {
        log::warn!("test set is empty after filtering");
    }

    // Compact ids by first appearance in the (chronological) training data.
    let mut compact = Vocab::default();
    let mut remap: HashMap<ItemId, ItemId> = HashMap::new();
    for s in &train {
        for &i in s {
            remap.entry(i).or_insert_with(|| {
                let cat = vocab.category_key(vocab.category_of(i));
                compact.intern(vocab.item_key(i), cat).0
            });
        }
    }
    let apply = |seqs: Vec<Vec<ItemId>>| -> Vec<Vec<ItemId>> {
        seqs.into_iter()
            .map(|s| s.into_iter().map(|i| remap[&i]).collect())
            .collect()
    };
    let train = apply(train);
    let test = apply(test);

    let expand = |seqs: &[Vec<ItemId>], augmenting: bool| -> Vec<Session> {
        if augmenting {
            seqs.iter().flat_map(|s| augment(s)).collect()
        } else {
            seqs.iter().filter_map(|s| last_item_sample(s)).collect()
        }
    };
    Ok(Dataset {
        train: expand(&train, config.augmentation),
        test: expand(&test, config.augment_test),
        train_sequences: train,
        test_sequences: test,
        vocab: compact,
        config: config.clone(),
        config_fingerprint: config.fingerprint(),
    })
}

/// Full pipeline from parsed events.
pub fn preprocess(events: &[RawEvent], config: &PreprocessConfig) -> Result<Dataset> {
    config.validate()?;
    if events.is_empty() {
        return Err(Error::EmptyDataset("no events".into()));
    }
    let (sequences, vocab) = build_sessions(events);
    let boundary = config.split_boundary.unwrap_or_else(|| {
        sequences.iter().map(|s| s.end_time).max().unwrap_or(0) - DEFAULT_TEST_WINDOW_SECS
    });
    let (train, test) = split_by_time(sequences, boundary);
    filter_dataset(train, test, &vocab, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub train_sessions: usize,
    pub test_sessions: usize,
    pub items: usize,
    pub categories: usize,
    /// Mean click count of the filtered sequences (train and test).
    pub avg_length: f64,
    pub train_sequences: usize,
    pub test_sequences: usize,
    pub config: PreprocessConfig,
    pub config_fingerprint: String,
    pub vocab_hash: String,
}

impl Dataset {
    pub fn stats(&self) -> DatasetStats {
        let all = self.train_sequences.iter().chain(&self.test_sequences);
        let total: usize = all.map(Vec::len).sum();
        let n = self.train_sequences.len() + self.test_sequences.len();
        DatasetStats {
            train_sessions: self.train.len(),
            test_sessions: self.test.len(),
            items: self.vocab.num_items(),
            categories: self.vocab.num_categories(),
            avg_length: if n == 0 { 0.0 } else { total as f64 / n as f64 },
            train_sequences: self.train_sequences.len(),
            test_sequences: self.test_sequences.len(),
            config: self.config.clone(),
            config_fingerprint: self.config_fingerprint.clone(),
            vocab_hash: self.vocab.hash(),
        }
    }
}
