//! On-disk dataset layout.
//!
//! A dataset directory holds `train.jsonl` and `test.jsonl` (one
//! `{"items":[..],"target":..}` record per line), `train_sequences.jsonl`
//! and `test_sequences.jsonl` (one id array per line, before
//! augmentation), `vocab.json` and `stats.json`.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::sessions::{Dataset, DatasetStats, Vocab};
use crate::error::{Error, Result};

pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const TRAIN_SEQUENCES_FILE: &str = "train_sequences.jsonl";
pub const TEST_SEQUENCES_FILE: &str = "test_sequences.jsonl";
pub const VOCAB_FILE: &str = "vocab.json";
pub const STATS_FILE: &str = "stats.json";

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let wrap = |source| Error::Write {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::create(path).map_err(wrap)?;
    let mut out = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(wrap)?;
    }
    out.flush().map_err(wrap)
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let wrap = |source| Error::Read {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::open(path).map_err(wrap)?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(wrap)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| {
            Error::format("dataset record", format!("{}:{}: {e}", path.display(), n + 1))
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<DatasetStats> {
    fs::create_dir_all(dir).map_err(|source| Error::Write {
        path: dir.to_path_buf(),
        source,
    })?;
    write_jsonl(&dir.join(TRAIN_FILE), &dataset.train)?;
    write_jsonl(&dir.join(TEST_FILE), &dataset.test)?;
    write_jsonl(&dir.join(TRAIN_SEQUENCES_FILE), &dataset.train_sequences)?;
    write_jsonl(&dir.join(TEST_SEQUENCES_FILE), &dataset.test_sequences)?;
    write_text(&dir.join(VOCAB_FILE), &dataset.vocab.to_json())?;
    let stats = dataset.stats();
    write_text(&dir.join(STATS_FILE), &serde_json::to_string_pretty(&stats)?)?;
    Ok(stats)
}

pub fn read_vocab(dir: &Path) -> Result<Vocab> {
    Vocab::from_json(&read_text(&dir.join(VOCAB_FILE))?)
}

/// Loads a dataset directory and checks every id against the vocabulary.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let vocab = read_vocab(dir)?;
    let stats: DatasetStats = serde_json::from_str(&read_text(&dir.join(STATS_FILE))?)?;
    let dataset = Dataset {
        train: read_jsonl(&dir.join(TRAIN_FILE))?,
        test: read_jsonl(&dir.join(TEST_FILE))?,
        train_sequences: read_jsonl(&dir.join(TRAIN_SEQUENCES_FILE))?,
        test_sequences: read_jsonl(&dir.join(TEST_SEQUENCES_FILE))?,
        vocab,
        config: stats.config,
        config_fingerprint: stats.config_fingerprint,
    };
    let m = dataset.vocab.num_items() as u32;
    let t_max = dataset.config.t_max;
    let bad_session = dataset
        .train
        .iter()
        .chain(&dataset.test)
        .any(|s| s.items.is_empty() || s.items.len() > t_max || s.target >= m || s.items.iter().any(|&i| i >= m));
    let bad_sequence = dataset
        .train_sequences
        .iter()
        .chain(&dataset.test_sequences)
        .any(|s| s.iter().any(|&i| i >= m));
    if bad_session || bad_sequence {
        return Err(Error::format(
            "dataset",
            format!("{} has sessions inconsistent with its vocabulary or t_max", dir.display()),
        ));
    }
    Ok(dataset)
}
