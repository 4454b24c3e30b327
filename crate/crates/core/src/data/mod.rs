//! Clickstream ingestion and dataset preparation.

mod ingest;
mod io;
mod sessions;

pub use ingest::{ingest_events, parse_timestamp, ColumnMapping, ColumnRef, Ingested, RawEvent};
pub use io::{read_dataset, read_vocab, write_dataset, STATS_FILE, TEST_FILE, TRAIN_FILE, VOCAB_FILE};
pub use sessions::{
    augment, build_sessions, filter_dataset, last_item_sample, preprocess, split_by_time,
    CategoryId, ClickSequence, Dataset, DatasetStats, ItemId, PreprocessConfig, Session, Vocab,
    DEFAULT_TEST_WINDOW_SECS,
};
