//! Delimited clickstream parsing.

use std::io::Read;

use chrono::{DateTime, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One click: who (session), when, what (item), and the item's category.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawEvent {
    pub session_key: String,
    pub timestamp: i64,
    pub item_key: String,
    pub category_key: String,
}

/// A column addressed by position or, when the source has a header, by name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub delimiter: u8,
    pub has_header: bool,
    pub session: ColumnRef,
    pub timestamp: ColumnRef,
    pub item: ColumnRef,
    pub category: ColumnRef,
}

impl Default for ColumnMapping {
    /// Headerless CSV with columns `session,timestamp,item,category`.
    fn default() -> Self {
        ColumnMapping {
            delimiter: b',',
            has_header: false,
            session: ColumnRef::Index(0),
            timestamp: ColumnRef::Index(1),
            item: ColumnRef::Index(2),
            category: ColumnRef::Index(3),
        }
    }
}

impl ColumnMapping {
    pub fn tsv() -> Self {
        ColumnMapping {
            delimiter: b'\t',
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Ingested {
    pub events: Vec<RawEvent>,
    /// Lines skipped because a field was missing, empty or unparsable.
    pub malformed: usize,
}

fn resolve(col: &ColumnRef, header: Option<&csv::StringRecord>) -> Result<usize> {
    match (col, header) {
        (ColumnRef::Index(i), Some(h)) if *i >= h.len() => Err(Error::MissingColumn(format!(
            "column index {i} but header has {} columns",
            h.len()
        ))),
        (ColumnRef::Index(i), _) => Ok(*i),
        (ColumnRef::Name(name), Some(h)) => h
            .iter()
            .position(|f| f.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.clone())),
        (ColumnRef::Name(name), None) => Err(Error::MissingColumn(format!(
            "{name} (named columns need a header row)"
        ))),
    }
}

/// Epoch seconds from an integer, a decimal, an RFC 3339 timestamp or a
/// `YYYY-MM-DD` date. Negative values are rejected.
pub fn parse_timestamp(field: &str) -> Option<i64> {
    let field = field.trim();
    if field.is_empty() {
        return None;
    }
    let ts = if let Ok(v) = field.parse::<i64>() {
        v
    } else if let Ok(v) = field.parse::<f64>() {
        if !v.is_finite() {
            return None;
        }
        v.floor() as i64
    } else if let Ok(dt) = DateTime::parse_from_rfc3339(field) {
        dt.timestamp()
    } else if let Ok(d) = NaiveDate::parse_from_str(field, "%Y-%m-%d") {
        d.and_hms_opt(0, 0, 0)?.and_utc().timestamp()
    } else {
        return None;
    };
    (ts >= 0).then_some(ts)
}

/// Parses events in file order, skipping malformed lines.
pub fn ingest_events<R: Read>(source: R, mapping: &ColumnMapping) -> Result<Ingested> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(mapping.delimiter)
        .has_headers(mapping.has_header)
        .flexible(true)
        .from_reader(source);

    let header = if mapping.has_header {
        match reader.headers() {
            Ok(h) => Some(h.clone()),
            Err(e) if e.is_io_error() => return Err(Error::Unreadable(e.to_string())),
            Err(e) => return Err(Error::format("header row", e.to_string())),
        }
    } else {
        None
    };
    let cols = [
        resolve(&mapping.session, header.as_ref())?,
        resolve(&mapping.timestamp, header.as_ref())?,
        resolve(&mapping.item, header.as_ref())?,
        resolve(&mapping.category, header.as_ref())?,
    ];

    let mut out = Ingested::default();
    let mut record = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) if e.is_io_error() => return Err(Error::Unreadable(e.to_string())),
            Err(_) => {
                out.malformed += 1;
                continue;
            }
        }
        match parse_record(&record, cols) {
            Some(ev) => out.events.push(ev),
            None => out.malformed += 1,
        }
    }
    if out.malformed > 0 {
        log::warn!("skipped {} malformed line(s)", out.malformed);
    }
    Ok(out)
}

fn parse_record(record: &csv::StringRecord, [s, t, i, c]: [usize; 4]) -> Option<RawEvent> {
    let field = |k: usize| record.get(k).map(str::trim).filter(|f| !f.is_empty());
    Some(RawEvent {
        session_key: field(s)?.to_string(),
        timestamp: parse_timestamp(field(t)?)?,
        item_key: field(i)?.to_string(),
        category_key: field(c)?.to_string(),
    })
}
