//! Flat run configuration: defaults, then the `--config` file, then flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use cares::data::{ColumnMapping, ColumnRef, PreprocessConfig};
use cares::graph::GraphConfig;
use cares::label::LabelConfig;
use cares::train::TrainConfig;
use clap::Args;
use serde::{Deserialize, Serialize};

/// Soft-label weights tuned per public dataset.
pub const LAMBDA_PRESETS: [(&str, f64); 3] = [("diginetica", 0.1), ("yoochoose", 5.0), ("tmall", 10.0)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub delimiter: String,
    pub header: bool,
    pub session_col: String,
    pub time_col: String,
    pub item_col: String,
    pub category_col: String,
    pub min_item_freq: usize,
    pub t_max: usize,
    pub split_boundary: Option<i64>,
    pub augment: bool,
    pub test_augment: bool,

    pub epsilon: usize,
    pub top_n: usize,
    pub top_q: usize,
    pub alpha: f64,

    pub dim: usize,
    pub layers: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub l2: f64,
    /// Explicit soft-label weight; overrides `dataset`.
    pub lambda: Option<f64>,
    /// Name of a lambda preset.
    pub dataset: Option<String>,
    pub epochs: usize,
    pub seed: u64,
    pub score_scale: f64,
    pub shared_layers: bool,
    pub layer_norm: bool,
    pub general_context: bool,
    pub personalization: bool,
    pub side_information: bool,

    pub hash_dim: usize,
    pub pool_size: usize,
    pub retrieve_k: usize,
    pub label_seed: u64,

    pub threads: Option<usize>,
    pub deterministic: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PreprocessConfig::default();
        let g = GraphConfig::default();
        let t = TrainConfig::default();
        let l = LabelConfig::default();
        RunConfig {
            delimiter: ",".into(),
            header: false,
            session_col: "0".into(),
            time_col: "1".into(),
            item_col: "2".into(),
            category_col: "3".into(),
            min_item_freq: p.min_item_freq,
            t_max: p.t_max,
            split_boundary: p.split_boundary,
            augment: p.augmentation,
            test_augment: p.augment_test,
            epsilon: g.epsilon,
            top_n: g.top_n,
            top_q: g.top_q,
            alpha: g.alpha,
            dim: t.dim,
            layers: t.layers,
            batch_size: t.batch_size,
            lr: t.lr,
            lr_decay: t.lr_decay,
            lr_decay_every: t.lr_decay_every,
            l2: t.l2,
            lambda: None,
            dataset: None,
            epochs: t.epochs,
            seed: t.seed,
            score_scale: t.score_scale,
            shared_layers: t.shared_layers,
            layer_norm: t.layer_norm,
            general_context: t.general_context,
            personalization: t.personalization,
            side_information: t.side_information,
            hash_dim: l.hash_dim,
            pool_size: l.pool_size,
            retrieve_k: l.retrieve_k,
            label_seed: l.seed,
            threads: None,
            deterministic: false,
        }
    }
}

/// Flags that override configuration keys of the same name.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// Field delimiter of the input log (`,`, `tab`, `;`, ...)
    #[arg(long, global = true)]
    delimiter: Option<String>,
    /// The input log starts with a header row
    #[arg(long, global = true)]
    header: bool,
    /// Session column (index or header name)
    #[arg(long, global = true)]
    session_col: Option<String>,
    /// Timestamp column (index or header name)
    #[arg(long, global = true)]
    time_col: Option<String>,
    /// Item column (index or header name)
    #[arg(long, global = true)]
    item_col: Option<String>,
    /// Category column (index or header name)
    #[arg(long, global = true)]
    category_col: Option<String>,
    #[arg(long, global = true)]
    min_item_freq: Option<usize>,
    /// Sessions keep at most their last `t_max` clicks
    #[arg(long, global = true)]
    t_max: Option<usize>,
    /// Epoch second separating train from test sessions
    #[arg(long, global = true)]
    split_boundary: Option<i64>,
    /// Keep only the full-length sample of each training session
    #[arg(long, global = true)]
    no_augment: bool,
    /// Evaluate on the last click of each test session only
    #[arg(long, global = true)]
    no_test_augment: bool,

    #[arg(long, global = true)]
    epsilon: Option<usize>,
    #[arg(long, global = true)]
    top_n: Option<usize>,
    #[arg(long, global = true)]
    top_q: Option<usize>,
    #[arg(long, global = true)]
    alpha: Option<f64>,

    #[arg(long, global = true)]
    dim: Option<usize>,
    #[arg(long, global = true)]
    layers: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    lr_decay: Option<f64>,
    #[arg(long, global = true)]
    lr_decay_every: Option<usize>,
    #[arg(long, global = true)]
    l2: Option<f64>,
    /// Soft-label weight; 0 disables label collaboration
    #[arg(long, global = true)]
    lambda: Option<f64>,
    /// Lambda preset: diginetica, yoochoose or tmall
    #[arg(long, global = true)]
    dataset: Option<String>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    score_scale: Option<f64>,
    #[arg(long, global = true)]
    shared_layers: bool,
    #[arg(long, global = true)]
    layer_norm: bool,
    #[arg(long, global = true)]
    no_general_context: bool,
    #[arg(long, global = true)]
    no_personalization: bool,
    #[arg(long, global = true)]
    no_side_information: bool,

    /// Fingerprint width in bits
    #[arg(long, global = true)]
    hash_dim: Option<usize>,
    /// Candidate pool capacity
    #[arg(long, global = true)]
    pool_size: Option<usize>,
    /// Neighbours retrieved per session
    #[arg(long, global = true)]
    retrieve_k: Option<usize>,
    #[arg(long, global = true)]
    label_seed: Option<u64>,

    /// Worker threads (defaults to all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Single-threaded, reproducible execution
    #[arg(long, global = true)]
    deterministic: bool,
}

macro_rules! take {
    ($cfg:ident, $o:ident, $($f:ident),*) => {
        $(if let Some(v) = $o.$f.clone() { $cfg.$f = v; })*
    };
}

impl RunConfig {
    pub fn load(path: Option<&Path>, o: &Overrides) -> Result<Self> {
        let mut c = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("invalid config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        take!(c, o, delimiter, session_col, time_col, item_col, category_col, min_item_freq, t_max);
        take!(c, o, epsilon, top_n, top_q, alpha);
        take!(c, o, dim, layers, batch_size, lr, lr_decay, lr_decay_every, l2, epochs, seed, score_scale);
        take!(c, o, hash_dim, pool_size, retrieve_k, label_seed);
        if o.split_boundary.is_some() {
            c.split_boundary = o.split_boundary;
        }
        if o.lambda.is_some() {
            c.lambda = o.lambda;
        }
        if o.dataset.is_some() {
            c.dataset = o.dataset.clone();
        }
        if o.threads.is_some() {
            c.threads = o.threads;
        }
        c.header |= o.header;
        c.augment &= !o.no_augment;
        c.test_augment &= !o.no_test_augment;
        c.shared_layers |= o.shared_layers;
        c.layer_norm |= o.layer_norm;
        c.general_context &= !o.no_general_context;
        c.personalization &= !o.no_personalization;
        c.side_information &= !o.no_side_information;
        c.deterministic |= o.deterministic;
        Ok(c)
    }

    pub fn column_mapping(&self) -> Result<ColumnMapping> {
        let delimiter = match self.delimiter.as_str() {
            "tab" | "\\t" | "\t" => b'\t',
            d if d.len() == 1 => d.as_bytes()[0],
            d => bail!("delimiter must be a single byte, got {d:?}"),
        };
        let col = |s: &str| match s.parse::<usize>() {
            Ok(i) => ColumnRef::Index(i),
            Err(_) => ColumnRef::Name(s.to_string()),
        };
        Ok(ColumnMapping {
            delimiter,
            has_header: self.header,
            session: col(&self.session_col),
            timestamp: col(&self.time_col),
            item: col(&self.item_col),
            category: col(&self.category_col),
        })
    }

    pub fn preprocess(&self) -> PreprocessConfig {
        PreprocessConfig {
            min_item_freq: self.min_item_freq,
            t_max: self.t_max,
            split_boundary: self.split_boundary,
            augmentation: self.augment,
            augment_test: self.test_augment,
        }
    }

    pub fn graph(&self) -> GraphConfig {
        GraphConfig {
            epsilon: self.epsilon,
            top_n: self.top_n,
            top_q: self.top_q,
            alpha: self.alpha,
        }
    }

    pub fn lambda(&self) -> Result<f64> {
        if let Some(l) = self.lambda {
            return Ok(l);
        }
        match &self.dataset {
            None => Ok(TrainConfig::default().lambda),
            Some(name) => LAMBDA_PRESETS
                .iter()
                .find(|(n, _)| n.eq_ignore_ascii_case(name))
                .map(|&(_, l)| l)
                .with_context(|| format!("unknown dataset preset {name:?} (known: diginetica, yoochoose, tmall)")),
        }
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let t = TrainConfig {
            dim: self.dim,
            layers: self.layers,
            batch_size: self.batch_size,
            lr: self.lr,
            lr_decay: self.lr_decay,
            lr_decay_every: self.lr_decay_every,
            l2: self.l2,
            lambda: self.lambda()?,
            epochs: self.epochs,
            seed: self.seed,
            score_scale: self.score_scale,
            shared_layers: self.shared_layers,
            layer_norm: self.layer_norm,
            general_context: self.general_context,
            personalization: self.personalization,
            side_information: self.side_information,
            label: LabelConfig {
                hash_dim: self.hash_dim,
                pool_size: self.pool_size,
                retrieve_k: self.retrieve_k,
                seed: self.label_seed,
            },
        };
        t.validate()?;
        Ok(t)
    }

    /// Worker count: one in deterministic mode, else the requested count
    /// or every core.
    pub fn worker_threads(&self) -> usize {
        if self.deterministic {
            1
        } else {
            self.threads.unwrap_or(0)
        }
    }
}
