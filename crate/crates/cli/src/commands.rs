use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use cares::data::{ingest_events, last_item_sample, preprocess as run_preprocess, read_dataset, read_vocab, write_dataset, Dataset, Session};
use cares::eval::{evaluate as run_evaluate, recommend as run_recommend, DEFAULT_CUTOFF};
use cares::graph::{build_graph as run_build_graph, CrossSessionGraph};
use cares::train::{Checkpoint, Trainer};
use log::{info, warn};
use serde_json::json;

use crate::config::RunConfig;

fn require_out<'p>(out: Option<&'p Path>, command: &str) -> Result<&'p Path> {
    out.with_context(|| format!("{command} needs --out"))
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("{} does not exist or is not a file", path.display());
    }
    Ok(())
}

fn require_dir(path: &Path) -> Result<()> {
    if !path.is_dir() {
        bail!("{} does not exist or is not a directory", path.display());
    }
    Ok(())
}

/// Writes `text` to `out`, or to stdout when no path is given.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn load_graph_for(dataset: &Dataset, path: &Path) -> Result<CrossSessionGraph> {
    let graph = CrossSessionGraph::load(path)?;
    let vocab_hash = dataset.vocab.hash();
    if graph.vocab_hash() != vocab_hash {
        return Err(cares::Error::VocabMismatch {
            expected: graph.vocab_hash().to_string(),
            found: vocab_hash,
        })
        .with_context(|| format!("graph {} was built from another dataset", path.display()));
    }
    Ok(graph)
}

fn load_checkpoint(path: &Path, vocab_hash: &str, graph: &CrossSessionGraph) -> Result<Checkpoint<f32>> {
    let ckpt = Checkpoint::<f32>::load(path)?;
    ckpt.verify(vocab_hash, Some(&graph.hash()))
        .with_context(|| format!("checkpoint {} does not match the given data", path.display()))?;
    Ok(ckpt)
}

pub fn preprocess(cfg: &RunConfig, input: &Path, out: Option<&Path>) -> Result<()> {
    require_file(input)?;
    let out = require_out(out, "preprocess")?;
    let mapping = cfg.column_mapping()?;
    let config = cfg.preprocess();
    config.validate()?;
    let file = File::open(input).with_context(|| format!("cannot open {}", input.display()))?;
    let ingested = ingest_events(BufReader::new(file), &mapping)?;
    if ingested.malformed > 0 {
        warn!("skipped {} malformed lines", ingested.malformed);
    }
    let dataset = run_preprocess(&ingested.events, &config)?;
    let stats = write_dataset(out, &dataset)?;
    info!(
        "{} train and {} test samples over {} items",
        stats.train_sessions, stats.test_sessions, stats.items
    );
    emit(None, &format!("{}\n", serde_json::to_string(&stats)?))
}

pub fn build_graph(cfg: &RunConfig, data: &Path, out: Option<&Path>) -> Result<()> {
    require_dir(data)?;
    let out = require_out(out, "build-graph")?;
    let config = cfg.graph();
    config.validate()?;
    let dataset = read_dataset(data)?;
    let vocab = &dataset.vocab;
    let graph = run_build_graph(&dataset.train_sequences, vocab.item_categories(), &vocab.hash(), &config)?;
    graph.save(out)?;
    let rel = graph.relations();
    let named: Vec<_> = rel
        .named()
        .iter()
        .map(|&((ci, cj), n)| json!({"pair": [vocab.category_key(ci), vocab.category_key(cj)], "count": n}))
        .collect();
    let mut per_relation = vec![0usize; rel.num_relations()];
    for e in graph.edges() {
        per_relation[e.rel as usize] += 1;
    }
    let report = json!({
        "nodes": graph.num_nodes(),
        "edges": graph.num_edges(),
        "hash": graph.hash(),
        "named_relations": named,
        "edges_per_relation": {
            "named": per_relation[..rel.num_named()].iter().sum::<usize>(),
            "same": per_relation[rel.same() as usize],
            "drift": per_relation[rel.drift() as usize],
        },
    });
    info!("graph with {} nodes and {} edges written to {}", graph.num_nodes(), graph.num_edges(), out.display());
    emit(None, &format!("{report}\n"))
}

pub fn train(
    cfg: &RunConfig,
    data: &Path,
    graph_path: &Path,
    resume: Option<&Path>,
    log_path: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    require_dir(data)?;
    require_file(graph_path)?;
    if let Some(r) = resume {
        require_file(r)?;
    }
    let out = require_out(out, "train")?;
    let train_config = cfg.train()?;
    let dataset = read_dataset(data)?;
    if dataset.train.is_empty() {
        return Err(cares::Error::EmptyDataset("no training samples".into()).into());
    }
    let graph = load_graph_for(&dataset, graph_path)?;
    let vocab_hash = dataset.vocab.hash();
    let categories = dataset.vocab.item_categories();
    let mut trainer = match resume {
        Some(r) => {
            let mut t = Trainer::from_checkpoint(load_checkpoint(r, &vocab_hash, &graph)?, &graph, categories)?;
            t.config.epochs = train_config.epochs;
            t
        }
        None => Trainer::<f32>::new(train_config, &graph, categories, dataset.config.t_max)?,
    };
    let mut log_file = match log_path {
        Some(p) => Some(
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .with_context(|| format!("cannot open {}", p.display()))?,
        ),
        None => None,
    };
    while trainer.epoch < trainer.config.epochs {
        let metrics = trainer.train_epoch(&dataset.train)?;
        let line = serde_json::to_string(&metrics)?;
        emit(None, &format!("{line}\n"))?;
        if let Some(f) = log_file.as_mut() {
            writeln!(f, "{line}")?;
        }
        info!(
            "epoch {}/{}: loss {:.5} (ce {:.5}, kl {:.5}) in {:.1}s",
            metrics.epoch, trainer.config.epochs, metrics.loss, metrics.ce, metrics.kl, metrics.wall_seconds
        );
        // Written through a temporary file so an interrupted run keeps the
        // previous epoch intact.
        let tmp = out.with_extension("tmp");
        trainer.checkpoint(&vocab_hash).save(&tmp)?;
        fs::rename(&tmp, out).with_context(|| format!("cannot write {}", out.display()))?;
    }
    Ok(())
}

pub fn evaluate(
    cfg: &RunConfig,
    data: &Path,
    graph_path: &Path,
    checkpoint: &Path,
    ranks: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    require_dir(data)?;
    require_file(graph_path)?;
    require_file(checkpoint)?;
    let dataset = read_dataset(data)?;
    let graph = load_graph_for(&dataset, graph_path)?;
    let ckpt = load_checkpoint(checkpoint, &dataset.vocab.hash(), &graph)?;
    let test: Vec<Session> = if cfg.test_augment {
        dataset.test.clone()
    } else {
        dataset.test_sequences.iter().filter_map(|s| last_item_sample(s)).collect()
    };
    let report = run_evaluate(
        &ckpt.model,
        &graph,
        dataset.vocab.item_categories(),
        &test,
        ckpt.train_config.batch_size,
        DEFAULT_CUTOFF,
    )?;
    if let Some(p) = ranks {
        report.save_tsv(p)?;
    }
    info!("{} cases: P@20 {:.4}, MRR@20 {:.4}", report.n, report.p_at_20, report.mrr_at_20);
    emit(out, &format!("{}\n", report.to_json()))
}

pub fn recommend(data: &Path, graph_path: &Path, checkpoint: &Path, k: usize, out: Option<&Path>) -> Result<()> {
    require_dir(data)?;
    require_file(graph_path)?;
    require_file(checkpoint)?;
    let vocab = read_vocab(data)?;
    let graph = CrossSessionGraph::load(graph_path)?;
    let ckpt = load_checkpoint(checkpoint, &vocab.hash(), &graph)?;

    let mut input = String::new();
    std::io::stdin().read_to_string(&mut input)?;
    let keys: Vec<&str> = input.split(|c: char| c.is_whitespace() || c == ',').filter(|s| !s.is_empty()).collect();
    if keys.is_empty() {
        bail!("no session items on stdin");
    }
    let unknown: Vec<String> = keys.iter().filter(|k| vocab.item_id(k).is_none()).map(|k| k.to_string()).collect();
    if !unknown.is_empty() {
        return Err(cares::Error::UnknownItems(unknown).into());
    }
    let mut items: Vec<u32> = keys.iter().filter_map(|k| vocab.item_id(k)).collect();
    let t_max = ckpt.model.config.t_max;
    if items.len() > t_max {
        items.drain(..items.len() - t_max);
    }
    let recs = run_recommend(&ckpt.model, &graph, vocab.item_categories(), &items, k);
    let rows: Vec<_> = recs.iter().map(|&(i, s)| json!({"item": vocab.item_key(i), "score": s})).collect();
    emit(out, &format!("{}\n", serde_json::Value::Array(rows)))
}

pub fn inspect_graph(graph_path: &Path, data: Option<&Path>, out: Option<&Path>) -> Result<()> {
    require_file(graph_path)?;
    let graph = CrossSessionGraph::load(graph_path)?;
    let vocab = match data {
        Some(d) => {
            let v = read_vocab(d)?;
            if v.hash() != graph.vocab_hash() {
                bail!("{} does not hold the vocabulary this graph was built from", d.display());
            }
            Some(v)
        }
        None => None,
    };
    let item_key = vocab.as_ref().map(|v| move |i: u32| v.item_key(i).to_string());
    let category_key = vocab.as_ref().map(|v| move |c: u32| v.category_key(c).to_string());
    let value = graph.to_json(
        item_key.as_ref().map(|f| f as &dyn Fn(u32) -> String),
        category_key.as_ref().map(|f| f as &dyn Fn(u32) -> String),
    );
    emit(out, &format!("{}\n", serde_json::to_string_pretty(&value)?))
}
