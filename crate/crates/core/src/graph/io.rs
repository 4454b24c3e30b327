//! Binary and JSON forms of a graph.
//!
//! Binary layout, little-endian: magic `CSGR`, version `u32`, node count
//! `u64`, edge count `u64`, relation count `u32`, vocabulary hash and
//! config JSON (each a `u32` length then UTF-8 bytes), edge records
//! `(src u32, dst u32, rel u16, weight f32)`, then the named relations as
//! a `u32` count of `(c_i u32, c_j u32, count u64)`.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::{CrossSessionGraph, Edge, GraphConfig, RelationTable};
use crate::error::{Error, Result};

pub const GRAPH_MAGIC: [u8; 4] = *b"CSGR";
pub const GRAPH_VERSION: u32 = 1;

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.write_u32::<LE>(s.len() as u32).unwrap();
    out.extend_from_slice(s.as_bytes());
}

fn get_str(cur: &mut Cursor<&[u8]>) -> std::io::Result<String> {
    let n = cur.read_u32::<LE>()? as usize;
    let remaining = cur.get_ref().len() - cur.position() as usize;
    if n > remaining {
        return Err(std::io::ErrorKind::UnexpectedEof.into());
    }
    let mut buf = vec![0u8; n];
    cur.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

fn truncated(e: std::io::Error) -> Error {
    Error::format("graph file", format!("truncated or corrupt: {e}"))
}

impl CrossSessionGraph {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.edges.len() * 14);
        out.extend_from_slice(&GRAPH_MAGIC);
        out.write_u32::<LE>(GRAPH_VERSION).unwrap();
        out.write_u64::<LE>(self.num_nodes as u64).unwrap();
        out.write_u64::<LE>(self.edges.len() as u64).unwrap();
        out.write_u32::<LE>(self.relations.num_relations() as u32).unwrap();
        put_str(&mut out, &self.vocab_hash);
        put_str(&mut out, &serde_json::to_string(&self.config).expect("config serializes"));
        for e in &self.edges {
            out.write_u32::<LE>(e.src).unwrap();
            out.write_u32::<LE>(e.dst).unwrap();
            out.write_u16::<LE>(e.rel).unwrap();
            out.write_f32::<LE>(e.weight as f32).unwrap();
        }
        out.write_u32::<LE>(self.relations.num_named() as u32).unwrap();
        for &((ci, cj), n) in self.relations.named() {
            out.write_u32::<LE>(ci).unwrap();
            out.write_u32::<LE>(cj).unwrap();
            out.write_u64::<LE>(n).unwrap();
        }
        out
    }

    /// Parses [`Self::to_bytes`] output. Weights come back at `f32`
    /// precision.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        cur.read_exact(&mut magic).map_err(truncated)?;
        if magic != GRAPH_MAGIC {
            return Err(Error::format("graph file", "bad magic"));
        }
        let version = cur.read_u32::<LE>().map_err(truncated)?;
        if version != GRAPH_VERSION {
            return Err(Error::format(
                "graph file",
                format!("version {version}, expected {GRAPH_VERSION}"),
            ));
        }
        let num_nodes = cur.read_u64::<LE>().map_err(truncated)? as usize;
        let num_edges = cur.read_u64::<LE>().map_err(truncated)? as usize;
        let num_relations = cur.read_u32::<LE>().map_err(truncated)? as usize;
        let vocab_hash = get_str(&mut cur).map_err(truncated)?;
        let config: GraphConfig = serde_json::from_str(&get_str(&mut cur).map_err(truncated)?)
            .map_err(|e| Error::format("graph file", format!("config: {e}")))?;
        if num_edges.saturating_mul(14) > bytes.len() {
            return Err(truncated(std::io::ErrorKind::UnexpectedEof.into()));
        }
        let mut edges = Vec::with_capacity(num_edges);
        for _ in 0..num_edges {
            let src = cur.read_u32::<LE>().map_err(truncated)?;
            let dst = cur.read_u32::<LE>().map_err(truncated)?;
            let rel = cur.read_u16::<LE>().map_err(truncated)?;
            let weight = cur.read_f32::<LE>().map_err(truncated)? as f64;
            if src as usize >= num_nodes || dst as usize >= num_nodes || rel as usize >= num_relations {
                return Err(Error::format("graph file", format!("edge {src}->{dst} rel {rel} out of range")));
            }
            edges.push(Edge { src, dst, rel, weight });
        }
        let num_named = cur.read_u32::<LE>().map_err(truncated)? as usize;
        if num_named + 3 != num_relations {
            return Err(Error::format(
                "graph file",
                format!("{num_named} named relations but relation count {num_relations}"),
            ));
        }
        let mut named = Vec::with_capacity(num_named);
        for _ in 0..num_named {
            let ci = cur.read_u32::<LE>().map_err(truncated)?;
            let cj = cur.read_u32::<LE>().map_err(truncated)?;
            let n = cur.read_u64::<LE>().map_err(truncated)?;
            named.push(((ci, cj), n));
        }
        if cur.position() as usize != bytes.len() {
            return Err(Error::format("graph file", "trailing bytes"));
        }
        Ok(CrossSessionGraph::from_edges(
            num_nodes,
            edges,
            RelationTable::from_named(named),
            config,
            vocab_hash,
        ))
    }

    /// Hex SHA-256 of the binary form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|source| Error::Write {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| Error::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    /// Readable export; `item_key`/`category_key` label ids when given.
    pub fn to_json(
        &self,
        item_key: Option<&dyn Fn(u32) -> String>,
        category_key: Option<&dyn Fn(u32) -> String>,
    ) -> serde_json::Value {
        let cat = |c: u32| category_key.map_or(json!(c), |f| json!(f(c)));
        let item = |v: u32| item_key.map_or(json!(v), |f| json!(f(v)));
        let rel = &self.relations;
        let mut relations: Vec<_> = rel
            .named()
            .iter()
            .enumerate()
            .map(|(id, &((ci, cj), n))| {
                json!({"id": id, "kind": rel.kind(id as u16), "pair": [cat(ci), cat(cj)], "count": n})
            })
            .collect();
        for id in [rel.same(), rel.drift(), rel.self_relation()] {
            relations.push(json!({"id": id, "kind": rel.kind(id)}));
        }
        let edges: Vec<_> = self
            .edges
            .iter()
            .map(|e| json!({"src": item(e.src), "dst": item(e.dst), "rel": e.rel, "weight": e.weight}))
            .collect();
        json!({
            "nodes": self.num_nodes,
            "config": self.config,
            "vocab_hash": self.vocab_hash,
            "relations": relations,
            "edges": edges,
        })
    }
}
