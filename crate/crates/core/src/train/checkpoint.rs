//! Versioned binary checkpoints.
//!
//! Layout, little-endian: magic `CARS`, version `u32`, then `u32` d, m, l,
//! L and relation count; vocabulary hash, graph hash and config JSON (each
//! a `u32` length then UTF-8); epoch `u32`, optimizer step `u64`, learning
//! rate `f64`; tensor count `u32`; then per tensor its name (`u32` length
//! and bytes), dtype tag `u8`, rank `u8`, dims as `u64`, and raw values.

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::{Adam, TrainConfig};
use crate::autodiff::{DType, ParamSet, Real, Tensor};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CARS";
pub const CHECKPOINT_VERSION: u32 = 1;

const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
struct Snapshot {
    model: ModelConfig,
    train: TrainConfig,
}

#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub model: Model<T>,
    pub train_config: TrainConfig,
    pub vocab_hash: String,
    pub graph_hash: String,
    /// Completed epochs.
    pub epoch: usize,
    pub optimizer: Adam<T>,
    /// Learning rate of the last completed epoch.
    pub lr: f64,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.write_u32::<LE>(s.len() as u32).unwrap();
    out.extend_from_slice(s.as_bytes());
}

fn corrupt(detail: impl std::fmt::Display) -> Error {
    Error::format("checkpoint", detail.to_string())
}

fn truncated(e: std::io::Error) -> Error {
    corrupt(format_args!("truncated or unreadable ({e})"))
}

struct Reader<'b> {
    cur: Cursor<&'b [u8]>,
}

impl Reader<'_> {
    fn remaining(&self) -> usize {
        self.cur.get_ref().len() - self.cur.position() as usize
    }

    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        if n > self.remaining() {
            return Err(truncated(std::io::ErrorKind::UnexpectedEof.into()));
        }
        let mut buf = vec![0u8; n];
        self.cur.read_exact(&mut buf).map_err(truncated)?;
        Ok(buf)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.cur.read_u32::<LE>().map_err(truncated)? as usize;
        String::from_utf8(self.bytes(n)?).map_err(corrupt)
    }

    fn u32(&mut self) -> Result<u32> {
        self.cur.read_u32::<LE>().map_err(truncated)
    }
}

fn write_tensor<T: Real>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) {
    put_str(out, name);
    out.push(T::DTYPE.tag());
    out.push(2);
    out.write_u64::<LE>(t.rows() as u64).unwrap();
    out.write_u64::<LE>(t.cols() as u64).unwrap();
    for &v in t.data() {
        v.write_le(out);
    }
}

fn read_tensor<T: Real>(r: &mut Reader<'_>) -> Result<(String, Tensor<T>)> {
    let name = r.string()?;
    let tag = r.cur.read_u8().map_err(truncated)?;
    let dtype = DType::from_tag(tag).ok_or_else(|| corrupt(format_args!("unknown dtype tag {tag}")))?;
    if dtype != T::DTYPE {
        return Err(corrupt(format_args!("tensor {name} is {dtype:?}, expected {:?}", T::DTYPE)));
    }
    let rank = r.cur.read_u8().map_err(truncated)?;
    if rank != 2 {
        return Err(corrupt(format_args!("tensor {name} has rank {rank}")));
    }
    let rows = r.cur.read_u64::<LE>().map_err(truncated)? as usize;
    let cols = r.cur.read_u64::<LE>().map_err(truncated)? as usize;
    let n = rows.checked_mul(cols).ok_or_else(|| corrupt("tensor size overflow"))?;
    let raw = r.bytes(n.checked_mul(dtype.width()).ok_or_else(|| corrupt("tensor size overflow"))?)?;
    let data = raw.chunks_exact(dtype.width()).map(T::read_le).collect();
    Ok((name, Tensor::from_vec(rows, cols, data)))
}

impl<T: Real> Checkpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.model.config;
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.write_u32::<LE>(CHECKPOINT_VERSION).unwrap();
        for v in [c.dim, c.num_items, c.num_categories, c.layers, c.num_relations] {
            out.write_u32::<LE>(v as u32).unwrap();
        }
        put_str(&mut out, &self.vocab_hash);
        put_str(&mut out, &self.graph_hash);
        let snapshot = Snapshot {
            model: c.clone(),
            train: self.train_config.clone(),
        };
        put_str(&mut out, &serde_json::to_string(&snapshot).expect("config serializes"));
        out.write_u32::<LE>(self.epoch as u32).unwrap();
        out.write_u64::<LE>(self.optimizer.step).unwrap();
        out.write_f64::<LE>(self.lr).unwrap();
        let params = &self.model.params;
        out.write_u32::<LE>(3 * params.len() as u32).unwrap();
        for (name, t) in params.iter() {
            write_tensor(&mut out, name, t);
        }
        for (i, name) in params.names().iter().enumerate() {
            write_tensor(&mut out, &format!("{ADAM_M}{name}"), &self.optimizer.m[i]);
            write_tensor(&mut out, &format!("{ADAM_V}{name}"), &self.optimizer.v[i]);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { cur: Cursor::new(bytes) };
        if r.bytes(4)? != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(corrupt(format_args!(
                "version {version} is not supported (expected {CHECKPOINT_VERSION})"
            )));
        }
        let mut dims = [0usize; 5];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let vocab_hash = r.string()?;
        let graph_hash = r.string()?;
        let snapshot: Snapshot = serde_json::from_str(&r.string()?).map_err(corrupt)?;
        let c = &snapshot.model;
        if dims != [c.dim, c.num_items, c.num_categories, c.layers, c.num_relations] {
            return Err(corrupt("header dimensions disagree with the stored config"));
        }
        let epoch = r.u32()? as usize;
        let step = r.cur.read_u64::<LE>().map_err(truncated)?;
        let lr = r.cur.read_f64::<LE>().map_err(truncated)?;
        let count = r.u32()? as usize;
        let mut params = ParamSet::new();
        let mut moments = Vec::new();
        for _ in 0..count {
            let (name, t) = read_tensor::<T>(&mut r)?;
            if name.starts_with(ADAM_M) || name.starts_with(ADAM_V) {
                moments.push((name, t));
            } else {
                if params.index_of(&name).is_some() {
                    return Err(corrupt(format_args!("duplicate tensor {name}")));
                }
                params.push(name, t);
            }
        }
        if r.remaining() != 0 {
            return Err(corrupt("trailing bytes"));
        }
        let mut optimizer = Adam::new(&params, snapshot.train.l2);
        optimizer.step = step;
        let mut filled = vec![[false; 2]; params.len()];
        for (name, t) in moments {
            let (slot, base) = match name.strip_prefix(ADAM_M) {
                Some(base) => (0, base),
                None => (1, &name[ADAM_V.len()..]),
            };
            let i = params
                .index_of(base)
                .ok_or_else(|| corrupt(format_args!("optimizer state for unknown tensor {base}")))?;
            if t.shape() != params.get(i).shape() {
                return Err(corrupt(format_args!("optimizer state for {base} has the wrong shape")));
            }
            let target = if slot == 0 { &mut optimizer.m[i] } else { &mut optimizer.v[i] };
            *target = t;
            filled[i][slot] = true;
        }
        if filled.iter().any(|f| !f[0] || !f[1]) {
            return Err(corrupt("missing optimizer state"));
        }
        let model = Model::from_params(snapshot.model.clone(), params)
            .ok_or_else(|| corrupt("tensors do not match the model configuration"))?;
        Ok(Checkpoint {
            model,
            train_config: snapshot.train,
            vocab_hash,
            graph_hash,
            epoch,
            optimizer,
            lr,
        })
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

    /// Refuses a checkpoint trained against other data.
    pub fn verify(&self, vocab_hash: &str, graph_hash: Option<&str>) -> Result<()> {
        if self.vocab_hash != vocab_hash {
            return Err(Error::VocabMismatch {
                expected: self.vocab_hash.clone(),
                found: vocab_hash.to_string(),
            });
        }
        if let Some(g) = graph_hash {
            if self.graph_hash != g {
                return Err(Error::GraphMismatch {
                    expected: self.graph_hash.clone(),
                    found: g.to_string(),
                });
            }
        }
        Ok(())
    }
}
