//! Episode trace export: JSON lines, one step per line, with observation
//! embeddings deduplicated into a flat little-endian `f32` file.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Action, StepEvent, SubgoalId};
use crate::util::hash_f64s;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub t: u64,
    pub action: Action,
    pub events: Vec<StepEvent>,
    pub subgoal_id: Option<SubgoalId>,
    /// Hex hash of the observation embedding.
    pub embedding_hash: String,
    /// Row of the embedding in the companion binary file.
    pub embedding_row: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_fail: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval_hits: Option<Vec<u64>>,
}

/// Deduplicating store of embeddings keyed by content hash.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingTable {
    dim: usize,
    rows: Vec<f32>,
    index: BTreeMap<u64, usize>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable { dim, rows: Vec::new(), index: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.rows.len() / self.dim.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Returns `(hex hash, row)`, inserting the vector if unseen.
    pub fn insert(&mut self, v: &[f64]) -> Result<(String, usize)> {
        if v.len() != self.dim {
            return Err(Error::Shape { context: "trace embedding", expected: self.dim, actual: v.len() });
        }
        let h = hash_f64s(v);
        let row = match self.index.get(&h) {
            Some(&r) => r,
            None => {
                let r = self.len();
                self.rows.extend(v.iter().map(|x| *x as f32));
                self.index.insert(h, r);
                r
            }
        };
        Ok((format!("{h:016x}"), row))
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.rows[r * self.dim..(r + 1) * self.dim]
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_f32_file(path, &self.rows)
    }
}

pub fn write_f32_file(path: &Path, values: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_f32_file(path: &Path) -> Result<Vec<f32>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::parse(format!("{}: length {} is not a multiple of 4", path.display(), bytes.len())));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

pub fn write_jsonl(path: &Path, lines: &[TraceLine]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for line in lines {
        serde_json::to_writer(&mut out, line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<TraceLine>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut lines = Vec::new();
    for line in file.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            lines.push(serde_json::from_str(&line)?);
        }
    }
    Ok(lines)
}
