//! Episodic memory: embedding-keyed entries written on events, top-k cosine
//! retrieval, structured-text serialization and per-subgoal compression.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use base64::Engine;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::features::SceneView;
use crate::model::{Cell, EventKind, Observation, StepEvent, SubgoalId};
use crate::util::{cosine, normalized};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryStatus {
    Success,
    Failure,
    Checkpoint,
}

impl EntryStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            EntryStatus::Success => "success",
            EntryStatus::Failure => "failure",
            EntryStatus::Checkpoint => "checkpoint",
        }
    }
}

/// Compact state record: gripper pose, held object, object cells.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StateDelta {
    pub gripper: Option<Cell>,
    pub holding: Option<u32>,
    /// `(object, cell, container)` for every item.
    pub items: Vec<(u32, Cell, Option<u32>)>,
}

impl StateDelta {
    pub fn from_features(raw: &[f64]) -> StateDelta {
        let Some(view) = SceneView::decode(raw) else {
            return StateDelta::default();
        };
        StateDelta {
            gripper: Some(view.gripper.position),
            holding: view.gripper.holding,
            items: view.objects.iter().filter(|o| !o.is_container).map(|o| (o.id, o.position, o.container)).collect(),
        }
    }
}

impl fmt::Display for StateDelta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let Some(g) = self.gripper else {
            return f.write_str("-");
        };
        write!(f, "g{},{},{}", g.x, g.y, g.z)?;
        if let Some(h) = self.holding {
            write!(f, "|h{h}")?;
        }
        for (id, c, inside) in &self.items {
            match inside {
                Some(box_id) => write!(f, "|{id}@c{box_id}")?,
                None => write!(f, "|{id}@{},{}", c.x, c.y)?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    /// Unit-norm observation embedding.
    pub key: Vec<f64>,
    pub keyframe_features: Vec<f64>,
    pub subgoal_id: SubgoalId,
    pub status: EntryStatus,
    pub timestep: u64,
    pub state_delta: StateDelta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalStrategy {
    #[default]
    Cosine,
    Recency,
    Random,
}

impl RetrievalStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            RetrievalStrategy::Cosine => "cosine",
            RetrievalStrategy::Recency => "recency",
            RetrievalStrategy::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(RetrievalStrategy::Cosine),
            "recency" => Ok(RetrievalStrategy::Recency),
            "random" => Ok(RetrievalStrategy::Random),
            other => Err(Error::config(format!("unknown retrieval strategy '{other}'"))),
        }
    }
}

/// Retrieved entry with its cosine similarity to the query.
pub type Hit<'a> = (&'a MemoryEntry, f64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryStore {
    pub entries: Vec<MemoryEntry>,
    pub n_max: usize,
    pub delta_c: u64,
    pub last_checkpoint_timestep: u64,
    /// Set once compression could not get back under `n_max`.
    pub capacity_warning: bool,
}

/// Descending similarity, then larger timestep first.
fn rank(a: &Hit<'_>, b: &Hit<'_>) -> Ordering {
    b.1.total_cmp(&a.1).then(b.0.timestep.cmp(&a.0.timestep))
}

impl MemoryStore {
    pub fn new(n_max: usize, delta_c: u64) -> Self {
        MemoryStore { entries: Vec::new(), n_max, delta_c, last_checkpoint_timestep: 0, capacity_warning: false }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Applies the write policy for one step at harness time `timestep`.
    /// Returns the status written, if any.
    pub fn maybe_write(
        &mut self,
        obs: &Observation,
        timestep: u64,
        subgoal_id: SubgoalId,
        events: &[StepEvent],
    ) -> Option<EntryStatus> {
        if self.entries.last().is_some_and(|e| timestep <= e.timestep) {
            return None;
        }
        let completed = events.iter().find(|e| e.kind == EventKind::SubgoalCompleted);
        let failed = events.iter().any(|e| matches!(e.kind, EventKind::ActionFailed | EventKind::RecoveryTriggered));
        let (status, sid) = if let Some(ev) = completed {
            (EntryStatus::Success, ev.subgoal_id.unwrap_or(subgoal_id))
        } else if failed {
            (EntryStatus::Failure, subgoal_id)
        } else if timestep.saturating_sub(self.last_checkpoint_timestep) >= self.delta_c {
            (EntryStatus::Checkpoint, subgoal_id)
        } else {
            return None;
        };
        self.push(MemoryEntry {
            key: normalized(&obs.embedding),
            keyframe_features: obs.raw_features.clone(),
            subgoal_id: sid,
            status,
            timestep,
            state_delta: StateDelta::from_features(&obs.raw_features),
        });
        Some(status)
    }

    /// Appends an entry and compresses if over capacity.
    pub fn push(&mut self, entry: MemoryEntry) {
        if entry.status == EntryStatus::Checkpoint {
            self.last_checkpoint_timestep = entry.timestep;
        }
        self.entries.push(entry);
        if self.entries.len() > self.n_max {
            self.compress();
        }
    }

    /// Top-`k` by cosine similarity, ties to the more recent entry.
    pub fn retrieve(&self, query: &[f64], k: usize) -> Vec<Hit<'_>> {
        let mut hits: Vec<Hit<'_>> = self.entries.iter().map(|e| (e, cosine(query, &e.key))).collect();
        if k < hits.len() {
            hits.select_nth_unstable_by(k, rank);
            hits.truncate(k);
        }
        hits.sort_by(rank);
        hits
    }

    /// Retrieval under an alternative strategy. `Random` draws from `rng`;
    /// every strategy returns hits in similarity order.
    pub fn retrieve_with<R: Rng + ?Sized>(
        &self,
        strategy: RetrievalStrategy,
        query: &[f64],
        k: usize,
        rng: &mut R,
    ) -> Vec<Hit<'_>> {
        let mut hits: Vec<Hit<'_>> = match strategy {
            RetrievalStrategy::Cosine => return self.retrieve(query, k),
            RetrievalStrategy::Recency => {
                let start = self.entries.len().saturating_sub(k);
                self.entries[start..].iter().map(|e| (e, cosine(query, &e.key))).collect()
            }
            RetrievalStrategy::Random => {
                let n = self.entries.len();
                sample(rng, n, k.min(n)).into_iter().map(|i| (&self.entries[i], cosine(query, &self.entries[i].key))).collect()
            }
        };
        hits.sort_by(rank);
        hits
    }

    /// Keeps all success and failure entries and only the newest checkpoint
    /// per subgoal, then evicts the oldest checkpoints down to `n_max`.
    pub fn compress(&mut self) {
        if self.entries.len() <= self.n_max {
            return;
        }
        let mut newest: BTreeMap<SubgoalId, u64> = BTreeMap::new();
        for e in self.entries.iter().filter(|e| e.status == EntryStatus::Checkpoint) {
            let t = newest.entry(e.subgoal_id).or_insert(e.timestep);
            *t = (*t).max(e.timestep);
        }
        self.entries.retain(|e| e.status != EntryStatus::Checkpoint || newest[&e.subgoal_id] == e.timestep);
        let mut excess = self.entries.len().saturating_sub(self.n_max);
        if excess > 0 {
            // entries are in timestep order, so the first checkpoints are the oldest
            self.entries.retain(|e| {
                if excess > 0 && e.status == EntryStatus::Checkpoint {
                    excess -= 1;
                    false
                } else {
                    true
                }
            });
        }
        if self.entries.len() > self.n_max {
            self.capacity_warning = true;
        }
    }

    /// Most recent entry usable as a rollback target.
    pub fn latest_restorable(&self) -> Option<&MemoryEntry> {
        self.entries.iter().rev().find(|e| matches!(e.status, EntryStatus::Success | EntryStatus::Checkpoint))
    }

    /// JSON dump with keys as base64 little-endian `f32` arrays.
    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Dump<'a> {
            n_max: usize,
            delta_c: u64,
            entries: Vec<DumpEntry<'a>>,
        }
        #[derive(Serialize)]
        struct DumpEntry<'a> {
            key: String,
            subgoal_id: SubgoalId,
            status: EntryStatus,
            timestep: u64,
            state_delta: &'a StateDelta,
        }
        let entries = self
            .entries
            .iter()
            .map(|e| DumpEntry {
                key: encode_f32s(&e.key),
                subgoal_id: e.subgoal_id,
                status: e.status,
                timestep: e.timestep,
                state_delta: &e.state_delta,
            })
            .collect();
        Ok(serde_json::to_string_pretty(&Dump { n_max: self.n_max, delta_c: self.delta_c, entries })?)
    }
}

pub fn encode_f32s(v: &[f64]) -> String {
    let bytes: Vec<u8> = v.iter().flat_map(|x| (*x as f32).to_le_bytes()).collect();
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

pub fn decode_f32s(s: &str) -> Result<Vec<f32>> {
    let bytes = base64::engine::general_purpose::STANDARD.decode(s).map_err(|e| Error::parse(e.to_string()))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::parse("base64 payload is not a whole number of f32 values"));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

/// One line per hit, in the given order.
pub fn serialize_context(hits: &[Hit<'_>]) -> String {
    hits.iter()
        .map(|(e, sim)| {
            format!(
                "[t={}] subgoal={} status={} delta={} sim={:.3}",
                e.timestep,
                e.subgoal_id,
                e.status.as_str(),
                e.state_delta,
                sim
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Ground-truth completion ledger rendered in the same line format.
pub fn ledger_context(completion_times: &BTreeMap<SubgoalId, u64>) -> String {
    let mut rows: Vec<_> = completion_times.iter().collect();
    rows.sort_by_key(|(id, t)| (std::cmp::Reverse(**t), **id));
    rows.iter()
        .map(|(id, t)| format!("[t={t}] subgoal={id} status=success delta=- sim=1.000"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(key: Vec<f64>, t: u64, g: SubgoalId, status: EntryStatus) -> MemoryEntry {
        MemoryEntry {
            key: normalized(&key),
            keyframe_features: vec![],
            subgoal_id: g,
            status,
            timestep: t,
            state_delta: StateDelta::default(),
        }
    }

    fn obs(v: Vec<f64>, t: u64) -> Observation {
        Observation { embedding: v, raw_features: vec![], timestep: t }
    }

    #[test]
    fn write_policy() {
        let mut m = MemoryStore::new(50, 20);
        let done = StepEvent::new(EventKind::SubgoalCompleted, 3, Some(2), "");
        assert_eq!(m.maybe_write(&obs(vec![1.0, 0.0], 3), 3, 1, &[done]), Some(EntryStatus::Success));
        assert_eq!(m.entries[0].subgoal_id, 2);
        assert_eq!(m.maybe_write(&obs(vec![1.0, 0.0], 19), 19, 1, &[]), None);
        assert_eq!(m.maybe_write(&obs(vec![1.0, 0.0], 20), 20, 1, &[]), Some(EntryStatus::Checkpoint));
        assert_eq!(m.maybe_write(&obs(vec![1.0, 0.0], 39), 39, 1, &[]), None);
        let fail = StepEvent::new(EventKind::ActionFailed, 40, None, "x");
        assert_eq!(m.maybe_write(&obs(vec![1.0, 0.0], 40), 40, 1, &[fail]), Some(EntryStatus::Failure));
        // stale timestep never writes
        assert_eq!(m.maybe_write(&obs(vec![1.0, 0.0], 40), 40, 1, &[]), None);
    }

    #[test]
    fn orthogonal_retrieval() {
        let mut m = MemoryStore::new(50, 20);
        m.push(entry(vec![1.0, 0.0, 0.0], 1, 1, EntryStatus::Success));
        m.push(entry(vec![0.0, 1.0, 0.0], 2, 2, EntryStatus::Success));
        let hits = m.retrieve(&[1.0, 0.0, 0.0], 1);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].0.timestep, 1);
        assert!((hits[0].1 - 1.0).abs() < 1e-12);
        assert_eq!(m.retrieve(&[1.0, 0.0, 0.0], 3).len(), 2);
        assert!(MemoryStore::new(5, 5).retrieve(&[1.0], 3).is_empty());
    }

    #[test]
    fn ties_prefer_recent() {
        let mut m = MemoryStore::new(50, 20);
        for t in 1..=4 {
            m.push(entry(vec![1.0, 1.0], t, 1, EntryStatus::Failure));
        }
        let ts: Vec<u64> = m.retrieve(&[1.0, 1.0], 3).iter().map(|h| h.0.timestep).collect();
        assert_eq!(ts, vec![4, 3, 2]);
    }

    #[test]
    fn serialization_lines() {
        assert_eq!(serialize_context(&[]), "");
        let a = entry(vec![1.0, 0.0], 12, 1, EntryStatus::Success);
        let b = entry(vec![0.6, 0.8], 15, 2, EntryStatus::Failure);
        let text = serialize_context(&[(&a, 1.0), (&b, 0.6)]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], "[t=12] subgoal=1 status=success delta=- sim=1.000");
        assert!(lines[1].contains("status=failure") && lines[1].ends_with("sim=0.600"));
    }

    #[test]
    fn compression_keeps_newest_checkpoint_per_subgoal() {
        let mut m = MemoryStore::new(1000, 1);
        let mut t = 0;
        for i in 0..10 {
            t += 1;
            m.push(entry(vec![1.0], t, i % 5 + 1, EntryStatus::Success));
        }
        for i in 0..50 {
            t += 1;
            m.push(entry(vec![1.0], t, i % 5 + 1, EntryStatus::Checkpoint));
        }
        m.n_max = 50;
        m.compress();
        assert_eq!(m.len(), 15);
        let cps: Vec<&MemoryEntry> = m.entries.iter().filter(|e| e.status == EntryStatus::Checkpoint).collect();
        assert_eq!(cps.len(), 5);
        for c in cps {
            assert!(c.timestep > 55);
        }
        let before = m.clone();
        m.compress();
        assert_eq!(m, before);
    }

    #[test]
    fn capacity_warning_when_events_overflow() {
        let mut m = MemoryStore::new(3, 20);
        for t in 1..=4 {
            m.push(entry(vec![1.0], t, 1, EntryStatus::Success));
        }
        assert_eq!(m.len(), 4);
        assert!(m.capacity_warning);
    }

    #[test]
    fn strategies_return_k() {
        use rand::SeedableRng;
        let mut m = MemoryStore::new(50, 20);
        for t in 1..=6 {
            m.push(entry(vec![t as f64, 1.0], t, 1, EntryStatus::Failure));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let rec: Vec<u64> = m
            .retrieve_with(RetrievalStrategy::Recency, &[0.0, 1.0], 2, &mut rng)
            .iter()
            .map(|h| h.0.timestep)
            .collect();
        assert_eq!(rec.len(), 2);
        assert!(rec.contains(&6) && rec.contains(&5));
        assert_eq!(m.retrieve_with(RetrievalStrategy::Random, &[0.0, 1.0], 3, &mut rng).len(), 3);
    }

    #[test]
    fn json_dump_keys_round_trip() {
        let mut m = MemoryStore::new(50, 20);
        m.push(entry(vec![3.0, 4.0], 1, 1, EntryStatus::Success));
        let v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        let key = decode_f32s(v["entries"][0]["key"].as_str().unwrap()).unwrap();
        assert_eq!(key, vec![0.6f32, 0.8f32]);
    }

    #[test]
    fn ledger_text_is_parseable_success() {
        let text = ledger_context(&BTreeMap::from([(1, 12), (2, 20)]));
        assert!(crate::policy::memory_records_success(&text, 1));
        assert!(text.starts_with("[t=20] subgoal=2"));
    }
}
