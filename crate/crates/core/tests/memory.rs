use std::collections::BTreeSet;

use harness_core::memory::{EntryStatus, MemoryEntry, MemoryStore, StateDelta};
use harness_core::model::{EventKind, Observation, StepEvent};
use proptest::prelude::*;

const D: usize = 32;

fn entry(key: Vec<f64>, timestep: u64, subgoal_id: u32, status: EntryStatus) -> MemoryEntry {
    MemoryEntry { key, keyframe_features: Vec::new(), subgoal_id, status, timestep, state_delta: StateDelta::default() }
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

/// Exhaustive scan: cosine of every entry, sorted by similarity then recency.
fn brute_force(store: &MemoryStore, q: &[f64], k: usize) -> Vec<(u64, f64)> {
    let qn = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut all: Vec<(u64, f64)> = store
        .entries
        .iter()
        .map(|e| {
            let en = e.key.iter().map(|x| x * x).sum::<f64>().sqrt();
            let dot: f64 = q.iter().zip(&e.key).map(|(a, b)| a * b).sum();
            let sim = if qn * en == 0.0 { 0.0 } else { dot / (qn * en) };
            (e.timestep, sim)
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(b.0.cmp(&a.0)));
    all.truncate(k);
    all
}

fn vec_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, D)
}

/// Stores with repeated keys so that similarity ties are common.
fn store_strategy() -> impl Strategy<Value = MemoryStore> {
    (prop::collection::vec(vec_strategy(), 1..8), prop::collection::vec((0usize..8, 1u64..4), 0..200)).prop_map(
        |(pool, picks)| {
            let mut store = MemoryStore::new(1000, 20);
            let mut t = 0;
            for (i, gap) in picks {
                t += gap;
                store.entries.push(entry(unit(&pool[i % pool.len()]), t, 0, EntryStatus::Checkpoint));
            }
            store
        },
    )
}

#[derive(Debug, Clone)]
enum Op {
    Push(EntryStatus, u32),
    Compress,
}

fn op_strategy() -> impl Strategy<Value = Op> {
    prop_oneof![
        6 => (0u32..6).prop_map(|g| Op::Push(EntryStatus::Checkpoint, g)),
        1 => (0u32..6).prop_map(|g| Op::Push(EntryStatus::Success, g)),
        1 => (0u32..6).prop_map(|g| Op::Push(EntryStatus::Failure, g)),
        1 => Just(Op::Compress),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn retrieval_equals_exhaustive_scan(store in store_strategy(), q in vec_strategy(), k in 1usize..7) {
        let got: Vec<(u64, f64)> = store.retrieve(&q, k).iter().map(|(e, s)| (e.timestep, *s)).collect();
        let want = brute_force(&store, &q, k);
        prop_assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            prop_assert_eq!(g.0, w.0);
            prop_assert!((g.1 - w.1).abs() < 1e-12);
        }
    }

    #[test]
    fn fresh_entry_retrieves_itself(store in store_strategy(), q in vec_strategy()) {
        prop_assume!(q.iter().any(|x| x.abs() > 1e-3));
        let mut store = store;
        let t = store.entries.last().map_or(1, |e| e.timestep + 1);
        store.entries.push(entry(unit(&q), t, 9, EntryStatus::Success));
        let hits = store.retrieve(&q, 1);
        prop_assert_eq!(hits[0].0.timestep, t);
        prop_assert!((hits[0].1 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn compression_keeps_capacity_and_events(
        n_max in 3usize..40,
        ops in prop::collection::vec(op_strategy(), 1..400),
    ) {
        let mut store = MemoryStore::new(n_max, 20);
        let mut kept: BTreeSet<u64> = BTreeSet::new();
        for (t, op) in ops.into_iter().enumerate() {
            let t = t as u64 + 1;
            match op {
                Op::Push(status, g) => {
                    if status != EntryStatus::Checkpoint {
                        kept.insert(t);
                    }
                    store.push(entry(vec![1.0; D], t, g, status));
                }
                Op::Compress => store.compress(),
            }
            prop_assert!(store.len() <= n_max || store.capacity_warning);
            let present: BTreeSet<u64> = store.entries.iter().map(|e| e.timestep).collect();
            prop_assert!(kept.is_subset(&present));
            let mut twice = store.clone();
            twice.compress();
            let mut thrice = twice.clone();
            thrice.compress();
            prop_assert_eq!(&twice, &thrice);
        }
    }

    #[test]
    fn writes_follow_events(kinds in prop::collection::vec(0u8..4, 1..60), delta_c in 1u64..10) {
        let mut store = MemoryStore::new(1000, delta_c);
        let obs = Observation { embedding: vec![0.5; D], raw_features: Vec::new(), timestep: 0 };
        for (i, k) in kinds.iter().enumerate() {
            let t = i as u64 + 1;
            let events = match k {
                0 => vec![StepEvent::new(EventKind::SubgoalCompleted, t, Some(2), "done")],
                1 => vec![StepEvent::new(EventKind::ActionFailed, t, None, "blocked")],
                _ => Vec::new(),
            };
            let before = store.last_checkpoint_timestep;
            let wrote = store.maybe_write(&obs, t, 2, &events);
            let expect = match k {
                0 => Some(EntryStatus::Success),
                1 => Some(EntryStatus::Failure),
                _ if t - before >= delta_c => Some(EntryStatus::Checkpoint),
                _ => None,
            };
            prop_assert_eq!(wrote, expect);
        }
        let ts: Vec<u64> = store.entries.iter().map(|e| e.timestep).collect();
        prop_assert!(ts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn store_round_trips_through_json(store in store_strategy()) {
        let text = serde_json::to_string(&store).unwrap();
        let back: MemoryStore = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, store);
    }
}
