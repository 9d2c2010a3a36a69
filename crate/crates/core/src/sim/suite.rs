use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{ObjectKind, ObjectSpec, Subgoal, TargetPredicate, Task};

/// Step budget granted per subgoal when generating tasks.
pub const STEPS_PER_SUBGOAL: u64 = 12;

const CONTAINERS: &[(&str, &str)] = &[
    ("cabinet", "in the cabinet"),
    ("basket", "in the basket"),
    ("plate", "on the plate"),
    ("drawer", "in the drawer"),
    ("tray", "on the tray"),
];

const ITEMS: &[&str] = &["mug", "bowl", "pen", "book", "cup", "spoon", "apple", "can", "sponge"];

const NUM_CONTAINERS: usize = 3;

/// Generates a deterministic task suite.
///
/// Each task has `K` drawn uniformly from `subgoal_range`, three containers,
/// `K` task items and one distractor item. Subgoal `i` places item `i` into a
/// randomly chosen container.
///
/// # Panics
/// If `subgoal_range` is not `3 <= min <= max <= 8`.
pub fn make_task_suite(n_tasks: usize, subgoal_range: (usize, usize), seed: u64) -> Vec<Task> {
    let (lo, hi) = subgoal_range;
    assert!(3 <= lo && lo <= hi && hi <= ITEMS.len() - 1, "subgoal range must satisfy 3 <= min <= max <= 8");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_tasks)
        .map(|t| {
            let k = rng.random_range(lo..=hi);
            let mut containers: Vec<usize> = (0..CONTAINERS.len()).collect();
            containers.shuffle(&mut rng);
            containers.truncate(NUM_CONTAINERS);
            let mut items: Vec<usize> = (0..ITEMS.len()).collect();
            items.shuffle(&mut rng);
            items.truncate(k + 1);

            let mut objects = Vec::new();
            for (i, &c) in containers.iter().enumerate() {
                objects.push(ObjectSpec { id: i as u32, name: CONTAINERS[c].0.into(), kind: ObjectKind::Container });
            }
            for (j, &it) in items.iter().enumerate() {
                objects.push(ObjectSpec {
                    id: (NUM_CONTAINERS + j) as u32,
                    name: ITEMS[it].into(),
                    kind: ObjectKind::Item,
                });
            }
            let subgoals: Vec<Subgoal> = (0..k)
                .map(|i| {
                    let c = rng.random_range(0..NUM_CONTAINERS);
                    let item = (NUM_CONTAINERS + i) as u32;
                    Subgoal {
                        id: i as u32 + 1,
                        description: format!("place the {} {}", ITEMS[items[i]], CONTAINERS[containers[c]].1),
                        target: TargetPredicate::InContainer { item, container: c as u32 },
                    }
                })
                .collect();
            let instruction = subgoals
                .iter()
                .map(|g| g.description.replacen("place", "put", 1))
                .collect::<Vec<_>>()
                .join(", then ");
            Task {
                id: format!("task-{seed}-{t}"),
                instruction,
                objects,
                max_steps: STEPS_PER_SUBGOAL * k as u64,
                subgoals,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_profile_shape() {
        let suite = make_task_suite(10, (5, 6), 0);
        assert_eq!(suite.len(), 10);
        let mean = suite.iter().map(|t| t.num_subgoals() as f64).sum::<f64>() / 10.0;
        assert!((5.0..=6.0).contains(&mean));
        for t in &suite {
            t.validate().unwrap();
        }
    }

    #[test]
    fn minimal_suite() {
        let suite = make_task_suite(1, (3, 3), 4);
        assert_eq!(suite.len(), 1);
        assert_eq!(suite[0].num_subgoals(), 3);
    }

    #[test]
    fn same_seed_same_suite() {
        assert_eq!(make_task_suite(5, (3, 6), 9), make_task_suite(5, (3, 6), 9));
        assert_ne!(make_task_suite(5, (3, 6), 9), make_task_suite(5, (3, 6), 10));
    }
}
