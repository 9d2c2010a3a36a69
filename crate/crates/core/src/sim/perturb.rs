use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Cell, EventKind, ObjectId, ObjectKind, StepEvent};

use super::{clamp_to_grid, in_grid, BlockWorld, SimState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    ObjectDisplacement,
    GripperFlip,
}

/// Which objects a displacement may move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbTarget {
    /// Task items that are neither placed nor held.
    #[default]
    PendingTaskObject,
    /// Any task item that is not held, placed or not.
    AnyTaskObject,
}

/// One silent perturbation injected at subgoal boundary `k_star`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub k_star: usize,
    pub kind: PerturbationKind,
    /// Grid-cell displacement, each component in `{-1, 0, 1}`.
    pub displacement: [i32; 3],
}

/// Draws a spec: `k_star` uniform over `2..=K-1`, kind by fair coin,
/// displacement uniform per axis.
pub fn sample_perturbation<R: Rng + ?Sized>(num_subgoals: usize, rng: &mut R) -> Result<PerturbationSpec> {
    if num_subgoals < 3 {
        return Err(Error::config(format!(
            "perturbation needs K >= 3 so that boundary set 2..K-1 is non-empty, got K = {num_subgoals}"
        )));
    }
    let k_star = rng.random_range(2..num_subgoals);
    let kind = if rng.random_bool(0.5) { PerturbationKind::ObjectDisplacement } else { PerturbationKind::GripperFlip };
    let mut displacement = [0; 3];
    for d in &mut displacement {
        *d = rng.random_range(-1..=1);
    }
    Ok(PerturbationSpec { k_star, kind, displacement })
}

fn nearest_free_floor(state: &SimState, from: Cell) -> Option<Cell> {
    let start = from.floor();
    let mut seen = vec![start];
    let mut queue = VecDeque::from([start]);
    while let Some(c) = queue.pop_front() {
        if state.occupant(c).is_none() {
            return Some(c);
        }
        for dx in -1..=1 {
            for dy in -1..=1 {
                let n = c.offset(dx, dy, 0);
                if in_grid(n) && !seen.contains(&n) {
                    seen.push(n);
                    queue.push_back(n);
                }
            }
        }
    }
    None
}

/// Applies `spec` to `state`. Requires that exactly `spec.k_star` subgoals are
/// complete. The returned event belongs to the evaluation trace only; nothing
/// in the observation flags the change.
pub fn inject_perturbation(
    world: &BlockWorld,
    state: &SimState,
    spec: &PerturbationSpec,
    target: PerturbTarget,
) -> Result<(SimState, StepEvent)> {
    let done = state.completed_subgoals.len();
    if done != spec.k_star {
        return Err(Error::config(format!(
            "perturbation boundary k* = {} but {done} subgoals are complete",
            spec.k_star
        )));
    }
    let mut next = state.clone();
    let detail = match spec.kind {
        PerturbationKind::GripperFlip => flip(world, &mut next),
        PerturbationKind::ObjectDisplacement => displace(world, &mut next, spec.displacement, target),
    };
    // reconcile ledger silently
    for g in &world.task().subgoals {
        let holds = super::predicate_holds(&g.target, &next);
        if holds {
            next.completed_subgoals.entry(g.id).or_insert(next.timestep);
        } else {
            next.completed_subgoals.remove(&g.id);
        }
    }
    let ev = StepEvent::new(EventKind::PerturbationInjected, next.timestep, None, detail);
    Ok((next, ev))
}

fn flip(world: &BlockWorld, s: &mut SimState) -> String {
    match s.gripper.holding {
        Some(held) => {
            let below = s.gripper.position.floor();
            let detail = match s.occupant(below) {
                Some(c) if world.task().object(c).map(|o| o.kind) == Some(ObjectKind::Container) => {
                    let pos = s.objects[&c].position;
                    let o = s.objects.get_mut(&held).expect("held exists");
                    o.container = Some(c);
                    o.position = pos;
                    format!("gripper_flip: dropped #{held} into container #{c}")
                }
                _ => {
                    let at = nearest_free_floor(s, below).unwrap_or(below);
                    s.objects.get_mut(&held).expect("held exists").position = at;
                    format!("gripper_flip: dropped #{held} at {at}")
                }
            };
            s.gripper.holding = None;
            s.gripper.open = true;
            detail
        }
        None => {
            s.gripper.open = !s.gripper.open;
            format!("gripper_flip: gripper now {}", if s.gripper.open { "open" } else { "closed" })
        }
    }
}

fn displace(world: &BlockWorld, s: &mut SimState, d: [i32; 3], target: PerturbTarget) -> String {
    let candidates: Vec<ObjectId> = match target {
        PerturbTarget::PendingTaskObject => world.pending_items(s),
        PerturbTarget::AnyTaskObject => {
            let mut v: Vec<ObjectId> =
                world.task().subgoals.iter().map(|g| g.target.manipulated_object()).collect();
            v.sort_unstable();
            v.dedup();
            v
        }
    };
    let candidates: Vec<ObjectId> = candidates.into_iter().filter(|i| s.gripper.holding != Some(*i)).collect();
    if candidates.is_empty() {
        return "object_displacement: no eligible object".into();
    }
    let pick = s.rng.draw(|rng| rng.random_range(0..candidates.len()));
    let id = candidates[pick];
    let from = s.objects[&id].position.floor();
    let mut notes = Vec::new();
    if d[2] != 0 {
        notes.push("vertical component clamped to table".to_string());
    }
    let raw = from.offset(d[0], d[1], 0);
    let to = clamp_to_grid(raw);
    if to != raw {
        notes.push(format!("target {raw} clamped to {to}"));
    }
    let mut detail = format!("object_displacement: #{id} by ({},{},{})", d[0], d[1], d[2]);
    if to == from && s.objects[&id].container.is_none() {
        detail.push_str(" shifted within its cell");
    } else {
        match s.occupant(to) {
            Some(c) if c == id => {}
            Some(c) if world.task().object(c).map(|o| o.kind) == Some(ObjectKind::Container) => {
                let pos = s.objects[&c].position;
                let o = s.objects.get_mut(&id).expect("exists");
                o.container = Some(c);
                o.position = pos;
                detail.push_str(&format!(" landed in container #{c}"));
            }
            Some(other) => {
                detail.push_str(&format!(" blocked by #{other}"));
            }
            None => {
                let o = s.objects.get_mut(&id).expect("exists");
                o.container = None;
                o.position = to;
                detail.push_str(&format!(" to {to}"));
            }
        }
    }
    // whatever cell it ends up in, a free object is left off-centre
    let o = s.objects.get_mut(&id).expect("exists");
    if o.container.is_none() {
        o.askew = true;
    }
    if !notes.is_empty() {
        detail.push_str(&format!(" [{}]", notes.join("; ")));
    }
    detail
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::tests::{tiny_state, tiny_task};
    use crate::sim::Encoder;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn world() -> BlockWorld {
        BlockWorld::new(tiny_task(), Encoder::new(16, 0), 8).unwrap()
    }

    fn with_k_done(mut s: SimState, k: usize) -> SimState {
        for id in 1..=k as u32 {
            s.completed_subgoals.insert(id, 0);
        }
        s
    }

    #[test]
    fn flip_while_holding_drops_object_here() {
        let w = world();
        let mut s = tiny_state();
        s.gripper.holding = Some(0);
        s.gripper.open = false;
        s.gripper.position = Cell::new(3, 2, 1);
        s.objects.get_mut(&0).unwrap().position = s.gripper.position;
        let spec = PerturbationSpec { k_star: 0, kind: PerturbationKind::GripperFlip, displacement: [0; 3] };
        let (n, ev) = inject_perturbation(&w, &s, &spec, PerturbTarget::default()).unwrap();
        assert_eq!(n.gripper.holding, None);
        assert_eq!(n.objects[&0].position, Cell::new(3, 2, 0));
        assert_eq!(ev.kind, EventKind::PerturbationInjected);
    }

    #[test]
    fn flip_while_empty_toggles_open() {
        let w = world();
        let s = tiny_state();
        let spec = PerturbationSpec { k_star: 0, kind: PerturbationKind::GripperFlip, displacement: [0; 3] };
        let (n, _) = inject_perturbation(&w, &s, &spec, PerturbTarget::default()).unwrap();
        assert!(!n.gripper.open);
    }

    #[test]
    fn zero_displacement_leaves_object_askew_in_place() {
        let w = world();
        let s = tiny_state();
        let spec = PerturbationSpec { k_star: 0, kind: PerturbationKind::ObjectDisplacement, displacement: [0; 3] };
        let (mut n, ev) = inject_perturbation(&w, &s, &spec, PerturbTarget::default()).unwrap();
        assert_eq!(n.gripper, s.gripper);
        assert!(ev.detail.contains("shifted within its cell"));
        let moved: Vec<_> = n.objects.iter().filter(|(id, o)| **o != s.objects[*id]).collect();
        assert_eq!(moved.len(), 1);
        let (&id, o) = moved[0];
        assert!(o.askew);
        assert_eq!(o.position, s.objects[&id].position);
        // silent: the observation cannot tell
        assert_eq!(w.encode(&n).raw_features, w.encode(&s).raw_features);
        // and a grasp on it slips, leaving the fingers shut
        let at = o.position;
        n.gripper.position = Cell::new(at.x, at.y, 1);
        let (after, _, ev) = w.step(&n, &crate::model::Action::grasp(id, [0, 0, -1], 8)).unwrap();
        assert!(ev.iter().any(|e| e.kind == EventKind::ActionFailed && e.detail.contains("slipped")));
        assert_eq!(after.gripper.holding, None);
        assert!(!after.gripper.open);
    }

    #[test]
    fn off_grid_displacement_is_clamped_and_logged() {
        let w = world();
        let mut s = tiny_state();
        // only the bowl at (5,0) stays pending
        s.objects.get_mut(&0).unwrap().container = Some(1);
        s.objects.get_mut(&4).unwrap().container = Some(1);
        let s = with_k_done(s, 2);
        let spec = PerturbationSpec { k_star: 2, kind: PerturbationKind::ObjectDisplacement, displacement: [1, -1, 1] };
        let (n, ev) = inject_perturbation(&w, &s, &spec, PerturbTarget::default()).unwrap();
        assert_eq!(n.objects[&3].position, Cell::new(5, 0, 0));
        assert!(ev.detail.contains("clamped"), "{}", ev.detail);
    }

    #[test]
    fn boundary_precondition_enforced() {
        let w = world();
        let s = tiny_state();
        let spec = PerturbationSpec { k_star: 2, kind: PerturbationKind::GripperFlip, displacement: [0; 3] };
        assert!(inject_perturbation(&w, &s, &spec, PerturbTarget::default()).is_err());
    }

    #[test]
    fn sampling_rejects_short_tasks() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(sample_perturbation(2, &mut rng).is_err());
        for _ in 0..100 {
            let s = sample_perturbation(3, &mut rng).unwrap();
            assert_eq!(s.k_star, 2);
            assert!(s.displacement.iter().all(|d| (-1..=1).contains(d)));
        }
    }
}
