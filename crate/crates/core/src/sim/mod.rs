//! Deterministic grid manipulation world.
//!
//! Objects rest on the `z = 0` layer; the gripper travels at `z = 1` above
//! them. Items are placed into containers by releasing them while the gripper
//! hovers over the container. Once inside a container an item cannot be
//! taken out again, so a misplacement can only be undone by restoring an
//! earlier snapshot.

mod encode;
mod perturb;
mod state;
mod suite;
pub mod trace;

use std::collections::BTreeMap;

use rand::Rng;

pub use encode::{Encoder, DEFAULT_ENCODER_SEED};
pub use perturb::{inject_perturbation, sample_perturbation, PerturbTarget, PerturbationKind, PerturbationSpec};
pub use state::{GripperState, ObjectState, RngCursor, SimState, Snapshot, SNAPSHOT_VERSION};
pub use suite::{make_task_suite, STEPS_PER_SUBGOAL};

use crate::error::{Error, Result};
use crate::model::{
    Action, ActionKind, Cell, EventKind, ObjectId, ObjectKind, Observation, StepEvent, SubgoalId, TargetPredicate,
    Task,
};
use crate::util::derive_seed;

/// Grid extents (exclusive upper bounds).
pub const GRID: Cell = Cell::new(6, 6, 2);

/// Height at which the gripper carries objects.
pub const CARRY_Z: i32 = 1;

pub fn in_grid(c: Cell) -> bool {
    (0..GRID.x).contains(&c.x) && (0..GRID.y).contains(&c.y) && (0..GRID.z).contains(&c.z)
}

pub fn clamp_to_grid(c: Cell) -> Cell {
    Cell::new(c.x.clamp(0, GRID.x - 1), c.y.clamp(0, GRID.y - 1), c.z.clamp(0, GRID.z - 1))
}

/// Evaluates a subgoal predicate against a state.
pub fn predicate_holds(pred: &TargetPredicate, state: &SimState) -> bool {
    match *pred {
        TargetPredicate::InContainer { item, container } => {
            state.objects.get(&item).and_then(|o| o.container) == Some(container)
        }
    }
}

/// One task bound to an encoder: the environment an episode runs in.
#[derive(Debug, Clone)]
pub struct BlockWorld {
    task: Task,
    encoder: Encoder,
    action_dim: usize,
    /// item -> containers that some subgoal wants it in
    targets: BTreeMap<ObjectId, Vec<ObjectId>>,
}

impl BlockWorld {
    pub fn new(task: Task, encoder: Encoder, action_dim: usize) -> Result<BlockWorld> {
        task.validate()?;
        if action_dim < crate::model::action_layout::MIN_DIM {
            return Err(Error::config(format!("action_dim {action_dim} below the parameter layout minimum")));
        }
        if task.objects.len() > (GRID.x * GRID.y) as usize {
            return Err(Error::config("more objects than floor cells"));
        }
        let mut targets: BTreeMap<ObjectId, Vec<ObjectId>> = BTreeMap::new();
        for g in &task.subgoals {
            let TargetPredicate::InContainer { item, container } = g.target;
            targets.entry(item).or_default().push(container);
        }
        Ok(BlockWorld { task, encoder, action_dim, targets })
    }

    pub fn task(&self) -> &Task {
        &self.task
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn encode(&self, state: &SimState) -> Observation {
        self.encoder.encode(&self.task, state)
    }

    /// Deterministic initial state for `seed`: objects on distinct floor cells,
    /// gripper open and empty at carry height.
    pub fn reset(&self, seed: u64) -> (SimState, Observation) {
        let mut layout = RngCursor::new(derive_seed(seed, 0x1a70));
        let cells = layout.draw(|rng| {
            let mut floor: Vec<Cell> =
                (0..GRID.x).flat_map(|x| (0..GRID.y).map(move |y| Cell::new(x, y, 0))).collect();
            // partial Fisher-Yates
            let n = self.task.objects.len();
            for i in 0..n {
                let j = rng.random_range(i..floor.len());
                floor.swap(i, j);
            }
            let gx = rng.random_range(0..GRID.x);
            let gy = rng.random_range(0..GRID.y);
            floor.truncate(n);
            floor.push(Cell::new(gx, gy, CARRY_Z));
            floor
        });
        let objects = self
            .task
            .objects
            .iter()
            .zip(&cells)
            .map(|(o, c)| (o.id, ObjectState { position: *c, container: None, askew: false }))
            .collect();
        let state = SimState {
            objects,
            gripper: GripperState { position: *cells.last().expect("gripper cell"), holding: None, open: true },
            completed_subgoals: BTreeMap::new(),
            timestep: 0,
            rng: RngCursor::new(derive_seed(seed, 0x5171)),
        };
        let obs = self.encode(&state);
        (state, obs)
    }

    fn is_target(&self, item: ObjectId, container: ObjectId) -> bool {
        self.targets.get(&item).is_some_and(|v| v.contains(&container))
    }

    fn kind(&self, id: ObjectId) -> Option<ObjectKind> {
        self.task.object(id).map(|o| o.kind)
    }

    /// Advances one timestep. Infeasible actions leave the world unchanged and
    /// report `action_failed`; newly satisfied predicates report `subgoal_completed`.
    pub fn step(&self, state: &SimState, action: &Action) -> Result<(SimState, Observation, Vec<StepEvent>)> {
        if action.dim() != self.action_dim {
            return Err(Error::Shape { context: "action parameters", expected: self.action_dim, actual: action.dim() });
        }
        let mut next = state.clone();
        next.timestep += 1;
        let t = next.timestep;
        let mut events = Vec::new();
        let fail = |detail: String| StepEvent::new(EventKind::ActionFailed, t, None, detail);

        match self.apply(&mut next, action) {
            Ok(None) => {}
            Ok(Some(misplaced)) => events.push(fail(misplaced)),
            Err(reason) => {
                let ts = next.timestep;
                next = state.clone();
                next.timestep = ts;
                events.push(fail(reason));
            }
        }
        events.extend(self.update_ledger(&mut next));
        let obs = self.encode(&next);
        Ok((next, obs, events))
    }

    /// Mutates `s`. `Err` means infeasible (caller rolls back); `Ok(Some)` is a
    /// feasible but semantically failed outcome.
    fn apply(&self, s: &mut SimState, action: &Action) -> std::result::Result<Option<String>, String> {
        match action.kind {
            ActionKind::Noop | ActionKind::RecoverGoto => Ok(None),
            ActionKind::Move => {
                let [dx, dy, dz] = action.offset();
                if dx.abs() > 1 || dy.abs() > 1 || dz.abs() > 1 {
                    return Err(format!("move step ({dx},{dy},{dz}) exceeds one cell"));
                }
                let to = s.gripper.position.offset(dx, dy, dz);
                if !in_grid(to) {
                    return Err(format!("move to {to} leaves the workspace"));
                }
                if to.z == 0 && s.occupant(to).is_some() {
                    return Err(format!("move into occupied cell {to}"));
                }
                s.gripper.position = to;
                if let Some(h) = s.gripper.holding {
                    s.objects.get_mut(&h).expect("held object exists").position = to;
                }
                Ok(None)
            }
            ActionKind::Grasp => {
                let Some(target) = action.target_object else {
                    return Err("grasp without target".into());
                };
                let Some(obj) = s.objects.get(&target).copied() else {
                    return Err(format!("grasp of unknown object #{target}"));
                };
                if s.gripper.holding.is_some() {
                    return Err("grasp while already holding".into());
                }
                if !s.gripper.open {
                    return Err("grasp with closed gripper".into());
                }
                if self.kind(target) != Some(ObjectKind::Item) {
                    return Err(format!("object #{target} is not graspable"));
                }
                let d = obj.position.chebyshev(s.gripper.position);
                if d > 1 {
                    return Err(format!("object #{target} out of reach (distance {d})"));
                }
                let aim = action.offset();
                let p = s.gripper.position;
                if [p.x + aim[0], p.y + aim[1], p.z + aim[2]] != [obj.position.x, obj.position.y, obj.position.z] {
                    return Err(format!("grasp misses object #{target}"));
                }
                if obj.askew {
                    s.gripper.open = false;
                    return Ok(Some(format!("grasp slipped off object #{target}")));
                }
                s.gripper.holding = Some(target);
                s.gripper.open = false;
                let o = s.objects.get_mut(&target).expect("exists");
                o.position = s.gripper.position;
                // taking a placed item back out undoes finished work
                Ok(o.container.take().map(|c| format!("object #{target} taken back out of container #{c}")))
            }
            ActionKind::Release => {
                let Some(held) = s.gripper.holding else {
                    return Err("release with empty gripper".into());
                };
                let below = s.gripper.position.floor();
                let outcome = match s.occupant(below) {
                    Some(c) if self.kind(c) == Some(ObjectKind::Container) => {
                        let pos = s.objects[&c].position;
                        let o = s.objects.get_mut(&held).expect("held exists");
                        o.container = Some(c);
                        o.position = pos;
                        (!self.is_target(held, c)).then(|| format!("object #{held} misplaced into container #{c}"))
                    }
                    Some(other) => return Err(format!("release onto occupied cell (object #{other})")),
                    None => {
                        s.objects.get_mut(&held).expect("held exists").position = below;
                        None
                    }
                };
                s.gripper.holding = None;
                s.gripper.open = true;
                Ok(outcome)
            }
            ActionKind::Open => {
                if s.gripper.holding.is_some() {
                    return Err("open while holding; use release".into());
                }
                s.gripper.open = true;
                Ok(None)
            }
            ActionKind::Close => {
                s.gripper.open = false;
                Ok(None)
            }
        }
    }

    /// Re-evaluates every subgoal predicate and reconciles the ledger.
    fn update_ledger(&self, s: &mut SimState) -> Vec<StepEvent> {
        let mut events = Vec::new();
        for g in &self.task.subgoals {
            let holds = predicate_holds(&g.target, s);
            let recorded = s.completed_subgoals.contains_key(&g.id);
            if holds && !recorded {
                s.completed_subgoals.insert(g.id, s.timestep);
                events.push(StepEvent::new(
                    EventKind::SubgoalCompleted,
                    s.timestep,
                    Some(g.id),
                    g.description.clone(),
                ));
            } else if !holds && recorded {
                s.completed_subgoals.remove(&g.id);
            }
        }
        events
    }

    /// Whether the predicate of subgoal `id` holds.
    pub fn subgoal_satisfied(&self, id: SubgoalId, state: &SimState) -> bool {
        self.task.subgoal(id).is_some_and(|g| predicate_holds(&g.target, state))
    }

    /// Ground-truth task completion: every predicate holds.
    pub fn task_satisfied(&self, state: &SimState) -> bool {
        self.task.subgoals.iter().all(|g| predicate_holds(&g.target, state))
    }

    pub fn snapshot(&self, state: &SimState, id: u64) -> Snapshot {
        Snapshot::capture(state, id)
    }

    pub fn restore(&self, snap: &Snapshot) -> Result<SimState> {
        snap.restore()
    }

    /// Items that some pending subgoal still needs placed.
    pub fn pending_items(&self, state: &SimState) -> Vec<ObjectId> {
        let mut items: Vec<ObjectId> = self
            .task
            .subgoals
            .iter()
            .filter(|g| !predicate_holds(&g.target, state))
            .map(|g| g.target.manipulated_object())
            .filter(|i| state.objects.get(i).is_some_and(|o| o.container.is_none()))
            .collect();
        items.sort_unstable();
        items.dedup();
        items
    }
}
