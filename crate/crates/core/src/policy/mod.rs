//! Scripted stand-in for a vision-language-action policy.
//!
//! Proposals come from the ground-truth planner and are degraded by a finite
//! history window and injectable faults. Memory gaps re-attempt a subgoal
//! finished outside the window. Verification gaps are infeasible or
//! wrong-object actions, preceded by a few shaky steps. While an earlier
//! failure is left uncorrected, drift starts more often.

pub mod planner;

use std::collections::BTreeMap;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::model::features::SceneView;
use crate::model::{Action, ActionKind, FaultModelConfig, Observation, Subgoal, SubgoalId, TargetPredicate, Task};
use crate::sim::{CARRY_Z, GRID};

use planner::{next_action_via, offset, GripperBelief};

/// Everything the policy sees when asked for one action.
#[derive(Debug, Clone, Copy)]
pub struct PolicyContext<'a> {
    pub observation: &'a Observation,
    pub instruction: &'a str,
    pub active_subgoal: &'a Subgoal,
    /// Retrieved memory serialized as structured text, possibly empty.
    pub memory_text: &'a str,
    /// The last `H` observations, oldest first.
    pub history: &'a [Observation],
    pub task: &'a Task,
    /// When each finished subgoal was completed. The mock uses this as its
    /// own latent record of what it has done; only completions inside the
    /// history window are actually remembered.
    pub completion_times: &'a BTreeMap<SubgoalId, u64>,
    /// An earlier failure has not yet been corrected.
    pub uncorrected_failure: bool,
    /// Steps the policy has been drifting toward a verification error, 0 when steady.
    pub unsteady: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "fault", rename_all = "snake_case")]
pub enum FaultFire {
    /// Re-attempted a subgoal completed outside the window.
    Memory { target: SubgoalId },
    /// A memory fault would have fired but the memory text recorded success.
    MemorySuppressed { target: SubgoalId },
    Verification { detail: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub action: Action,
    pub fault: Option<FaultFire>,
    /// The policy believes this action finishes the active subgoal.
    pub subgoal_final: bool,
    /// Drift carried into the next step if this action is executed.
    pub unsteady: u32,
}

/// Harness-facing policy interface.
pub trait Policy: Send + Sync {
    fn propose(&self, ctx: &PolicyContext<'_>, rng: &mut dyn RngCore) -> Proposal;

    /// Splits the instruction into subgoals. `oracle` forces the true list.
    fn decompose(&self, instruction: &str, task: &Task, oracle: bool, rng: &mut dyn RngCore) -> Vec<Subgoal>;
}

/// True if some line of `memory_text` records `subgoal=<id> status=success`.
pub fn memory_records_success(memory_text: &str, id: SubgoalId) -> bool {
    let want = format!("subgoal={id}");
    memory_text.lines().any(|line| {
        let mut subgoal = false;
        let mut success = false;
        for tok in line.split_whitespace() {
            subgoal |= tok == want;
            success |= tok == "status=success";
        }
        subgoal && success
    })
}

/// Unchanged observations after which the policy re-reads the gripper state.
pub const STUCK_STEPS: usize = 4;

/// Drifting steps before a verification error can land.
pub const WIND_UP: u32 = 2;

/// Shakes the continuous part of an action without changing its rounded offset.
fn wobble(mut action: Action, u: f64) -> Action {
    let w = 0.25 + 0.15 * u;
    let o = crate::model::action_layout::OFFSET;
    action.parameters[o] += w;
    action.parameters[o + 1] -= w;
    action.parameters[o + 2] += w;
    action
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedPolicy {
    pub faults: FaultModelConfig,
    pub action_dim: usize,
}

impl ScriptedPolicy {
    pub fn new(faults: FaultModelConfig, action_dim: usize) -> Self {
        ScriptedPolicy { faults, action_dim }
    }

    /// Completed subgoals whose completion lies outside the history window.
    fn forgotten(&self, ctx: &PolicyContext<'_>) -> Vec<SubgoalId> {
        let t = ctx.observation.timestep;
        let h = self.faults.history_window_h as u64;
        ctx.completion_times
            .iter()
            .filter(|(id, &tj)| **id != ctx.active_subgoal.id && tj + h < t)
            .map(|(id, _)| *id)
            .collect()
    }

    /// An infeasible or semantically wrong action. Over a container that is
    /// not the target the wrong action is always the release.
    fn verification_fault(
        &self,
        view: &SceneView,
        subgoal: &Subgoal,
        u_kind: f64,
        u_pick: f64,
    ) -> (Action, String) {
        let dim = self.action_dim;
        let g = view.gripper;
        let TargetPredicate::InContainer { item, container } = subgoal.target;
        if g.holding.is_some() {
            let below = view.occupant(g.position.floor());
            if below.is_some_and(|o| o.is_container && o.id != container) {
                return (Action::release(dim), "release into the wrong container".into());
            }
            if u_kind < 0.5 {
                return (Action::release(dim), "premature release".into());
            }
            // step off the nearest workspace edge
            let p = g.position;
            let dx = if p.x < GRID.x - 1 - p.x { -1 } else { 1 };
            let dy = if p.y < GRID.y - 1 - p.y { -1 } else { 1 };
            let d = if u_pick < 0.5 { [dx, 0, 0] } else { [0, dy, 0] };
            let reach = if p.x + d[0] < 0 || p.x + d[0] >= GRID.x || p.y + d[1] < 0 || p.y + d[1] >= GRID.y {
                d
            } else {
                [2 * d[0], 2 * d[1], 0]
            };
            return (Action::move_by(reach, dim), "infeasible move".into());
        }
        if u_kind < self.faults.p_close_share {
            return (Action::close(dim), "spurious close".into());
        }
        let u = (u_kind - self.faults.p_close_share) / (1.0 - self.faults.p_close_share);
        let others: Vec<_> = view.objects.iter().filter(|o| !o.is_container && o.id != item).collect();
        if u < 0.4 && !others.is_empty() {
            let o = others[((u_pick * others.len() as f64) as usize).min(others.len() - 1)];
            return (Action::grasp(o.id, offset(g.position, o.position), dim), format!("wrong-object grasp #{}", o.id));
        }
        let at = view.object(item).map(|o| o.position).unwrap_or(g.position.floor());
        let d = offset(g.position, at);
        let miss = [d[0] + if u_pick < 0.5 { 2 } else { -2 }, d[1], d[2]];
        (Action::grasp(item, miss, dim), "grasp at wrong offset".into())
    }
}

impl Policy for ScriptedPolicy {
    fn propose(&self, ctx: &PolicyContext<'_>, rng: &mut dyn RngCore) -> Proposal {
        // fixed draw count so paired runs stay aligned
        let u_fm: f64 = rng.random();
        let u_fv: f64 = rng.random();
        let u_kind: f64 = rng.random();
        let u_pick: f64 = rng.random();
        let u_route: f64 = rng.random();
        let dim = self.action_dim;

        let Some(view) = SceneView::decode(&ctx.observation.raw_features) else {
            return Proposal { action: Action::noop(dim), fault: None, subgoal_final: false, unsteady: 0 };
        };
        let item = ctx.active_subgoal.target.manipulated_object();
        // the gripper flag is only looked at once the scene has stopped changing
        let stuck = ctx.history.len() >= STUCK_STEPS
            && ctx.history[ctx.history.len() - STUCK_STEPS..]
                .iter()
                .all(|o| o.raw_features == ctx.observation.raw_features);
        let belief = if stuck { GripperBelief::Observed } else { GripperBelief::AssumeOpenWhenEmpty };
        // unachievable subgoals leave the policy hovering
        let nominal = next_action_via(&view, ctx.active_subgoal, dim, belief, u_route).unwrap_or_else(|| Action::noop(dim));
        // any release of the active item is, to the policy, the placing move
        let releasing_item = view.gripper.holding == Some(item);
        let plain = |action: Action, fault, unsteady| {
            let subgoal_final = releasing_item && action.kind == ActionKind::Release;
            Proposal { action, fault, subgoal_final, unsteady }
        };

        let mut suppressed = None;
        if view.gripper.holding.is_none() && view.gripper.position.z == CARRY_Z && u_fm < self.faults.p_fm {
            let forgotten = self.forgotten(ctx);
            // hovering over a forgotten item makes it look like unfinished work
            let target = forgotten
                .iter()
                .filter_map(|id| {
                    let g = ctx.task.subgoal(*id)?;
                    let o = view.object(g.target.manipulated_object())?;
                    let done = ctx.completion_times.get(id).copied().unwrap_or(0);
                    (o.position == view.gripper.position.floor()).then_some((std::cmp::Reverse(done), *id, o.id, o.position))
                })
                .min();
            if let Some((_, id, obj, pos)) = target {
                if memory_records_success(ctx.memory_text, id) {
                    suppressed = Some(FaultFire::MemorySuppressed { target: id });
                } else {
                    let action = Action::grasp(obj, offset(view.gripper.position, pos), dim);
                    let fault = Some(FaultFire::Memory { target: id });
                    return Proposal { action, fault, subgoal_final: false, unsteady: ctx.unsteady };
                }
            }
        }

        // free-space moves are easy; errors happen at contact and over containers
        let over_container = view.gripper.holding.is_some()
            && view.occupant(view.gripper.position.floor()).is_some_and(|o| o.is_container);
        let decision = over_container || matches!(nominal.kind, ActionKind::Grasp | ActionKind::Release);
        let mut p_fv = self.faults.p_fv;
        if ctx.uncorrected_failure {
            p_fv *= self.faults.cascade_multiplier;
        }
        // errors build up over a few shaky steps before they land
        if ctx.unsteady >= WIND_UP && decision {
            let (action, detail) = self.verification_fault(&view, ctx.active_subgoal, u_kind, u_pick);
            return plain(wobble(action, u_pick), Some(FaultFire::Verification { detail }), 0);
        }
        if ctx.unsteady > 0 || u_fv < p_fv.min(1.0) {
            return plain(wobble(nominal, u_pick), suppressed, ctx.unsteady + 1);
        }
        plain(nominal, suppressed, 0)
    }

    fn decompose(&self, _instruction: &str, task: &Task, oracle: bool, rng: &mut dyn RngCore) -> Vec<Subgoal> {
        let u: f64 = rng.random();
        let drop: bool = rng.random();
        let pick: f64 = rng.random();
        let mut list = task.subgoals.clone();
        if oracle || u >= self.faults.p_decompose || list.len() < 2 {
            return list;
        }
        let i = ((pick * list.len() as f64) as usize).min(list.len() - 1);
        if drop {
            list.remove(i);
        } else {
            let j = if i + 1 < list.len() { i + 1 } else { i - 1 };
            list.swap(i, j);
        }
        list
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::tests::{tiny_state, tiny_task};
    use crate::sim::{BlockWorld, Encoder};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Every action the planner may pick, over all tie-breaks between routes.
    fn planner_moves(view: &SceneView, g: &Subgoal) -> Vec<Action> {
        (0..16)
            .filter_map(|i| next_action_via(view, g, 8, GripperBelief::AssumeOpenWhenEmpty, i as f64 / 16.0))
            .collect()
    }

    fn ctx_parts() -> (BlockWorld, Observation) {
        let w = BlockWorld::new(tiny_task(), Encoder::new(16, 0), 8).unwrap();
        let mut s = tiny_state();
        // mug placed in the cabinet at t=12, now t=47
        s.objects.get_mut(&0).unwrap().container = Some(1);
        s.objects.get_mut(&0).unwrap().position = s.objects[&1].position;
        s.gripper.position = crate::model::Cell::new(4, 4, 1);
        s.timestep = 47;
        let obs = w.encode(&s);
        (w, obs)
    }

    #[test]
    fn memory_text_parsing() {
        let text = "[t=12] subgoal=1 status=success delta=- sim=0.900\n[t=20] subgoal=2 status=failure delta=- sim=0.5";
        assert!(memory_records_success(text, 1));
        assert!(!memory_records_success(text, 2));
        assert!(!memory_records_success(text, 11));
        assert!(!memory_records_success("", 1));
    }

    #[test]
    fn memory_fault_fires_and_is_suppressed() {
        let (w, obs) = ctx_parts();
        let task = w.task().clone();
        let done = BTreeMap::from([(1, 12)]);
        let faults = FaultModelConfig { p_fm: 1.0, p_fv: 0.0, history_window_h: 8, ..FaultModelConfig::default() };
        let policy = ScriptedPolicy::new(faults, 8);
        let mut ctx = PolicyContext {
            observation: &obs,
            instruction: &task.instruction,
            active_subgoal: &task.subgoals[2],
            memory_text: "",
            history: &[],
            task: &task,
            completion_times: &done,
            uncorrected_failure: false,
            unsteady: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = policy.propose(&ctx, &mut rng);
        assert_eq!(p.action.kind, ActionKind::Grasp);
        assert_eq!(p.action.target_object, Some(0));
        assert_eq!(p.fault, Some(FaultFire::Memory { target: 1 }));

        let text = "[t=12] subgoal=1 status=success delta=- sim=1.000".to_string();
        ctx.memory_text = &text;
        let p = policy.propose(&ctx, &mut ChaCha8Rng::seed_from_u64(0));
        let view = SceneView::decode(&obs.raw_features).unwrap();
        assert!(planner_moves(&view, &task.subgoals[2]).contains(&p.action));
        assert_eq!(p.fault, Some(FaultFire::MemorySuppressed { target: 1 }));
    }

    #[test]
    fn no_memory_fault_inside_window() {
        let (w, obs) = ctx_parts();
        let task = w.task().clone();
        let done = BTreeMap::from([(1, 40)]);
        let faults = FaultModelConfig { p_fm: 1.0, p_fv: 0.0, history_window_h: 8, ..FaultModelConfig::default() };
        let ctx = PolicyContext {
            observation: &obs,
            instruction: &task.instruction,
            active_subgoal: &task.subgoals[2],
            memory_text: "",
            history: &[],
            task: &task,
            completion_times: &done,
            uncorrected_failure: false,
            unsteady: 0,
        };
        let p = ScriptedPolicy::new(faults, 8).propose(&ctx, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(p.fault, None);
    }

    #[test]
    fn fault_free_matches_planner() {
        let (w, obs) = ctx_parts();
        let task = w.task().clone();
        let done = BTreeMap::from([(1, 12)]);
        let policy = ScriptedPolicy::new(FaultModelConfig::fault_free(), 8);
        let view = SceneView::decode(&obs.raw_features).unwrap();
        for seed in 0..20 {
            let ctx = PolicyContext {
                observation: &obs,
                instruction: &task.instruction,
                active_subgoal: &task.subgoals[2],
                memory_text: "",
                history: &[],
                task: &task,
                completion_times: &done,
                uncorrected_failure: true,
                unsteady: 0,
            };
            let p = policy.propose(&ctx, &mut ChaCha8Rng::seed_from_u64(seed));
            assert!(planner_moves(&view, &task.subgoals[2]).contains(&p.action));
            assert_eq!((p.fault, p.unsteady), (None, 0));
        }
    }

    #[test]
    fn drift_precedes_verification_fault() {
        let (w, _) = ctx_parts();
        let task = w.task().clone();
        let done = BTreeMap::new();
        let faults = FaultModelConfig { p_fv: 1.0, p_fm: 0.0, ..FaultModelConfig::default() };
        let policy = ScriptedPolicy::new(faults, 8);
        // gripper right above the mug, so the nominal action is the grasp
        let mut s = tiny_state();
        s.gripper.position = crate::model::Cell::new(1, 1, 1);
        let obs = w.encode(&s);
        let view = SceneView::decode(&obs.raw_features).unwrap();
        let nominal = next_action_via(&view, &task.subgoals[0], 8, GripperBelief::AssumeOpenWhenEmpty, 0.0).unwrap();
        assert_eq!(nominal.kind, ActionKind::Grasp);
        let mut unsteady = 0;
        for step in 0..=WIND_UP {
            let ctx = PolicyContext {
                observation: &obs,
                instruction: &task.instruction,
                active_subgoal: &task.subgoals[0],
                memory_text: "",
                history: &[],
                task: &task,
                completion_times: &done,
                uncorrected_failure: false,
                unsteady,
            };
            let p = policy.propose(&ctx, &mut ChaCha8Rng::seed_from_u64(step as u64));
            if step < WIND_UP {
                assert_eq!(p.fault, None);
                assert_eq!(p.action.kind, nominal.kind);
                assert_eq!(p.action.offset(), nominal.offset());
                assert_ne!(p.action.parameters, nominal.parameters, "drift shows in the action");
                assert_eq!(p.unsteady, unsteady + 1);
            } else {
                assert!(matches!(p.fault, Some(FaultFire::Verification { .. })));
                assert_eq!(p.unsteady, 0);
            }
            unsteady = p.unsteady;
        }
    }

    #[test]
    fn decomposition_corruption() {
        let task = crate::sim::make_task_suite(1, (5, 5), 2).remove(0);
        let faults = FaultModelConfig { p_decompose: 1.0, ..FaultModelConfig::default() };
        let policy = ScriptedPolicy::new(faults, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(policy.decompose(&task.instruction, &task, true, &mut rng), task.subgoals);
        for _ in 0..50 {
            let l = policy.decompose(&task.instruction, &task, false, &mut rng);
            let ids: Vec<_> = l.iter().map(|g| g.id).collect();
            assert!(l.len() == 4 || ids.windows(2).any(|w| w[0] > w[1]), "{ids:?}");
        }
    }

    #[test]
    fn decomposition_rate() {
        let task = crate::sim::make_task_suite(1, (5, 5), 2).remove(0);
        let policy = ScriptedPolicy::new(FaultModelConfig::default(), 8);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let bad = (0..n).filter(|_| policy.decompose(&task.instruction, &task, false, &mut rng) != task.subgoals).count();
        let rate = bad as f64 / n as f64;
        assert!((rate - 0.043).abs() <= 0.005, "{rate}");
    }
}
