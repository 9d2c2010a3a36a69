//! The execution loop: decompose, then per step observe, retrieve, propose,
//! verify, execute or recover, write memory and check completion.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::{ledger_context, serialize_context, EntryStatus, MemoryEntry, MemoryStore, RetrievalStrategy, StateDelta};
use crate::model::features::SceneView;
use crate::model::{Action, ActionKind, EventKind, Observation, RunConfig, StepEvent, Subgoal, SubgoalId};
use crate::policy::planner::{next_action, GripperBelief};
use crate::policy::{FaultFire, Policy, PolicyContext};
use crate::sim::trace::{EmbeddingTable, TraceLine};
use crate::sim::{
    in_grid, inject_perturbation, BlockWorld, PerturbTarget, PerturbationSpec, SimState, Snapshot,
};
use crate::util::{derive_seed, normalized};
use crate::verifier::{trigger, CompletionModel, SvModel, TextEncoder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryMode {
    #[default]
    Rollback,
    Forward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifierKind {
    #[default]
    Learned,
    /// Mean failure probability of several independently seeded verifiers.
    Ensemble,
    /// Hand-coded grid feasibility check.
    Rule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessConfig {
    pub name: String,
    /// Retrieve memory and hand it to the policy.
    pub use_emm: bool,
    pub retrieval: RetrievalStrategy,
    /// Hand the policy the ground-truth completion ledger instead.
    pub oracle_memory: bool,
    pub use_sv: bool,
    pub verifier: VerifierKind,
    pub sv_with_memory: bool,
    /// React to verifier or completion-negative triggers.
    pub use_recovery: bool,
    pub recovery_mode: RecoveryMode,
    pub oracle_completion: bool,
    pub oracle_decomposition: bool,
    pub history_window_h: usize,
    pub theta_v: f64,
    pub r_max: u32,
    pub k_retrieve: usize,
    pub delta_c: u64,
    pub n_max: usize,
    pub completion_threshold: f64,
    pub perturb_target: PerturbTarget,
}

impl HarnessConfig {
    /// The policy alone: no retrieval, verification or recovery.
    pub fn baseline(run: &RunConfig) -> Self {
        HarnessConfig {
            name: "baseline".into(),
            use_emm: false,
            retrieval: RetrievalStrategy::Cosine,
            oracle_memory: false,
            use_sv: false,
            verifier: VerifierKind::Learned,
            sv_with_memory: false,
            use_recovery: false,
            recovery_mode: RecoveryMode::Rollback,
            oracle_completion: true,
            oracle_decomposition: false,
            history_window_h: run.history_window_h(),
            theta_v: run.theta_v,
            r_max: run.r_max,
            k_retrieve: run.k_retrieve,
            delta_c: run.delta_c,
            n_max: run.n_max,
            completion_threshold: run.completion_threshold,
            perturb_target: PerturbTarget::default(),
        }
    }

    /// Memory, learned verifier with memory input, rollback recovery.
    pub fn full(run: &RunConfig) -> Self {
        HarnessConfig {
            name: "full".into(),
            use_emm: true,
            use_sv: true,
            sv_with_memory: true,
            use_recovery: true,
            ..Self::baseline(run)
        }
    }

    pub fn named(mut self, name: &str) -> Self {
        self.name = name.into();
        self
    }
}

/// Trained components shared read-only across episodes.
#[derive(Debug, Clone, Default)]
pub struct Models {
    pub sv: Option<Arc<SvModel>>,
    pub sv_no_memory: Option<Arc<SvModel>>,
    pub ensemble: Vec<Arc<SvModel>>,
    pub completion: Option<Arc<CompletionModel>>,
    pub text: Option<TextEncoder>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryReason {
    Verifier,
    CompletionNegative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRecord {
    pub reason: RecoveryReason,
    pub mode: RecoveryMode,
    /// Timestep of the memory entry restored, rollback only.
    pub entry_timestep: Option<u64>,
    pub snapshot_hash: Option<u64>,
    pub restored_hash: Option<u64>,
    /// Rollback was requested but no entry existed.
    pub fallback: bool,
    pub retry: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    /// Harness time before the step.
    pub t: u64,
    pub subgoal_id: SubgoalId,
    /// Embedding the policy and verifier saw.
    pub observation: Vec<f64>,
    /// Cosine top-1 key at this step, whether or not memory was used.
    pub top1_key: Option<Vec<f64>>,
    pub retrieval_hits: Vec<u64>,
    pub proposed: Option<Action>,
    pub fault: Option<FaultFire>,
    pub p_fail: Option<f64>,
    pub executed: Action,
    pub recovery: Option<RecoveryRecord>,
    pub events: Vec<StepEvent>,
    /// Hash of the state `executed` was applied to.
    pub state_before: u64,
    pub state_after: u64,
    pub post_observation: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub config: String,
    pub task_id: String,
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    /// Every event, including those outside steps, in order.
    pub events: Vec<StepEvent>,
    pub perturbation: Option<PerturbationSpec>,
    /// Harness time at which the perturbation was injected.
    pub perturbed_at: Option<u64>,
    /// Snapshots by harness time, for every success or checkpoint entry.
    pub snapshots: BTreeMap<u64, Snapshot>,
    pub decomposition: Vec<SubgoalId>,
    pub success: bool,
    pub subgoals_completed: usize,
    pub total_subgoals: usize,
    pub verifier_calls: u64,
    pub recoveries: u32,
    pub memory_entries: usize,
    pub capacity_warning: bool,
    pub final_state_hash: u64,
}

impl EpisodeRecord {
    /// One trace line per step, embeddings deduplicated into `table`.
    pub fn trace_lines(&self, table: &mut EmbeddingTable) -> Result<Vec<TraceLine>> {
        self.steps
            .iter()
            .map(|s| {
                let (embedding_hash, embedding_row) = table.insert(&s.observation)?;
                Ok(TraceLine {
                    t: s.t,
                    action: s.executed.clone(),
                    events: s.events.clone(),
                    subgoal_id: Some(s.subgoal_id),
                    embedding_hash,
                    embedding_row,
                    p_fail: s.p_fail,
                    retrieval_hits: Some(s.retrieval_hits.clone()),
                })
            })
            .collect()
    }
}

/// Grid-exact feasibility rules: reachability, occupancy and redundant
/// placement. Returns true when the action would fail.
pub fn rule_violation(view: &SceneView, action: &Action, subgoal: &Subgoal) -> bool {
    let g = view.gripper;
    match action.kind {
        ActionKind::Move => {
            let [dx, dy, dz] = action.offset();
            let to = g.position.offset(dx, dy, dz);
            dx.abs() > 1 || dy.abs() > 1 || dz.abs() > 1 || !in_grid(to) || (to.z == 0 && view.occupant(to).is_some())
        }
        ActionKind::Grasp => {
            let Some(obj) = action.target_object.and_then(|id| view.object(id)) else {
                return true;
            };
            g.holding.is_some() || obj.is_container || obj.container.is_some() || obj.position.chebyshev(g.position) > 1
        }
        ActionKind::Release => {
            if g.holding.is_none() {
                return true;
            }
            let crate::model::TargetPredicate::InContainer { container, .. } = subgoal.target;
            match view.occupant(g.position.floor()) {
                Some(o) if o.is_container => o.id != container,
                Some(_) => true,
                None => false,
            }
        }
        _ => false,
    }
}

struct Episode<'a> {
    world: &'a BlockWorld,
    cfg: &'a HarnessConfig,
    models: &'a Models,
    rec: EpisodeRecord,
    state: SimState,
    stack: Vec<Subgoal>,
    store: MemoryStore,
    retries: BTreeMap<SubgoalId, u32>,
    /// `(subgoal, harness time popped)` in pop order.
    popped: Vec<(Subgoal, u64)>,
    history: VecDeque<Observation>,
    uncorrected: bool,
    unsteady: u32,
    t: u64,
    failed: bool,
    subgoal_embeddings: BTreeMap<SubgoalId, Vec<f64>>,
}

/// Runs one episode. `seed` fixes the initial state and every rng stream, so
/// configurations run on the same seed share the same episode.
pub fn run_episode(
    world: &BlockWorld,
    policy: &dyn Policy,
    cfg: &HarnessConfig,
    models: &Models,
    seed: u64,
    perturbation: Option<PerturbationSpec>,
) -> Result<EpisodeRecord> {
    check_wiring(world, cfg, models)?;
    let task = world.task();
    let (state, _) = world.reset(derive_seed(seed, 10));
    let mut policy_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 11));
    let mut retrieval_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 12));
    let mut decompose_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 13));
    let plan = policy.decompose(&task.instruction, task, cfg.oracle_decomposition, &mut decompose_rng);
    let subgoal_embeddings = match models.text {
        Some(enc) => task.subgoals.iter().map(|g| (g.id, enc.embed(&g.description))).collect(),
        None => BTreeMap::new(),
    };
    let mut ep = Episode {
        world,
        cfg,
        models,
        rec: EpisodeRecord {
            config: cfg.name.clone(),
            task_id: task.id.clone(),
            seed,
            steps: Vec::new(),
            events: Vec::new(),
            perturbation,
            perturbed_at: None,
            snapshots: BTreeMap::new(),
            decomposition: plan.iter().map(|g| g.id).collect(),
            success: false,
            subgoals_completed: 0,
            total_subgoals: task.num_subgoals(),
            verifier_calls: 0,
            recoveries: 0,
            memory_entries: 0,
            capacity_warning: false,
            final_state_hash: 0,
        },
        state,
        stack: plan.into_iter().rev().collect(),
        store: MemoryStore::new(cfg.n_max, cfg.delta_c),
        retries: BTreeMap::new(),
        popped: Vec::new(),
        history: VecDeque::with_capacity(cfg.history_window_h + 1),
        uncorrected: false,
        unsteady: 0,
        t: 0,
        failed: false,
        subgoal_embeddings,
    };
    let mut pending = perturbation;

    while !ep.stack.is_empty() && ep.t < task.max_steps && !ep.failed {
        if let Some(spec) = pending {
            if ep.state.completed_subgoals.len() == spec.k_star {
                let (next, mut ev) = inject_perturbation(world, &ep.state, &spec, cfg.perturb_target)?;
                ev.timestep = ep.t;
                ep.state = next;
                ep.rec.events.push(ev);
                ep.rec.perturbed_at = Some(ep.t);
                pending = None;
            }
        }
        let g = ep.stack.last().expect("non-empty").clone();
        let obs = world.encode(&ep.state);
        let top1_key = ep.store.retrieve(&obs.embedding, 1).first().map(|h| h.0.key.clone());
        let (hits, memory_text, sv_key) = if cfg.use_emm {
            let hits = ep.store.retrieve_with(cfg.retrieval, &obs.embedding, cfg.k_retrieve, &mut retrieval_rng);
            let ts: Vec<u64> = hits.iter().map(|h| h.0.timestep).collect();
            (ts, serialize_context(&hits), hits.first().map(|h| h.0.key.clone()))
        } else {
            (Vec::new(), String::new(), None)
        };
        let memory_text = if cfg.oracle_memory { ledger_context(&ep.state.completed_subgoals) } else { memory_text };
        let history: Vec<Observation> = ep.history.iter().cloned().collect();
        let ctx = PolicyContext {
            observation: &obs,
            instruction: &task.instruction,
            active_subgoal: &g,
            memory_text: &memory_text,
            history: &history,
            task,
            completion_times: &ep.state.completed_subgoals,
            uncorrected_failure: ep.uncorrected,
            unsteady: ep.unsteady,
        };
        let proposal = policy.propose(&ctx, &mut policy_rng);
        let p_fail = if cfg.use_sv { Some(ep.score(&obs, sv_key.as_deref(), &proposal.action, &g)?) } else { None };

        let base = StepRecord {
            t: ep.t,
            subgoal_id: g.id,
            observation: obs.embedding.clone(),
            top1_key,
            retrieval_hits: hits,
            proposed: Some(proposal.action.clone()),
            fault: proposal.fault.clone(),
            p_fail,
            executed: proposal.action.clone(),
            recovery: None,
            events: Vec::new(),
            state_before: 0,
            state_after: 0,
            post_observation: Vec::new(),
        };
        if cfg.use_recovery && p_fail.is_some_and(|p| trigger(p, cfg.theta_v)) {
            ep.recover(&g, &obs, RecoveryReason::Verifier, base)?;
            continue;
        }
        ep.unsteady = proposal.unsteady;
        let complete = ep.execute(&g, base)?;
        if !complete && cfg.use_recovery && proposal.subgoal_final && !ep.failed && ep.t < task.max_steps {
            let obs = world.encode(&ep.state);
            let base = StepRecord {
                t: ep.t,
                subgoal_id: g.id,
                observation: obs.embedding.clone(),
                top1_key: None,
                retrieval_hits: Vec::new(),
                proposed: None,
                fault: None,
                p_fail: None,
                executed: Action::noop(world.action_dim()),
                recovery: None,
                events: Vec::new(),
                state_before: 0,
                state_after: 0,
                post_observation: Vec::new(),
            };
            ep.recover(&g, &obs, RecoveryReason::CompletionNegative, base)?;
        }
    }
    ep.finish()
}

fn check_wiring(world: &BlockWorld, cfg: &HarnessConfig, models: &Models) -> Result<()> {
    let needs_text = (cfg.use_sv && cfg.verifier != VerifierKind::Rule) || !cfg.oracle_completion;
    if needs_text && models.text.is_none() {
        return Err(Error::config(format!("config '{}': missing model: subgoal text encoder", cfg.name)));
    }
    let d = world.encoder().dim();
    let check_sv = |m: &SvModel, what: &str| -> Result<()> {
        if m.dims.embedding != d || m.dims.action != world.action_dim() {
            return Err(Error::config(format!("config '{}': {what} was trained for different dimensions", cfg.name)));
        }
        Ok(())
    };
    if cfg.use_sv {
        match cfg.verifier {
            VerifierKind::Learned => {
                let (m, what) = if cfg.sv_with_memory {
                    (&models.sv, "missing model: sv")
                } else {
                    (&models.sv_no_memory, "missing model: sv without memory")
                };
                match m {
                    Some(m) => check_sv(m, "verifier")?,
                    None => return Err(Error::config(format!("config '{}': {what}", cfg.name))),
                }
            }
            VerifierKind::Ensemble => {
                if models.ensemble.is_empty() {
                    return Err(Error::config(format!("config '{}': missing model: ensemble", cfg.name)));
                }
                for m in &models.ensemble {
                    check_sv(m, "ensemble member")?;
                }
            }
            VerifierKind::Rule => {}
        }
    }
    if !cfg.oracle_completion {
        match &models.completion {
            Some(m) if m.embedding_dim == d => {}
            Some(_) => {
                return Err(Error::config(format!("config '{}': completion detector dimension mismatch", cfg.name)))
            }
            None => return Err(Error::config(format!("config '{}': missing model: completion detector", cfg.name))),
        }
    }
    if cfg.k_retrieve == 0 {
        return Err(Error::config("k must be ≥ 1"));
    }
    Ok(())
}

impl Episode<'_> {
    fn subgoal_embedding(&self, id: SubgoalId) -> &[f64] {
        self.subgoal_embeddings.get(&id).map(Vec::as_slice).unwrap_or(&[])
    }

    fn score(&mut self, obs: &Observation, key: Option<&[f64]>, action: &Action, g: &Subgoal) -> Result<f64> {
        let emb = self.subgoal_embedding(g.id).to_vec();
        match self.cfg.verifier {
            VerifierKind::Learned => {
                let m = if self.cfg.sv_with_memory { &self.models.sv } else { &self.models.sv_no_memory };
                self.rec.verifier_calls += 1;
                m.as_ref().expect("wiring checked").score(&obs.embedding, key, &action.parameters, &emb)
            }
            VerifierKind::Ensemble => {
                let n = self.models.ensemble.len();
                self.rec.verifier_calls += n as u64;
                let mut total = 0.0;
                for m in &self.models.ensemble {
                    total += m.score(&obs.embedding, key, &action.parameters, &emb)?;
                }
                Ok(total / n as f64)
            }
            VerifierKind::Rule => {
                self.rec.verifier_calls += 1;
                let view = SceneView::decode(&obs.raw_features).ok_or_else(|| Error::Data("undecodable observation".into()))?;
                Ok(if rule_violation(&view, action, g) { 1.0 } else { 0.0 })
            }
        }
    }

    /// Steps the simulator with `step.executed`, writes memory, stores
    /// snapshots, records the step and runs the completion check. Returns
    /// whether the active subgoal was found complete (and popped).
    fn execute(&mut self, g: &Subgoal, mut step: StepRecord) -> Result<bool> {
        let before = self.world.encode(&self.state);
        let (next, next_obs, mut events) = self.world.step(&self.state, &step.executed)?;
        self.t += 1;
        for e in &mut events {
            e.timestep = self.t;
        }
        if events.iter().any(|e| e.kind == EventKind::ActionFailed) {
            self.uncorrected = true;
        }
        match self.store.maybe_write(&next_obs, self.t, g.id, &events) {
            Some(EntryStatus::Success | EntryStatus::Checkpoint) => {
                self.rec.snapshots.insert(self.t, self.world.snapshot(&next, self.t));
            }
            _ => {}
        }
        step.state_before = self.state.content_hash();
        step.state_after = next.content_hash();
        step.post_observation = next_obs.embedding.clone();
        self.state = next;
        self.history.push_back(before);
        while self.history.len() > self.cfg.history_window_h {
            self.history.pop_front();
        }

        let complete = self.check_completion(&next_obs, g)?;
        if complete {
            self.stack.pop();
            self.popped.push((g.clone(), self.t));
            self.uncorrected = false;
        }
        self.rec.events.extend(events.iter().cloned());
        step.events = events;
        self.rec.steps.push(step);
        Ok(complete)
    }

    fn check_completion(&self, obs: &Observation, g: &Subgoal) -> Result<bool> {
        if self.cfg.oracle_completion {
            return Ok(self.world.subgoal_satisfied(g.id, &self.state));
        }
        let m = self.models.completion.as_ref().expect("wiring checked");
        m.complete(&obs.embedding, self.subgoal_embedding(g.id))
    }

    fn recover(&mut self, g: &Subgoal, obs: &Observation, reason: RecoveryReason, mut step: StepRecord) -> Result<()> {
        let count = self.retries.entry(g.id).or_insert(0);
        if *count >= self.cfg.r_max {
            let t = self.t;
            self.rec.events.push(StepEvent::new(
                EventKind::RecoveryExhausted,
                t,
                Some(g.id),
                format!("retry budget {} spent", self.cfg.r_max),
            ));
            self.failed = true;
            return Ok(());
        }
        *count += 1;
        let retry = *count;
        self.rec.recoveries += 1;
        self.uncorrected = false;
        // the failure note in context steadies the policy
        self.unsteady = 0;
        let trig = StepEvent::new(EventKind::RecoveryTriggered, self.t + 1, Some(g.id), format!("{reason:?}"));

        let target = match self.cfg.recovery_mode {
            RecoveryMode::Rollback => self.store.latest_restorable().map(|e| e.timestep),
            RecoveryMode::Forward => None,
        };
        let mut record = RecoveryRecord {
            reason,
            mode: self.cfg.recovery_mode,
            entry_timestep: None,
            snapshot_hash: None,
            restored_hash: None,
            fallback: false,
            retry,
        };
        // the failing situation goes into memory before anything is undone
        self.store.push(MemoryEntry {
            key: normalized(&obs.embedding),
            keyframe_features: obs.raw_features.clone(),
            subgoal_id: g.id,
            status: EntryStatus::Failure,
            timestep: self.t + 1,
            state_delta: StateDelta::from_features(&obs.raw_features),
        });

        let snapshot = target.and_then(|ts| self.rec.snapshots.get(&ts).cloned().map(|s| (ts, s)));
        match snapshot {
            Some((ts, snap)) => {
                self.state = self.world.restore(&snap)?;
                record.entry_timestep = Some(ts);
                record.snapshot_hash = Some(snap.content_hash());
                record.restored_hash = Some(self.state.content_hash());
                // undo pops that happened after the restored entry; earliest ends on top
                while self.popped.last().is_some_and(|(_, at)| *at > ts) {
                    let (sub, _) = self.popped.pop().expect("checked");
                    self.stack.push(sub);
                }
                step.executed = Action::recover_goto(self.world.action_dim());
            }
            None => {
                record.fallback = self.cfg.recovery_mode == RecoveryMode::Rollback;
                record.mode = RecoveryMode::Forward;
                let view = SceneView::decode(&self.world.encode(&self.state).raw_features)
                    .ok_or_else(|| Error::Data("undecodable observation".into()))?;
                let dim = self.world.action_dim();
                let mut a = next_action(&view, g, dim, GripperBelief::Observed).unwrap_or_else(|| Action::noop(dim));
                if a.kind == ActionKind::Noop {
                    a = Action::recover_goto(dim);
                }
                step.executed = a;
            }
        }
        let detail = if record.fallback { " (no rollback target, forward fallback)" } else { "" };
        let trig = StepEvent { detail: format!("{}{detail}", trig.detail), ..trig };
        self.rec.events.push(trig.clone());
        step.recovery = Some(record);
        let active = self.stack.last().cloned().unwrap_or_else(|| g.clone());
        self.execute_recovery(&active, step, trig)
    }

    fn execute_recovery(&mut self, g: &Subgoal, step: StepRecord, trig: StepEvent) -> Result<()> {
        let n = self.rec.steps.len();
        self.execute(g, step)?;
        if let Some(s) = self.rec.steps.get_mut(n) {
            s.events.insert(0, trig);
        }
        Ok(())
    }

    fn finish(mut self) -> Result<EpisodeRecord> {
        let task = self.world.task();
        let satisfied = task.subgoals.iter().filter(|g| self.world.subgoal_satisfied(g.id, &self.state)).count();
        let success = !self.failed && self.stack.is_empty() && satisfied == task.num_subgoals();
        let kind = if success { EventKind::TaskCompleted } else { EventKind::TaskFailed };
        self.rec.events.push(StepEvent::new(kind, self.t, None, format!("{satisfied}/{} subgoals", task.num_subgoals())));
        self.rec.success = success;
        self.rec.subgoals_completed = satisfied;
        self.rec.memory_entries = self.store.len();
        self.rec.capacity_warning = self.store.capacity_warning;
        self.rec.final_state_hash = self.state.content_hash();
        Ok(self.rec)
    }
}

/// Replays the executed actions after every restore and checks that each
/// restore landed on its snapshot and each replayed step reproduces the
/// recorded state hash. Returns the number of restores checked.
pub fn verify_rollbacks(world: &BlockWorld, rec: &EpisodeRecord) -> std::result::Result<usize, String> {
    let mut checked = 0;
    for (i, step) in rec.steps.iter().enumerate() {
        let Some(r) = &step.recovery else { continue };
        let Some(ts) = r.entry_timestep else { continue };
        let snap = rec.snapshots.get(&ts).ok_or(format!("step {i}: no snapshot at t={ts}"))?;
        if r.restored_hash != Some(snap.content_hash()) || r.snapshot_hash != Some(snap.content_hash()) {
            return Err(format!("step {i}: restored state differs from snapshot t={ts}"));
        }
        let mut state = snap.restore().map_err(|e| e.to_string())?;
        if state.content_hash() != step.state_before {
            return Err(format!("step {i}: recovery action not applied to the restored state"));
        }
        for (j, s) in rec.steps.iter().enumerate().skip(i) {
            if j > i {
                if s.recovery.as_ref().is_some_and(|r| r.entry_timestep.is_some()) || rec.perturbed_at == Some(s.t) {
                    // another restore or an injected perturbation starts a new segment
                    break;
                }
                if s.state_before != state.content_hash() {
                    return Err(format!("step {j} did not start from the replayed state"));
                }
            }
            let (next, _, _) = world.step(&state, &s.executed).map_err(|e| e.to_string())?;
            if next.content_hash() != s.state_after {
                return Err(format!("replay diverged at step {j} after restore at step {i}"));
            }
            state = next;
        }
        checked += 1;
    }
    Ok(checked)
}
