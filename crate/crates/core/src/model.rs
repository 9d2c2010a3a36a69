//! Domain types shared by every module: tasks, subgoals, observations,
//! actions, events and run configuration.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ObjectId = u32;
pub type SubgoalId = u32;

/// Integer grid coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
    pub z: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32, z: i32) -> Self {
        Cell { x, y, z }
    }

    /// Chebyshev distance, the reach metric of the gripper.
    pub fn chebyshev(self, other: Cell) -> i32 {
        (self.x - other.x)
            .abs()
            .max((self.y - other.y).abs())
            .max((self.z - other.z).abs())
    }

    pub fn offset(self, dx: i32, dy: i32, dz: i32) -> Cell {
        Cell::new(self.x + dx, self.y + dy, self.z + dz)
    }

    pub fn floor(self) -> Cell {
        Cell::new(self.x, self.y, 0)
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.x, self.y, self.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Item,
    Container,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: ObjectId,
    pub name: String,
    pub kind: ObjectKind,
}

/// Ground-truth condition a subgoal asks for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "predicate", rename_all = "snake_case")]
pub enum TargetPredicate {
    InContainer { item: ObjectId, container: ObjectId },
}

impl TargetPredicate {
    /// The object the policy has to manipulate to satisfy the predicate.
    pub fn manipulated_object(&self) -> ObjectId {
        match *self {
            TargetPredicate::InContainer { item, .. } => item,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subgoal {
    pub id: SubgoalId,
    pub description: String,
    pub target: TargetPredicate,
}

/// A long-horizon task: instruction, scene objects and `K >= 3` ordered subgoals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub instruction: String,
    pub objects: Vec<ObjectSpec>,
    pub subgoals: Vec<Subgoal>,
    pub max_steps: u64,
}

pub const MIN_SUBGOALS: usize = 3;

impl Task {
    pub fn num_subgoals(&self) -> usize {
        self.subgoals.len()
    }

    pub fn object(&self, id: ObjectId) -> Option<&ObjectSpec> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn subgoal(&self, id: SubgoalId) -> Option<&Subgoal> {
        self.subgoals.iter().find(|g| g.id == id)
    }

    /// Structural checks: subgoal count, ordering, object references.
    pub fn validate(&self) -> Result<()> {
        if self.subgoals.len() < MIN_SUBGOALS {
            return Err(Error::config(format!(
                "task {} has {} subgoals, long-horizon tasks need at least {MIN_SUBGOALS}",
                self.id,
                self.subgoals.len()
            )));
        }
        for (i, g) in self.subgoals.iter().enumerate() {
            if g.id as usize != i + 1 {
                return Err(Error::config(format!(
                    "task {}: subgoal ids must run 1..K in order, found {} at position {}",
                    self.id,
                    g.id,
                    i + 1
                )));
            }
        }
        if self.max_steps == 0 {
            return Err(Error::config(format!("task {}: max_steps must be positive", self.id)));
        }
        let ids: BTreeSet<ObjectId> = self.objects.iter().map(|o| o.id).collect();
        if ids.len() != self.objects.len() {
            return Err(Error::config(format!("task {}: duplicate object ids", self.id)));
        }
        if self.objects.len() > features::MAX_OBJECTS {
            return Err(Error::config(format!(
                "task {}: {} objects exceed the observation layout capacity {}",
                self.id,
                self.objects.len(),
                features::MAX_OBJECTS
            )));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.id as usize != i {
                return Err(Error::config(format!(
                    "task {}: object ids must be dense 0..n, found {} at {}",
                    self.id, o.id, i
                )));
            }
        }
        for g in &self.subgoals {
            match g.target {
                TargetPredicate::InContainer { item, container } => {
                    let item_ok = self.object(item).map(|o| o.kind == ObjectKind::Item);
                    let cont_ok = self.object(container).map(|o| o.kind == ObjectKind::Container);
                    if item_ok != Some(true) || cont_ok != Some(true) {
                        return Err(Error::config(format!(
                            "task {}: subgoal {} references unknown predicate operands ({item}, {container})",
                            self.id, g.id
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// What the agent sees at one timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Unit-norm encoder output.
    pub embedding: Vec<f64>,
    /// Simulator-native features, see [`features`].
    pub raw_features: Vec<f64>,
    pub timestep: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionKind {
    Move,
    Grasp,
    Release,
    Open,
    Close,
    Noop,
    RecoverGoto,
}

impl ActionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ActionKind::Move => "move",
            ActionKind::Grasp => "grasp",
            ActionKind::Release => "release",
            ActionKind::Open => "open",
            ActionKind::Close => "close",
            ActionKind::Noop => "noop",
            ActionKind::RecoverGoto => "recover-goto",
        }
    }
}

/// Parameter vector layout. Slots `0..3` carry a grid offset (move delta, or
/// target offset relative to the gripper for grasps); the rest flag the kind.
pub mod action_layout {
    pub const MIN_DIM: usize = 8;
    pub const OFFSET: usize = 0;
    pub const GRASP: usize = 3;
    pub const RELEASE: usize = 4;
    pub const MOVE: usize = 5;
    pub const GRIPPER: usize = 6;
    pub const IDLE: usize = 7;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub kind: ActionKind,
    pub target_object: Option<ObjectId>,
    pub parameters: Vec<f64>,
}

impl Action {
    fn with_flags(kind: ActionKind, target: Option<ObjectId>, offset: [i32; 3], dim: usize) -> Self {
        use action_layout::*;
        let mut p = vec![0.0; dim.max(MIN_DIM)];
        p[OFFSET] = offset[0] as f64;
        p[OFFSET + 1] = offset[1] as f64;
        p[OFFSET + 2] = offset[2] as f64;
        match kind {
            ActionKind::Grasp => p[GRASP] = 1.0,
            ActionKind::Release => p[RELEASE] = 1.0,
            ActionKind::Move => p[MOVE] = 1.0,
            ActionKind::Open => p[GRIPPER] = 1.0,
            ActionKind::Close => p[GRIPPER] = -1.0,
            ActionKind::Noop => p[IDLE] = 1.0,
            ActionKind::RecoverGoto => p[IDLE] = -1.0,
        }
        Action { kind, target_object: target, parameters: p }
    }

    pub fn move_by(delta: [i32; 3], dim: usize) -> Self {
        Self::with_flags(ActionKind::Move, None, delta, dim)
    }

    /// Grasp `object`, which the proposer believes sits at `offset` from the gripper.
    pub fn grasp(object: ObjectId, offset: [i32; 3], dim: usize) -> Self {
        Self::with_flags(ActionKind::Grasp, Some(object), offset, dim)
    }

    pub fn release(dim: usize) -> Self {
        Self::with_flags(ActionKind::Release, None, [0, 0, 0], dim)
    }

    pub fn open(dim: usize) -> Self {
        Self::with_flags(ActionKind::Open, None, [0, 0, 0], dim)
    }

    pub fn close(dim: usize) -> Self {
        Self::with_flags(ActionKind::Close, None, [0, 0, 0], dim)
    }

    pub fn noop(dim: usize) -> Self {
        Self::with_flags(ActionKind::Noop, None, [0, 0, 0], dim)
    }

    pub fn recover_goto(dim: usize) -> Self {
        Self::with_flags(ActionKind::RecoverGoto, None, [0, 0, 0], dim)
    }

    /// Integer offset carried in the parameter vector.
    pub fn offset(&self) -> [i32; 3] {
        let o = action_layout::OFFSET;
        [
            self.parameters[o].round() as i32,
            self.parameters[o + 1].round() as i32,
            self.parameters[o + 2].round() as i32,
        ]
    }

    pub fn dim(&self) -> usize {
        self.parameters.len()
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [dx, dy, dz] = self.offset();
        match (self.kind, self.target_object) {
            (ActionKind::Move, _) => write!(f, "move({dx},{dy},{dz})"),
            (ActionKind::Grasp, Some(o)) => write!(f, "grasp(#{o})"),
            (k, _) => f.write_str(k.as_str()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    SubgoalCompleted,
    ActionFailed,
    PerturbationInjected,
    RecoveryTriggered,
    RecoveryExhausted,
    TaskCompleted,
    TaskFailed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepEvent {
    pub kind: EventKind,
    pub timestep: u64,
    pub subgoal_id: Option<SubgoalId>,
    pub detail: String,
}

impl StepEvent {
    pub fn new(kind: EventKind, timestep: u64, subgoal_id: Option<SubgoalId>, detail: impl Into<String>) -> Self {
        StepEvent { kind, timestep, subgoal_id, detail: detail.into() }
    }
}

/// Injectable fault rates of the scripted policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultModelConfig {
    /// Memory-gap error probability when a completed subgoal lies outside the history window.
    pub p_fm: f64,
    /// Per-step probability that the policy starts drifting toward an
    /// infeasible or wrong-object proposal.
    pub p_fv: f64,
    /// Factor on `p_fv` while an uncorrected failure persists.
    pub cascade_multiplier: f64,
    pub history_window_h: usize,
    /// Probability that subgoal decomposition returns a corrupted list.
    pub p_decompose: f64,
    /// Share of empty-gripper verification faults that close the gripper.
    #[serde(default = "default_close_share")]
    pub p_close_share: f64,
}

fn default_close_share() -> f64 {
    0.6
}

impl Default for FaultModelConfig {
    fn default() -> Self {
        FaultModelConfig {
            p_fm: 0.35,
            p_fv: 0.02,
            cascade_multiplier: 3.0,
            history_window_h: 8,
            p_decompose: 0.043,
            p_close_share: default_close_share(),
        }
    }
}

impl FaultModelConfig {
    pub fn fault_free() -> Self {
        FaultModelConfig { p_fm: 0.0, p_fv: 0.0, p_decompose: 0.0, ..Self::default() }
    }
}

/// Every tunable of a run. Defaults are the reference harness constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub k_retrieve: usize,
    pub delta_c: u64,
    pub n_max: usize,
    pub r_max: u32,
    pub theta_v: f64,
    pub label_horizon: u64,
    pub embedding_dim: usize,
    pub subgoal_dim: usize,
    pub action_dim: usize,
    pub seeds: Vec<u64>,
    pub faults: FaultModelConfig,
    pub completion_threshold: f64,
    pub hidden_layers: Vec<usize>,
    pub dropout: f64,
    pub pos_weight: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            k_retrieve: 3,
            delta_c: 20,
            n_max: 50,
            r_max: 3,
            theta_v: 0.65,
            label_horizon: 5,
            embedding_dim: 512,
            subgoal_dim: 256,
            action_dim: 8,
            seeds: vec![0, 1, 2],
            faults: FaultModelConfig::default(),
            completion_threshold: 0.5,
            hidden_layers: vec![512, 256, 128],
            dropout: 0.1,
            pos_weight: 4.0,
            learning_rate: 1e-4,
            weight_decay: 1e-5,
            batch_size: 256,
            epochs: 20,
        }
    }
}

impl RunConfig {
    /// Small dimensions for fast tests; other constants unchanged.
    pub fn test_profile() -> Self {
        RunConfig {
            embedding_dim: 32,
            subgoal_dim: 16,
            hidden_layers: vec![128, 64, 32],
            ..Self::default()
        }
    }

    pub fn history_window_h(&self) -> usize {
        self.faults.history_window_h
    }

    /// Every invariant violation; empty means valid.
    pub fn validate(&self) -> Vec<String> {
        validate_config(self)
    }

    /// Renders the `key = value` config file.
    pub fn to_config_text(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let seeds = self.seeds.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let f = &self.faults;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        kv("k_retrieve", self.k_retrieve.to_string());
        kv("delta_c", self.delta_c.to_string());
        kv("n_max", self.n_max.to_string());
        kv("r_max", self.r_max.to_string());
        kv("theta_v", self.theta_v.to_string());
        kv("label_horizon", self.label_horizon.to_string());
        kv("history_window_h", f.history_window_h.to_string());
        kv("embedding_dim", self.embedding_dim.to_string());
        kv("subgoal_dim", self.subgoal_dim.to_string());
        kv("action_dim", self.action_dim.to_string());
        kv("seeds", seeds);
        kv("p_fm", f.p_fm.to_string());
        kv("p_fv", f.p_fv.to_string());
        kv("cascade_multiplier", f.cascade_multiplier.to_string());
        kv("p_decompose", f.p_decompose.to_string());
        kv("p_close_share", f.p_close_share.to_string());
        kv("completion_threshold", self.completion_threshold.to_string());
        kv("hidden_layers", join(&self.hidden_layers));
        kv("dropout", self.dropout.to_string());
        kv("pos_weight", self.pos_weight.to_string());
        kv("learning_rate", self.learning_rate.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("epochs", self.epochs.to_string());
        out
    }

    /// Parses a config file on top of `base`. Unknown keys are rejected.
    pub fn from_config_text(text: &str, base: RunConfig) -> Result<RunConfig> {
        let mut cfg = base;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(format!("line {}: expected key = value", lineno + 1)))?;
            let key = key.trim();
            let value = value.trim();
            let at = |e: String| Error::parse(format!("line {} ({key}): {e}", lineno + 1));
            match key {
                "k_retrieve" => cfg.k_retrieve = num(value).map_err(at)?,
                "delta_c" => cfg.delta_c = num(value).map_err(at)?,
                "n_max" => cfg.n_max = num(value).map_err(at)?,
                "r_max" => cfg.r_max = num(value).map_err(at)?,
                "theta_v" => cfg.theta_v = num(value).map_err(at)?,
                "label_horizon" => cfg.label_horizon = num(value).map_err(at)?,
                "history_window_h" => cfg.faults.history_window_h = num(value).map_err(at)?,
                "embedding_dim" => cfg.embedding_dim = num(value).map_err(at)?,
                "subgoal_dim" => cfg.subgoal_dim = num(value).map_err(at)?,
                "action_dim" => cfg.action_dim = num(value).map_err(at)?,
                "seeds" => cfg.seeds = list(value).map_err(at)?,
                "p_fm" => cfg.faults.p_fm = num(value).map_err(at)?,
                "p_fv" => cfg.faults.p_fv = num(value).map_err(at)?,
                "cascade_multiplier" => cfg.faults.cascade_multiplier = num(value).map_err(at)?,
                "p_decompose" => cfg.faults.p_decompose = num(value).map_err(at)?,
                "p_close_share" => cfg.faults.p_close_share = num(value).map_err(at)?,
                "completion_threshold" => cfg.completion_threshold = num(value).map_err(at)?,
                "hidden_layers" => cfg.hidden_layers = hidden(value).map_err(at)?,
                "dropout" => cfg.dropout = num(value).map_err(at)?,
                "pos_weight" => cfg.pos_weight = num(value).map_err(at)?,
                "learning_rate" => cfg.learning_rate = num(value).map_err(at)?,
                "weight_decay" => cfg.weight_decay = num(value).map_err(at)?,
                "batch_size" => cfg.batch_size = num(value).map_err(at)?,
                "epochs" => cfg.epochs = num(value).map_err(at)?,
                other => {
                    return Err(Error::config(format!("line {}: unknown key `{other}`", lineno + 1)));
                }
            }
        }
        Ok(cfg)
    }
}

fn num<T: FromStr>(s: &str) -> std::result::Result<T, String>
where
    T::Err: fmt::Display,
{
    s.parse::<T>().map_err(|e| format!("cannot parse `{s}`: {e}"))
}

/// Verifier hidden widths: `deep` (the default), `compact`, or an explicit list.
pub fn hidden_preset(name: &str) -> Option<Vec<usize>> {
    match name {
        "deep" => Some(vec![512, 256, 128]),
        "compact" => Some(vec![512, 256]),
        _ => None,
    }
}

fn hidden(s: &str) -> std::result::Result<Vec<usize>, String> {
    hidden_preset(s).map_or_else(|| list(s), Ok)
}

fn list<T: FromStr>(s: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|p| num(p.trim())).collect()
}

/// Returns every invariant violation of `cfg`; an empty list means valid.
pub fn validate_config(cfg: &RunConfig) -> Vec<String> {
    let mut v = Vec::new();
    let prob = |p: f64| (0.0..=1.0).contains(&p);
    if !prob(cfg.theta_v) {
        v.push("theta_v outside [0,1]".to_string());
    }
    if cfg.k_retrieve < 1 {
        v.push("k must be ≥ 1".to_string());
    }
    if cfg.delta_c < 1 {
        v.push("delta_c must be ≥ 1".to_string());
    }
    if cfg.n_max < 1 {
        v.push("n_max must be ≥ 1".to_string());
    }
    if cfg.label_horizon < 1 {
        v.push("label_horizon must be ≥ 1".to_string());
    }
    if cfg.faults.history_window_h < 1 {
        v.push("history_window_h must be ≥ 1".to_string());
    }
    if cfg.embedding_dim < 1 {
        v.push("embedding_dim must be ≥ 1".to_string());
    }
    if cfg.subgoal_dim < 1 {
        v.push("subgoal_dim must be ≥ 1".to_string());
    }
    if cfg.action_dim < action_layout::MIN_DIM {
        v.push(format!("action_dim must be ≥ {}", action_layout::MIN_DIM));
    }
    for (name, p) in [
        ("p_fm", cfg.faults.p_fm),
        ("p_fv", cfg.faults.p_fv),
        ("p_decompose", cfg.faults.p_decompose),
        ("p_close_share", cfg.faults.p_close_share),
    ] {
        if !prob(p) {
            v.push(format!("{name} outside [0,1]"));
        }
    }
    if !(cfg.faults.cascade_multiplier >= 1.0) {
        v.push("cascade_multiplier must be ≥ 1".to_string());
    }
    if !prob(cfg.completion_threshold) {
        v.push("completion_threshold outside [0,1]".to_string());
    }
    if !(0.0..1.0).contains(&cfg.dropout) {
        v.push("dropout outside [0,1)".to_string());
    }
    if cfg.hidden_layers.iter().any(|&h| h == 0) {
        v.push("hidden layer sizes must be ≥ 1".to_string());
    }
    if !(cfg.pos_weight > 0.0) {
        v.push("pos_weight must be > 0".to_string());
    }
    if !(cfg.learning_rate > 0.0) {
        v.push("learning_rate must be > 0".to_string());
    }
    if !(cfg.weight_decay >= 0.0) {
        v.push("weight_decay must be ≥ 0".to_string());
    }
    if cfg.batch_size < 1 {
        v.push("batch_size must be ≥ 1".to_string());
    }
    v
}

/// Layout of [`Observation::raw_features`].
///
/// `MAX_OBJECTS` object slots of `OBJECT_FIELDS` each, followed by the
/// gripper block. Container/holding references are stored as `id + 1`, with
/// `0` meaning none.
pub mod features {
    use super::{Cell, ObjectId};

    pub const MAX_OBJECTS: usize = 12;
    pub const OBJECT_FIELDS: usize = 7;
    pub const GRIPPER_FIELDS: usize = 5;
    pub const RAW_DIM: usize = MAX_OBJECTS * OBJECT_FIELDS + GRIPPER_FIELDS;
    pub const GRIPPER_OFFSET: usize = MAX_OBJECTS * OBJECT_FIELDS;

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub struct ObjectView {
        pub id: ObjectId,
        pub is_container: bool,
        pub position: Cell,
        pub container: Option<ObjectId>,
        pub held: bool,
    }

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub struct GripperView {
        pub position: Cell,
        pub open: bool,
        pub holding: Option<ObjectId>,
    }

    /// Decoded raw features.
    #[derive(Debug, Clone, PartialEq, Eq)]
    pub struct SceneView {
        pub objects: Vec<ObjectView>,
        pub gripper: GripperView,
    }

    fn opt_ref(v: f64) -> Option<ObjectId> {
        let r = v.round() as i64;
        (r > 0).then(|| (r - 1) as ObjectId)
    }

    fn cell(f: &[f64]) -> Cell {
        Cell::new(f[0].round() as i32, f[1].round() as i32, f[2].round() as i32)
    }

    impl SceneView {
        pub fn decode(raw: &[f64]) -> Option<SceneView> {
            if raw.len() != RAW_DIM {
                return None;
            }
            let mut objects = Vec::new();
            for slot in 0..MAX_OBJECTS {
                let f = &raw[slot * OBJECT_FIELDS..(slot + 1) * OBJECT_FIELDS];
                if f[0] < 0.5 {
                    continue;
                }
                objects.push(ObjectView {
                    id: slot as ObjectId,
                    is_container: f[1] > 0.5,
                    position: cell(&f[2..5]),
                    container: opt_ref(f[5]),
                    held: f[6] > 0.5,
                });
            }
            let g = &raw[GRIPPER_OFFSET..];
            Some(SceneView {
                objects,
                gripper: GripperView { position: cell(&g[0..3]), open: g[3] > 0.5, holding: opt_ref(g[4]) },
            })
        }

        pub fn object(&self, id: ObjectId) -> Option<&ObjectView> {
            self.objects.iter().find(|o| o.id == id)
        }

        /// Whatever occupies a floor cell (held objects excluded).
        pub fn occupant(&self, c: Cell) -> Option<&ObjectView> {
            self.objects.iter().find(|o| !o.held && o.container.is_none() && o.position == c)
        }
    }
}
