//! Benchmark runner: paired episode grids, rollout datasets, model training,
//! ablation matrices, sweeps and table emission.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{run_episode, EpisodeRecord, HarnessConfig, Models, RecoveryMode, RecoveryReason, VerifierKind};
use crate::error::{Error, Result};
use crate::memory::RetrievalStrategy;
use crate::model::{EventKind, RunConfig, Task};
use crate::par::{map_slice, Execution};
use crate::policy::{FaultFire, ScriptedPolicy};
use crate::sim::{make_task_suite, sample_perturbation, BlockWorld, Encoder, PerturbationKind, DEFAULT_ENCODER_SEED};
use crate::util::derive_seed;
use crate::verifier::{
    event_times, evaluate_sv, horizon_labels, train_completion_detector, train_sv, trigger, CompletionSample,
    CompletionModel, SvDims, SvModel, SvSample, TextEncoder, TrainConfig, TrainReport, DEFAULT_TEXT_SEED,
};

/// Seed of the evaluation suite.
pub const EVAL_SUITE_SEED: u64 = 0xe7a1;
/// Seed of the training suite; disjoint tasks from the evaluation suite.
pub const TRAIN_SUITE_SEED: u64 = 0x7a11;
pub const ENSEMBLE_SIZE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Full,
    Test,
}

impl Profile {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Profile::Full),
            "test" => Ok(Profile::Test),
            other => Err(Error::config(format!("unknown profile '{other}' (expected full or test)"))),
        }
    }

    pub fn run_config(self) -> RunConfig {
        match self {
            Profile::Full => RunConfig::default(),
            Profile::Test => RunConfig::test_profile(),
        }
    }

    /// Rollout steps collected for training.
    pub fn dataset_steps(self) -> usize {
        match self {
            Profile::Full => 50_000,
            Profile::Test => 5_000,
        }
    }

    pub fn episodes_per_seed(self) -> usize {
        match self {
            Profile::Full => 500,
            Profile::Test => 100,
        }
    }
}

pub fn eval_suite() -> Vec<Task> {
    make_task_suite(10, (5, 6), EVAL_SUITE_SEED)
}

pub fn train_suite() -> Vec<Task> {
    make_task_suite(10, (5, 6), TRAIN_SUITE_SEED)
}

/// Builds one simulator per task, rejecting tasks that cannot host a
/// perturbation when `perturbed` is set.
pub fn build_worlds(run: &RunConfig, suite: &[Task], perturbed: bool) -> Result<Vec<BlockWorld>> {
    if suite.is_empty() {
        return Err(Error::config("empty task suite"));
    }
    suite
        .iter()
        .map(|t| {
            if perturbed && t.num_subgoals() < 3 {
                return Err(Error::config(format!("task {} has K < 3; no perturbation boundary exists", t.id)));
            }
            BlockWorld::new(t.clone(), Encoder::new(run.embedding_dim, DEFAULT_ENCODER_SEED), run.action_dim)
        })
        .collect()
}

/// Seed of episode `index` under run seed `seed`. Independent of how many
/// other seeds or episodes are run.
pub fn episode_seed(seed: u64, index: usize) -> u64 {
    derive_seed(derive_seed(seed, 0xe915), index as u64)
}

/// The harness configuration a config name stands for. Names follow the
/// ablation matrix rows.
pub fn harness_config(name: &str, run: &RunConfig) -> Result<HarnessConfig> {
    let base = HarnessConfig::baseline(run);
    let full = HarnessConfig::full(run);
    let cfg = match name {
        "baseline" => base,
        "baseline_h32" => HarnessConfig { history_window_h: 32, ..base },
        "emm_only" => HarnessConfig { use_emm: true, ..base },
        "sv_only" => HarnessConfig { use_sv: true, use_recovery: true, sv_with_memory: false, ..base },
        "full" => full,
        "sv_no_memory" => HarnessConfig { sv_with_memory: false, ..full },
        "no_rollback" => HarnessConfig { recovery_mode: RecoveryMode::Forward, ..full },
        "rule_verifier" => HarnessConfig { verifier: VerifierKind::Rule, ..full },
        "ensemble" => HarnessConfig { verifier: VerifierKind::Ensemble, ..full },
        "oracle_memory" => HarnessConfig { oracle_memory: true, ..full },
        "retrieval_random" => HarnessConfig { retrieval: RetrievalStrategy::Random, ..full },
        "retrieval_recency" => HarnessConfig { retrieval: RetrievalStrategy::Recency, ..full },
        "learned_completion" => HarnessConfig { oracle_completion: false, ..full },
        other => return Err(Error::config(format!("unknown harness config '{other}'"))),
    };
    Ok(cfg.named(name))
}

/// Rows of the default ablation matrix.
pub const MATRIX_ROWS: &[&str] = &[
    "baseline",
    "baseline_h32",
    "emm_only",
    "sv_only",
    "full",
    "sv_no_memory",
    "no_rollback",
    "rule_verifier",
    "ensemble",
    "oracle_memory",
];

/// Compact per-episode outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub seed: u64,
    pub index: usize,
    pub task_id: String,
    pub success: bool,
    pub subgoals_completed: usize,
    pub total_subgoals: usize,
    pub perturbation: Option<(PerturbationKind, usize)>,
    pub steps: usize,
    pub recoveries: u32,
    pub verifier_triggers: u32,
    pub verifier_calls: u64,
    pub memory_faults: u32,
    pub suppressed_faults: u32,
    pub action_failures: u32,
}

impl EpisodeSummary {
    pub fn from_record(rec: &EpisodeRecord, index: usize) -> Self {
        let count = |f: &dyn Fn(&FaultFire) -> bool| rec.steps.iter().filter(|s| s.fault.as_ref().is_some_and(f)).count() as u32;
        EpisodeSummary {
            seed: rec.seed,
            index,
            task_id: rec.task_id.clone(),
            success: rec.success,
            subgoals_completed: rec.subgoals_completed,
            total_subgoals: rec.total_subgoals,
            perturbation: rec.perturbation.map(|p| (p.kind, p.k_star)),
            steps: rec.steps.len(),
            recoveries: rec.recoveries,
            verifier_triggers: rec
                .steps
                .iter()
                .filter(|s| s.recovery.as_ref().is_some_and(|r| r.reason == RecoveryReason::Verifier))
                .count() as u32,
            verifier_calls: rec.verifier_calls,
            memory_faults: count(&|f| matches!(f, FaultFire::Memory { .. })),
            suppressed_faults: count(&|f| matches!(f, FaultFire::MemorySuppressed { .. })),
            action_failures: rec.events.iter().filter(|e| e.kind == EventKind::ActionFailed).count() as u32,
        }
    }
}

/// A configured benchmark: run config, simulators and execution mode.
pub struct Bench {
    pub run: RunConfig,
    pub worlds: Vec<BlockWorld>,
    pub exec: Execution,
}

impl Bench {
    pub fn new(run: RunConfig, suite: &[Task], exec: Execution) -> Result<Self> {
        let problems = run.validate();
        if !problems.is_empty() {
            return Err(Error::config(problems.join("; ")));
        }
        let worlds = build_worlds(&run, suite, true)?;
        Ok(Bench { run, worlds, exec })
    }

    /// The policy as seen under `cfg`: fault rates from the run config, the
    /// history window from the harness config.
    pub fn policy(&self, cfg: &HarnessConfig) -> ScriptedPolicy {
        let mut faults = self.run.faults.clone();
        faults.history_window_h = cfg.history_window_h;
        ScriptedPolicy::new(faults, self.run.action_dim)
    }

    /// Runs the paired grid `seeds × 0..episodes`, mapping every record
    /// through `f`. Episode `i` uses task `i mod |suite|`; perturbed grids
    /// draw one spec per episode from the episode seed.
    pub fn run_grid<T, F>(
        &self,
        cfg: &HarnessConfig,
        models: &Models,
        seeds: &[u64],
        episodes: usize,
        perturbed: bool,
        f: F,
    ) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&BlockWorld, &EpisodeRecord, usize) -> T + Sync + Send,
    {
        let grid: Vec<(u64, usize)> = seeds.iter().flat_map(|&s| (0..episodes).map(move |i| (s, i))).collect();
        let policy = self.policy(cfg);
        let out = map_slice(self.exec, &grid, |&(seed, i)| -> Result<T> {
            let world = &self.worlds[i % self.worlds.len()];
            let es = episode_seed(seed, i);
            let spec = if perturbed {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(es, 20));
                Some(sample_perturbation(world.task().num_subgoals(), &mut rng)?)
            } else {
                None
            };
            let mut rec = run_episode(world, &policy, cfg, models, es, spec)?;
            rec.seed = seed;
            Ok(f(world, &rec, i))
        });
        out.into_iter().collect()
    }

    pub fn summaries(
        &self,
        cfg: &HarnessConfig,
        models: &Models,
        seeds: &[u64],
        episodes: usize,
        perturbed: bool,
    ) -> Result<Vec<EpisodeSummary>> {
        self.run_grid(cfg, models, seeds, episodes, perturbed, |_, rec, i| EpisodeSummary::from_record(rec, i))
    }

    /// One metrics row. TSR and SCR come from the unperturbed grid; RSR from
    /// the perturbed grid when `with_rsr` is set.
    pub fn row(
        &self,
        cfg: &HarnessConfig,
        models: &Models,
        seeds: &[u64],
        episodes: usize,
        with_rsr: bool,
    ) -> Result<MetricsRow> {
        let plain = self.summaries(cfg, models, seeds, episodes, false)?;
        let perturbed = if with_rsr { Some(self.summaries(cfg, models, seeds, episodes, true)?) } else { None };
        MetricsRow::aggregate(&cfg.name, seeds, episodes, &plain, perturbed.as_deref())
    }

    pub fn run_matrix(
        &self,
        configs: &[HarnessConfig],
        models: &Models,
        seeds: &[u64],
        episodes: usize,
        with_rsr: bool,
    ) -> Result<Vec<MetricsRow>> {
        configs.iter().map(|c| self.row(c, models, seeds, episodes, with_rsr)).collect()
    }

    /// RSR row over perturbed episodes only.
    pub fn run_recovery_eval(
        &self,
        cfg: &HarnessConfig,
        models: &Models,
        seeds: &[u64],
        episodes: usize,
    ) -> Result<(MetricsRow, Vec<EpisodeSummary>)> {
        let perturbed = self.summaries(cfg, models, seeds, episodes, true)?;
        let row = MetricsRow::aggregate(&cfg.name, seeds, episodes, &perturbed, Some(&perturbed))?;
        Ok((row, perturbed))
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub config: String,
    pub tsr: f64,
    pub tsr_std: f64,
    pub scr: f64,
    pub scr_std: f64,
    pub rsr: Option<f64>,
    pub rsr_std: Option<f64>,
    pub episodes: usize,
    pub seeds: usize,
    pub verifier_calls: u64,
    pub recoveries: u64,
    pub steps: u64,
}

impl MetricsRow {
    /// Mean and sample standard deviation over seeds, in percent.
    pub fn aggregate(
        name: &str,
        seeds: &[u64],
        episodes: usize,
        plain: &[EpisodeSummary],
        perturbed: Option<&[EpisodeSummary]>,
    ) -> Result<Self> {
        if seeds.is_empty() || episodes == 0 {
            return Err(Error::config("a metrics row needs at least one seed and one episode"));
        }
        let per_seed = |rows: &[EpisodeSummary], f: &dyn Fn(&[&EpisodeSummary]) -> f64| -> Result<Vec<f64>> {
            seeds
                .iter()
                .map(|&s| {
                    let eps: Vec<&EpisodeSummary> = rows.iter().filter(|e| e.seed == s).collect();
                    if eps.len() != episodes {
                        return Err(Error::Data(format!("seed {s}: {} episodes, expected {episodes}", eps.len())));
                    }
                    Ok(f(&eps))
                })
                .collect()
        };
        let tsr = |eps: &[&EpisodeSummary]| 100.0 * eps.iter().filter(|e| e.success).count() as f64 / eps.len() as f64;
        let scr = |eps: &[&EpisodeSummary]| {
            let done: usize = eps.iter().map(|e| e.subgoals_completed).sum();
            let total: usize = eps.iter().map(|e| e.total_subgoals).sum();
            100.0 * done as f64 / total as f64
        };
        let (t, ts) = mean_std(&per_seed(plain, &tsr)?);
        let (c, cs) = mean_std(&per_seed(plain, &scr)?);
        let (r, rs) = match perturbed {
            Some(p) => {
                let (r, rs) = mean_std(&per_seed(p, &tsr)?);
                (Some(r), Some(rs))
            }
            None => (None, None),
        };
        let all = plain.iter().chain(perturbed.unwrap_or(&[]));
        let (mut calls, mut recoveries, mut steps) = (0, 0, 0);
        for e in all {
            calls += e.verifier_calls;
            recoveries += e.recoveries as u64;
            steps += e.steps as u64;
        }
        Ok(MetricsRow {
            config: name.to_string(),
            tsr: t,
            tsr_std: ts,
            scr: c,
            scr_std: cs,
            rsr: r,
            rsr_std: rs,
            episodes,
            seeds: seeds.len(),
            verifier_calls: calls,
            recoveries,
            steps,
        })
    }
}

pub const CSV_HEADER: &str = "config,TSR,TSR_std,SCR,SCR_std,RSR,RSR_std,episodes,seeds";

fn opt1(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.1}")).unwrap_or_default()
}

pub fn rows_to_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.1},{:.1},{:.1},{:.1},{},{},{},{}",
            r.config,
            r.tsr,
            r.tsr_std,
            r.scr,
            r.scr_std,
            opt1(r.rsr),
            opt1(r.rsr_std),
            r.episodes,
            r.seeds
        );
    }
    out
}

pub fn rows_to_markdown(rows: &[MetricsRow]) -> String {
    let mut out = String::from("| Config | TSR (%) | SCR (%) | RSR (%) | Episodes | Seeds |\n|---|---|---|---|---|---|\n");
    for r in rows {
        let rsr = match (r.rsr, r.rsr_std) {
            (Some(m), Some(s)) => format!("{m:.1}±{s:.1}"),
            _ => "-".into(),
        };
        let _ = writeln!(
            out,
            "| {} | {:.1}±{:.1} | {:.1}±{:.1} | {} | {} | {} |",
            r.config, r.tsr, r.tsr_std, r.scr, r.scr_std, rsr, r.episodes, r.seeds
        );
    }
    out
}

/// Verifier inference cost per row, relative to a single learned verifier.
pub fn cost_log(rows: &[MetricsRow]) -> String {
    let mut out = String::from("config,verifier_calls,steps,calls_per_step,recoveries\n");
    for r in rows {
        let per = if r.steps == 0 { 0.0 } else { r.verifier_calls as f64 / r.steps as f64 };
        let _ = writeln!(out, "{},{},{},{:.3},{}", r.config, r.verifier_calls, r.steps, per, r.recoveries);
    }
    out
}

/// Verifier-driven recovery triggers at each threshold on a fixed score trace.
pub fn trigger_counts(scores: &[f64], thresholds: &[f64]) -> Vec<usize> {
    thresholds.iter().map(|&th| scores.iter().filter(|&&p| trigger(p, th)).count()).collect()
}

// ---------------------------------------------------------------------------
// rollout datasets

/// Samples extracted from rollout episodes.
#[derive(Debug, Clone, Default)]
pub struct Datasets {
    pub sv: Vec<SvSample>,
    pub completion: Vec<CompletionSample>,
    pub episodes: usize,
    /// Episodes in which a memory-gap fault fired.
    pub memory_fault_episodes: BTreeSet<u64>,
}

/// Per-step samples of one recorded episode.
pub fn label_episode(
    rec: &EpisodeRecord,
    text: &TextEncoder,
    world: &BlockWorld,
    horizon: u64,
    episode: u64,
) -> (Vec<SvSample>, Vec<CompletionSample>) {
    let dim = world.encoder().dim();
    let failures = event_times(&rec.events, EventKind::ActionFailed);
    let times: Vec<u64> = rec.steps.iter().map(|s| s.t).collect();
    let labels = horizon_labels(&times, &failures, horizon);
    let mut sv = Vec::with_capacity(rec.steps.len());
    let mut cd = Vec::with_capacity(rec.steps.len());
    for (s, &y) in rec.steps.iter().zip(&labels) {
        let desc = world.task().subgoal(s.subgoal_id).map(|g| g.description.as_str()).unwrap_or("");
        let g = text.embed(desc);
        sv.push(SvSample {
            obs_embedding: s.observation.clone(),
            top1_memory_key: s.top1_key.clone().unwrap_or_else(|| vec![0.0; dim]),
            action: s.executed.parameters.clone(),
            subgoal_embedding: g.clone(),
            label: y,
            episode,
        });
        let done = s.events.iter().any(|e| e.kind == EventKind::SubgoalCompleted && e.subgoal_id == Some(s.subgoal_id));
        cd.push(CompletionSample {
            obs_embedding: s.post_observation.clone(),
            subgoal_embedding: g,
            label: done as u8,
            episode,
        });
    }
    (sv, cd)
}

/// Runs unverified episodes on `suite` until at least `n_steps_target`
/// steps are collected. Odd episodes feed retrieved memory to the policy,
/// so memory-gap faults show up both suppressed and not.
pub fn generate_rollout_dataset(
    run: &RunConfig,
    suite: &[Task],
    n_steps_target: usize,
    seed: u64,
    exec: Execution,
) -> Result<Datasets> {
    if n_steps_target < 1000 {
        return Err(Error::config("rollout dataset needs at least 1000 steps"));
    }
    let worlds = build_worlds(run, suite, true)?;
    let plain = HarnessConfig::baseline(run).named("rollout");
    let with_memory = HarnessConfig { use_emm: true, ..plain.clone() };
    let policy = ScriptedPolicy::new(run.faults.clone(), run.action_dim);
    let text = TextEncoder::new(run.subgoal_dim, DEFAULT_TEXT_SEED);
    let models = Models::default();
    let batch = 64;
    let mut out = Datasets::default();
    let mut next = 0usize;
    while out.sv.len() < n_steps_target {
        let ids: Vec<usize> = (next..next + batch).collect();
        let results = map_slice(exec, &ids, |&i| -> Result<_> {
            let world = &worlds[i % worlds.len()];
            let es = episode_seed(seed, i);
            let cfg = if i % 2 == 1 { &with_memory } else { &plain };
            let rec = run_episode(world, &policy, cfg, &models, es, None)?;
            let fm = rec.steps.iter().any(|s| matches!(s.fault, Some(FaultFire::Memory { .. })));
            let (sv, cd) = label_episode(&rec, &text, world, run.label_horizon, i as u64);
            Ok((sv, cd, fm))
        });
        for (i, r) in ids.iter().zip(results) {
            if out.sv.len() >= n_steps_target {
                break;
            }
            let (sv, cd, fm) = r?;
            if fm {
                out.memory_fault_episodes.insert(*i as u64);
            }
            out.sv.extend(sv);
            out.completion.extend(cd);
            out.episodes += 1;
        }
        next += batch;
    }
    let pos = out.sv.iter().filter(|s| s.label == 1).count() as f64 / out.sv.len() as f64;
    if pos < 0.01 {
        return Err(Error::Data(format!(
            "only {:.2}% of steps are labeled positive; raise p_fv or p_fm so failures occur",
            100.0 * pos
        )));
    }
    Ok(out)
}

/// Training-suite rollouts labeled at `horizon`.
pub fn generate_with_horizon(
    run: &RunConfig,
    horizon: u64,
    n_steps_target: usize,
    seed: u64,
    exec: Execution,
) -> Result<Datasets> {
    let mut r = run.clone();
    r.label_horizon = horizon;
    generate_rollout_dataset(&r, &train_suite(), n_steps_target, seed, exec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub sv: TrainReport,
    pub sv_no_memory: TrainReport,
    pub completion: Option<TrainReport>,
    pub ensemble: Vec<TrainReport>,
    /// Held-out AUROC on episodes with memory-gap faults, with and without the memory input.
    pub memory_fault_auroc: Option<(f64, f64)>,
}

/// Verifiers trained by [`train_verifiers`].
#[derive(Debug, Clone)]
pub struct Verifiers {
    pub sv: SvModel,
    pub sv_no_memory: SvModel,
    pub ensemble: Vec<SvModel>,
}

/// Trains the verifier with and without the memory input, plus the
/// ensemble members when asked. The returned summary has a placeholder
/// completion report.
pub fn train_verifiers(
    run: &RunConfig,
    samples: &[SvSample],
    memory_fault_episodes: &BTreeSet<u64>,
    seed: u64,
    with_ensemble: bool,
    exec: Execution,
) -> Result<(Verifiers, TrainingSummary)> {
    let dims = SvDims { embedding: run.embedding_dim, action: run.action_dim, subgoal: run.subgoal_dim };
    let tc = TrainConfig::from_run(run, derive_seed(seed, 1));
    let (sv, sv_rep) = train_sv(samples, dims, true, run.theta_v, &tc, exec)?;
    let (sv_nm, nm_rep) = train_sv(samples, dims, false, run.theta_v, &tc, exec)?;
    let held: BTreeSet<u64> = sv_rep.heldout_episodes.iter().copied().collect();
    let fm: Vec<SvSample> = samples
        .iter()
        .filter(|s| held.contains(&s.episode) && memory_fault_episodes.contains(&s.episode))
        .cloned()
        .collect();
    let memory_fault_auroc = match (evaluate_sv(&sv, &fm, exec), evaluate_sv(&sv_nm, &fm, exec)) {
        (Ok(a), Ok(b)) => Some((a, b)),
        _ => None,
    };
    let mut ensemble = Vec::new();
    let mut ens_reports = Vec::new();
    if with_ensemble {
        for i in 0..ENSEMBLE_SIZE {
            let tc = TrainConfig::from_run(run, derive_seed(seed, 100 + i as u64));
            let (m, r) = train_sv(samples, dims, true, run.theta_v, &tc, exec)?;
            ensemble.push(m);
            ens_reports.push(r);
        }
    }
    let summary = TrainingSummary {
        sv: sv_rep,
        sv_no_memory: nm_rep,
        completion: None,
        ensemble: ens_reports,
        memory_fault_auroc,
    };
    Ok((Verifiers { sv, sv_no_memory: sv_nm, ensemble }, summary))
}

pub fn train_completion(
    run: &RunConfig,
    samples: &[CompletionSample],
    seed: u64,
    exec: Execution,
) -> Result<(CompletionModel, TrainReport)> {
    let tc = TrainConfig::from_run(run, derive_seed(seed, 2));
    train_completion_detector(samples, run.embedding_dim, run.subgoal_dim, run.completion_threshold, &tc, exec)
}

/// Trains every model a matrix needs: the verifiers and the completion detector.
pub fn train_models(
    run: &RunConfig,
    data: &Datasets,
    seed: u64,
    with_ensemble: bool,
    exec: Execution,
) -> Result<(Models, TrainingSummary)> {
    let (v, mut summary) = train_verifiers(run, &data.sv, &data.memory_fault_episodes, seed, with_ensemble, exec)?;
    let (cd, cd_rep) = train_completion(run, &data.completion, seed, exec)?;
    summary.completion = Some(cd_rep);
    let models = Models {
        sv: Some(Arc::new(v.sv)),
        sv_no_memory: Some(Arc::new(v.sv_no_memory)),
        ensemble: v.ensemble.into_iter().map(Arc::new).collect(),
        completion: Some(Arc::new(cd)),
        text: Some(TextEncoder::new(run.subgoal_dim, DEFAULT_TEXT_SEED)),
    };
    Ok((models, summary))
}

/// Held-out AUROC of a verifier trained on labels shuffled across samples.
pub fn shuffled_label_auroc(run: &RunConfig, data: &Datasets, seed: u64, exec: Execution) -> Result<f64> {
    use rand::seq::SliceRandom;
    let mut labels: Vec<u8> = data.sv.iter().map(|s| s.label).collect();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 3)));
    let shuffled: Vec<SvSample> =
        data.sv.iter().zip(labels).map(|(s, y)| SvSample { label: y, ..s.clone() }).collect();
    let dims = SvDims { embedding: run.embedding_dim, action: run.action_dim, subgoal: run.subgoal_dim };
    let tc = TrainConfig::from_run(run, derive_seed(seed, 1));
    let (_, rep) = train_sv(&shuffled, dims, true, run.theta_v, &tc, exec)?;
    Ok(rep.heldout_auroc)
}

// ---------------------------------------------------------------------------
// sweeps

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    ThetaV,
    KRetrieve,
    LabelHorizon,
    HistoryH,
    RetrievalStrategy,
}

impl SweepParam {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "theta_v" => SweepParam::ThetaV,
            "k_retrieve" => SweepParam::KRetrieve,
            "label_horizon" => SweepParam::LabelHorizon,
            "history_h" => SweepParam::HistoryH,
            "retrieval_strategy" => SweepParam::RetrievalStrategy,
            other => return Err(Error::config(format!("unknown sweep parameter '{other}'"))),
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SweepParam::ThetaV => "theta_v",
            SweepParam::KRetrieve => "k_retrieve",
            SweepParam::LabelHorizon => "label_horizon",
            SweepParam::HistoryH => "history_h",
            SweepParam::RetrievalStrategy => "retrieval_strategy",
        }
    }

    /// Default values swept.
    pub fn default_values(&self) -> Vec<String> {
        let v: &[&str] = match self {
            SweepParam::ThetaV => &["0.35", "0.45", "0.55", "0.65", "0.75", "0.85"],
            SweepParam::KRetrieve => &["1", "3", "5"],
            SweepParam::LabelHorizon => &["1", "5", "10"],
            SweepParam::HistoryH => &["8", "16", "32"],
            SweepParam::RetrievalStrategy => &["random", "recency", "cosine"],
        };
        v.iter().map(|s| s.to_string()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<String>,
    pub base: String,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::config("sweep needs at least one value"));
        }
        for v in &self.values {
            let ok = match self.param {
                SweepParam::ThetaV => v.parse::<f64>().is_ok_and(|x| (0.0..=1.0).contains(&x)),
                SweepParam::KRetrieve | SweepParam::LabelHorizon | SweepParam::HistoryH => {
                    v.parse::<u64>().is_ok_and(|x| x >= 1)
                }
                SweepParam::RetrievalStrategy => RetrievalStrategy::parse(v).is_ok(),
            };
            if !ok {
                return Err(Error::config(format!("sweep value '{v}' outside the domain of {}", self.param.as_str())));
            }
        }
        Ok(())
    }

    /// The harness configuration for one value. Label-horizon values leave
    /// the harness unchanged; they act on training.
    pub fn apply(&self, run: &RunConfig, value: &str) -> Result<HarnessConfig> {
        let mut cfg = harness_config(&self.base, run)?;
        let bad = |_| Error::config(format!("bad sweep value '{value}'"));
        match self.param {
            SweepParam::ThetaV => cfg.theta_v = value.parse().map_err(|e: std::num::ParseFloatError| bad(e.to_string()))?,
            SweepParam::KRetrieve => cfg.k_retrieve = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            SweepParam::HistoryH => {
                cfg.history_window_h = value.parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?
            }
            SweepParam::RetrievalStrategy => cfg.retrieval = RetrievalStrategy::parse(value)?,
            SweepParam::LabelHorizon => {}
        }
        cfg.name = format!("{}={}", self.param.as_str(), value);
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: String,
    pub value: String,
    pub metrics: Option<MetricsRow>,
    /// Verifier-driven recovery triggers over the grid (theta_v sweeps).
    pub triggers: Option<u64>,
    /// Held-out verifier AUROC (label_horizon sweeps).
    pub auroc: Option<f64>,
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("parameter,value,{},triggers,auroc\n", CSV_HEADER.trim_start_matches("config,"));
    for r in rows {
        let m = match &r.metrics {
            Some(m) => format!(
                "{:.1},{:.1},{:.1},{:.1},{},{},{},{}",
                m.tsr,
                m.tsr_std,
                m.scr,
                m.scr_std,
                opt1(m.rsr),
                opt1(m.rsr_std),
                m.episodes,
                m.seeds
            ),
            None => ",,,,,,,".into(),
        };
        let trig = r.triggers.map(|t| t.to_string()).unwrap_or_default();
        let au = r.auroc.map(|a| format!("{a:.3}")).unwrap_or_default();
        let _ = writeln!(out, "{},{},{m},{trig},{au}", r.param, r.value);
    }
    out
}

impl Bench {
    /// Runs a sweep. Label-horizon values retrain the verifier on datasets
    /// generated with that horizon and report held-out AUROC only.
    pub fn run_sweep(
        &self,
        spec: &SweepSpec,
        models: &Models,
        seeds: &[u64],
        episodes: usize,
        data_steps: usize,
        data_seed: u64,
    ) -> Result<Vec<SweepRow>> {
        spec.validate()?;
        let mut rows = Vec::new();
        for v in &spec.values {
            if spec.param == SweepParam::LabelHorizon {
                let h: u64 = v.parse().map_err(|_| Error::config(format!("bad horizon '{v}'")))?;
                let data = generate_with_horizon(&self.run, h, data_steps, data_seed, self.exec)?;
                let dims = SvDims { embedding: self.run.embedding_dim, action: self.run.action_dim, subgoal: self.run.subgoal_dim };
                let tc = TrainConfig::from_run(&self.run, derive_seed(data_seed, 1));
                let (_, rep) = train_sv(&data.sv, dims, true, self.run.theta_v, &tc, self.exec)?;
                rows.push(SweepRow { param: spec.param.as_str().into(), value: v.clone(), metrics: None, triggers: None, auroc: Some(rep.heldout_auroc) });
                continue;
            }
            let cfg = spec.apply(&self.run, v)?;
            let eps = self.summaries(&cfg, models, seeds, episodes, false)?;
            let triggers = eps.iter().map(|e| e.verifier_triggers as u64).sum();
            let m = MetricsRow::aggregate(&cfg.name, seeds, episodes, &eps, None)?;
            rows.push(SweepRow {
                param: spec.param.as_str().into(),
                value: v.clone(),
                metrics: Some(m),
                triggers: (spec.param == SweepParam::ThetaV).then_some(triggers),
                auroc: None,
            });
        }
        Ok(rows)
    }

    /// Every verifier score observed on the grid under `cfg`, in grid order.
    pub fn score_trace(&self, cfg: &HarnessConfig, models: &Models, seeds: &[u64], episodes: usize) -> Result<Vec<f64>> {
        let per = self.run_grid(cfg, models, seeds, episodes, false, |_, rec, _| {
            rec.steps.iter().filter_map(|s| s.p_fail).collect::<Vec<_>>()
        })?;
        Ok(per.into_iter().flatten().collect())
    }
}

