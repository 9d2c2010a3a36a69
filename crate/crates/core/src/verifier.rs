//! Pre-execution failure verifier and completion detector: input assembly,
//! rollout labeling, training, thresholded verdicts and AUROC.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::EventKind;
use crate::nn::{backward_and_step, Adam, MlpParams, MlpSpec};
use crate::par::{map_range, Execution};
use crate::util::{fnv1a64, mix64, normalize};

/// Output width of the fixed action projection.
pub const ACTION_PROJ_DIM: usize = 256;
pub const DEFAULT_TEXT_SEED: u64 = 0x7e47;
pub const DEFAULT_ACTION_SEED: u64 = 0xac71;

/// Hash-projection sentence embedding: each lower-cased token maps to a
/// pseudo-random `±1` vector, the sum is L2-normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextEncoder {
    pub dim: usize,
    pub seed: u64,
}

impl TextEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        TextEncoder { dim, seed }
    }

    pub fn embed(&self, text: &str) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for tok in text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
            let mut h = fnv1a64(tok.to_lowercase().as_bytes()) ^ self.seed;
            for (i, o) in out.iter_mut().enumerate() {
                if i % 64 == 0 {
                    h = mix64(h);
                }
                *o += if (h >> (i % 64)) & 1 == 1 { 1.0 } else { -1.0 };
            }
        }
        normalize(&mut out);
        out
    }
}

/// Fixed Gaussian projection of action parameters, scaled by `1/sqrt(A)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionProjection {
    pub action_dim: usize,
    pub seed: u64,
    #[serde(skip)]
    matrix: Vec<f64>,
}

impl ActionProjection {
    pub fn new(action_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (action_dim as f64).sqrt();
        let matrix = (0..ACTION_PROJ_DIM * action_dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
            .collect();
        ActionProjection { action_dim, seed, matrix }
    }

    pub fn apply(&self, action: &[f64]) -> Result<Vec<f64>> {
        if action.len() != self.action_dim {
            return Err(Error::Shape { context: "action parameters", expected: self.action_dim, actual: action.len() });
        }
        Ok(self.matrix.chunks_exact(self.action_dim).map(|row| row.iter().zip(action).map(|(w, a)| w * a).sum()).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvSample {
    pub obs_embedding: Vec<f64>,
    /// Zero vector when no memory was retrieved.
    pub top1_memory_key: Vec<f64>,
    pub action: Vec<f64>,
    pub subgoal_embedding: Vec<f64>,
    pub label: u8,
    /// Source episode, used for the held-out split.
    pub episode: u64,
}

/// Input to the completion detector: post-step observation and subgoal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionSample {
    pub obs_embedding: Vec<f64>,
    pub subgoal_embedding: Vec<f64>,
    pub label: u8,
    pub episode: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SvDims {
    pub embedding: usize,
    pub action: usize,
    pub subgoal: usize,
}

impl SvDims {
    pub fn input_len(&self) -> usize {
        2 * self.embedding + ACTION_PROJ_DIM + self.subgoal
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvModel {
    pub dims: SvDims,
    pub action_projection: ActionProjection,
    pub mlp: MlpParams,
    pub theta_v: f64,
    /// When false the memory-key block is always zeroed.
    pub with_memory: bool,
}

fn check_len(context: &'static str, v: &[f64], expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(Error::Shape { context, expected, actual: v.len() });
    }
    Ok(())
}

/// `[obs; key or zeros; W_a action; subgoal]`.
pub fn build_input(
    dims: &SvDims,
    projection: &ActionProjection,
    obs: &[f64],
    key: Option<&[f64]>,
    action: &[f64],
    subgoal: &[f64],
) -> Result<Vec<f64>> {
    check_len("observation embedding", obs, dims.embedding)?;
    check_len("subgoal embedding", subgoal, dims.subgoal)?;
    let mut out = Vec::with_capacity(dims.input_len());
    out.extend_from_slice(obs);
    match key {
        Some(k) => {
            check_len("memory key", k, dims.embedding)?;
            out.extend_from_slice(k);
        }
        None => out.resize(2 * dims.embedding, 0.0),
    }
    out.extend(projection.apply(action)?);
    out.extend_from_slice(subgoal);
    Ok(out)
}

impl SvModel {
    pub fn input(&self, obs: &[f64], key: Option<&[f64]>, action: &[f64], subgoal: &[f64]) -> Result<Vec<f64>> {
        let key = if self.with_memory { key } else { None };
        build_input(&self.dims, &self.action_projection, obs, key, action, subgoal)
    }

    pub fn sample_input(&self, s: &SvSample) -> Result<Vec<f64>> {
        self.input(&s.obs_embedding, Some(&s.top1_memory_key), &s.action, &s.subgoal_embedding)
    }

    pub fn score(&self, obs: &[f64], key: Option<&[f64]>, action: &[f64], subgoal: &[f64]) -> Result<f64> {
        self.mlp.predict(&self.input(obs, key, action, subgoal)?)
    }

    /// `(p_fail, trigger_recovery)`.
    pub fn verdict(&self, s: &SvSample) -> Result<(f64, bool)> {
        let p = self.mlp.predict(&self.sample_input(s)?)?;
        Ok((p, trigger(p, self.theta_v)))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.mlp.save(&dir.join("params.bin"))?;
        let meta = serde_json::json!({
            "dims": self.dims,
            "action_seed": self.action_projection.seed,
            "theta_v": self.theta_v,
            "with_memory": self.with_memory,
        });
        std::fs::write(dir.join("model.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("model.json"))?)?;
        let dims: SvDims = serde_json::from_value(meta["dims"].clone())?;
        let seed = meta["action_seed"].as_u64().ok_or_else(|| Error::parse("model.json: action_seed"))?;
        let mlp = MlpParams::load(&dir.join("params.bin"))?;
        if mlp.spec.input_dim() != dims.input_len() {
            return Err(Error::Shape { context: "verifier parameters", expected: dims.input_len(), actual: mlp.spec.input_dim() });
        }
        Ok(SvModel {
            dims,
            action_projection: ActionProjection::new(dims.action, seed),
            mlp,
            theta_v: meta["theta_v"].as_f64().unwrap_or(0.65),
            with_memory: meta["with_memory"].as_bool().unwrap_or(true),
        })
    }
}

/// Recovery fires only strictly above the threshold.
pub fn trigger(p_fail: f64, theta_v: f64) -> bool {
    p_fail > theta_v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionModel {
    pub embedding_dim: usize,
    pub subgoal_dim: usize,
    pub mlp: MlpParams,
    pub threshold: f64,
}

impl CompletionModel {
    pub fn input(&self, obs: &[f64], subgoal: &[f64]) -> Result<Vec<f64>> {
        check_len("observation embedding", obs, self.embedding_dim)?;
        check_len("subgoal embedding", subgoal, self.subgoal_dim)?;
        Ok([obs, subgoal].concat())
    }

    pub fn probability(&self, obs: &[f64], subgoal: &[f64]) -> Result<f64> {
        self.mlp.predict(&self.input(obs, subgoal)?)
    }

    pub fn complete(&self, obs: &[f64], subgoal: &[f64]) -> Result<bool> {
        Ok(self.probability(obs, subgoal)? > self.threshold)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.mlp.save(&dir.join("params.bin"))?;
        let meta = serde_json::json!({
            "embedding_dim": self.embedding_dim,
            "subgoal_dim": self.subgoal_dim,
            "threshold": self.threshold,
        });
        std::fs::write(dir.join("model.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("model.json"))?)?;
        let get = |k: &str| meta[k].as_u64().map(|v| v as usize).ok_or_else(|| Error::parse(format!("model.json: {k}")));
        let (embedding_dim, subgoal_dim) = (get("embedding_dim")?, get("subgoal_dim")?);
        let mlp = MlpParams::load(&dir.join("params.bin"))?;
        if mlp.spec.input_dim() != embedding_dim + subgoal_dim {
            return Err(Error::Shape {
                context: "completion parameters",
                expected: embedding_dim + subgoal_dim,
                actual: mlp.spec.input_dim(),
            });
        }
        Ok(CompletionModel { embedding_dim, subgoal_dim, mlp, threshold: meta["threshold"].as_f64().unwrap_or(0.5) })
    }
}

/// `labels[i] = 1` iff some `action_failed` event has timestep in
/// `(steps[i], steps[i] + horizon]`.
pub fn horizon_labels(step_times: &[u64], failure_times: &[u64], horizon: u64) -> Vec<u8> {
    let mut fails = failure_times.to_vec();
    fails.sort_unstable();
    step_times
        .iter()
        .map(|&t| {
            let i = fails.partition_point(|&f| f <= t);
            (i < fails.len() && fails[i] <= t + horizon) as u8
        })
        .collect()
}

/// Timesteps of every event of `kind` in an event log.
pub fn event_times<'a>(events: impl IntoIterator<Item = &'a crate::model::StepEvent>, kind: EventKind) -> Vec<u64> {
    events.into_iter().filter(|e| e.kind == kind).map(|e| e.timestep).collect()
}

/// Rank-based AUROC; tied scores count one half.
pub fn auroc(scores: &[(f64, u8)]) -> Result<f64> {
    let n_pos = scores.iter().filter(|s| s.1 == 1).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Undefined("AUROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].0.total_cmp(&scores[b].0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]].0 == scores[order[i]].0 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| scores[k].1 == 1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub pos_weight: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Fraction of episodes held out.
    pub heldout_fraction: f64,
}

impl TrainConfig {
    pub fn from_run(cfg: &crate::model::RunConfig, seed: u64) -> Self {
        TrainConfig {
            hidden: cfg.hidden_layers.clone(),
            dropout: cfg.dropout,
            pos_weight: cfg.pos_weight,
            learning_rate: cfg.learning_rate,
            weight_decay: cfg.weight_decay,
            batch_size: cfg.batch_size,
            epochs: cfg.epochs,
            seed,
            heldout_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub final_train_loss: f64,
    pub heldout_auroc: f64,
    pub train_samples: usize,
    pub heldout_samples: usize,
    pub heldout_episodes: Vec<u64>,
    pub positive_rate: f64,
}

/// Episode-level split: a seeded shuffle of the distinct episodes, the
/// first `fraction` of which are held out (at least one).
pub fn split_episodes(episodes: &[u64], fraction: f64, seed: u64) -> BTreeSet<u64> {
    let mut distinct: Vec<u64> = episodes.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    distinct.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5_0117));
    let n = ((distinct.len() as f64 * fraction).ceil() as usize).clamp(1, distinct.len().saturating_sub(1).max(1));
    distinct.into_iter().take(n).collect()
}

/// Generic binary trainer over lazily built inputs.
pub fn train_classifier(
    n: usize,
    input_dim: usize,
    build: &(dyn Fn(usize) -> Result<Vec<f64>> + Sync),
    labels: &[u8],
    episodes: &[u64],
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<(MlpParams, TrainReport)> {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    if pos == 0 || pos == n {
        return Err(Error::Data(format!(
            "training data is single-class ({pos} positives of {n}); generate more varied rollouts"
        )));
    }
    let held = split_episodes(episodes, cfg.heldout_fraction, cfg.seed);
    let (mut train_idx, test_idx): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| !held.contains(&episodes[i]));
    if train_idx.is_empty() {
        return Err(Error::Data("no training episodes after the held-out split".into()));
    }
    let spec = MlpSpec::new(input_dim, &cfg.hidden, cfg.dropout);
    let mut params = MlpParams::init(&spec, cfg.seed)?;
    let mut adam = Adam::new(params.values.len(), cfg.learning_rate, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut last_loss = f64::NAN;
    for _ in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for batch_idx in train_idx.chunks(cfg.batch_size.max(1)) {
            let inputs = map_range(exec, batch_idx.len(), |j| build(batch_idx[j]));
            let inputs: Vec<Vec<f64>> = inputs.into_iter().collect::<Result<_>>()?;
            let batch: Vec<(&[f64], f64)> =
                inputs.iter().zip(batch_idx).map(|(x, &i)| (x.as_slice(), labels[i] as f64)).collect();
            let loss = backward_and_step(&mut params, &mut adam, &batch, cfg.pos_weight, &mut rng, exec)?;
            total += loss * batch.len() as f64;
            count += batch.len();
        }
        last_loss = total / count as f64;
    }
    let scores = map_range(exec, test_idx.len(), |j| -> Result<(f64, u8)> {
        let i = test_idx[j];
        Ok((params.predict(&build(i)?)?, labels[i]))
    });
    let scores: Vec<(f64, u8)> = scores.into_iter().collect::<Result<_>>()?;
    let heldout_auroc = auroc(&scores).unwrap_or(f64::NAN);
    let report = TrainReport {
        final_train_loss: last_loss,
        heldout_auroc,
        train_samples: train_idx.len(),
        heldout_samples: test_idx.len(),
        heldout_episodes: held.into_iter().collect(),
        positive_rate: pos as f64 / n as f64,
    };
    Ok((params, report))
}

/// Trains a verifier. `with_memory = false` zeroes the memory-key block.
pub fn train_sv(
    samples: &[SvSample],
    dims: SvDims,
    with_memory: bool,
    theta_v: f64,
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<(SvModel, TrainReport)> {
    let projection = ActionProjection::new(dims.action, DEFAULT_ACTION_SEED);
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let episodes: Vec<u64> = samples.iter().map(|s| s.episode).collect();
    let build = |i: usize| {
        let s = &samples[i];
        let key = with_memory.then_some(s.top1_memory_key.as_slice());
        build_input(&dims, &projection, &s.obs_embedding, key, &s.action, &s.subgoal_embedding)
    };
    let (mlp, report) = train_classifier(samples.len(), dims.input_len(), &build, &labels, &episodes, cfg, exec)?;
    Ok((SvModel { dims, action_projection: projection, mlp, theta_v, with_memory }, report))
}

pub fn train_completion_detector(
    samples: &[CompletionSample],
    embedding_dim: usize,
    subgoal_dim: usize,
    threshold: f64,
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<(CompletionModel, TrainReport)> {
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let episodes: Vec<u64> = samples.iter().map(|s| s.episode).collect();
    let build = |i: usize| -> Result<Vec<f64>> {
        let s = &samples[i];
        check_len("observation embedding", &s.obs_embedding, embedding_dim)?;
        check_len("subgoal embedding", &s.subgoal_embedding, subgoal_dim)?;
        Ok([s.obs_embedding.as_slice(), s.subgoal_embedding.as_slice()].concat())
    };
    let (mlp, report) =
        train_classifier(samples.len(), embedding_dim + subgoal_dim, &build, &labels, &episodes, cfg, exec)?;
    Ok((CompletionModel { embedding_dim, subgoal_dim, mlp, threshold }, report))
}

/// Held-out AUROC of an already trained verifier.
pub fn evaluate_sv(model: &SvModel, samples: &[SvSample], exec: Execution) -> Result<f64> {
    let scores = map_range(exec, samples.len(), |i| -> Result<(f64, u8)> {
        Ok((model.verdict(&samples[i])?.0, samples[i].label))
    });
    auroc(&scores.into_iter().collect::<Result<Vec<_>>>()?)
}

/// Summary written next to a binary dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub kind: String,
    pub count: usize,
    pub columns: BTreeMap<String, usize>,
    pub row_width: usize,
    pub positives: usize,
    pub negatives: usize,
    pub positive_rate: f64,
    pub episodes: usize,
    pub label_horizon: u64,
}

/// Rows of `[obs; key; action; subgoal; label; episode]` as little-endian
/// `f32`, plus a JSON sidecar.
pub fn write_sv_dataset(path: &Path, samples: &[SvSample], dims: SvDims, label_horizon: u64) -> Result<DatasetSidecar> {
    let width = 2 * dims.embedding + dims.action + dims.subgoal + 2;
    let mut flat = Vec::with_capacity(samples.len() * width);
    for s in samples {
        let row_start = flat.len();
        for part in [&s.obs_embedding, &s.top1_memory_key, &s.action, &s.subgoal_embedding] {
            flat.extend(part.iter().map(|v| *v as f32));
        }
        flat.push(s.label as f32);
        flat.push(s.episode as f32);
        if flat.len() - row_start != width {
            return Err(Error::Shape { context: "dataset row", expected: width, actual: flat.len() - row_start });
        }
    }
    crate::sim::trace::write_f32_file(path, &flat)?;
    let columns = BTreeMap::from([
        ("obs".to_string(), dims.embedding),
        ("memory_key".to_string(), dims.embedding),
        ("action".to_string(), dims.action),
        ("subgoal".to_string(), dims.subgoal),
        ("label".to_string(), 1),
        ("episode".to_string(), 1),
    ]);
    let sidecar = sidecar("sv", samples.iter().map(|s| (s.label, s.episode)), columns, width, label_horizon);
    std::fs::write(path.with_extension("json"), serde_json::to_string_pretty(&sidecar)? + "\n")?;
    Ok(sidecar)
}

pub fn read_sv_dataset(path: &Path) -> Result<(Vec<SvSample>, SvDims)> {
    let side: DatasetSidecar = serde_json::from_str(&std::fs::read_to_string(path.with_extension("json"))?)?;
    let col = |k: &str| side.columns.get(k).copied().ok_or_else(|| Error::parse(format!("sidecar lacks column {k}")));
    let dims = SvDims { embedding: col("obs")?, action: col("action")?, subgoal: col("subgoal")? };
    let flat = crate::sim::trace::read_f32_file(path)?;
    if flat.len() != side.count * side.row_width {
        return Err(Error::parse(format!("{}: {} values, sidecar promises {}", path.display(), flat.len(), side.count * side.row_width)));
    }
    let d = dims.embedding;
    let samples = flat
        .chunks_exact(side.row_width)
        .map(|r| {
            let f = |a: usize, b: usize| r[a..b].iter().map(|v| *v as f64).collect::<Vec<f64>>();
            let a0 = 2 * d;
            let g0 = a0 + dims.action;
            let l0 = g0 + dims.subgoal;
            SvSample {
                obs_embedding: f(0, d),
                top1_memory_key: f(d, 2 * d),
                action: f(a0, g0),
                subgoal_embedding: f(g0, l0),
                label: r[l0] as u8,
                episode: r[l0 + 1] as u64,
            }
        })
        .collect();
    Ok((samples, dims))
}

pub fn write_completion_dataset(path: &Path, samples: &[CompletionSample], label_horizon: u64) -> Result<DatasetSidecar> {
    let (d, g) = samples.first().map(|s| (s.obs_embedding.len(), s.subgoal_embedding.len())).unwrap_or((0, 0));
    let width = d + g + 2;
    let mut flat = Vec::with_capacity(samples.len() * width);
    for s in samples {
        check_len("observation embedding", &s.obs_embedding, d)?;
        check_len("subgoal embedding", &s.subgoal_embedding, g)?;
        flat.extend(s.obs_embedding.iter().chain(&s.subgoal_embedding).map(|v| *v as f32));
        flat.push(s.label as f32);
        flat.push(s.episode as f32);
    }
    crate::sim::trace::write_f32_file(path, &flat)?;
    let columns = BTreeMap::from([
        ("obs".to_string(), d),
        ("subgoal".to_string(), g),
        ("label".to_string(), 1),
        ("episode".to_string(), 1),
    ]);
    let sidecar = sidecar("completion", samples.iter().map(|s| (s.label, s.episode)), columns, width, label_horizon);
    std::fs::write(path.with_extension("json"), serde_json::to_string_pretty(&sidecar)? + "\n")?;
    Ok(sidecar)
}

pub fn read_completion_dataset(path: &Path) -> Result<Vec<CompletionSample>> {
    let side: DatasetSidecar = serde_json::from_str(&std::fs::read_to_string(path.with_extension("json"))?)?;
    let d = side.columns.get("obs").copied().unwrap_or(0);
    let g = side.columns.get("subgoal").copied().unwrap_or(0);
    let flat = crate::sim::trace::read_f32_file(path)?;
    if side.row_width != d + g + 2 || flat.len() != side.count * side.row_width {
        return Err(Error::parse(format!("{}: size does not match sidecar", path.display())));
    }
    Ok(flat
        .chunks_exact(side.row_width)
        .map(|r| CompletionSample {
            obs_embedding: r[..d].iter().map(|v| *v as f64).collect(),
            subgoal_embedding: r[d..d + g].iter().map(|v| *v as f64).collect(),
            label: r[d + g] as u8,
            episode: r[d + g + 1] as u64,
        })
        .collect())
}

fn sidecar(
    kind: &str,
    rows: impl Iterator<Item = (u8, u64)>,
    columns: BTreeMap<String, usize>,
    row_width: usize,
    label_horizon: u64,
) -> DatasetSidecar {
    let mut positives = 0;
    let mut count = 0;
    let mut eps = BTreeSet::new();
    for (y, e) in rows {
        positives += y as usize;
        count += 1;
        eps.insert(e);
    }
    DatasetSidecar {
        kind: kind.into(),
        count,
        columns,
        row_width,
        positives,
        negatives: count - positives,
        positive_rate: if count == 0 { 0.0 } else { positives as f64 / count as f64 },
        episodes: eps.len(),
        label_horizon,
    }
}
