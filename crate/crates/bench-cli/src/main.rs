//! `harness-bench`: rollout data, verifier training, ablation matrices,
//! recovery evaluation and sweeps over the grid-world harness.
//!
//! Every output file is a pure function of the flags, config and seeds, so
//! two runs with the same arguments write identical bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use harness_core::bench::{
    self, cost_log, generate_rollout_dataset, harness_config, rows_to_csv, rows_to_markdown, sweep_to_csv,
    train_completion, train_verifiers, Bench, EpisodeSummary, MetricsRow, Profile, SweepParam, SweepRow, SweepSpec,
    TrainingSummary, MATRIX_ROWS,
};
use harness_core::controller::{EpisodeRecord, HarnessConfig, Models};
use harness_core::error::Error;
use harness_core::model::RunConfig;
use harness_core::par::Execution;
use harness_core::sim::trace::{write_jsonl, EmbeddingTable};
use harness_core::sim::PerturbationKind;
use harness_core::verifier::{
    read_completion_dataset, read_sv_dataset, write_completion_dataset, write_sv_dataset, CompletionModel, SvDims,
    SvModel, TextEncoder, DEFAULT_TEXT_SEED,
};
use serde::{Deserialize, Serialize};

const EXIT_CONFIG: u8 = 2;
const EXIT_ASSERT: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "harness-bench", version, about = "Benchmark the memory-conditioned verify-then-execute harness")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// `key = value` config file applied on top of the profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for data generation and training.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = ProfileArg::Full)]
    profile: ProfileArg,
    /// Exit with code 3 when the command's acceptance checks fail.
    #[arg(long = "assert", global = true)]
    check: bool,
    /// Run everything on one thread.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProfileArg {
    Full,
    Test,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Roll out the unverified policy on the training suite and write labeled datasets.
    GenData {
        /// Steps to collect; defaults to the profile's target.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Train the verifier with and without the memory input.
    TrainSv {
        /// Also train the five ensemble members.
        #[arg(long)]
        ensemble: bool,
    },
    /// Train the subgoal completion detector.
    TrainCd,
    /// Run the ablation matrix.
    Bench {
        /// Comma-separated config names; defaults to the full matrix.
        #[arg(long, value_delimiter = ',')]
        rows: Vec<String>,
        #[arg(long)]
        episodes: Option<usize>,
        /// Skip the perturbed grid (no RSR column).
        #[arg(long)]
        no_rsr: bool,
        /// Write one JSON-lines trace per episode.
        #[arg(long)]
        traces: bool,
    },
    /// Perturbed-episode evaluation with protocol statistics.
    Recovery {
        #[arg(long, value_delimiter = ',', default_values_t = ["baseline".to_string(), "full".to_string(), "no_rollback".to_string()])]
        configs: Vec<String>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        traces: bool,
    },
    /// Sweep one parameter around a base config.
    Sweep {
        /// theta_v, k_retrieve, label_horizon, history_h or retrieval_strategy.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[arg(long, default_value = "full")]
        base: String,
        #[arg(long)]
        episodes: Option<usize>,
        /// Label-horizon sweeps: steps per regenerated dataset.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Re-render every saved result table as CSV and Markdown, plus a summary.
    Report,
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
enum Failure {
    Config(String),
    Assert(Vec<String>),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<Error>() {
            Some(inner) if inner.is_config() => Failure::Config(format!("{e:#}")),
            _ => Failure::Other(e),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::from(anyhow::Error::new(e))
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Assert(failed)) => {
            for f in &failed {
                eprintln!("assertion failed: {f}");
            }
            ExitCode::from(EXIT_ASSERT)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

struct Ctx {
    run: RunConfig,
    profile: Profile,
    seed: u64,
    out: PathBuf,
    exec: Execution,
    check: bool,
}

impl Ctx {
    fn new(g: &Global) -> std::result::Result<Self, Failure> {
        let profile = match g.profile {
            ProfileArg::Full => Profile::Full,
            ProfileArg::Test => Profile::Test,
        };
        let mut run = profile.run_config();
        if let Some(path) = &g.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
            run = RunConfig::from_config_text(&text, run)?;
        }
        let problems = run.validate();
        if !problems.is_empty() {
            return Err(Failure::Config(problems.join("; ")));
        }
        let exec = if g.sequential { Execution::Sequential } else { Execution::Parallel };
        Ok(Ctx { run, profile, seed: g.seed, out: g.out_dir.clone(), exec, check: g.check })
    }

    fn dir(&self, sub: &str) -> anyhow::Result<PathBuf> {
        let d = self.out.join(sub);
        std::fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
        Ok(d)
    }

    fn episodes(&self, n: Option<usize>) -> std::result::Result<usize, Failure> {
        match n.unwrap_or_else(|| self.profile.episodes_per_seed()) {
            0 => Err(Failure::Config("--episodes must be at least 1".into())),
            n => Ok(n),
        }
    }

    fn bench(&self) -> std::result::Result<Bench, Failure> {
        Ok(Bench::new(self.run.clone(), &bench::eval_suite(), self.exec)?)
    }

    fn verdict(&self, failed: Vec<String>) -> Outcome {
        if self.check && !failed.is_empty() {
            return Err(Failure::Assert(failed));
        }
        for f in &failed {
            eprintln!("warning: {f}");
        }
        Ok(())
    }
}

fn run(cli: &Cli) -> Outcome {
    let ctx = Ctx::new(&cli.global)?;
    match &cli.command {
        Command::GenData { steps } => gen_data(&ctx, *steps),
        Command::TrainSv { ensemble } => train_sv_cmd(&ctx, *ensemble),
        Command::TrainCd => train_cd_cmd(&ctx),
        Command::Bench { rows, episodes, no_rsr, traces } => bench_cmd(&ctx, rows, *episodes, !no_rsr, *traces),
        Command::Recovery { configs, episodes, traces } => recovery_cmd(&ctx, configs, *episodes, *traces),
        Command::Sweep { param, values, base, episodes, steps } => {
            sweep_cmd(&ctx, param, values, base, *episodes, *steps)
        }
        Command::Report => report_cmd(&ctx),
    }
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    write(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?)
}

fn sv_dims(run: &RunConfig) -> SvDims {
    SvDims { embedding: run.embedding_dim, action: run.action_dim, subgoal: run.subgoal_dim }
}

// ---------------------------------------------------------------------------
// data and training

#[derive(Serialize, Deserialize)]
struct DataManifest {
    seed: u64,
    episodes: usize,
    sv_samples: usize,
    completion_samples: usize,
    label_horizon: u64,
    memory_fault_episodes: BTreeSet<u64>,
}

fn gen_data(ctx: &Ctx, steps: Option<usize>) -> Outcome {
    let n = steps.unwrap_or_else(|| ctx.profile.dataset_steps());
    let data = generate_rollout_dataset(&ctx.run, &bench::train_suite(), n, ctx.seed, ctx.exec)?;
    let dir = ctx.dir("data")?;
    let side = write_sv_dataset(&dir.join("sv.bin"), &data.sv, sv_dims(&ctx.run), ctx.run.label_horizon)?;
    write_completion_dataset(&dir.join("completion.bin"), &data.completion, ctx.run.label_horizon)?;
    let manifest = DataManifest {
        seed: ctx.seed,
        episodes: data.episodes,
        sv_samples: data.sv.len(),
        completion_samples: data.completion.len(),
        label_horizon: ctx.run.label_horizon,
        memory_fault_episodes: data.memory_fault_episodes,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    println!(
        "{} samples from {} episodes, {:.1}% positive -> {}",
        side.count,
        manifest.episodes,
        100.0 * side.positive_rate,
        dir.display()
    );
    let mut failed = Vec::new();
    if !(0.05..=0.40).contains(&side.positive_rate) {
        failed.push(format!("positive rate {:.3} outside [0.05, 0.40]", side.positive_rate));
    }
    ctx.verdict(failed)
}

fn train_sv_cmd(ctx: &Ctx, ensemble: bool) -> Outcome {
    let data_dir = ctx.out.join("data");
    let (samples, dims) = read_sv_dataset(&data_dir.join("sv.bin"))
        .map_err(|e| Failure::Config(format!("no rollout dataset under {} ({e}); run gen-data first", data_dir.display())))?;
    if dims != sv_dims(&ctx.run) {
        return Err(Failure::Config(format!("dataset dimensions {dims:?} do not match the run config")));
    }
    let manifest: DataManifest = read_json(&data_dir.join("manifest.json"))?;
    let (v, summary) =
        train_verifiers(&ctx.run, &samples, &manifest.memory_fault_episodes, ctx.seed, ensemble, ctx.exec)?;
    let dir = ctx.dir("models")?;
    v.sv.save(&dir.join("sv"))?;
    v.sv_no_memory.save(&dir.join("sv_no_memory"))?;
    for (i, m) in v.ensemble.iter().enumerate() {
        m.save(&dir.join("ensemble").join(i.to_string()))?;
    }
    write_json(&dir.join("train_sv.json"), &summary)?;
    println!(
        "verifier held-out AUROC {:.3} (no memory {:.3})",
        summary.sv.heldout_auroc, summary.sv_no_memory.heldout_auroc
    );
    let mut failed = Vec::new();
    if summary.sv.heldout_auroc < 0.75 {
        failed.push(format!("held-out AUROC {:.3} < 0.75", summary.sv.heldout_auroc));
    }
    match summary.memory_fault_auroc {
        Some((with, without)) => {
            println!("memory-gap episodes: AUROC {with:.3} with memory, {without:.3} without");
            if with < without {
                failed.push(format!("memory input lowers AUROC on memory-gap episodes ({with:.3} < {without:.3})"));
            }
        }
        None => failed.push("no held-out memory-gap episode has both classes".into()),
    }
    ctx.verdict(failed)
}

fn train_cd_cmd(ctx: &Ctx) -> Outcome {
    let data_dir = ctx.out.join("data");
    let samples = read_completion_dataset(&data_dir.join("completion.bin"))
        .map_err(|e| Failure::Config(format!("no completion dataset under {} ({e}); run gen-data first", data_dir.display())))?;
    let (cd, rep) = train_completion(&ctx.run, &samples, ctx.seed, ctx.exec)?;
    let dir = ctx.dir("models")?;
    cd.save(&dir.join("completion"))?;
    write_json(&dir.join("train_cd.json"), &rep)?;
    println!("completion detector held-out AUROC {:.3}", rep.heldout_auroc);
    Ok(())
}

/// Whatever trained models exist under `out/models`.
fn load_models(ctx: &Ctx) -> anyhow::Result<Models> {
    let dir = ctx.out.join("models");
    let sv = |name: &str| -> anyhow::Result<Option<Arc<SvModel>>> {
        let d = dir.join(name);
        if !d.join("model.json").exists() {
            return Ok(None);
        }
        Ok(Some(Arc::new(SvModel::load(&d).with_context(|| format!("loading {}", d.display()))?)))
    };
    let mut ensemble = Vec::new();
    for i in 0.. {
        match sv(&format!("ensemble/{i}"))? {
            Some(m) => ensemble.push(m),
            None => break,
        }
    }
    let cd_dir = dir.join("completion");
    let completion = if cd_dir.join("model.json").exists() {
        Some(Arc::new(CompletionModel::load(&cd_dir).with_context(|| format!("loading {}", cd_dir.display()))?))
    } else {
        None
    };
    Ok(Models {
        sv: sv("sv")?,
        sv_no_memory: sv("sv_no_memory")?,
        ensemble,
        completion,
        text: Some(TextEncoder::new(ctx.run.subgoal_dim, DEFAULT_TEXT_SEED)),
    })
}

// ---------------------------------------------------------------------------
// evaluation

/// Summaries of one grid, writing per-episode traces when `trace_dir` is set.
fn grid(
    b: &Bench,
    cfg: &HarnessConfig,
    models: &Models,
    episodes: usize,
    perturbed: bool,
    trace_dir: Option<&Path>,
) -> anyhow::Result<Vec<EpisodeSummary>> {
    let dim = b.run.embedding_dim;
    let keep = trace_dir.is_some();
    let out = b.run_grid(cfg, models, &b.run.seeds, episodes, perturbed, |_, rec: &EpisodeRecord, i| {
        let trace = keep.then(|| {
            let mut table = EmbeddingTable::new(dim);
            rec.trace_lines(&mut table).map(|lines| (lines, table))
        });
        (EpisodeSummary::from_record(rec, i), trace)
    })?;
    let mut summaries = Vec::with_capacity(out.len());
    for (s, trace) in out {
        if let (Some(dir), Some(trace)) = (trace_dir, trace) {
            let (lines, table) = trace?;
            let sub = dir.join(&cfg.name).join(if perturbed { "perturbed" } else { "plain" });
            std::fs::create_dir_all(&sub)?;
            let stem = format!("s{}_e{:04}", s.seed, s.index);
            write_jsonl(&sub.join(format!("{stem}.jsonl")), &lines)?;
            table.write(&sub.join(format!("{stem}.emb.f32")))?;
        }
        summaries.push(s);
    }
    Ok(summaries)
}

fn save_rows(dir: &Path, stem: &str, rows: &[MetricsRow]) -> anyhow::Result<()> {
    write_json(&dir.join(format!("{stem}.json")), &rows)?;
    write(&dir.join(format!("{stem}.csv")), &rows_to_csv(rows))?;
    write(&dir.join(format!("{stem}.md")), &rows_to_markdown(rows))?;
    write(&dir.join(format!("{stem}_cost.csv")), &cost_log(rows))
}

fn find<'a>(rows: &'a [MetricsRow], name: &str) -> Option<&'a MetricsRow> {
    rows.iter().find(|r| r.config == name)
}

/// Directional checks between whichever of the named rows are present.
fn ordering_checks(rows: &[MetricsRow]) -> Vec<String> {
    let mut failed = Vec::new();
    if let (Some(f), Some(b)) = (find(rows, "full"), find(rows, "baseline")) {
        if f.tsr < b.tsr + 10.0 {
            failed.push(format!("full TSR {:.1} is not 10 points above baseline {:.1}", f.tsr, b.tsr));
        }
    }
    if let (Some(f), Some(n)) = (find(rows, "full"), find(rows, "no_rollback")) {
        if let (Some(a), Some(b)) = (f.rsr, n.rsr) {
            if a <= b {
                failed.push(format!("full RSR {a:.1} does not exceed no_rollback RSR {b:.1}"));
            }
        }
    }
    if let (Some(f), Some(r)) = (find(rows, "full"), find(rows, "retrieval_random")) {
        if f.tsr < r.tsr + 5.0 {
            failed.push(format!("cosine TSR {:.1} is not 5 points above random retrieval {:.1}", f.tsr, r.tsr));
        }
    }
    failed
}

fn bench_cmd(ctx: &Ctx, rows: &[String], episodes: Option<usize>, with_rsr: bool, traces: bool) -> Outcome {
    let episodes = ctx.episodes(episodes)?;
    let names: Vec<String> =
        if rows.is_empty() { MATRIX_ROWS.iter().map(|s| s.to_string()).collect() } else { rows.to_vec() };
    let configs = names.iter().map(|n| harness_config(n, &ctx.run)).collect::<Result<Vec<_>, _>>()?;
    let b = ctx.bench()?;
    let models = load_models(ctx)?;
    let trace_dir = if traces { Some(ctx.dir("traces")?) } else { None };
    let mut out = Vec::new();
    for cfg in &configs {
        let plain = grid(&b, cfg, &models, episodes, false, trace_dir.as_deref())?;
        let perturbed =
            if with_rsr { Some(grid(&b, cfg, &models, episodes, true, trace_dir.as_deref())?) } else { None };
        let row = MetricsRow::aggregate(&cfg.name, &b.run.seeds, episodes, &plain, perturbed.as_deref())?;
        eprintln!("{}: TSR {:.1} SCR {:.1}", row.config, row.tsr, row.scr);
        out.push(row);
    }
    save_rows(&ctx.dir("reports")?, "matrix", &out)?;
    print!("{}", rows_to_markdown(&out));
    ctx.verdict(ordering_checks(&out))
}

/// Perturbation bookkeeping over a perturbed grid.
#[derive(Debug, Default, Serialize, Deserialize)]
struct ProtocolStats {
    episodes: usize,
    kinds: BTreeMap<String, usize>,
    /// Counts of the boundary index, keyed by the task's subgoal count.
    k_star: BTreeMap<usize, BTreeMap<usize, usize>>,
}

impl ProtocolStats {
    fn from_summaries(eps: &[EpisodeSummary]) -> Self {
        let mut s = ProtocolStats::default();
        for e in eps {
            let Some((kind, k)) = e.perturbation else { continue };
            s.episodes += 1;
            let name = match kind {
                PerturbationKind::ObjectDisplacement => "object_displacement",
                PerturbationKind::GripperFlip => "gripper_flip",
            };
            *s.kinds.entry(name.into()).or_default() += 1;
            *s.k_star.entry(e.total_subgoals).or_default().entry(k).or_default() += 1;
        }
        s
    }

    fn kind_share(&self) -> f64 {
        let d = self.kinds.get("object_displacement").copied().unwrap_or(0);
        d as f64 / self.episodes.max(1) as f64
    }
}

fn recovery_cmd(ctx: &Ctx, configs: &[String], episodes: Option<usize>, traces: bool) -> Outcome {
    let episodes = ctx.episodes(episodes)?;
    let cfgs = configs.iter().map(|n| harness_config(n, &ctx.run)).collect::<Result<Vec<_>, _>>()?;
    let b = ctx.bench()?;
    let models = load_models(ctx)?;
    let trace_dir = if traces { Some(ctx.dir("traces")?) } else { None };
    let mut rows = Vec::new();
    let mut stats = None;
    for cfg in &cfgs {
        let eps = grid(&b, cfg, &models, episodes, true, trace_dir.as_deref())?;
        rows.push(MetricsRow::aggregate(&cfg.name, &b.run.seeds, episodes, &eps, Some(&eps))?);
        // every config sees the same perturbation specs
        stats.get_or_insert_with(|| ProtocolStats::from_summaries(&eps));
    }
    let stats = stats.unwrap_or_default();
    let dir = ctx.dir("reports")?;
    save_rows(&dir, "recovery", &rows)?;
    write_json(&dir.join("recovery_protocol.json"), &stats)?;
    print!("{}", rows_to_markdown(&rows));
    println!("{} perturbed episodes, {:.1}% object displacement", stats.episodes, 100.0 * stats.kind_share());
    let mut failed = ordering_checks(&rows);
    if let (Some(f), Some(b)) = (find(&rows, "full"), find(&rows, "baseline")) {
        if f.rsr <= b.rsr {
            failed.push(format!("full RSR {:?} does not exceed baseline {:?}", f.rsr, b.rsr));
        }
    }
    if stats.episodes >= 1000 && (stats.kind_share() - 0.5).abs() > 0.03 {
        failed.push(format!("perturbation kind split {:.3} outside 0.5 ± 0.03", stats.kind_share()));
    }
    ctx.verdict(failed)
}

fn sweep_cmd(
    ctx: &Ctx,
    param: &str,
    values: &[String],
    base: &str,
    episodes: Option<usize>,
    steps: Option<usize>,
) -> Outcome {
    let param = SweepParam::parse(param)?;
    let values = if values.is_empty() { param.default_values() } else { values.to_vec() };
    let spec = SweepSpec { param: param.clone(), values, base: base.to_string() };
    spec.validate()?;
    harness_config(base, &ctx.run)?;
    let episodes = ctx.episodes(episodes)?;
    let b = ctx.bench()?;
    let models = if param == SweepParam::LabelHorizon { Models::default() } else { load_models(ctx)? };
    let steps = steps.unwrap_or_else(|| ctx.profile.dataset_steps());
    let rows = b.run_sweep(&spec, &models, &b.run.seeds, episodes, steps, ctx.seed)?;
    let dir = ctx.dir("reports")?;
    let stem = format!("sweep_{}", param.as_str());
    write_json(&dir.join(format!("{stem}.json")), &rows)?;
    let csv = sweep_to_csv(&rows);
    write(&dir.join(format!("{stem}.csv")), &csv)?;
    print!("{csv}");
    ctx.verdict(sweep_checks(&param, &rows))
}

fn sweep_checks(param: &SweepParam, rows: &[SweepRow]) -> Vec<String> {
    let mut failed = Vec::new();
    let value = |v: &str| rows.iter().find(|r| r.value == v);
    match param {
        SweepParam::ThetaV => {
            let mut sorted: Vec<(f64, u64)> =
                rows.iter().filter_map(|r| Some((r.value.parse().ok()?, r.triggers?))).collect();
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            for w in sorted.windows(2) {
                if w[1].1 > w[0].1 {
                    failed.push(format!("triggers rise from {} at {} to {} at {}", w[0].1, w[0].0, w[1].1, w[1].0));
                }
            }
        }
        SweepParam::LabelHorizon => {
            if let (Some(a), Some(b)) = (value("5").and_then(|r| r.auroc), value("1").and_then(|r| r.auroc)) {
                if a < b {
                    failed.push(format!("AUROC at horizon 5 ({a:.3}) below horizon 1 ({b:.3})"));
                }
            }
        }
        SweepParam::RetrievalStrategy => {
            let tsr = |v: &str| value(v).and_then(|r| r.metrics.as_ref()).map(|m| m.tsr);
            if let (Some(c), Some(r)) = (tsr("cosine"), tsr("random")) {
                if c < r {
                    failed.push(format!("cosine retrieval TSR {c:.1} below random {r:.1}"));
                }
            }
        }
        SweepParam::KRetrieve | SweepParam::HistoryH => {}
    }
    failed
}

// ---------------------------------------------------------------------------
// reports

fn report_cmd(ctx: &Ctx) -> Outcome {
    let dir = ctx.out.join("reports");
    let mut entries: Vec<PathBuf> = match std::fs::read_dir(&dir) {
        Ok(rd) => rd.filter_map(|e| e.ok().map(|e| e.path())).collect(),
        Err(e) => return Err(Failure::Config(format!("no reports under {} ({e})", dir.display()))),
    };
    entries.sort();
    let mut summary = String::from("# Benchmark summary\n");
    let models = ctx.out.join("models/train_sv.json");
    if models.exists() {
        let t: TrainingSummary = read_json(&models)?;
        summary.push_str(&format!(
            "\n## Verifier\n\nHeld-out AUROC {:.3} with memory, {:.3} without.\n",
            t.sv.heldout_auroc, t.sv_no_memory.heldout_auroc
        ));
        if let Some((a, b)) = t.memory_fault_auroc {
            summary.push_str(&format!("On memory-gap episodes: {a:.3} with memory, {b:.3} without.\n"));
        }
    }
    let mut rendered = 0;
    for path in &entries {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        if stem.starts_with("sweep_") {
            let rows: Vec<SweepRow> = read_json(path)?;
            if rows.is_empty() {
                continue;
            }
            let csv = sweep_to_csv(&rows);
            write(&dir.join(format!("{stem}.csv")), &csv)?;
            summary.push_str(&format!("\n## {stem}\n\n```\n{csv}```\n"));
            rendered += 1;
        } else if stem == "matrix" || stem == "recovery" {
            let rows: Vec<MetricsRow> = read_json(path)?;
            if rows.is_empty() {
                continue;
            }
            save_rows(&dir, &stem, &rows)?;
            summary.push_str(&format!("\n## {stem}\n\n{}", rows_to_markdown(&rows)));
            rendered += 1;
        } else if stem == "recovery_protocol" {
            let s: ProtocolStats = read_json(path)?;
            summary.push_str(&format!(
                "\n## perturbation protocol\n\n{} episodes, {:.1}% object displacement.\n",
                s.episodes,
                100.0 * s.kind_share()
            ));
        }
    }
    if rendered == 0 {
        return Err(Failure::Config(format!("no result tables under {}", dir.display())));
    }
    write(&dir.join("summary.md"), &summary)?;
    print!("{summary}");
    Ok(())
}
