//! Command-line front end. Every subcommand writes a `run-<command>.json`
//! config snapshot next to its outputs; `verify` re-checks those snapshots
//! along with manifests, checkpoints, plans and registries.

use std::fs;
use std::path::{Component, Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::blocks::BlockOrder;
use crate::complexity::{self, ProfileConfig, ProfileSet};
use crate::curriculum::{self, CurriculumPlan, Pool, SequenceMeasure};
use crate::error::{Error, Result};
use crate::layer_stack::{self, Checkpoint, GrowthConfig};
use crate::masking::{mask_batch, MaskConfig, MaskPolicy};
use crate::registry::{self, Modality, Registry, RegistryConfig};
use crate::schedule::{self, StageInputs, TrainingSchedule};
use crate::shard::{self, CorpusCount, ManifestInfo, PayloadKind, ShardRecord};
use crate::synth;
use crate::tokenizer::{self, BpeConfig, TokenizerModel};
use crate::trainer::{self, OptimizerConfig, TrainConfig};

pub const SNAPSHOT_FORMAT: &str = "currikit-run-v1";

#[derive(Debug, Parser)]
#[command(name = "currikit", version, about = "Curriculum and schedule engine for masked-LM pretraining data")]
pub struct Cli {
    /// Root seed for every random stream.
    #[arg(long, global = true, default_value_t = 17)]
    pub seed: u64,
    /// Report format on stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Table,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the deterministic synthetic corpora and their registry config.
    Synth(SynthArgs),
    /// Read, tokenize and length-filter the corpora of a registry config.
    Ingest(IngestArgs),
    /// Line, token and modality shares of a registry.
    Stats(StatsArgs),
    /// Train a byte-level BPE tokenizer on a registry config.
    TrainTokenizer(TrainTokenizerArgs),
    /// Per-sequence unigram complexity scores.
    Score(ScoreArgs),
    /// Per-corpus complexity profile and ordering.
    Profile(ProfileArgs),
    /// Build a curriculum plan.
    BuildCurriculum(BuildArgs),
    /// Expand a plan into a batch schedule and summarize it.
    Plan(PlanArgs),
    /// Expected and realized per-corpus exposure of a schedule.
    Exposure(PlanArgs),
    /// Write stage pools (and optionally masked batches) as binary shards.
    EmitShards(EmitArgs),
    /// Add a layer to a checkpoint by cloning its top layer.
    Grow(GrowArgs),
    /// Train the toy masked-LM along a plan.
    TrainToy(TrainToyArgs),
    /// Re-check every artifact found under a directory.
    Verify(VerifyArgs),
    /// Run every stage end to end into one output tree.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = synth::DEFAULT_SYNTH_LINES)]
    pub lines: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct IngestArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = registry::DEFAULT_MAX_SEQ_LEN)]
    pub max_len: usize,
    /// Tokenizer directory; the plain byte-level tokenizer when omitted.
    #[arg(long)]
    pub tokenizer: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct StatsArgs {
    #[arg(long)]
    pub registry: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainTokenizerArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = tokenizer::DEFAULT_VOCAB_SIZE)]
    pub vocab_size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScoreArgs {
    #[arg(long)]
    pub registry: PathBuf,
    /// Output TSV file.
    #[arg(long)]
    pub out: PathBuf,
    /// Add-one smoothing instead of exact relative frequencies.
    #[arg(long)]
    pub smoothed: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ProfileArgs {
    #[arg(long)]
    pub registry: PathBuf,
    #[arg(long)]
    pub scores: PathBuf,
    /// Output JSON file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub ttr_sample: usize,
    #[arg(long, default_value_t = 10)]
    pub short_line_max: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KindArg {
    Entropy,
    Unigram,
    Block,
    Corpus,
    Modality,
    ModalityOnly,
    Random,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BuildArgs {
    #[arg(long)]
    pub registry: PathBuf,
    #[arg(long, value_enum)]
    pub kind: KindArg,
    /// Scores TSV (entropy, unigram, and corpus without --profile).
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Profile JSON from `profile` (corpus).
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Stage count; sequence curricula default to 4, corpus curricula to one
    /// stage per corpus group.
    #[arg(long)]
    pub stages: Option<usize>,
    /// Total step budget. Defaults to 120000, or 40000 for modality-only.
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub reverse: bool,
    /// Corpus group trained as one stage, written `a+b`. Repeatable.
    #[arg(long = "merge")]
    pub merges: Vec<String>,
    /// Do not apply the built-in corpus groups.
    #[arg(long)]
    pub no_default_merges: bool,
    /// Train each stage on its own pool only.
    #[arg(long)]
    pub single_phase: bool,
    #[arg(long, value_delimiter = ',', default_values_t = curriculum::DEFAULT_BLOCK_SIZES)]
    pub block_sizes: Vec<usize>,
    /// Modality trained first (modality) or alone (modality-only).
    #[arg(long, default_value = "speech")]
    pub first: Modality,
    /// Per-stage budgets of the modality curriculum.
    #[arg(long, value_delimiter = ',', default_values_t = curriculum::MODALITY_STAGE_STEPS)]
    pub stage_steps: Vec<u64>,
    /// Output plan JSON file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PlanArgs {
    #[arg(long)]
    pub registry: PathBuf,
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long, default_value_t = schedule::DEFAULT_BATCH_SIZE)]
    pub batch: usize,
    /// Shuffle sequences (seeded) before cutting blocks.
    #[arg(long)]
    pub shuffle_blocks: bool,
    /// Output JSON file; stdout only when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EmitArgs {
    #[arg(long)]
    pub registry: PathBuf,
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long, default_value_t = schedule::DEFAULT_BATCH_SIZE)]
    pub batch: usize,
    #[arg(long)]
    pub shuffle_blocks: bool,
    #[arg(long, default_value_t = shard::DEFAULT_RECORDS_PER_SHARD)]
    pub records_per_shard: usize,
    /// Also write the masked examples of this many leading steps.
    #[arg(long, default_value_t = 0)]
    pub masked_steps: u64,
    #[arg(long, default_value_t = 0.15)]
    pub mask_prob: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GrowArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of layers to add.
    #[arg(long, default_value_t = 1)]
    pub times: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainToyArgs {
    #[arg(long)]
    pub registry: PathBuf,
    #[arg(long)]
    pub plan: PathBuf,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    /// Rescale the plan to this many steps, keeping stage proportions.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Add one layer at every stage boundary.
    #[arg(long)]
    pub grow: bool,
    #[arg(long, default_value_t = layer_stack::DEFAULT_INITIAL_LAYERS)]
    pub initial_layers: usize,
    #[arg(long, default_value_t = layer_stack::DEFAULT_MAX_LAYERS)]
    pub max_layers: usize,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Sgd)]
    pub optimizer: OptimizerArg,
    /// Defaults to 0.01 for SGD and 0.003 for Adam.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 0.15)]
    pub mask_prob: f64,
    /// Use 80/10/10 replacement instead of always inserting the mask token.
    #[arg(long)]
    pub standard_masking: bool,
    #[arg(long, default_value_t = 10)]
    pub log_every: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VerifyArgs {
    #[arg(long)]
    pub dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PipelineArgs {
    /// Registry config (JSON or TOML).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = registry::DEFAULT_MAX_SEQ_LEN)]
    pub max_len: usize,
    #[arg(long, default_value_t = curriculum::DEFAULT_STAGES)]
    pub stages: usize,
    #[arg(long, default_value_t = curriculum::DEFAULT_TOTAL_STEPS)]
    pub steps: u64,
    #[arg(long, default_value_t = schedule::DEFAULT_BATCH_SIZE)]
    pub batch: usize,
    /// Masked-example shards cover this many leading steps.
    #[arg(long, default_value_t = 100)]
    pub masked_steps: u64,
    #[arg(long, default_value_t = 200)]
    pub toy_steps: u64,
    #[arg(long, default_value_t = 16)]
    pub toy_batch: usize,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {}", e.category(), e.to_string().replace('\n', " "));
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Integrity(_) | Error::Format { .. } => 3,
        _ => 1,
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let ctx = Ctx {
        seed: cli.seed,
        format: cli.format,
    };
    match &cli.command {
        Command::Synth(a) => ctx.synth(a),
        Command::Ingest(a) => ctx.ingest(a),
        Command::Stats(a) => ctx.stats(a),
        Command::TrainTokenizer(a) => ctx.train_tokenizer(a),
        Command::Score(a) => ctx.score(a),
        Command::Profile(a) => ctx.profile(a),
        Command::BuildCurriculum(a) => ctx.build(a),
        Command::Plan(a) => ctx.plan(a),
        Command::Exposure(a) => ctx.exposure(a),
        Command::EmitShards(a) => ctx.emit_shards(a),
        Command::Grow(a) => ctx.grow(a),
        Command::TrainToy(a) => ctx.train_toy(a),
        Command::Verify(a) => ctx.verify(a).map(|_| ()),
        Command::Pipeline(a) => ctx.pipeline(a),
    }
}

/// Relative path from directory `base` to `target`, both made absolute.
fn relative_to(target: &Path, base: &Path) -> PathBuf {
    let (Ok(t), Ok(b)) = (std::path::absolute(target), std::path::absolute(base)) else {
        return target.to_path_buf();
    };
    fn norm(p: &Path) -> Vec<Component<'_>> {
        let mut out: Vec<Component> = Vec::new();
        for c in p.components() {
            match c {
                Component::CurDir => {}
                Component::ParentDir if matches!(out.last(), Some(Component::Normal(_))) => {
                    out.pop();
                }
                c => out.push(c),
            }
        }
        out
    }
    let (t, b) = (norm(&t), norm(&b));
    let common = t.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let mut rel = PathBuf::new();
    for _ in common..b.len() {
        rel.push("..");
    }
    for c in &t[common..] {
        rel.push(c.as_os_str());
    }
    if rel.as_os_str().is_empty() {
        rel.push(".");
    }
    rel
}

/// Snapshot of a run. Path arguments are stored relative to the snapshot's
/// directory so that identical runs into different directories produce
/// identical files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSnapshot {
    pub format: String,
    pub command: String,
    pub config: Value,
    /// sha256 of the compact JSON encoding of `config`.
    pub config_sha256: String,
}

impl RunSnapshot {
    fn new<A: Serialize>(command: &str, seed: u64, args: &A, dir: &Path) -> Result<Self> {
        let mut args = serde_json::to_value(args)?;
        if let Value::Object(map) = &mut args {
            for (k, v) in map.iter_mut() {
                if PATH_FIELDS.contains(&k.as_str()) {
                    relativize(v, dir);
                }
            }
        }
        let config = json!({
            "version": env!("CARGO_PKG_VERSION"),
            "seed": seed,
            "args": args,
        });
        let config_sha256 = shard::sha256_hex(&serde_json::to_vec(&config)?);
        Ok(Self {
            format: SNAPSHOT_FORMAT.into(),
            command: command.into(),
            config,
            config_sha256,
        })
    }

    fn check(&self) -> Result<()> {
        if self.format != SNAPSHOT_FORMAT {
            return Err(Error::format(format!("unknown run snapshot format {:?}", self.format), 0));
        }
        let digest = shard::sha256_hex(&serde_json::to_vec(&self.config)?);
        if digest != self.config_sha256 {
            return Err(Error::Integrity(format!(
                "config snapshot of {} hashes to {digest}, recorded {}",
                self.command, self.config_sha256
            )));
        }
        Ok(())
    }
}

/// Argument fields holding paths.
const PATH_FIELDS: [&str; 10] = ["out", "config", "registry", "tokenizer", "scores", "profile", "plan", "plans", "ckpt", "dir"];

fn relativize(v: &mut Value, dir: &Path) {
    if let Value::String(s) = v {
        *s = relative_to(Path::new(s.as_str()), dir).to_string_lossy().into_owned();
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let body = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&body)?)
}

fn parent_dir(file: &Path) -> PathBuf {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

struct Ctx {
    seed: u64,
    format: Format,
}

impl Ctx {
    fn snapshot<A: Serialize>(&self, command: &str, args: &A, dir: &Path) -> Result<Value> {
        let snap = RunSnapshot::new(command, self.seed, args, dir)?;
        write_json(&dir.join(format!("run-{command}.json")), &snap)?;
        Ok(snap.config)
    }

    fn report<T: Serialize>(&self, value: &T, table: impl FnOnce() -> String) -> Result<()> {
        if SILENT.with(|s| s.get()) {
            return Ok(());
        }
        match self.format {
            Format::Json => println!("{}", serde_json::to_string_pretty(value)?),
            Format::Table => print!("{}", table()),
        }
        Ok(())
    }

    fn synth(&self, a: &SynthArgs) -> Result<()> {
        let path = synth::write_synth(&a.out, a.lines, self.seed)?;
        self.snapshot("synth", a, &a.out)?;
        log::info!("wrote {} synthetic lines, config {}", a.lines, path.display());
        Ok(())
    }

    fn ingest(&self, a: &IngestArgs) -> Result<()> {
        let tok = match &a.tokenizer {
            Some(dir) => TokenizerModel::load(dir)?,
            None => TokenizerModel::byte_level(),
        };
        let cfg = RegistryConfig::load(&a.config)?;
        let reg = registry::ingest(&cfg, a.max_len, &tok)?;
        reg.save(&a.out)?;
        self.snapshot("ingest", a, &a.out)?;
        let stats = reg.stats()?;
        write_json(&a.out.join("stats.json"), &stats)?;
        self.report(&stats, || stats.table())
    }

    fn stats(&self, a: &StatsArgs) -> Result<()> {
        let stats = Registry::load(&a.registry)?.stats()?;
        self.report(&stats, || stats.table())
    }

    fn train_tokenizer(&self, a: &TrainTokenizerArgs) -> Result<()> {
        let cfg = RegistryConfig::load(&a.config)?;
        let raw = Registry::load_raw(&cfg)?;
        let tok = tokenizer::train_bpe(raw.iter().map(|s| s.text.as_str()), &BpeConfig { vocab_size: a.vocab_size })?;
        tok.save(&a.out)?;
        self.snapshot("train-tokenizer", a, &a.out)?;
        log::info!("tokenizer with {} entries, digest {}", tok.vocab_size(), tok.digest());
        Ok(())
    }

    fn score(&self, a: &ScoreArgs) -> Result<()> {
        let reg = Registry::load(&a.registry)?;
        reg.require_tokenized()?;
        let vocab = reg.vocab_size.unwrap_or(tokenizer::MIN_VOCAB_SIZE);
        let mut uni = tokenizer::UnigramModel::fit(reg.iter().map(|s| s.token_ids.as_slice()), vocab)?;
        if a.smoothed {
            uni = uni.add_one();
        }
        let scores = complexity::score_sequences(&reg, &uni)?;
        let dir = parent_dir(&a.out);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        complexity::write_scores(&a.out, &reg, &scores)?;
        self.snapshot("score", a, &dir)?;
        log::info!("scored {} sequences", scores.len());
        Ok(())
    }

    fn profile(&self, a: &ProfileArgs) -> Result<()> {
        let reg = Registry::load(&a.registry)?;
        let scores = complexity::read_scores(&a.scores, &reg)?;
        let cfg = ProfileConfig {
            ttr_sample_tokens: a.ttr_sample,
            short_line_max_tokens: a.short_line_max,
            seed: self.seed,
            ..ProfileConfig::default()
        };
        let set = complexity::profile_corpora(&reg, &scores, &cfg)?;
        write_json(&a.out, &set)?;
        self.snapshot("profile", a, &parent_dir(&a.out))?;
        self.report(&set, || set.table())
    }

    fn build(&self, a: &BuildArgs) -> Result<()> {
        let reg = Registry::load(&a.registry)?;
        reg.require_tokenized()?;
        let steps = a.steps.unwrap_or(match a.kind {
            KindArg::ModalityOnly => curriculum::MODALITY_ONLY_STEPS,
            _ => curriculum::DEFAULT_TOTAL_STEPS,
        });
        let scores = || -> Result<Vec<complexity::SequenceScore>> {
            let path = a
                .scores
                .as_ref()
                .ok_or_else(|| Error::Config(format!("--kind {:?} needs --scores", a.kind)))?;
            complexity::read_scores(path, &reg)
        };
        let stages = a.stages.unwrap_or(curriculum::DEFAULT_STAGES);
        let plan = match a.kind {
            KindArg::Entropy | KindArg::Unigram => {
                let measure = if a.kind == KindArg::Entropy {
                    SequenceMeasure::Entropy
                } else {
                    SequenceMeasure::Unigram
                };
                curriculum::build_sequence_curriculum(&reg, &scores()?, measure, stages, steps, a.reverse)?
            }
            KindArg::Block => {
                if a.reverse {
                    return Err(Error::Config("block curricula cannot be reversed".into()));
                }
                curriculum::build_block_curriculum(&reg, &a.block_sizes, steps)?
            }
            KindArg::Corpus => {
                let ordering = match &a.profile {
                    Some(p) => read_json::<ProfileSet>(p)?.ordering,
                    None => complexity::profile_corpora(&reg, &scores()?, &ProfileConfig { seed: self.seed, ..ProfileConfig::default() })?.ordering,
                };
                let mut merges: Vec<Vec<String>> = if a.no_default_merges {
                    Vec::new()
                } else {
                    curriculum::default_merges_for(&reg)
                };
                merges.extend(a.merges.iter().map(|m| m.split('+').map(str::to_string).collect()));
                curriculum::build_corpus_curriculum(&reg, &ordering, &merges, a.stages, steps, a.reverse)?
            }
            KindArg::Modality => {
                let budgets: [u64; 2] = a
                    .stage_steps
                    .as_slice()
                    .try_into()
                    .map_err(|_| Error::Config("--stage-steps takes exactly two budgets".into()))?;
                let plan = curriculum::build_modality_curriculum(&reg, a.first, budgets)?;
                match a.steps {
                    Some(s) => plan.rescaled(s)?,
                    None => plan,
                }
            }
            KindArg::ModalityOnly => curriculum::build_modality_only(&reg, a.first, steps)?,
            KindArg::Random => curriculum::build_random_baseline(&reg, steps)?,
        };
        let plan = if a.single_phase {
            curriculum::single_phase(plan)
        } else {
            plan
        };
        let dir = parent_dir(&a.out);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        fs::write(&a.out, plan.to_json()? + "\n").map_err(|e| Error::io(&a.out, e))?;
        self.snapshot(&format!("build-curriculum-{}", plan.plan_id), a, &dir)?;
        let summary = plan_summary(&plan);
        self.report(&summary, || plan_table(&plan))
    }

    fn schedule_for(&self, reg: &Registry, plan: &CurriculumPlan, batch: usize, shuffle: bool) -> Result<TrainingSchedule> {
        let order = if shuffle {
            BlockOrder::SeededShuffle { seed: self.seed }
        } else {
            BlockOrder::ConfigOrder
        };
        schedule::plan_schedule_with(plan, reg, batch, self.seed, order, None)
    }

    fn plan(&self, a: &PlanArgs) -> Result<()> {
        let reg = Registry::load(&a.registry)?;
        let plan = CurriculumPlan::from_json(&read_to_string(&a.plan)?)?;
        let sched = self.schedule_for(&reg, &plan, a.batch, a.shuffle_blocks)?;
        let summary = sched.summary(true);
        if let Some(out) = &a.out {
            write_json(out, &summary)?;
            self.snapshot(&format!("plan-{}", plan.plan_id), a, &parent_dir(out))?;
        }
        self.report(&summary, || {
            let mut t = format!("{:<6} {:>10} {:>10} {:>10} {:>10}\n", "stage", "first", "steps", "pool", "epochs");
            for s in &summary.stages {
                t += &format!(
                    "{:<6} {:>10} {:>10} {:>10} {:>10.3}\n",
                    s.stage_index, s.first_step, s.steps, s.pool_size, s.epochs
                );
            }
            t
        })
    }

    fn exposure(&self, a: &PlanArgs) -> Result<()> {
        let reg = Registry::load(&a.registry)?;
        let plan = CurriculumPlan::from_json(&read_to_string(&a.plan)?)?;
        let sched = self.schedule_for(&reg, &plan, a.batch, a.shuffle_blocks)?;
        let report = schedule::exposure(&sched, &reg)?;
        if let Some(out) = &a.out {
            write_json(out, &report)?;
            self.snapshot(&format!("exposure-{}", plan.plan_id), a, &parent_dir(out))?;
        }
        self.report(&report, || report.table())
    }

    fn emit_shards(&self, a: &EmitArgs) -> Result<()> {
        let reg = Registry::load(&a.registry)?;
        let plan = CurriculumPlan::from_json(&read_to_string(&a.plan)?)?;
        let sched = self.schedule_for(&reg, &plan, a.batch, a.shuffle_blocks)?;
        let vocab = reg.vocab_size.unwrap_or(0) as u32;
        let digest = reg.tokenizer_digest.clone().unwrap_or_default();
        fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
        let config = self.snapshot("emit-shards", a, &a.out)?;
        for (si, inputs) in sched.stages.iter().enumerate() {
            let (records, kind, block_size, composition) = match inputs {
                StageInputs::Sequences(ids) => {
                    let mut counts = vec![0u64; reg.corpora.len()];
                    for id in ids {
                        counts[id.corpus as usize] += 1;
                    }
                    let comp = reg
                        .corpora
                        .iter()
                        .zip(counts)
                        .filter(|(_, n)| *n > 0)
                        .map(|(c, n)| CorpusCount {
                            corpus_id: c.corpus_id.clone(),
                            records: n,
                        })
                        .collect();
                    let recs = ids
                        .iter()
                        .map(|&id| ShardRecord::Tokens(reg.get(id).expect("registered").token_ids.clone()))
                        .collect::<Vec<_>>();
                    (recs, PayloadKind::Sequence, None, comp)
                }
                StageInputs::Blocks(b) => {
                    let recs = b.blocks().map(|x| ShardRecord::Tokens(x.to_vec())).collect();
                    (recs, PayloadKind::Block, Some(b.block_size), Vec::new())
                }
            };
            let info = ManifestInfo {
                plan_id: plan.plan_id.clone(),
                stage: si + 1,
                step_budget: sched.budgets[si],
                batch_size: sched.batch_size,
                seed: self.seed,
                block_size,
                tokenizer_digest: digest.clone(),
                composition,
                config: config.clone(),
            };
            let dir = a.out.join(format!("stage-{}", si + 1));
            shard::write(&records, kind, vocab, info, &dir, a.records_per_shard)?;
        }
        if a.masked_steps > 0 {
            let mut mask = MaskConfig::new(self.seed, TokenizerModel::byte_level().specials().mask, vocab);
            mask.mask_prob = a.mask_prob;
            let mut records = Vec::new();
            let mut members = Vec::new();
            let mut cursor = sched.batches();
            while let Some((step, stage)) = cursor.next_into(&mut members) {
                if step >= a.masked_steps {
                    break;
                }
                let inputs = &sched.stages[stage - 1];
                let batch: Vec<&[u32]> = members.iter().map(|&m| inputs.tokens(&reg, m as usize)).collect();
                let keys: Vec<u64> = members.iter().map(|&m| trainer::example_key(inputs, stage, m as usize)).collect();
                records.extend(mask_batch(&batch, &keys, step, &mask)?.into_iter().map(ShardRecord::from));
            }
            let info = ManifestInfo {
                plan_id: plan.plan_id.clone(),
                stage: 0,
                step_budget: a.masked_steps.min(sched.total_steps()),
                batch_size: sched.batch_size,
                seed: self.seed,
                block_size: None,
                tokenizer_digest: digest,
                composition: Vec::new(),
                config,
            };
            shard::write(&records, PayloadKind::MaskedExample, vocab, info, &a.out.join("masked"), a.records_per_shard)?;
        }
        log::info!("wrote shards for {} stages under {}", sched.stages.len(), a.out.display());
        Ok(())
    }

    fn grow(&self, a: &GrowArgs) -> Result<()> {
        let mut ck = Checkpoint::load(&a.ckpt)?;
        for _ in 0..a.times {
            ck = layer_stack::grow(&ck)?;
        }
        ck.save(&a.out)?;
        self.snapshot("grow", a, &parent_dir(&a.out))?;
        println!("{} layers, {} parameters", ck.layer_count()?, ck.param_count());
        Ok(())
    }

    fn train_toy(&self, a: &TrainToyArgs) -> Result<()> {
        let reg = Registry::load(&a.registry)?;
        let mut plan = CurriculumPlan::from_json(&read_to_string(&a.plan)?)?;
        if let Some(steps) = a.steps {
            plan = plan.rescaled(steps)?;
        }
        let sched = self.schedule_for(&reg, &plan, a.batch, false)?;
        let vocab = reg
            .vocab_size
            .ok_or_else(|| Error::Precondition("registry is not tokenized".into()))?;
        let mut mask = MaskConfig::new(self.seed, TokenizerModel::byte_level().specials().mask, vocab as u32);
        mask.mask_prob = a.mask_prob;
        if a.standard_masking {
            mask.policy = MaskPolicy::Standard;
        }
        let mut cfg = TrainConfig::new(self.seed, mask);
        cfg.dim = a.dim;
        cfg.hidden = a.hidden;
        cfg.log_every = a.log_every;
        cfg.optimizer = match a.optimizer {
            OptimizerArg::Sgd => OptimizerConfig::Sgd { lr: a.lr.unwrap_or(1e-2) },
            OptimizerArg::Adam => OptimizerConfig::adam(a.lr.unwrap_or(3e-3)),
        };
        cfg.layers = a.initial_layers;
        if a.grow {
            cfg.growth = Some(GrowthConfig {
                initial_layers: a.initial_layers,
                max_layers: a.max_layers,
            });
        }
        let out = trainer::train(&sched, &reg, &cfg)?;
        fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
        let csv = a.out.join("loss.csv");
        fs::write(&csv, trainer::loss_curve_csv(&out.curve)).map_err(|e| Error::io(&csv, e))?;
        for ck in &out.checkpoints {
            ck.save(&a.out.join(format!("stage-{}.ckpt", ck.meta.stage)))?;
        }
        self.snapshot("train-toy", a, &a.out)?;
        let summary = json!({
            "initial_loss": out.initial_loss,
            "final_running_loss": out.state.running_loss,
            "steps": out.state.step,
            "layers": out.state.model.layers(),
        });
        self.report(&summary, || {
            format!(
                "steps {}  initial loss {:.4}  final running loss {:.4}  layers {}\n",
                out.state.step,
                out.initial_loss,
                out.state.running_loss,
                out.state.model.layers()
            )
        })
    }

    /// Returns the number of artifacts checked.
    fn verify(&self, a: &VerifyArgs) -> Result<usize> {
        let n = verify_tree(&a.dir)?;
        if n == 0 {
            return Err(Error::Precondition(format!("no artifacts found under {}", a.dir.display())));
        }
        println!("verified {n} artifacts under {}", a.dir.display());
        Ok(n)
    }

    fn pipeline(&self, a: &PipelineArgs) -> Result<()> {
        let root = &a.out;
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let tok_dir = root.join("tokenizer");
        let reg_dir = root.join("registry");
        let scores = root.join("complexity/scores.tsv");
        let profile = root.join("complexity/profile.json");
        let plans = root.join("plans");

        self.train_tokenizer(&TrainTokenizerArgs {
            config: a.config.clone(),
            vocab_size: a.vocab_size,
            out: tok_dir.clone(),
        })?;
        self.ingest_quiet(&IngestArgs {
            config: a.config.clone(),
            max_len: a.max_len,
            tokenizer: Some(tok_dir),
            out: reg_dir.clone(),
        })?;
        self.score(&ScoreArgs {
            registry: reg_dir.clone(),
            out: scores.clone(),
            smoothed: false,
        })?;
        let reg = Registry::load(&reg_dir)?;
        let set = complexity::profile_corpora(
            &reg,
            &complexity::read_scores(&scores, &reg)?,
            &ProfileConfig {
                seed: self.seed,
                ..ProfileConfig::default()
            },
        )?;
        write_json(&profile, &set)?;

        let build = |kind: KindArg, name: &str| -> Result<PathBuf> {
            let out = plans.join(format!("{name}.json"));
            let args = BuildArgs {
                registry: reg_dir.clone(),
                kind,
                scores: Some(scores.clone()),
                profile: Some(profile.clone()),
                stages: (kind != KindArg::Corpus).then_some(a.stages),
                steps: (kind != KindArg::Modality).then_some(a.steps),
                reverse: false,
                merges: Vec::new(),
                no_default_merges: false,
                single_phase: false,
                block_sizes: curriculum::DEFAULT_BLOCK_SIZES.to_vec(),
                first: Modality::Speech,
                stage_steps: curriculum::MODALITY_STAGE_STEPS.to_vec(),
                out: out.clone(),
            };
            self.build_quiet(&args)?;
            Ok(out)
        };
        let kinds = [
            (KindArg::Entropy, "entropy"),
            (KindArg::Unigram, "unigram"),
            (KindArg::Block, "block"),
            (KindArg::Corpus, "corpus"),
            (KindArg::Modality, "modality"),
            (KindArg::Random, "random"),
        ];
        let mut plan_files = Vec::new();
        for (k, name) in kinds {
            plan_files.push((name, build(k, name)?));
        }
        for (name, file) in &plan_files {
            let plan = CurriculumPlan::from_json(&read_to_string(file)?)?;
            let sched = self.schedule_for(&reg, &plan, a.batch, false)?;
            write_json(&root.join(format!("schedules/{name}.json")), &sched.summary(true))?;
            write_json(&root.join(format!("exposure/{name}.json")), &schedule::exposure(&sched, &reg)?)?;
        }
        self.snapshot(
            "plan",
            &json!({"registry": reg_dir, "plans": plans, "batch": a.batch}),
            &root.join("schedules"),
        )?;

        let entropy_plan = &plan_files[0].1;
        self.emit_shards(&EmitArgs {
            registry: reg_dir.clone(),
            plan: entropy_plan.clone(),
            batch: a.batch,
            shuffle_blocks: false,
            records_per_shard: shard::DEFAULT_RECORDS_PER_SHARD,
            masked_steps: a.masked_steps,
            mask_prob: 0.15,
            out: root.join("shards"),
        })?;
        self.train_toy_quiet(&TrainToyArgs {
            registry: reg_dir,
            plan: entropy_plan.clone(),
            batch: a.toy_batch,
            steps: Some(a.toy_steps),
            grow: true,
            initial_layers: layer_stack::DEFAULT_INITIAL_LAYERS,
            max_layers: layer_stack::DEFAULT_MAX_LAYERS,
            optimizer: OptimizerArg::Adam,
            lr: None,
            dim: 16,
            hidden: 32,
            mask_prob: 0.15,
            standard_masking: false,
            log_every: 10,
            out: root.join("toy"),
        })?;
        self.snapshot("pipeline", a, root)?;
        let n = verify_tree(root)?;
        println!("pipeline complete: {n} artifacts verified under {}", root.display());
        Ok(())
    }

    fn ingest_quiet(&self, a: &IngestArgs) -> Result<()> {
        with_silence(|| self.ingest(a))
    }

    fn build_quiet(&self, a: &BuildArgs) -> Result<()> {
        with_silence(|| self.build(a))
    }

    fn train_toy_quiet(&self, a: &TrainToyArgs) -> Result<()> {
        with_silence(|| self.train_toy(a))
    }
}

thread_local! {
    static SILENT: std::cell::Cell<bool> = const { std::cell::Cell::new(false) };
}

fn with_silence<T>(f: impl FnOnce() -> T) -> T {
    SILENT.with(|s| s.set(true));
    let out = f();
    SILENT.with(|s| s.set(false));
    out
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct PlanSummary<'a> {
    plan_id: &'a str,
    kind: String,
    composition: curriculum::Composition,
    budgets: Vec<u64>,
    boundaries: Vec<u64>,
    pool_sizes: Vec<Option<usize>>,
}

fn plan_summary(plan: &CurriculumPlan) -> PlanSummary<'_> {
    PlanSummary {
        plan_id: &plan.plan_id,
        kind: plan.kind.to_string(),
        composition: plan.composition,
        budgets: plan.budgets(),
        boundaries: plan.boundaries(),
        pool_sizes: plan
            .stages
            .iter()
            .map(|s| match &s.pool {
                Pool::Sequences(ids) => Some(ids.len()),
                Pool::Blocks { .. } => None,
            })
            .collect(),
    }
}

fn plan_table(plan: &CurriculumPlan) -> String {
    let mut t = format!("plan {} ({:?})\n", plan.plan_id, plan.composition);
    t += &format!("{:<6} {:<28} {:>10} {:>10}\n", "stage", "label", "steps", "pool");
    for s in &plan.stages {
        let pool = match &s.pool {
            Pool::Sequences(ids) => ids.len().to_string(),
            Pool::Blocks { block_size } => format!("bs={block_size}"),
        };
        t += &format!(
            "{:<6} {:<28} {:>10} {:>10}\n",
            s.stage_index,
            s.label.as_deref().unwrap_or("-"),
            s.step_budget,
            pool
        );
    }
    t
}

/// Checks every recognized artifact under `dir` and returns how many were
/// checked.
pub fn verify_tree(dir: &Path) -> Result<usize> {
    let mut files = Vec::new();
    collect_files(dir, &mut files)?;
    files.sort();
    let mut checked = 0;
    for f in &files {
        let name = f.file_name().and_then(|n| n.to_str()).unwrap_or("");
        let parent = parent_dir(f);
        if name == shard::MANIFEST_FILE {
            shard::verify(f)?;
        } else if name.ends_with(".ckpt") {
            Checkpoint::load(f)?;
        } else if name == "registry.json" {
            verify_registry(&Registry::load(&parent)?)?;
        } else if name == "tokenizer.json" {
            TokenizerModel::load(&parent)?;
        } else if name.starts_with("run-") && name.ends_with(".json") {
            read_json::<RunSnapshot>(f)?.check()?;
        } else if parent.file_name().is_some_and(|p| p == "plans") && name.ends_with(".json") {
            CurriculumPlan::from_json(&read_to_string(f)?)?.validate()?;
        } else {
            continue;
        }
        log::debug!("verified {}", f.display());
        checked += 1;
    }
    Ok(checked)
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

fn verify_registry(reg: &Registry) -> Result<()> {
    for (c, seqs) in reg.corpora.iter().zip(&reg.sequences) {
        let tokens: u64 = seqs.iter().map(|s| s.token_len() as u64).sum();
        if c.line_count != seqs.len() as u64 || c.token_count != tokens {
            return Err(Error::Integrity(format!("corpus {} counts disagree with its sequences", c.corpus_id)));
        }
        if reg.max_seq_len.is_some() {
            let max = reg.max_seq_len.unwrap_or(usize::MAX);
            if let Some(s) = seqs.iter().find(|s| s.token_ids.is_empty() || s.token_len() > max) {
                return Err(Error::Integrity(format!("{} violates the length filter", reg.seq_label(s.id))));
            }
        }
        if let Some(v) = reg.vocab_size {
            if let Some(&t) = seqs.iter().flat_map(|s| &s.token_ids).find(|&&t| t as usize >= v) {
                return Err(Error::Range { id: t, vocab_size: v });
            }
        }
    }
    Ok(())
}
