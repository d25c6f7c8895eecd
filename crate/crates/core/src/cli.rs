//! The `twinflow` command line.
//!
//! Exit codes: 0 success, 1 i/o or other failure, 2 configuration error
//! (including usage errors), 3 numeric abort, 4 prompt parse error,
//! 5 malformed input record.
//!
//! Every subcommand stages its outputs in a hidden sibling directory and
//! renames it into place only after everything succeeded, alongside a
//! `config.json` holding the fully resolved settings.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::data::{
    gen_synthetic_pairs, run_filter_corpus, AreaMode, CorpusOptions, Dataset, FilterPolicy, LengthPolicy,
    SyntheticPairSpec,
};
use crate::error::{Error, Result};
use crate::model::{
    diagonal_mass, load_checkpoint, save_checkpoint, Modality, TwinModel, TwinModelConfig,
};
use crate::rope::{affinity_matrix, aligned_column, AffinityMatrix, RopeConfig, DEFAULT_ROPE_BASE};
use crate::sampler::{sample, GuidanceConfig, Schedule, Solver};
use crate::tensor::write_tensor;
use crate::train::{train_stage, Stage, StageConfig, TrainOptions};
use crate::util::{create_dir_all, write_atomic};

/// Parameter count above which a model build needs `--allow-large`.
pub const LARGE_MODEL_PARAMS: usize = 50_000_000;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_PROMPT: i32 = 4;
pub const EXIT_RECORD: i32 = 5;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Contract(_) | Error::Shape { .. } | Error::Json(_) => EXIT_CONFIG,
        Error::Numeric { .. } => EXIT_NUMERIC,
        Error::Prompt { .. } | Error::PromptEncode(_) => EXIT_PROMPT,
        Error::Record { .. } => EXIT_RECORD,
        Error::Format(_) | Error::Io { .. } | Error::IoAt { .. } => EXIT_OTHER,
    }
}

#[derive(Debug, Parser)]
#[command(name = "twinflow", version, about = "Twin audio/video flow-matching transformers at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one training stage and write a checkpoint plus metrics.
    Train(TrainArgs),
    /// Integrate both towers from noise for a combined prompt.
    Sample(SampleArgs),
    /// Export scaled and unscaled rotary affinity matrices.
    Affinity(AffinityArgs),
    /// Filter a JSONL clip-metadata corpus.
    Filter(FilterArgs),
    /// Export per-block audio-to-video attention maps.
    Attnmap(AttnmapArgs),
    /// Write a synthetic latent dataset to disk.
    GenData(GenDataArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// audio_pretrain, audio_finetune or fusion.
    #[arg(long)]
    pub stage: String,
    #[arg(long, default_value = "toy")]
    pub preset: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dataset directory written by `gen-data`. Without it a synthetic set is generated.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Seed of the generated dataset (defaults to `--seed`).
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// Training examples to generate when `--data` is absent.
    #[arg(long, default_value_t = 500)]
    pub n_train: usize,
    /// Examples held out for evaluation.
    #[arg(long, default_value_t = 100)]
    pub holdout: usize,
    /// Stage config JSON replacing the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Checkpoint to start from instead of a fresh model.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Train with the cross-modal attention switched off.
    #[arg(long)]
    pub no_fusion: bool,
    /// Record zero wall-clock time so metrics are byte-reproducible.
    #[arg(long)]
    pub fixed_clock: bool,
    #[arg(long)]
    pub allow_large: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SampleArgs {
    /// Checkpoint directory; a fresh model from `--preset` and `--model-seed` otherwise.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, conflicts_with = "prompt_file")]
    pub prompt: Option<String>,
    #[arg(long)]
    pub prompt_file: Option<PathBuf>,
    #[arg(long, default_value = "unipc")]
    pub solver: String,
    #[arg(long, default_value_t = 32)]
    pub steps: usize,
    #[arg(long, default_value_t = 5.0)]
    pub cfg_v: f64,
    #[arg(long, default_value_t = 5.0)]
    pub cfg_a: f64,
    /// Conditional velocity only, one forward pass per evaluation.
    #[arg(long)]
    pub no_guidance: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "toy")]
    pub preset: String,
    #[arg(long, default_value_t = 0)]
    pub model_seed: u64,
    #[arg(long)]
    pub allow_large: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AffinityArgs {
    #[arg(long, default_value_t = 157, allow_negative_numbers = true)]
    pub la: i64,
    #[arg(long, default_value_t = 31, allow_negative_numbers = true)]
    pub lv: i64,
    /// Audio position scale; defaults to lv / la.
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long, default_value_t = 128)]
    pub head_dim: usize,
    #[arg(long, default_value_t = DEFAULT_ROPE_BASE)]
    pub base: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FilterArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Policy JSON; flags below override its fields.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[arg(long)]
    pub min_area: Option<u64>,
    /// Require each side to exceed sqrt(min_area) instead of the area.
    #[arg(long)]
    pub per_side: bool,
    #[arg(long)]
    pub frames: Option<u32>,
    #[arg(long)]
    pub fps: Option<f64>,
    #[arg(long)]
    pub max_offset: Option<i64>,
    #[arg(long, allow_negative_numbers = true)]
    pub min_confidence: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub min_volume_db: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub motion_min: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub aesthetic_min: Option<f64>,
    /// Count malformed lines and continue.
    #[arg(long)]
    pub skip_bad: bool,
    /// Where to write the per-reason rejection counts.
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AttnmapArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Conditioning prompt; the probe example's caption tokens otherwise.
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    pub t: f64,
    /// Seed of the synthetic paired corpus the probe latents come from.
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    #[arg(long, default_value_t = 0)]
    pub example: usize,
    #[arg(long, default_value_t = 0)]
    pub model_seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenDataArgs {
    /// Length policy follows the stage the data is meant for.
    #[arg(long, default_value = "fusion")]
    pub stage: String,
    #[arg(long, default_value_t = 600)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "toy")]
    pub preset: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the subcommand,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(a) => cmd_train(&a),
        Command::Sample(a) => cmd_sample(&a),
        Command::Affinity(a) => cmd_affinity(&a),
        Command::Filter(a) => cmd_filter(&a),
        Command::Attnmap(a) => cmd_attnmap(&a),
        Command::GenData(a) => cmd_gen_data(&a),
    }
}

fn default_run_dir(cmd: &str, seed: u64) -> PathBuf {
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%SZ");
    PathBuf::from("runs").join(format!("{cmd}-{stamp}-seed{seed}"))
}

/// Output directory that becomes visible only on `commit`.
struct RunDir {
    staging: PathBuf,
    target: PathBuf,
}

impl RunDir {
    fn create(target: PathBuf) -> Result<Self> {
        let name = target
            .file_name()
            .ok_or_else(|| Error::Config(format!("--out {}: not a directory name", target.display())))?;
        let mut staged = OsString::from(".");
        staged.push(name);
        staged.push(".partial");
        let staging = target.with_file_name(staged);
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        }
        create_dir_all(&staging)?;
        Ok(Self { staging, target })
    }

    fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.staging.join(rel)
    }

    fn write_config(&self, value: &serde_json::Value) -> Result<()> {
        write_atomic(self.path("config.json"), &serde_json::to_vec_pretty(value)?)
    }

    fn commit(self) -> Result<PathBuf> {
        if self.target.exists() {
            fs::remove_dir_all(&self.target).map_err(|e| Error::io(&self.target, e))?;
        }
        fs::rename(&self.staging, &self.target).map_err(|e| Error::io(&self.target, e))?;
        Ok(self.target.clone())
    }

    /// Runs `f` against the staging directory, discarding it on failure.
    fn run(target: PathBuf, f: impl FnOnce(&RunDir) -> Result<()>) -> Result<PathBuf> {
        let dir = Self::create(target)?;
        match f(&dir) {
            Ok(()) => dir.commit(),
            Err(e) => {
                let _ = fs::remove_dir_all(&dir.staging);
                Err(e)
            }
        }
    }
}

fn guard_model(cfg: &TwinModelConfig, allow_large: bool) -> Result<()> {
    let n = cfg.param_count();
    if n > LARGE_MODEL_PARAMS && !allow_large {
        return Err(Error::Config(format!(
            "model has {n} parameters ({} GB as f64); pass --allow-large to build it",
            n * 8 / 1_000_000_000
        )));
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, flag: &str) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{flag} {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{flag} {}: {e}", path.display())))
}

fn stage_lengths(stage: Stage, audio_len: usize) -> LengthPolicy {
    let min_len = (audio_len * 2 / 5).max(1);
    match stage {
        Stage::AudioPretrain => LengthPolicy::Variable { min_len },
        Stage::AudioFinetune => LengthPolicy::Padded { min_len },
        Stage::Fusion => LengthPolicy::Paired,
    }
}

/// Synthetic corpus shaped for `cfg`.
pub fn synthetic_spec_for(cfg: &TwinModelConfig, stage: Stage, seed: u64) -> SyntheticPairSpec {
    SyntheticPairSpec {
        video_len: cfg.video_len,
        audio_len: cfg.audio_len,
        channels: cfg.latent_channels,
        vocab_size: cfg.vocab_size,
        lengths: stage_lengths(stage, cfg.audio_len),
        ..SyntheticPairSpec::toy(seed)
    }
}

fn resolve_model(
    checkpoint: Option<&Path>,
    flag: &str,
    preset: &str,
    seed: u64,
    allow_large: bool,
) -> Result<(TwinModel, Option<u64>)> {
    match checkpoint {
        Some(p) => {
            if !p.join("manifest.json").is_file() {
                return Err(Error::Config(format!("{flag} {}: no checkpoint manifest found", p.display())));
            }
            let (m, manifest) = load_checkpoint(p)?;
            Ok((m, Some(manifest.step)))
        }
        None => {
            let cfg = TwinModelConfig::preset(preset)?;
            guard_model(&cfg, allow_large)?;
            Ok((TwinModel::build(cfg, seed)?, None))
        }
    }
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let stage: Stage = a.stage.parse()?;
    let mut cfg = match &a.config {
        Some(p) => read_json::<StageConfig>(p, "--config")?,
        None => StageConfig::preset(stage, &a.preset)?,
    };
    if cfg.stage != stage {
        return Err(Error::Config(format!("--config is for stage {}, not {stage}", cfg.stage)));
    }
    if let Some(v) = a.steps {
        cfg.steps = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.optim.lr = v;
    }
    if let Some(v) = a.eval_every {
        cfg.eval_every = v;
    }
    cfg.validate()?;
    if cfg.is_large() && !a.allow_large {
        return Err(Error::Config(format!(
            "{} steps x batch {} is a full-scale run; pass --allow-large",
            cfg.steps, cfg.batch_size
        )));
    }
    if let Some(p) = &a.data {
        if !p.join("manifest.json").is_file() {
            return Err(Error::Config(format!("--data {}: no dataset found", p.display())));
        }
    }

    let (mut model, init_step) = resolve_model(a.init.as_deref(), "--init", &a.preset, a.seed, a.allow_large)?;
    if a.no_fusion {
        model.set_fusion(false);
    }
    let data_seed = a.data_seed.unwrap_or(a.seed);
    let (data, data_source) = match &a.data {
        Some(p) => (Dataset::load(p)?, json!({ "path": p })),
        None => {
            let spec = synthetic_spec_for(model.config(), stage, data_seed);
            let ds = gen_synthetic_pairs(&spec, a.n_train + a.holdout)?;
            (ds, json!({ "synthetic": spec, "n": a.n_train + a.holdout }))
        }
    };
    let data_hash = data.content_hash();
    let holdout = a.holdout.min(data.len() / 2);
    let (train, eval) = data.split_off(holdout)?;
    let eval = (holdout > 0).then_some(eval);

    let target = a.out.clone().unwrap_or_else(|| default_run_dir("train", a.seed));
    let mut summary = String::new();
    let dir = RunDir::run(target, |dir| {
        let snapshot = json!({
            "command": "train",
            "args": a,
            "stage_config": cfg,
            "model_config": model.config(),
            "init_step": init_step,
            "init_hash": model.checkpoint_hash(),
            "data": data_source,
            "data_hash": data_hash,
            "holdout": holdout,
        });
        dir.write_config(&snapshot)?;
        let opts = TrainOptions { fixed_clock: a.fixed_clock };
        let report = train_stage(&cfg, &mut model, &train, eval.as_ref(), a.seed, opts)?;
        write_atomic(dir.path("metrics.jsonl"), &report.metrics_jsonl()?)?;
        write_atomic(dir.path("eval.jsonl"), &report.evals_jsonl()?)?;
        let step = init_step.unwrap_or(0) + cfg.steps as u64;
        let manifest = save_checkpoint(&model, step, dir.path("checkpoint"))?;
        if let (Some(first), Some(last)) = (report.metrics.first(), report.metrics.last()) {
            summary.push_str(&format!(
                "stage {stage}: {} steps, loss {:.5} -> {:.5}\n",
                report.metrics.len(),
                first.loss_total,
                last.loss_total
            ));
        }
        if let Some(e) = report.evals.last() {
            summary.push_str(&format!("held-out loss_a {:.5}", e.eval_loss_a));
            if let Some(v) = e.eval_loss_v {
                summary.push_str(&format!(" loss_v {v:.5}"));
            }
            summary.push_str(&format!(" total {:.5}\n", e.eval_loss_total));
        }
        summary.push_str(&format!("checkpoint {}\n", manifest.hash));
        Ok(())
    })?;
    print!("{summary}");
    println!("wrote {}", dir.display());
    Ok(())
}

fn read_prompt(prompt: Option<&str>, file: Option<&Path>) -> Result<String> {
    match (prompt, file) {
        (Some(p), _) => Ok(p.to_string()),
        (None, Some(f)) => {
            let text = fs::read_to_string(f).map_err(|e| Error::Config(format!("--prompt-file {}: {e}", f.display())))?;
            Ok(text.trim_end_matches(['\n', '\r']).to_string())
        }
        (None, None) => Err(Error::Config("one of --prompt or --prompt-file is required".into())),
    }
}

pub fn cmd_sample(a: &SampleArgs) -> Result<()> {
    let solver: Solver = a.solver.parse()?;
    let schedule = Schedule::uniform(a.steps)?;
    let prompt = read_prompt(a.prompt.as_deref(), a.prompt_file.as_deref())?;
    let guidance = (!a.no_guidance).then(|| GuidanceConfig::new(a.cfg_v, a.cfg_a));
    if let Some(g) = &guidance {
        g.validate()?;
    }
    let (model, _) = resolve_model(a.checkpoint.as_deref(), "--checkpoint", &a.preset, a.model_seed, a.allow_large)?;
    let (z_v, z_a, prov) = sample(&model, &prompt, a.seed, solver, &schedule, guidance.as_ref())?;

    let target = a.out.clone().unwrap_or_else(|| default_run_dir("sample", a.seed));
    let dir = RunDir::run(target, |dir| {
        dir.write_config(&json!({
            "command": "sample",
            "args": a,
            "model_config": model.config(),
            "checkpoint_hash": prov.checkpoint_hash,
        }))?;
        write_tensor(dir.path("video.tnsr"), &z_v)?;
        write_tensor(dir.path("audio.tnsr"), &z_a)?;
        write_atomic(dir.path("provenance.json"), &serde_json::to_vec_pretty(&prov)?)
    })?;
    println!(
        "{} steps with {}: {} field evaluations, {} forward passes",
        prov.n_steps,
        prov.solver.name(),
        prov.nfe,
        prov.forwards
    );
    println!("wrote {}", dir.display());
    Ok(())
}

fn aligned_rows(m: &AffinityMatrix) -> usize {
    (0..m.rows)
        .filter(|&i| m.argmax_row(i) == aligned_column(i, m.rows, m.cols))
        .count()
}

pub fn cmd_affinity(a: &AffinityArgs) -> Result<()> {
    if a.la <= 0 || a.lv <= 0 {
        return Err(Error::Config(format!("--la and --lv must be positive, got {} and {}", a.la, a.lv)));
    }
    let (la, lv) = (a.la as usize, a.lv as usize);
    let scale = a.scale.unwrap_or(lv as f64 / la as f64);
    let video = RopeConfig::new(a.head_dim, a.base, 1.0)?;
    let scaled = affinity_matrix(la, lv, &RopeConfig::new(a.head_dim, a.base, scale)?, &video)?;
    let unscaled = affinity_matrix(la, lv, &video, &video)?;

    let target = a.out.clone().unwrap_or_else(|| default_run_dir("affinity", 0));
    let dir = RunDir::run(target, |dir| {
        dir.write_config(&json!({ "command": "affinity", "args": a, "scale": scale }))?;
        scaled.export(dir.path("scaled"))?;
        unscaled.export(dir.path("unscaled"))
    })?;
    println!("{la}x{lv} affinity, audio scale {scale}");
    println!("rows with argmax on the aligned column: scaled {}/{la}, unscaled {}/{la}", aligned_rows(&scaled), aligned_rows(&unscaled));
    println!("wrote {}", dir.display());
    Ok(())
}

pub fn resolve_policy(a: &FilterArgs) -> Result<FilterPolicy> {
    let mut p = match &a.policy {
        Some(path) => read_json::<FilterPolicy>(path, "--policy")?,
        None => FilterPolicy::default(),
    };
    if let Some(v) = a.min_area {
        p.min_area_px = v;
    }
    if a.per_side {
        p.area_mode = AreaMode::PerSide;
    }
    if let Some(v) = a.frames {
        p.required_frames = v;
    }
    if let Some(v) = a.fps {
        p.required_fps = v;
    }
    if let Some(v) = a.max_offset {
        p.max_abs_offset = v;
    }
    if let Some(v) = a.min_confidence {
        p.min_confidence = v;
    }
    if let Some(v) = a.min_volume_db {
        p.min_volume_db = v;
    }
    if a.motion_min.is_some() {
        p.motion_min = a.motion_min;
    }
    if a.aesthetic_min.is_some() {
        p.aesthetic_min = a.aesthetic_min;
    }
    Ok(p)
}

pub fn cmd_filter(a: &FilterArgs) -> Result<()> {
    let policy = resolve_policy(a)?;
    if !a.input.is_file() {
        return Err(Error::Config(format!("--input {}: no such file", a.input.display())));
    }
    let opts = CorpusOptions { skip_bad: a.skip_bad, stats_path: a.stats.clone() };
    let stats = run_filter_corpus(&a.input, &policy, &a.output, &opts)?;
    let mut snap = a.output.clone().into_os_string();
    snap.push(".config.json");
    write_atomic(
        PathBuf::from(snap),
        &serde_json::to_vec_pretty(&json!({ "command": "filter", "args": a, "policy": policy }))?,
    )?;
    print!("{}", stats.summary());
    Ok(())
}

pub fn cmd_attnmap(a: &AttnmapArgs) -> Result<()> {
    let (model, _) = resolve_model(a.checkpoint.as_deref(), "--checkpoint", "toy", a.model_seed, false)?;
    if !model.config().fusion_enabled {
        return Err(Error::Config("checkpoint has fusion disabled; there are no audio-to-video maps".into()));
    }
    let spec = synthetic_spec_for(model.config(), Stage::Fusion, a.data_seed);
    let data = gen_synthetic_pairs(&spec, a.example + 1)?;
    let ex = &data.examples()[a.example];
    let tokens = match &a.prompt {
        Some(p) => {
            let parsed = crate::data::CombinedPrompt::parse(p)?;
            crate::model::conditioning::encode_prompt(&parsed, model.config().vocab_size)
        }
        None => ex.tokens.clone(),
    };
    let video = ex.video.as_ref().ok_or_else(|| Error::Contract("probe example has no video".into()))?;
    let maps = model.attention_maps(video, &ex.audio, a.t, &tokens)?;
    let (la, lv) = (model.config().seq_len(Modality::Audio), model.config().seq_len(Modality::Video));
    let masses: Vec<f64> = maps.iter().map(diagonal_mass).collect();
    let spread: Vec<f64> = maps
        .iter()
        .map(|m| m.data().iter().map(|p| (p - 1.0 / lv as f64).abs()).fold(0.0, f64::max))
        .collect();

    let target = a.out.clone().unwrap_or_else(|| default_run_dir("attnmap", a.data_seed));
    let dir = RunDir::run(target, |dir| {
        dir.write_config(&json!({
            "command": "attnmap",
            "args": a,
            "checkpoint_hash": model.checkpoint_hash(),
            "tokens": tokens,
            "diagonal_mass": masses,
        }))?;
        for (b, m) in maps.iter().enumerate() {
            AffinityMatrix::new(la, lv, m.data().to_vec())?.export(dir.path(format!("block{b}")))?;
        }
        Ok(())
    })?;
    for (b, (m, s)) in masses.iter().zip(&spread).enumerate() {
        println!("block {b}: diagonal mass {m:.4}, max deviation from uniform {s:.4}");
    }
    let mean = masses.iter().sum::<f64>() / masses.len() as f64;
    println!("mean diagonal mass {mean:.4}");
    println!("wrote {}", dir.display());
    Ok(())
}

pub fn cmd_gen_data(a: &GenDataArgs) -> Result<()> {
    let stage: Stage = a.stage.parse()?;
    let cfg = TwinModelConfig::preset(&a.preset)?;
    let spec = synthetic_spec_for(&cfg, stage, a.seed);
    let ds = gen_synthetic_pairs(&spec, a.n)?;
    let target = a.out.clone().unwrap_or_else(|| default_run_dir("data", a.seed));
    let dir = RunDir::run(target, |dir| {
        dir.write_config(&json!({ "command": "gen-data", "args": a, "spec": spec }))?;
        ds.save(dir.path(""))
    })?;
    println!("{} examples ({}), hash {}", ds.len(), a.stage, ds.content_hash());
    println!("wrote {}", dir.display());
    Ok(())
}
