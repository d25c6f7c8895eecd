//! Staged training: audio pretraining on variable-length clips, audio
//! finetuning at a fixed padded length, and joint fusion training with the
//! feed-forward layers frozen.
//!
//! Each step draws a batch, runs every example on its own graph in parallel,
//! then sums the per-example gradients in batch order before one optimizer
//! update. The summation order is fixed, so results do not depend on thread
//! scheduling.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::flow::{draw_audio, draw_pair, fm_loss_on, joint_loss, LossWeights, Reduction};
use super::optim::{AdamW, AdamWConfig};
use crate::data::{Dataset, LatentPair, LengthPolicy};
use crate::error::{Error, Result};
use crate::model::{Modality, ParamGroup, TwinModel};
use crate::tensor::{Gradients, Graph};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    AudioPretrain,
    AudioFinetune,
    Fusion,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::AudioPretrain, Stage::AudioFinetune, Stage::Fusion];

    pub fn name(self) -> &'static str {
        match self {
            Stage::AudioPretrain => "audio_pretrain",
            Stage::AudioFinetune => "audio_finetune",
            Stage::Fusion => "fusion",
        }
    }

    pub fn towers(self) -> &'static [Modality] {
        match self {
            Stage::Fusion => &[Modality::Video, Modality::Audio],
            _ => &[Modality::Audio],
        }
    }

    fn accepts(self, lengths: LengthPolicy) -> bool {
        matches!(
            (self, lengths),
            (Stage::AudioPretrain, LengthPolicy::Variable { .. })
                | (Stage::AudioFinetune, LengthPolicy::Padded { .. })
                | (Stage::Fusion, LengthPolicy::Paired)
        )
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}; expected audio_pretrain, audio_finetune or fusion")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub stage: Stage,
    pub steps: usize,
    pub batch_size: usize,
    pub optim: AdamWConfig,
    pub trainable: BTreeSet<ParamGroup>,
    #[serde(default)]
    pub loss_weights: LossWeights,
    #[serde(default)]
    pub reduction: Reduction,
    /// Held-out evaluation every this many steps; the last step always evaluates.
    pub eval_every: usize,
    /// Noise/timestep draws per held-out example.
    pub eval_draws: usize,
}

/// Anything above this many example-steps needs an explicit override.
pub const LARGE_RUN_EXAMPLES: usize = 1_000_000;

impl StageConfig {
    pub fn toy(stage: Stage) -> Self {
        let all: BTreeSet<ParamGroup> = ParamGroup::ALL.into_iter().collect();
        let (steps, batch_size, lr, beta2, trainable) = match stage {
            Stage::AudioPretrain => (200, 64, 1e-2, 0.999, all),
            Stage::AudioFinetune => (200, 32, 5e-3, 0.999, all),
            Stage::Fusion => (2000, 8, 1e-3, 0.95, fusion_groups()),
        };
        Self {
            stage,
            steps,
            batch_size,
            optim: AdamWConfig { lr, beta1: 0.9, beta2, eps: 1e-8, weight_decay: 0.0 },
            trainable,
            loss_weights: LossWeights::default(),
            reduction: Reduction::Mean,
            eval_every: 50,
            eval_draws: 4,
        }
    }

    /// Full-scale settings; finetune reuses the pretraining optimizer.
    pub fn paper(stage: Stage) -> Self {
        let base = Self::toy(stage);
        let (steps, batch_size, lr, beta2) = match stage {
            Stage::AudioPretrain | Stage::AudioFinetune => (50_000, 2880, 1e-4, 0.999),
            Stage::Fusion => (40_000, 768, 5e-5, 0.95),
        };
        Self {
            steps,
            batch_size,
            optim: AdamWConfig { lr, beta1: 0.9, beta2, eps: 1e-8, weight_decay: 0.0 },
            eval_every: 1000,
            ..base
        }
    }

    pub fn preset(stage: Stage, name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy(stage)),
            "paper" => Ok(Self::paper(stage)),
            other => Err(Error::Config(format!("unknown preset {other:?}; expected toy or paper"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 || self.eval_draws == 0 {
            return Err(Error::Config("steps, batch_size and eval_draws must be positive".into()));
        }
        if self.trainable.is_empty() {
            return Err(Error::Config("no trainable parameter groups".into()));
        }
        if self.stage == Stage::Fusion && self.trainable.contains(&ParamGroup::Ffn) {
            return Err(Error::Config("the fusion stage keeps the ffn group frozen".into()));
        }
        self.optim.validate()?;
        self.loss_weights.validate()
    }

    pub fn is_large(&self) -> bool {
        self.steps.saturating_mul(self.batch_size) > LARGE_RUN_EXAMPLES
    }
}

pub fn fusion_groups() -> BTreeSet<ParamGroup> {
    [ParamGroup::SelfAttn, ParamGroup::TextXattn, ParamGroup::AvXattn].into_iter().collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: usize,
    pub stage: Stage,
    pub loss_v: Option<f64>,
    pub loss_a: f64,
    pub loss_total: f64,
    pub lr: f64,
    pub wallclock_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub stage: Stage,
    pub eval_loss_v: Option<f64>,
    pub eval_loss_a: f64,
    pub eval_loss_total: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub metrics: Vec<MetricRecord>,
    pub evals: Vec<EvalRecord>,
    /// Paired draws whose two timesteps were checked equal.
    pub shared_t_checks: u64,
}

impl TrainReport {
    pub fn metrics_jsonl(&self) -> Result<Vec<u8>> {
        to_jsonl(&self.metrics)
    }

    pub fn evals_jsonl(&self) -> Result<Vec<u8>> {
        to_jsonl(&self.evals)
    }
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct TrainOptions {
    /// Report `wallclock_ms = 0` so metrics files are byte-reproducible.
    pub fixed_clock: bool,
}

fn rng_for(seed: u64, domain: u64, step: u64, index: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ domain.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    r.set_stream((step << 20) | index);
    r
}

const DOMAIN_BATCH: u64 = 1;
const DOMAIN_EXAMPLE: u64 = 2;
const DOMAIN_EVAL: u64 = 3;

pub fn check_compatible(stage: Stage, model: &TwinModel, data: &Dataset) -> Result<()> {
    let spec = data.spec();
    if !stage.accepts(spec.lengths) {
        return Err(Error::Config(format!(
            "stage {stage} cannot train on a dataset with length policy {:?}",
            spec.lengths
        )));
    }
    let c = model.config();
    let dims_ok = spec.channels == c.latent_channels
        && spec.audio_len == c.audio_len
        && spec.video_len == c.video_len
        && spec.vocab_size <= c.vocab_size;
    if !dims_ok {
        return Err(Error::Config(format!(
            "dataset dims (L_v {}, L_a {}, C {}, vocab {}) do not fit the model (L_v {}, L_a {}, C {}, vocab {})",
            spec.video_len, spec.audio_len, spec.channels, spec.vocab_size,
            c.video_len, c.audio_len, c.latent_channels, c.vocab_size
        )));
    }
    if data.is_empty() {
        return Err(Error::Config("dataset is empty".into()));
    }
    Ok(())
}

/// Groups example indices by audio length so variable-length batches never mix lengths.
struct BatchSampler {
    buckets: Option<Vec<Vec<usize>>>,
    bucket_of: Vec<usize>,
    n: usize,
}

impl BatchSampler {
    fn new(data: &Dataset) -> Self {
        if !matches!(data.spec().lengths, LengthPolicy::Variable { .. }) {
            return Self { buckets: None, bucket_of: Vec::new(), n: data.len() };
        }
        let mut by_len: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, e) in data.examples().iter().enumerate() {
            by_len.entry(e.audio.rows()).or_default().push(i);
        }
        let buckets: Vec<Vec<usize>> = by_len.into_values().collect();
        let mut bucket_of = vec![0; data.len()];
        for (b, idx) in buckets.iter().enumerate() {
            idx.iter().for_each(|&i| bucket_of[i] = b);
        }
        Self { buckets: Some(buckets), bucket_of, n: data.len() }
    }

    fn draw(&self, rng: &mut ChaCha8Rng, batch: usize) -> Vec<usize> {
        match &self.buckets {
            None => (0..batch).map(|_| rng.random_range(0..self.n)).collect(),
            Some(buckets) => {
                let anchor = rng.random_range(0..self.n);
                let pool = &buckets[self.bucket_of[anchor]];
                (0..batch).map(|_| pool[rng.random_range(0..pool.len())]).collect()
            }
        }
    }
}

struct ExampleOut {
    loss_v: Option<f64>,
    loss_a: f64,
    grads: Option<Gradients>,
}

/// Forward (and optionally backward) for one example. `grad_scale` multiplies
/// the loss before differentiation.
fn run_example(
    model: &TwinModel,
    cfg: &StageConfig,
    ex: &LatentPair,
    rng: &mut ChaCha8Rng,
    grad_scale: Option<f64>,
) -> Result<ExampleOut> {
    let mut g = Graph::new();
    let (loss_v, loss_a, total) = match cfg.stage {
        Stage::Fusion => {
            let (iv, ia, _) = draw_pair(ex, rng)?;
            let zv = g.constant(&iv.z_t);
            let za = g.constant(&ia.z_t);
            let (vv, va) = model.forward_pair_on(&mut g, zv, iv.t, za, ia.t, &ex.tokens)?;
            let lv = fm_loss_on(&mut g, vv, &iv.target, iv.target.rows(), cfg.reduction)?;
            let la = fm_loss_on(&mut g, va, &ia.target, ex.audio_valid, cfg.reduction)?;
            let w = cfg.loss_weights;
            let a = g.scale(lv, w.lambda_v)?;
            let b = g.scale(la, w.lambda_a)?;
            let total = g.add(a, b)?;
            (Some(g.value(lv).item()), g.value(la).item(), total)
        }
        _ => {
            let ia = draw_audio(ex, rng)?;
            let za = g.constant(&ia.z_t);
            let va = model.forward_tower_on(&mut g, Modality::Audio, za, ia.t, &ex.tokens)?;
            let la = fm_loss_on(&mut g, va, &ia.target, ex.audio_valid, cfg.reduction)?;
            (None, g.value(la).item(), la)
        }
    };
    let grads = match grad_scale {
        Some(s) => {
            let scaled = g.scale(total, s)?;
            Some(g.backward(scaled)?)
        }
        None => None,
    };
    Ok(ExampleOut { loss_v, loss_a, grads })
}

fn total_loss(cfg: &StageConfig, lv: Option<f64>, la: f64) -> Result<f64> {
    match lv {
        Some(lv) => joint_loss(lv, la, &cfg.loss_weights),
        None => Ok(la),
    }
}

/// Held-out loss with draws fixed by `seed`, so repeated evaluations (and
/// different models) see identical noise and timesteps.
pub fn eval_loss(model: &TwinModel, cfg: &StageConfig, data: &Dataset, seed: u64) -> Result<(Option<f64>, f64, f64)> {
    check_compatible(cfg.stage, model, data)?;
    let draws = cfg.eval_draws;
    let outs: Vec<ExampleOut> = (0..data.len() * draws)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng_for(seed, DOMAIN_EVAL, (k / draws) as u64, (k % draws) as u64);
            run_example(model, cfg, &data.examples()[k / draws], &mut rng, None)
        })
        .collect::<Result<_>>()?;
    let n = outs.len() as f64;
    let la = outs.iter().map(|o| o.loss_a).sum::<f64>() / n;
    let lv = match cfg.stage {
        Stage::Fusion => Some(outs.iter().map(|o| o.loss_v.unwrap_or(0.0)).sum::<f64>() / n),
        _ => None,
    };
    Ok((lv, la, total_loss(cfg, lv, la)?))
}

/// Trains `model` in place. Trainability is set from the stage (towers) and
/// `cfg.trainable` (groups); everything else stays frozen.
pub fn train_stage(
    cfg: &StageConfig,
    model: &mut TwinModel,
    data: &Dataset,
    eval: Option<&Dataset>,
    seed: u64,
    opts: TrainOptions,
) -> Result<TrainReport> {
    cfg.validate()?;
    check_compatible(cfg.stage, model, data)?;
    if let Some(e) = eval {
        check_compatible(cfg.stage, model, e)?;
    }
    model.set_trainable_for(&cfg.trainable, cfg.stage.towers());
    let mut opt = AdamW::new(cfg.optim, model.params())?;
    let sampler = BatchSampler::new(data);
    let start = Instant::now();
    let mut report = TrainReport::default();
    let inv_b = 1.0 / cfg.batch_size as f64;

    for step in 0..cfg.steps {
        let mut brng = rng_for(seed, DOMAIN_BATCH, step as u64, 0);
        let batch = sampler.draw(&mut brng, cfg.batch_size);
        let shared: &TwinModel = model;
        let outs: Vec<ExampleOut> = batch
            .par_iter()
            .enumerate()
            .map(|(i, &idx)| {
                let mut rng = rng_for(seed, DOMAIN_EXAMPLE, step as u64, i as u64);
                run_example(shared, cfg, &data.examples()[idx], &mut rng, Some(inv_b))
            })
            .collect::<Result<_>>()?;

        let params = model.params_mut();
        params.zero_grads();
        for o in &outs {
            if let Some(g) = &o.grads {
                params.accumulate(g)?;
            }
        }
        opt.step(params)?;
        params.zero_grads();
        if cfg.stage == Stage::Fusion {
            report.shared_t_checks += outs.len() as u64;
        }

        let la = outs.iter().map(|o| o.loss_a).sum::<f64>() * inv_b;
        let lv = (cfg.stage == Stage::Fusion).then(|| outs.iter().map(|o| o.loss_v.unwrap_or(0.0)).sum::<f64>() * inv_b);
        report.metrics.push(MetricRecord {
            step,
            stage: cfg.stage,
            loss_v: lv,
            loss_a: la,
            loss_total: total_loss(cfg, lv, la)?,
            lr: cfg.optim.lr,
            wallclock_ms: if opts.fixed_clock { 0 } else { start.elapsed().as_millis() as u64 },
        });

        let last = step + 1 == cfg.steps;
        if let Some(e) = eval {
            if last || (cfg.eval_every > 0 && (step + 1) % cfg.eval_every == 0) {
                let (ev, ea, et) = eval_loss(model, cfg, e, seed)?;
                report.evals.push(EvalRecord {
                    step,
                    stage: cfg.stage,
                    eval_loss_v: ev,
                    eval_loss_a: ea,
                    eval_loss_total: et,
                });
            }
        }
    }
    Ok(report)
}
