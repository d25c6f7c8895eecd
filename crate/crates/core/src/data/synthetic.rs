//! Toy paired-latent corpus. Video rows are a fixed sinusoidal template plus
//! per-example noise; audio rows are a triangular-kernel upsampling of the
//! video rows, so audio frame `j` is planted at video time `j * L_v / L_a`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, LatentPair};
use crate::error::{Error, Result};
use crate::model::conditioning::FIRST_WORD_ID;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LengthPolicy {
    /// Video and audio at full length.
    Paired,
    /// Audio only, cropped to a uniform length in `[min_len, audio_len]`.
    Variable { min_len: usize },
    /// Audio only, cropped like `Variable` then zero-padded back to `audio_len`.
    Padded { min_len: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPairSpec {
    pub video_len: usize,
    pub audio_len: usize,
    pub channels: usize,
    /// Half-width of the triangular kernel, in video frames.
    pub kernel_width: f64,
    pub noise_std: f64,
    pub template_amp: f64,
    pub variation_std: f64,
    pub vocab_size: usize,
    pub seed: u64,
    pub lengths: LengthPolicy,
}

impl SyntheticPairSpec {
    pub fn toy(seed: u64) -> Self {
        Self {
            video_len: 5,
            audio_len: 20,
            channels: 8,
            kernel_width: 1.0,
            noise_std: 0.05,
            template_amp: 1.0,
            variation_std: 0.7,
            vocab_size: 64,
            seed,
            lengths: LengthPolicy::Paired,
        }
    }

    pub fn with_lengths(mut self, lengths: LengthPolicy) -> Self {
        self.lengths = lengths;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.video_len == 0 || self.audio_len == 0 || self.channels == 0 {
            return bad("synthetic lengths and channels must be positive".into());
        }
        if !(self.kernel_width > 0.0) {
            return bad(format!("kernel_width must be positive, got {}", self.kernel_width));
        }
        for (name, v) in [("noise_std", self.noise_std), ("variation_std", self.variation_std)] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        if self.vocab_size < FIRST_WORD_ID + 2 * self.channels {
            return bad(format!(
                "vocab_size {} too small for {} channel sign tokens",
                self.vocab_size, self.channels
            ));
        }
        if let LengthPolicy::Variable { min_len } | LengthPolicy::Padded { min_len } = self.lengths {
            if min_len == 0 || min_len > self.audio_len {
                return bad(format!("min_len {min_len} outside 1..={}", self.audio_len));
            }
        }
        Ok(())
    }

    /// Row weights of the coupling kernel: `w[j][i] = K(j*L_v/L_a - i)`, each row
    /// normalized to sum to one.
    pub fn kernel(&self) -> Vec<Vec<f64>> {
        let r = self.video_len as f64 / self.audio_len as f64;
        (0..self.audio_len)
            .map(|j| {
                let pos = j as f64 * r;
                let mut w: Vec<f64> = (0..self.video_len)
                    .map(|i| (1.0 - (pos - i as f64).abs() / self.kernel_width).max(0.0))
                    .collect();
                let s: f64 = w.iter().sum();
                if s > 0.0 {
                    w.iter_mut().for_each(|x| *x /= s);
                } else {
                    let nearest = (pos.round() as usize).min(self.video_len - 1);
                    w[nearest] = 1.0;
                }
                w
            })
            .collect()
    }

    fn template(&self) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let c = self.channels;
        let waves: Vec<(f64, f64)> = (0..c)
            .map(|_| (rng.random_range(0.5..2.0), rng.random_range(0.0..2.0 * PI)))
            .collect();
        let mut out = vec![0.0; self.video_len * c];
        for i in 0..self.video_len {
            for (k, &(f, ph)) in waves.iter().enumerate() {
                out[i * c + k] =
                    self.template_amp * (2.0 * PI * f * i as f64 / self.video_len as f64 + ph).sin();
            }
        }
        out
    }
}

/// Applies the coupling kernel to a `[L_v, C]` video latent.
pub fn couple(kernel: &[Vec<f64>], video: &Tensor) -> Result<Tensor> {
    let (lv, c) = (video.rows(), video.last_dim());
    if kernel.first().is_some_and(|r| r.len() != lv) {
        return Err(Error::shape("couple", format!("kernel expects {} video rows, got {lv}", kernel[0].len())));
    }
    let v = video.data();
    let mut out = vec![0.0; kernel.len() * c];
    for (j, row) in kernel.iter().enumerate() {
        for (i, &w) in row.iter().enumerate() {
            if w != 0.0 {
                for k in 0..c {
                    out[j * c + k] += w * v[i * c + k];
                }
            }
        }
    }
    Tensor::new(&[kernel.len(), c], out)
}

fn caption_tokens(video: &Tensor) -> Vec<usize> {
    let c = video.last_dim();
    (0..c)
        .map(|k| {
            let sum: f64 = (0..video.rows()).map(|i| video.at(i, k)).sum();
            FIRST_WORD_ID + 2 * k + usize::from(sum > 0.0)
        })
        .collect()
}

pub fn gen_synthetic_pairs(spec: &SyntheticPairSpec, n: usize) -> Result<Dataset> {
    spec.validate()?;
    let template = spec.template();
    let kernel = spec.kernel();
    let c = spec.channels;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let mut examples = Vec::with_capacity(n);
    for _ in 0..n {
        let vdata: Vec<f64> = template
            .iter()
            .map(|&b| b + spec.variation_std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let video = Tensor::new(&[spec.video_len, c], vdata)?;
        let mut audio = couple(&kernel, &video)?;
        if spec.noise_std > 0.0 {
            for x in audio.data_mut() {
                *x += spec.noise_std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let tokens = caption_tokens(&video);
        let pair = match spec.lengths {
            LengthPolicy::Paired => LatentPair {
                video: Some(video),
                audio_valid: spec.audio_len,
                audio,
                tokens,
            },
            LengthPolicy::Variable { min_len } => {
                let len = rng.random_range(min_len..=spec.audio_len);
                let cropped = Tensor::new(&[len, c], audio.data()[..len * c].to_vec())?;
                LatentPair { video: None, audio: cropped, audio_valid: len, tokens }
            }
            LengthPolicy::Padded { min_len } => {
                let len = rng.random_range(min_len..=spec.audio_len);
                audio.data_mut()[len * c..].iter_mut().for_each(|x| *x = 0.0);
                LatentPair { video: None, audio, audio_valid: len, tokens }
            }
        };
        examples.push(pair);
    }
    Dataset::new(spec.clone(), examples)
}
