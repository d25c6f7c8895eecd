//! In-memory latent datasets and their on-disk form: `manifest.json` plus
//! stacked `video.tnsr` `[n, L_v, C]` and zero-padded `audio.tnsr` `[n, L_a, C]`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::synthetic::{LengthPolicy, SyntheticPairSpec};
use crate::error::{Error, Result};
use crate::tensor::{read_tensor, Tensor};
use crate::util::{create_dir_all, write_atomic};

#[derive(Clone, Debug, PartialEq)]
pub struct LatentPair {
    pub video: Option<Tensor>,
    /// `[rows, C]`; rows past `audio_valid` are padding.
    pub audio: Tensor,
    pub audio_valid: usize,
    pub tokens: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    spec: SyntheticPairSpec,
    examples: Vec<LatentPair>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    spec: SyntheticPairSpec,
    len: usize,
    audio_valid: Vec<usize>,
    tokens: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn new(spec: SyntheticPairSpec, examples: Vec<LatentPair>) -> Result<Self> {
        let c = spec.channels;
        let paired = spec.lengths == LengthPolicy::Paired;
        for (i, e) in examples.iter().enumerate() {
            let bad = |m: &str| Err(Error::Format(format!("example {i}: {m}")));
            if e.video.is_some() != paired {
                return bad("video presence does not match the length policy");
            }
            if let Some(v) = &e.video {
                if v.shape() != [spec.video_len, c] {
                    return bad("video shape");
                }
            }
            let rows = e.audio.rows();
            if e.audio.rank() != 2 || e.audio.last_dim() != c || rows > spec.audio_len {
                return bad("audio shape");
            }
            if e.audio_valid == 0 || e.audio_valid > rows {
                return bad("audio_valid out of range");
            }
            if e.tokens.is_empty() || e.tokens.iter().any(|&t| t >= spec.vocab_size) {
                return bad("tokens outside the vocabulary");
            }
        }
        Ok(Self { spec, examples })
    }

    pub fn spec(&self) -> &SyntheticPairSpec {
        &self.spec
    }

    pub fn examples(&self) -> &[LatentPair] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn is_paired(&self) -> bool {
        self.spec.lengths == LengthPolicy::Paired
    }

    /// Moves the last `k` examples into a second dataset.
    pub fn split_off(mut self, k: usize) -> Result<(Dataset, Dataset)> {
        if k > self.examples.len() {
            return Err(Error::Config(format!("cannot hold out {k} of {} examples", self.examples.len())));
        }
        let tail = self.examples.split_off(self.examples.len() - k);
        let held = Dataset { spec: self.spec.clone(), examples: tail };
        Ok((self, held))
    }

    fn stacked(&self) -> Result<(Option<Tensor>, Tensor)> {
        let (n, c) = (self.len().max(1), self.spec.channels);
        let (lv, la) = (self.spec.video_len, self.spec.audio_len);
        let mut audio = vec![0.0; n * la * c];
        for (i, e) in self.examples.iter().enumerate() {
            let a = e.audio.data();
            audio[i * la * c..i * la * c + a.len()].copy_from_slice(a);
        }
        let video = if self.is_paired() {
            let mut v = vec![0.0; n * lv * c];
            for (i, e) in self.examples.iter().enumerate() {
                if let Some(t) = &e.video {
                    v[i * lv * c..(i + 1) * lv * c].copy_from_slice(t.data());
                }
            }
            Some(Tensor::new(&[n, lv, c], v)?)
        } else {
            None
        };
        Ok((video, Tensor::new(&[n, la, c], audio)?))
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        create_dir_all(dir)?;
        let (video, audio) = self.stacked()?;
        if let Some(v) = video {
            write_atomic(dir.join("video.tnsr"), &v.to_bytes())?;
        }
        write_atomic(dir.join("audio.tnsr"), &audio.to_bytes())?;
        let manifest = Manifest {
            format_version: 1,
            spec: self.spec.clone(),
            len: self.len(),
            audio_valid: self.examples.iter().map(|e| e.audio_valid).collect(),
            tokens: self.examples.iter().map(|e| e.tokens.clone()).collect(),
        };
        write_atomic(dir.join("manifest.json"), &serde_json::to_vec_pretty(&manifest)?)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mpath = dir.join("manifest.json");
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        m.spec.validate()?;
        if m.audio_valid.len() != m.len || m.tokens.len() != m.len {
            return Err(Error::Format("dataset manifest lists are not of length `len`".into()));
        }
        let c = m.spec.channels;
        let (lv, la) = (m.spec.video_len, m.spec.audio_len);
        let rows = m.len.max(1);
        let audio = read_tensor(dir.join("audio.tnsr"))?;
        if audio.shape() != [rows, la, c] {
            return Err(Error::Format(format!("audio.tnsr has shape {:?}", audio.shape())));
        }
        let video = if m.spec.lengths == LengthPolicy::Paired {
            let v = read_tensor(dir.join("video.tnsr"))?;
            if v.shape() != [rows, lv, c] {
                return Err(Error::Format(format!("video.tnsr has shape {:?}", v.shape())));
            }
            Some(v)
        } else {
            None
        };
        let variable = matches!(m.spec.lengths, LengthPolicy::Variable { .. });
        let mut examples = Vec::with_capacity(m.len);
        for (i, (valid, tokens)) in m.audio_valid.into_iter().zip(m.tokens).enumerate() {
            if valid == 0 || valid > la {
                return Err(Error::Format(format!("example {i}: audio_valid {valid}")));
            }
            let keep = if variable { valid } else { la };
            let a = &audio.data()[i * la * c..(i * la + keep) * c];
            examples.push(LatentPair {
                video: match &video {
                    Some(v) => Some(Tensor::new(&[lv, c], v.data()[i * lv * c..(i + 1) * lv * c].to_vec())?),
                    None => None,
                },
                audio: Tensor::new(&[keep, c], a.to_vec())?,
                audio_valid: valid,
                tokens,
            });
        }
        Dataset::new(m.spec, examples)
    }

    /// Digest over every example's latents, lengths, and tokens.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.examples {
            if let Some(v) = &e.video {
                h.update(v.payload_bytes());
            }
            h.update(e.audio.payload_bytes());
            h.update((e.audio_valid as u64).to_le_bytes());
            for &t in &e.tokens {
                h.update((t as u64).to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}
