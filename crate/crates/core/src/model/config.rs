use serde::{Deserialize, Serialize};

use super::params::{Modality, ParamGroup};
use crate::error::{Error, Result};
use crate::rope::{RopeConfig, DEFAULT_ROPE_BASE};

/// The four residual sub-layers of a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubLayer {
    SelfAttn,
    TextXattn,
    AvXattn,
    Ffn,
}

impl SubLayer {
    /// Index of the sub-layer's (shift, scale) pair inside the modulation vector.
    pub(crate) fn slot(self) -> usize {
        match self {
            SubLayer::SelfAttn => 0,
            SubLayer::TextXattn => 1,
            SubLayer::AvXattn => 2,
            SubLayer::Ffn => 3,
        }
    }
}

pub const DEFAULT_BLOCK_ORDER: [SubLayer; 4] =
    [SubLayer::SelfAttn, SubLayer::TextXattn, SubLayer::AvXattn, SubLayer::Ffn];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwinModelConfig {
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub n_blocks: usize,
    /// Video latent tokens per clip.
    pub video_len: usize,
    /// Audio latent tokens per clip.
    pub audio_len: usize,
    pub latent_channels: usize,
    pub vocab_size: usize,
    pub rope_base: f64,
    pub audio_rope_scale: f64,
    pub fusion_enabled: bool,
    pub norm_eps: f64,
    pub block_order: Vec<SubLayer>,
}

impl TwinModelConfig {
    /// Desk-scale default: 32-wide, 2 blocks, 5 video and 20 audio tokens.
    pub fn toy() -> Self {
        Self {
            model_dim: 32,
            ffn_dim: 64,
            n_heads: 4,
            head_dim: 8,
            n_blocks: 2,
            video_len: 5,
            audio_len: 20,
            latent_channels: 8,
            vocab_size: 64,
            rope_base: DEFAULT_ROPE_BASE,
            audio_rope_scale: 5.0 / 20.0,
            fusion_enabled: true,
            norm_eps: 1e-6,
            block_order: DEFAULT_BLOCK_ORDER.to_vec(),
        }
    }

    /// Full-size twin backbone (3072 wide, 24x128 heads, 30 blocks, 31 video /
    /// 157 audio tokens). Only used for parameter accounting unless a caller
    /// explicitly opts into allocating it.
    pub fn paper() -> Self {
        Self {
            model_dim: 3072,
            ffn_dim: 14336,
            n_heads: 24,
            head_dim: 128,
            n_blocks: 30,
            video_len: 31,
            audio_len: 157,
            latent_channels: 8,
            vocab_size: 32128,
            audio_rope_scale: 31.0 / 157.0,
            ..Self::toy()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy()),
            "paper" => Ok(Self::paper()),
            other => Err(Error::Config(format!("unknown preset {other:?} (expected toy|paper)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("model_dim", self.model_dim),
            ("ffn_dim", self.ffn_dim),
            ("n_heads", self.n_heads),
            ("head_dim", self.head_dim),
            ("n_blocks", self.n_blocks),
            ("video_len", self.video_len),
            ("audio_len", self.audio_len),
            ("latent_channels", self.latent_channels),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.model_dim != self.n_heads * self.head_dim {
            return Err(Error::Config(format!(
                "model_dim {} != n_heads {} x head_dim {}",
                self.model_dim, self.n_heads, self.head_dim
            )));
        }
        if self.vocab_size <= super::conditioning::FIRST_WORD_ID {
            return Err(Error::Config(format!("vocab_size {} too small", self.vocab_size)));
        }
        if !(self.norm_eps > 0.0) {
            return Err(Error::Config("norm_eps must be > 0".into()));
        }
        let mut order = self.block_order.clone();
        order.sort_by_key(|s| s.slot());
        if order != DEFAULT_BLOCK_ORDER {
            return Err(Error::Config(format!(
                "block_order must be a permutation of the four sub-layers, got {:?}",
                self.block_order
            )));
        }
        self.rope(Modality::Audio)?;
        self.rope(Modality::Video)?;
        Ok(())
    }

    pub fn rope(&self, m: Modality) -> Result<RopeConfig> {
        let scale = match m {
            Modality::Video => 1.0,
            Modality::Audio => self.audio_rope_scale,
        };
        RopeConfig::new(self.head_dim, self.rope_base, scale)
    }

    pub fn seq_len(&self, m: Modality) -> usize {
        match m {
            Modality::Video => self.video_len,
            Modality::Audio => self.audio_len,
        }
    }

    /// Every parameter in construction order. Used both to allocate a model and
    /// to count parameters without allocating.
    pub fn layout(&self) -> Vec<ParamSpec> {
        let (d, f, c, v) = (self.model_dim, self.ffn_dim, self.latent_channels, self.vocab_size);
        let mut out = Vec::new();
        let lin = |out: &mut Vec<ParamSpec>, name: String, fan_in, fan_out, group, tower, w_init| {
            out.push(ParamSpec::new(format!("{name}.w"), vec![fan_in, fan_out], group, tower, w_init));
            out.push(ParamSpec::new(format!("{name}.b"), vec![fan_out], group, tower, Init::Zeros));
        };
        let fan = |n: usize| Init::Normal(1.0 / (n as f64).sqrt());

        out.push(ParamSpec::new("shared.text_embed".into(), vec![v, d], ParamGroup::Embed, None, Init::Normal(1.0)));
        lin(&mut out, "shared.time.fc1".into(), d, d, ParamGroup::Embed, None, fan(d));
        lin(&mut out, "shared.time.fc2".into(), d, d, ParamGroup::Embed, None, fan(d));
        lin(&mut out, "shared.time.modulation".into(), d, 8 * d, ParamGroup::Embed, None, fan(d));

        for m in [Modality::Video, Modality::Audio] {
            let t = Some(m);
            let p = m.name();
            lin(&mut out, format!("{p}.input"), c, d, ParamGroup::Embed, t, fan(c));
            for b in 0..self.n_blocks {
                let bp = format!("{p}.blocks.{b}");
                for (kind, group) in [
                    ("self_attn", ParamGroup::SelfAttn),
                    ("text_xattn", ParamGroup::TextXattn),
                    ("av_xattn", ParamGroup::AvXattn),
                ] {
                    for proj in ["q", "k", "v", "o"] {
                        let init = if kind == "av_xattn" && matches!(proj, "q" | "o") { Init::Zeros } else { fan(d) };
                        lin(&mut out, format!("{bp}.{kind}.{proj}"), d, d, group, t, init);
                    }
                }
                lin(&mut out, format!("{bp}.ffn.up"), d, f, ParamGroup::Ffn, t, fan(d));
                lin(&mut out, format!("{bp}.ffn.down"), f, d, ParamGroup::Ffn, t, fan(f));
                for s in ["self_attn", "text_xattn", "av_xattn", "ffn"] {
                    out.push(ParamSpec::new(format!("{bp}.norm.{s}"), vec![d], ParamGroup::Norm, t, Init::Ones));
                }
                out.push(ParamSpec::new(format!("{bp}.modulation"), vec![8 * d], ParamGroup::Norm, t, Init::Zeros));
            }
            out.push(ParamSpec::new(format!("{p}.final_norm"), vec![d], ParamGroup::Norm, t, Init::Ones));
            lin(&mut out, format!("{p}.head"), d, c, ParamGroup::Head, t, Init::Zeros);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(ParamSpec::numel).sum()
    }

    /// Parameter count with only `groups` trainable, over both towers.
    pub fn trainable_count(&self, groups: &[ParamGroup]) -> usize {
        self.layout()
            .iter()
            .filter(|s| groups.contains(&s.group))
            .map(ParamSpec::numel)
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Normal(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
    pub tower: Option<Modality>,
    pub init: Init,
}

impl ParamSpec {
    fn new(name: String, shape: Vec<usize>, group: ParamGroup, tower: Option<Modality>, init: Init) -> Self {
        Self { name, shape, group, tower, init }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}
