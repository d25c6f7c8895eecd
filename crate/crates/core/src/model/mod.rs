//! Twin diffusion-transformer towers for video and audio latents.
//!
//! Both towers have identical shapes at every block. A block runs four
//! residual sub-layers, by default in the order self-attention, text
//! cross-attention, audio/video cross-attention, feed-forward. Every sub-layer
//! input is RMS-normalized and modulated by a per-sub-layer (shift, scale)
//! derived from the shared timestep embedding plus a learned per-block offset.
//!
//! Audio positions are rotated with the scaled RoPE, video positions unscaled,
//! in self-attention and in the cross-modal attention alike. Text
//! cross-attention has no positional rotation.
//!
//! The cross-modal output projections start at zero, so a freshly built fused
//! model computes exactly what two independent towers would.

mod checkpoint;
pub mod conditioning;
mod config;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use config::{Init, ParamSpec, SubLayer, TwinModelConfig, DEFAULT_BLOCK_ORDER};
pub use params::{FreezeReport, Modality, Param, ParamGroup, ParamStore};

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rope::RopeConfig;
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug)]
struct LinearIds {
    w: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug)]
struct AttnIds {
    q: LinearIds,
    k: LinearIds,
    v: LinearIds,
    o: LinearIds,
}

#[derive(Clone, Debug)]
struct BlockIds {
    self_attn: AttnIds,
    text_xattn: AttnIds,
    av_xattn: AttnIds,
    ffn_up: LinearIds,
    ffn_down: LinearIds,
    norms: [usize; 4],
    modulation: usize,
}

#[derive(Clone, Debug)]
struct TowerIds {
    input: LinearIds,
    blocks: Vec<BlockIds>,
    final_norm: usize,
    head: LinearIds,
}

#[derive(Clone, Debug)]
struct SharedIds {
    text_embed: usize,
    time_fc1: LinearIds,
    time_fc2: LinearIds,
    time_mod: LinearIds,
}

#[derive(Clone, Debug)]
pub struct TwinModel {
    cfg: TwinModelConfig,
    seed: u64,
    params: ParamStore,
    shared: SharedIds,
    video: TowerIds,
    audio: TowerIds,
}

/// Per-tower state threaded through a forward pass on a graph.
struct TowerState<'m> {
    ids: &'m TowerIds,
    rope: RopeConfig,
    x: Var,
}

/// Sinusoidal timestep features: `[cos(1000 t w_k), sin(1000 t w_k)]` with
/// `w_k = 10000^(-k / (dim/2))`.
pub fn sinusoidal_embedding(t: f64, dim: usize) -> Tensor {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let w = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
        let a = 1000.0 * t * w;
        out[k] = a.cos();
        out[half + k] = a.sin();
    }
    Tensor::new(&[1, dim], out).expect("positive dim")
}

/// The two towers must see one timestep; returns it when `t_v` and `t_a` are
/// the same value.
pub fn shared_timestep(t_v: f64, t_a: f64) -> Result<f64> {
    if t_v.to_bits() != t_a.to_bits() {
        return Err(Error::Contract(format!("video t {t_v} and audio t {t_a} differ")));
    }
    Ok(t_v)
}

fn check_t(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Contract(format!("timestep {t} outside [0, 1]")));
    }
    Ok(())
}

impl TwinModel {
    /// Deterministic initialization from `seed`.
    pub fn build(cfg: TwinModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::default();
        for spec in cfg.layout() {
            let tensor = match spec.init {
                Init::Zeros => Tensor::zeros(&spec.shape),
                Init::Ones => Tensor::ones(&spec.shape),
                Init::Normal(std) => Tensor::randn(&spec.shape, std, &mut rng),
            };
            store.push(Param {
                name: spec.name,
                group: spec.group,
                tower: spec.tower,
                tensor,
                trainable: true,
            })?;
        }
        Self::from_store(cfg, seed, store)
    }

    pub(crate) fn from_store(cfg: TwinModelConfig, seed: u64, params: ParamStore) -> Result<Self> {
        let lin = |name: &str| -> Result<LinearIds> {
            Ok(LinearIds { w: params.id(&format!("{name}.w"))?, b: params.id(&format!("{name}.b"))? })
        };
        let attn = |p: &str| -> Result<AttnIds> {
            Ok(AttnIds {
                q: lin(&format!("{p}.q"))?,
                k: lin(&format!("{p}.k"))?,
                v: lin(&format!("{p}.v"))?,
                o: lin(&format!("{p}.o"))?,
            })
        };
        let tower = |m: Modality| -> Result<TowerIds> {
            let p = m.name();
            let blocks = (0..cfg.n_blocks)
                .map(|b| {
                    let bp = format!("{p}.blocks.{b}");
                    Ok(BlockIds {
                        self_attn: attn(&format!("{bp}.self_attn"))?,
                        text_xattn: attn(&format!("{bp}.text_xattn"))?,
                        av_xattn: attn(&format!("{bp}.av_xattn"))?,
                        ffn_up: lin(&format!("{bp}.ffn.up"))?,
                        ffn_down: lin(&format!("{bp}.ffn.down"))?,
                        norms: [
                            params.id(&format!("{bp}.norm.self_attn"))?,
                            params.id(&format!("{bp}.norm.text_xattn"))?,
                            params.id(&format!("{bp}.norm.av_xattn"))?,
                            params.id(&format!("{bp}.norm.ffn"))?,
                        ],
                        modulation: params.id(&format!("{bp}.modulation"))?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(TowerIds {
                input: lin(&format!("{p}.input"))?,
                blocks,
                final_norm: params.id(&format!("{p}.final_norm"))?,
                head: lin(&format!("{p}.head"))?,
            })
        };
        let shared = SharedIds {
            text_embed: params.id("shared.text_embed")?,
            time_fc1: lin("shared.time.fc1")?,
            time_fc2: lin("shared.time.fc2")?,
            time_mod: lin("shared.time.modulation")?,
        };
        let video = tower(Modality::Video)?;
        let audio = tower(Modality::Audio)?;
        Ok(Self { cfg, seed, params, shared, video, audio })
    }

    pub fn config(&self) -> &TwinModelConfig {
        &self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn set_fusion(&mut self, enabled: bool) {
        self.cfg.fusion_enabled = enabled;
    }

    /// Freezes every group not listed, across both towers and shared modules.
    pub fn set_trainable<S: AsRef<str>>(&mut self, groups: &[S]) -> Result<FreezeReport> {
        let set = ParamGroup::parse_set(groups)?;
        Ok(self.params.set_trainable(&set, &[Modality::Video, Modality::Audio]))
    }

    /// Like [`set_trainable`](Self::set_trainable) but limited to some towers.
    pub fn set_trainable_for(&mut self, groups: &BTreeSet<ParamGroup>, towers: &[Modality]) -> FreezeReport {
        self.params.set_trainable(groups, towers)
    }

    /// SHA-256 over every parameter name and payload, in layout order.
    pub fn checkpoint_hash(&self) -> String {
        let mut h = Sha256::new();
        for p in self.params.iter() {
            h.update(p.name.as_bytes());
            h.update([0u8]);
            h.update(p.tensor.payload_bytes());
        }
        hex::encode(h.finalize())
    }

    fn p(&self, g: &mut Graph, id: usize) -> Var {
        let param = self.params.get(id);
        g.param(id, &param.tensor, param.trainable)
    }

    fn linear(&self, g: &mut Graph, x: Var, ids: LinearIds) -> Result<Var> {
        let w = self.p(g, ids.w);
        let b = self.p(g, ids.b);
        g.linear(x, w, Some(b))
    }

    /// Shared timestep path: sinusoid -> fc1 -> SiLU -> fc2, then the modulation
    /// projection. Returns the `[8 * model_dim]` modulation vector.
    pub(crate) fn timestep_on(&self, g: &mut Graph, t: f64) -> Result<Var> {
        check_t(t)?;
        let d = self.cfg.model_dim;
        let s = g.constant(&sinusoidal_embedding(t, d));
        let h = self.linear(g, s, self.shared.time_fc1)?;
        let h = g.silu(h)?;
        let h = self.linear(g, h, self.shared.time_fc2)?;
        let h = g.silu(h)?;
        let e = self.linear(g, h, self.shared.time_mod)?;
        g.reshape(e, &[8 * d])
    }

    /// The shared modulation vector for timestep `t`, outside any graph.
    pub fn timestep_embed(&self, t: f64) -> Result<Tensor> {
        let mut g = Graph::new();
        let e = self.timestep_on(&mut g, t)?;
        Ok(g.value(e).clone())
    }

    fn text_on(&self, g: &mut Graph, tokens: &[usize]) -> Result<Var> {
        let table = self.p(g, self.shared.text_embed);
        g.embedding(table, tokens)
    }

    /// `rmsnorm(x) * (1 + scale) + shift` for one sub-layer.
    fn modulated_norm(&self, g: &mut Graph, x: Var, block: &BlockIds, mods: &[Var], sub: SubLayer) -> Result<Var> {
        let w = self.p(g, block.norms[sub.slot()]);
        let h = g.rmsnorm(x, w, self.cfg.norm_eps)?;
        let (shift, scale) = (mods[2 * sub.slot()], mods[2 * sub.slot() + 1]);
        let one = g.constant(&Tensor::ones(&[self.cfg.model_dim]));
        let gain = g.add(scale, one)?;
        let h = g.mul(h, gain)?;
        g.add(h, shift)
    }

    /// Multi-head attention. Returns the output and, if asked, the
    /// head-averaged attention probabilities `[Lq, Lk]`.
    #[allow(clippy::too_many_arguments)]
    fn attention(
        &self,
        g: &mut Graph,
        q_src: Var,
        kv_src: Var,
        ids: AttnIds,
        rope_q: Option<&RopeConfig>,
        rope_k: Option<&RopeConfig>,
        want_probs: bool,
    ) -> Result<(Var, Option<Tensor>)> {
        let (nh, hd) = (self.cfg.n_heads, self.cfg.head_dim);
        let q = self.linear(g, q_src, ids.q)?;
        let k = self.linear(g, kv_src, ids.k)?;
        let v = self.linear(g, kv_src, ids.v)?;
        let qs = g.chunk(q, nh)?;
        let ks = g.chunk(k, nh)?;
        let vs = g.chunk(v, nh)?;
        let mut heads = Vec::with_capacity(nh);
        let mut probs: Option<Vec<f64>> = None;
        let inv = 1.0 / (hd as f64).sqrt();
        for h in 0..nh {
            let qh = match rope_q {
                Some(r) => r.apply(g, qs[h])?,
                None => qs[h],
            };
            let kh = match rope_k {
                Some(r) => r.apply(g, ks[h])?,
                None => ks[h],
            };
            let kt = g.transpose_last2(kh)?;
            let s = g.matmul(qh, kt)?;
            let s = g.scale(s, inv)?;
            let p = g.softmax_lastdim(s)?;
            if want_probs {
                let pv = g.value(p).data();
                match &mut probs {
                    Some(acc) => acc.iter_mut().zip(pv).for_each(|(a, b)| *a += b / nh as f64),
                    None => probs = Some(pv.iter().map(|b| b / nh as f64).collect()),
                }
            }
            heads.push(g.matmul(p, vs[h])?);
        }
        let cat = g.concat_lastdim(&heads)?;
        let out = self.linear(g, cat, ids.o)?;
        let probs = match probs {
            Some(data) => {
                let (lq, lk) = (g.shape(q_src)[0], g.shape(kv_src)[0]);
                Some(Tensor::new(&[lq, lk], data)?)
            }
            None => None,
        };
        Ok((out, probs))
    }

    fn ffn(&self, g: &mut Graph, x: Var, block: &BlockIds) -> Result<Var> {
        let h = self.linear(g, x, block.ffn_up)?;
        let h = g.gelu(h)?;
        self.linear(g, h, block.ffn_down)
    }

    fn block_mods(&self, g: &mut Graph, shared_mod: Var, block: &BlockIds) -> Result<Vec<Var>> {
        let own = self.p(g, block.modulation);
        let m = g.add(shared_mod, own)?;
        g.chunk(m, 8)
    }

    fn tower_ids(&self, m: Modality) -> &TowerIds {
        match m {
            Modality::Video => &self.video,
            Modality::Audio => &self.audio,
        }
    }

    fn check_latent(&self, z: &Tensor, m: Modality, exact: bool) -> Result<()> {
        let c = self.cfg.latent_channels;
        let max = self.cfg.seq_len(m);
        let ok = z.rank() == 2
            && z.shape()[1] == c
            && if exact { z.shape()[0] == max } else { z.shape()[0] <= max };
        if !ok {
            let want = if exact { format!("[{max}, {c}]") } else { format!("[<= {max}, {c}]") };
            return Err(Error::shape(
                "forward",
                format!("{} latent {:?}, expected {want}", m.name(), z.shape()),
            ));
        }
        Ok(())
    }

    /// Runs any set of towers through all blocks on one graph. With two towers
    /// and fusion enabled the cross-modal sub-layer couples them; otherwise it
    /// is skipped. `maps` collects the audio tower's head-averaged
    /// audio-to-video attention per block.
    fn run_towers(
        &self,
        g: &mut Graph,
        inputs: &[(Modality, Var)],
        t: f64,
        tokens: &[usize],
        mut maps: Option<&mut Vec<Tensor>>,
    ) -> Result<Vec<Var>> {
        let shared_mod = self.timestep_on(g, t)?;
        let text = self.text_on(g, tokens)?;
        let mut towers = Vec::with_capacity(inputs.len());
        for &(m, z) in inputs {
            let ids = self.tower_ids(m);
            let x = self.linear(g, z, ids.input)?;
            towers.push(TowerState { ids, rope: self.cfg.rope(m)?, x });
        }
        let fused = self.cfg.fusion_enabled && towers.len() == 2;
        let audio_idx = inputs.iter().position(|(m, _)| *m == Modality::Audio);

        for b in 0..self.cfg.n_blocks {
            let mods: Vec<Vec<Var>> = towers
                .iter()
                .map(|tw| self.block_mods(g, shared_mod, &tw.ids.blocks[b]))
                .collect::<Result<_>>()?;
            for &sub in &self.cfg.block_order {
                match sub {
                    SubLayer::SelfAttn | SubLayer::TextXattn | SubLayer::Ffn => {
                        for (tw, md) in towers.iter_mut().zip(&mods) {
                            let blk = &tw.ids.blocks[b];
                            let h = self.modulated_norm(g, tw.x, blk, md, sub)?;
                            let y = match sub {
                                SubLayer::SelfAttn => {
                                    let r = Some(&tw.rope);
                                    self.attention(g, h, h, blk.self_attn, r, r, false)?.0
                                }
                                SubLayer::TextXattn => self.attention(g, h, text, blk.text_xattn, None, None, false)?.0,
                                _ => self.ffn(g, h, blk)?,
                            };
                            tw.x = g.add(tw.x, y)?;
                        }
                    }
                    SubLayer::AvXattn if fused => {
                        let hs: Vec<Var> = towers
                            .iter()
                            .zip(&mods)
                            .map(|(tw, md)| self.modulated_norm(g, tw.x, &tw.ids.blocks[b], md, sub))
                            .collect::<Result<_>>()?;
                        let mut ys = Vec::with_capacity(2);
                        for (i, tw) in towers.iter().enumerate() {
                            let other = &towers[1 - i];
                            let want = maps.is_some() && Some(i) == audio_idx;
                            let (y, p) = self.attention(
                                g,
                                hs[i],
                                hs[1 - i],
                                tw.ids.blocks[b].av_xattn,
                                Some(&tw.rope),
                                Some(&other.rope),
                                want,
                            )?;
                            if let (Some(m), Some(p)) = (maps.as_deref_mut(), p) {
                                m.push(p);
                            }
                            ys.push(y);
                        }
                        for (tw, y) in towers.iter_mut().zip(ys) {
                            tw.x = g.add(tw.x, y)?;
                        }
                    }
                    SubLayer::AvXattn => {}
                }
            }
        }

        towers
            .iter()
            .map(|tw| {
                let w = self.p(g, tw.ids.final_norm);
                let h = g.rmsnorm(tw.x, w, self.cfg.norm_eps)?;
                self.linear(g, h, tw.ids.head)
            })
            .collect()
    }

    /// Joint forward on a caller-owned graph; returns `(v_video, v_audio)`.
    pub fn forward_on(&self, g: &mut Graph, z_v: Var, z_a: Var, t: f64, tokens: &[usize]) -> Result<(Var, Var)> {
        self.check_latent(g.value(z_v), Modality::Video, true)?;
        self.check_latent(g.value(z_a), Modality::Audio, true)?;
        let out = self.run_towers(g, &[(Modality::Video, z_v), (Modality::Audio, z_a)], t, tokens, None)?;
        Ok((out[0], out[1]))
    }

    /// [`forward_on`](Self::forward_on) with a timestep per modality, enforcing
    /// that both are the same.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_pair_on(
        &self,
        g: &mut Graph,
        z_v: Var,
        t_v: f64,
        z_a: Var,
        t_a: f64,
        tokens: &[usize],
    ) -> Result<(Var, Var)> {
        let t = shared_timestep(t_v, t_a)?;
        self.forward_on(g, z_v, z_a, t, tokens)
    }

    /// One tower alone (no cross-modal exchange). Sequence length may be
    /// shorter than the configured maximum.
    pub fn forward_tower_on(&self, g: &mut Graph, m: Modality, z: Var, t: f64, tokens: &[usize]) -> Result<Var> {
        self.check_latent(g.value(z), m, false)?;
        if g.shape(z)[0] == 0 {
            return Err(Error::shape("forward", "empty sequence"));
        }
        Ok(self.run_towers(g, &[(m, z)], t, tokens, None)?[0])
    }

    pub fn forward(&self, z_v: &Tensor, z_a: &Tensor, t: f64, tokens: &[usize]) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let zv = g.constant(z_v);
        let za = g.constant(z_a);
        let (vv, va) = self.forward_on(&mut g, zv, za, t, tokens)?;
        Ok((g.value(vv).clone(), g.value(va).clone()))
    }

    pub fn forward_tower(&self, m: Modality, z: &Tensor, t: f64, tokens: &[usize]) -> Result<Tensor> {
        let mut g = Graph::new();
        let zv = g.constant(z);
        let v = self.forward_tower_on(&mut g, m, zv, t, tokens)?;
        Ok(g.value(v).clone())
    }

    /// Head-averaged audio-to-video attention `[L_a, L_v]` for every block.
    pub fn attention_maps(&self, z_v: &Tensor, z_a: &Tensor, t: f64, tokens: &[usize]) -> Result<Vec<Tensor>> {
        if !self.cfg.fusion_enabled {
            return Err(Error::Contract("attention maps need fusion enabled".into()));
        }
        self.check_latent(z_v, Modality::Video, true)?;
        self.check_latent(z_a, Modality::Audio, true)?;
        let mut g = Graph::new();
        let zv = g.constant(z_v);
        let za = g.constant(z_a);
        let mut maps = Vec::with_capacity(self.cfg.n_blocks);
        self.run_towers(&mut g, &[(Modality::Video, zv), (Modality::Audio, za)], t, tokens, Some(&mut maps))?;
        Ok(maps)
    }
}

/// Mean attention mass within one video index of each audio row's aligned
/// column `round(i * L_v / L_a)`.
pub fn diagonal_mass(map: &Tensor) -> f64 {
    let (la, lv) = (map.shape()[0], map.shape()[1]);
    let total: f64 = (0..la)
        .map(|i| {
            let c = crate::rope::aligned_column(i, la, lv);
            let lo = c.saturating_sub(1);
            let hi = (c + 1).min(lv - 1);
            (lo..=hi).map(|j| map.at(i, j)).sum::<f64>()
        })
        .sum();
    total / la as f64
}
