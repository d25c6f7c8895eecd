//! Flow-matching objective along the straight path from noise to data.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::LatentPair;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct Interpolant {
    pub t: f64,
    pub z0: Tensor,
    pub z1: Tensor,
    pub z_t: Tensor,
    pub target: Tensor,
}

impl Interpolant {
    /// `z_t = (1 - t) z0 + t z1`, target `z1 - z0`.
    pub fn new(z0: Tensor, z1: Tensor, t: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Contract(format!("interpolant t {t} outside [0, 1]")));
        }
        let z_t = z0.lincomb(1.0 - t, &z1, t)?;
        let target = z1.sub(&z0)?;
        Ok(Self { t, z0, z1, z_t, target })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_v: f64,
    pub lambda_a: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_v: 0.85, lambda_a: 0.15 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_v >= 0.0 && self.lambda_a >= 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be nonnegative, got ({}, {})",
                self.lambda_v, self.lambda_a
            )));
        }
        Ok(())
    }
}

/// Mean squared error between `v_pred` and `z1 - z0` over all elements.
pub fn fm_loss(v_pred: &Tensor, z0: &Tensor, z1: &Tensor) -> Result<f64> {
    fm_loss_reduced(v_pred, z0, z1, Reduction::Mean)
}

pub fn fm_loss_reduced(v_pred: &Tensor, z0: &Tensor, z1: &Tensor, reduction: Reduction) -> Result<f64> {
    if v_pred.shape() != z0.shape() || z0.shape() != z1.shape() {
        return Err(Error::shape(
            "fm_loss",
            format!("{:?} vs {:?} vs {:?}", v_pred.shape(), z0.shape(), z1.shape()),
        ));
    }
    let sum: f64 = v_pred
        .data()
        .iter()
        .zip(z0.data().iter().zip(z1.data()))
        .map(|(v, (a, b))| {
            let d = v - (b - a);
            d * d
        })
        .sum();
    Ok(match reduction {
        Reduction::Mean => sum / v_pred.numel() as f64,
        Reduction::Sum => sum,
    })
}

/// Graph form of the loss over the first `valid_rows` rows of `[L, C]`
/// operands; later rows are padding and contribute nothing.
pub fn fm_loss_on(g: &mut Graph, v_pred: Var, target: &Tensor, valid_rows: usize, reduction: Reduction) -> Result<Var> {
    if g.shape(v_pred) != target.shape() {
        return Err(Error::shape("fm_loss", format!("{:?} vs {:?}", g.shape(v_pred), target.shape())));
    }
    let (rows, c) = (target.rows(), target.last_dim());
    if valid_rows == 0 || valid_rows > rows {
        return Err(Error::Contract(format!("valid rows {valid_rows} outside 1..={rows}")));
    }
    let tgt = g.constant(target);
    let diff = g.sub(v_pred, tgt)?;
    let sq = g.square(diff)?;
    let sq = if valid_rows < rows {
        let mask = Tensor::from_fn(&[rows, c], |i| if i / c < valid_rows { 1.0 } else { 0.0 });
        let m = g.constant(&mask);
        g.mul(sq, m)?
    } else {
        sq
    };
    let total = g.sum(sq)?;
    match reduction {
        Reduction::Mean => g.scale(total, 1.0 / (valid_rows * c) as f64),
        Reduction::Sum => Ok(total),
    }
}

/// `lambda_v * l_v + lambda_a * l_a`.
pub fn joint_loss(l_v: f64, l_a: f64, w: &LossWeights) -> Result<f64> {
    if !(l_v >= 0.0 && l_a >= 0.0) || !l_v.is_finite() || !l_a.is_finite() {
        return Err(Error::Contract(format!("losses must be finite and nonnegative, got ({l_v}, {l_a})")));
    }
    w.validate()?;
    Ok(w.lambda_v * l_v + w.lambda_a * l_a)
}

fn noise_like<R: Rng + ?Sized>(t: &Tensor, rng: &mut R) -> Tensor {
    Tensor::from_fn(t.shape(), |_| rng.sample(StandardNormal))
}

pub fn draw_t<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random_range(0.0..=1.0)
}

/// One shared `t ~ U[0, 1]` and independent noise for each modality.
pub fn draw_pair<R: Rng + ?Sized>(ex: &LatentPair, rng: &mut R) -> Result<(Interpolant, Interpolant, f64)> {
    let video = ex
        .video
        .as_ref()
        .ok_or_else(|| Error::Config("paired draw needs a video latent".into()))?;
    let t = draw_t(rng);
    let z0_v = noise_like(video, rng);
    let z0_a = noise_like(&ex.audio, rng);
    let iv = Interpolant::new(z0_v, video.clone(), t)?;
    let ia = Interpolant::new(z0_a, ex.audio.clone(), t)?;
    Ok((iv, ia, t))
}

pub fn draw_audio<R: Rng + ?Sized>(ex: &LatentPair, rng: &mut R) -> Result<Interpolant> {
    let t = draw_t(rng);
    let z0 = noise_like(&ex.audio, rng);
    Interpolant::new(z0, ex.audio.clone(), t)
}
