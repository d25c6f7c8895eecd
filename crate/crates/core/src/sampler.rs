//! Joint ODE integration of `dz/dt = v(z, t)` from noise (t = 0) to data
//! (t = 1). Both modalities advance on one time grid with identical
//! coefficients.
//!
//! The multistep solver is a velocity-space predictor-corrector. The
//! predictor is second-order Adams-Bashforth over the last two velocities
//! (Euler on the first step). The field is evaluated once at the predicted
//! point, and the corrector folds that evaluation into a quadratic through the
//! last three velocities (trapezoidal on the first step), which lifts the
//! corrected state one order above the predictor. The fresh evaluation is
//! carried forward as the next step's history. The final step skips the
//! corrector, so `n` steps cost `n` field evaluations.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::CombinedPrompt;
use crate::error::{Error, Result};
use crate::model::conditioning::{encode_prompt, null_tokens};
use crate::model::{shared_timestep, Modality, TwinModel};
use crate::tensor::Tensor;

/// A velocity field over a (video, audio) state.
pub trait JointField {
    fn velocity(&self, z_v: &Tensor, t_v: f64, z_a: &Tensor, t_a: f64, cond: &[usize]) -> Result<(Tensor, Tensor)>;
}

impl JointField for TwinModel {
    fn velocity(&self, z_v: &Tensor, t_v: f64, z_a: &Tensor, t_a: f64, cond: &[usize]) -> Result<(Tensor, Tensor)> {
        let t = shared_timestep(t_v, t_a)?;
        self.forward(z_v, z_a, t, cond)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    t_grid: Vec<f64>,
}

impl Schedule {
    pub fn uniform(n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::Config("n_steps must be positive".into()));
        }
        Self::from_grid((0..=n_steps).map(|k| k as f64 / n_steps as f64).collect())
    }

    pub fn from_grid(t_grid: Vec<f64>) -> Result<Self> {
        let ok = t_grid.len() >= 2
            && t_grid[0] == 0.0
            && t_grid[t_grid.len() - 1] == 1.0
            && t_grid.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(Error::Config("time grid must rise strictly from 0 to 1".into()));
        }
        Ok(Self { t_grid })
    }

    pub fn n_steps(&self) -> usize {
        self.t_grid.len() - 1
    }

    pub fn grid(&self) -> &[f64] {
        &self.t_grid
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Euler,
    Unipc,
}

impl Solver {
    pub fn name(self) -> &'static str {
        match self {
            Solver::Euler => "euler",
            Solver::Unipc => "unipc",
        }
    }
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Solver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Solver::Euler),
            "unipc" => Ok(Solver::Unipc),
            other => Err(Error::Config(format!("unknown solver {other:?}; expected euler or unipc"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub scale_v: f64,
    pub scale_a: f64,
    pub null_tokens: Vec<usize>,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self { scale_v: 5.0, scale_a: 5.0, null_tokens: null_tokens() }
    }
}

impl GuidanceConfig {
    pub fn new(scale_v: f64, scale_a: f64) -> Self {
        Self { scale_v, scale_a, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale_v >= 0.0 && self.scale_a >= 0.0) || !self.scale_v.is_finite() || !self.scale_a.is_finite() {
            return Err(Error::Config(format!(
                "guidance scales must be finite and nonnegative, got ({}, {})",
                self.scale_v, self.scale_a
            )));
        }
        if self.null_tokens.is_empty() {
            return Err(Error::Config("null conditioning needs at least one token".into()));
        }
        Ok(())
    }
}

/// `v_uncond + s (v_cond - v_uncond)`, evaluated as `s v_cond + (1 - s) v_uncond`
/// so that `s = 1` and `s = 0` return an input exactly.
pub fn cfg_velocity(v_cond: &Tensor, v_uncond: &Tensor, s: f64) -> Result<Tensor> {
    if v_cond.shape() != v_uncond.shape() {
        return Err(Error::shape("cfg_velocity", format!("{:?} vs {:?}", v_cond.shape(), v_uncond.shape())));
    }
    v_cond.lincomb(s, v_uncond, 1.0 - s)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveStats {
    /// Guided velocity evaluations.
    pub nfe: usize,
    /// Underlying field calls; two per evaluation under guidance.
    pub forwards: usize,
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub z_v: Tensor,
    pub z_a: Tensor,
    pub stats: SolveStats,
}

struct Guided<'a, F: ?Sized> {
    field: &'a F,
    cond: &'a [usize],
    guidance: Option<&'a GuidanceConfig>,
    stats: SolveStats,
}

impl<F: JointField + ?Sized> Guided<'_, F> {
    fn eval(&mut self, z_v: &Tensor, z_a: &Tensor, t: f64) -> Result<(Tensor, Tensor)> {
        self.stats.nfe += 1;
        self.stats.forwards += 1;
        let (cv, ca) = self.field.velocity(z_v, t, z_a, t, self.cond)?;
        match self.guidance {
            None => Ok((cv, ca)),
            Some(gd) => {
                self.stats.forwards += 1;
                let (uv, ua) = self.field.velocity(z_v, t, z_a, t, &gd.null_tokens)?;
                Ok((cfg_velocity(&cv, &uv, gd.scale_v)?, cfg_velocity(&ca, &ua, gd.scale_a)?))
            }
        }
    }
}

fn check_state(solver: &'static str, step: usize, z_v: &Tensor, z_a: &Tensor) -> Result<()> {
    if !z_v.is_finite() || !z_a.is_finite() {
        return Err(Error::numeric(solver, format!("non-finite state after step {step}")));
    }
    Ok(())
}

fn setup<'a, F: JointField + ?Sized>(
    field: &'a F,
    cond: &'a [usize],
    guidance: Option<&'a GuidanceConfig>,
) -> Result<Guided<'a, F>> {
    if let Some(g) = guidance {
        g.validate()?;
    }
    Ok(Guided { field, cond, guidance, stats: SolveStats::default() })
}

/// `z_{k+1} = z_k + (t_{k+1} - t_k) v(z_k, t_k)`.
pub fn euler_solve<F: JointField + ?Sized>(
    field: &F,
    z0_v: &Tensor,
    z0_a: &Tensor,
    cond: &[usize],
    schedule: &Schedule,
    guidance: Option<&GuidanceConfig>,
) -> Result<Solution> {
    let mut gf = setup(field, cond, guidance)?;
    let (mut z_v, mut z_a) = (z0_v.clone(), z0_a.clone());
    for (k, w) in schedule.grid().windows(2).enumerate() {
        let h = w[1] - w[0];
        let (vv, va) = gf.eval(&z_v, &z_a, w[0])?;
        z_v = z_v.add_scaled(&vv, h)?;
        z_a = z_a.add_scaled(&va, h)?;
        check_state("euler", k, &z_v, &z_a)?;
    }
    Ok(Solution { z_v, z_a, stats: gf.stats })
}

/// Second-order multistep predictor-corrector; needs at least two steps.
pub fn unipc_solve<F: JointField + ?Sized>(
    field: &F,
    z0_v: &Tensor,
    z0_a: &Tensor,
    cond: &[usize],
    schedule: &Schedule,
    guidance: Option<&GuidanceConfig>,
) -> Result<Solution> {
    let n = schedule.n_steps();
    if n < 2 {
        return Err(Error::Config(format!("unipc needs at least 2 steps, got {n}")));
    }
    let grid = schedule.grid();
    let mut gf = setup(field, cond, guidance)?;
    let (mut z_v, mut z_a) = (z0_v.clone(), z0_a.clone());
    let mut cur = gf.eval(&z_v, &z_a, grid[0])?;
    let mut prev: Option<((Tensor, Tensor), f64)> = None;
    for k in 0..n {
        let h = grid[k + 1] - grid[k];
        let (pv, pa) = match &prev {
            None => (z_v.add_scaled(&cur.0, h)?, z_a.add_scaled(&cur.1, h)?),
            Some(((ov, oa), h_prev)) => {
                let r = h / h_prev;
                let (a, b) = (h * (1.0 + 0.5 * r), -h * 0.5 * r);
                (
                    z_v.add_scaled(&cur.0.lincomb(a, ov, b)?, 1.0)?,
                    z_a.add_scaled(&cur.1.lincomb(a, oa, b)?, 1.0)?,
                )
            }
        };
        if k + 1 == n {
            z_v = pv;
            z_a = pa;
            check_state("unipc", k, &z_v, &z_a)?;
            break;
        }
        let next = gf.eval(&pv, &pa, grid[k + 1])?;
        (z_v, z_a) = match &prev {
            None => (
                z_v.add_scaled(&cur.0.lincomb(0.5 * h, &next.0, 0.5 * h)?, 1.0)?,
                z_a.add_scaled(&cur.1.lincomb(0.5 * h, &next.1, 0.5 * h)?, 1.0)?,
            ),
            Some(((ov, oa), h0)) => {
                let h0 = *h0;
                let w_next = h * (2.0 * h + 3.0 * h0) / (6.0 * (h + h0));
                let w_cur = h * (h + 3.0 * h0) / (6.0 * h0);
                let w_old = -h * h * h / (6.0 * h0 * (h0 + h));
                let step = |n: &Tensor, c: &Tensor, o: &Tensor| -> Result<Tensor> {
                    n.lincomb(w_next, c, w_cur)?.add_scaled(o, w_old)
                };
                (z_v.add_scaled(&step(&next.0, &cur.0, ov)?, 1.0)?, z_a.add_scaled(&step(&next.1, &cur.1, oa)?, 1.0)?)
            }
        };
        check_state("unipc", k, &z_v, &z_a)?;
        prev = Some((std::mem::replace(&mut cur, next), h));
    }
    Ok(Solution { z_v, z_a, stats: gf.stats })
}

pub fn solve<F: JointField + ?Sized>(
    solver: Solver,
    field: &F,
    z0_v: &Tensor,
    z0_a: &Tensor,
    cond: &[usize],
    schedule: &Schedule,
    guidance: Option<&GuidanceConfig>,
) -> Result<Solution> {
    match solver {
        Solver::Euler => euler_solve(field, z0_v, z0_a, cond, schedule, guidance),
        Solver::Unipc => unipc_solve(field, z0_v, z0_a, cond, schedule, guidance),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub solver: Solver,
    pub n_steps: usize,
    pub t_grid: Vec<f64>,
    pub guidance: Option<GuidanceConfig>,
    pub checkpoint_hash: String,
    pub prompt: String,
    pub tokens: Vec<usize>,
    pub nfe: usize,
    pub forwards: usize,
}

/// Initial noise for both towers, drawn from `seed` (video first).
pub fn initial_noise(model: &TwinModel, seed: u64) -> (Tensor, Tensor) {
    let cfg = model.config();
    let c = cfg.latent_channels;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zv = Tensor::randn(&[cfg.seq_len(Modality::Video), c], 1.0, &mut rng);
    let za = Tensor::randn(&[cfg.seq_len(Modality::Audio), c], 1.0, &mut rng);
    (zv, za)
}

/// Parses `prompt`, encodes it, and integrates both towers from seeded noise.
pub fn sample(
    model: &TwinModel,
    prompt: &str,
    seed: u64,
    solver: Solver,
    schedule: &Schedule,
    guidance: Option<&GuidanceConfig>,
) -> Result<(Tensor, Tensor, Provenance)> {
    let parsed = CombinedPrompt::parse(prompt)?;
    let tokens = encode_prompt(&parsed, model.config().vocab_size);
    let (z0_v, z0_a) = initial_noise(model, seed);
    let sol = solve(solver, model, &z0_v, &z0_a, &tokens, schedule, guidance)?;
    let prov = Provenance {
        seed,
        solver,
        n_steps: schedule.n_steps(),
        t_grid: schedule.grid().to_vec(),
        guidance: guidance.cloned(),
        checkpoint_hash: model.checkpoint_hash(),
        prompt: prompt.to_string(),
        tokens,
        nfe: sol.stats.nfe,
        forwards: sol.stats.forwards,
    };
    Ok((sol.z_v, sol.z_a, prov))
}
