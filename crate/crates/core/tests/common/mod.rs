#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twinflow::{Graph, Result, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| r.random_range(lo..hi))
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Reduces `y` to a scalar through fixed random weights so every output
/// element contributes a distinct gradient.
pub fn weighted_sum(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let w = uniform(g.shape(y), -1.0, 1.0, seed ^ 0xabcdef);
    let wv = g.constant(&w);
    let p = g.mul(y, wv)?;
    g.sum(p)
}

/// Largest relative error between reverse-mode and central-difference
/// gradients of `f` with respect to every element of every input.
pub fn fd_check<F>(inputs: &[Tensor], floor: f64, f: F) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.leaf(x)).collect();
        let out = f(&mut g, &vars).unwrap();
        g.value(out).item()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.leaf(&x.clone().with_grad())).collect();
    let out = f(&mut g, &vars).unwrap();
    let grads = g.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (k, x) in inputs.iter().enumerate() {
        let analytic = grads.wrt(vars[k]).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.numel()]);
        for i in 0..x.numel() {
            let mut xs = inputs.to_vec();
            xs[k].data_mut()[i] += FD_STEP;
            let up = eval(&xs);
            xs[k].data_mut()[i] -= 2.0 * FD_STEP;
            let down = eval(&xs);
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[i], numeric, floor));
        }
    }
    worst
}

/// Toy model with every parameter redrawn, so zero-initialized projections
/// and heads carry signal.
pub fn perturbed_toy(seed: u64) -> twinflow::model::TwinModel {
    use rand_distr::StandardNormal;
    let mut m = twinflow::model::TwinModel::build(twinflow::model::TwinModelConfig::toy(), seed).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    for p in m.params_mut().iter_mut() {
        let fan = if p.tensor.rank() == 2 { p.tensor.shape()[0] as f64 } else { 4.0 };
        let std = 1.0 / fan.sqrt();
        for x in p.tensor.data_mut() {
            *x += std * r.sample::<f64, _>(StandardNormal);
        }
    }
    m
}
