use std::collections::HashMap;

use super::{matmul_raw, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, s: f64 },
    Transpose { a: usize },
    Reshape { a: usize },
    Sum { a: usize },
    Mean { a: usize },
    Gelu { a: usize },
    Silu { a: usize },
    Softmax { a: usize },
    RmsNorm { x: usize, w: usize, inv_rms: Vec<f64> },
    Embedding { table: usize, ids: Vec<usize> },
    Concat { parts: Vec<(usize, usize)> },
    Slice { a: usize, start: usize },
    Rotate { a: usize, cos: Vec<f64>, sin: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Append-only tape. Nodes are stored in creation order, which is a
/// topological order because every op only refers to existing nodes.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<usize, Var>,
}

/// Leaf gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of a leaf, or `None` when the leaf was unreachable or frozen.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// `(key, gradient)` for every keyed parameter that received a gradient.
    pub fn params(&self) -> impl Iterator<Item = (usize, &[f64])> + '_ {
        self.params
            .iter()
            .filter_map(|&(key, idx)| self.grads[idx].as_deref().map(|g| (key, g)))
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op: Op, shape: &[usize], data: Vec<f64>, needs_grad: bool, name: &'static str) -> Result<Var> {
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::numeric(name, format!("non-finite output {bad}")));
        }
        let value = Tensor::new(shape, data).map_err(|e| match e {
            Error::Shape { msg, .. } => Error::shape(name, msg),
            other => other,
        })?;
        self.nodes.push(Node { op, value, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Registers a leaf; it is differentiable iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let needs = t.requires_grad();
        let mut value = t.clone();
        value.zero_grad();
        self.nodes.push(Node { op: Op::Leaf, value, needs_grad: needs });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: &Tensor) -> Var {
        let mut value = t.clone();
        value.zero_grad();
        value.set_requires_grad(false);
        self.nodes.push(Node { op: Op::Leaf, value, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Registers an externally owned parameter under `key`. Repeated calls with
    /// the same key return the same leaf, so shared weights get one gradient.
    pub fn param(&mut self, key: usize, t: &Tensor, trainable: bool) -> Var {
        if let Some(&v) = self.params.get(&key) {
            return v;
        }
        let v = self.constant(t);
        self.nodes[v.0].needs_grad = trainable;
        self.params.insert(key, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::MatMul { a: a.0, b: b.0, m, k, n }, &[m, n], data, needs, "matmul")
    }

    fn check_suffix(&self, a: Var, b: Var, op: &'static str) -> Result<usize> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(Error::shape(op, format!("{sa:?} and {sb:?} do not broadcast")));
        }
        Ok(self.value(b).numel())
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let nb = self.check_suffix(a, b, name)?;
        let bd = self.value(b).data();
        let data = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bd[i % nb]))
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a) || self.needs(b);
        self.push(op, &shape, data, needs, name)
    }

    /// `a + b`, with `b` repeated over `a`'s leading extents when its shape is a suffix.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add { a: a.0, b: b.0 })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub { a: a.0, b: b.0 })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul { a: a.0, b: b.0 })
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let data = self.value(a).data().iter().map(|x| x * s).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a);
        self.push(Op::Scale { a: a.0, s }, &shape, data, needs, "scale")
    }

    pub fn transpose_last2(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let r = shape.len();
        if r < 2 {
            return Err(Error::shape("transpose_last2", format!("rank {r}")));
        }
        let (m, n) = (shape[r - 2], shape[r - 1]);
        let src = self.value(a).data();
        let mut data = vec![0.0; src.len()];
        for (bo, block) in src.chunks_exact(m * n).enumerate() {
            let dst = &mut data[bo * m * n..(bo + 1) * m * n];
            for i in 0..m {
                for j in 0..n {
                    dst[j * m + i] = block[i * n + j];
                }
            }
        }
        let mut out = shape;
        out.swap(r - 2, r - 1);
        let needs = self.needs(a);
        self.push(Op::Transpose { a: a.0 }, &out, data, needs, "transpose_last2")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(a).numel() {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", self.shape(a))));
        }
        let data = self.value(a).data().to_vec();
        let needs = self.needs(a);
        self.push(Op::Reshape { a: a.0 }, shape, data, needs, "reshape")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let needs = self.needs(a);
        self.push(Op::Sum { a: a.0 }, &[], vec![s], needs, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        let needs = self.needs(a);
        self.push(Op::Mean { a: a.0 }, &[], vec![s], needs, "mean")
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()))
            .collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a);
        self.push(Op::Gelu { a: a.0 }, &shape, data, needs, "gelu")
    }

    pub fn silu(&mut self, a: Var) -> Result<Var> {
        let data = self.value(a).data().iter().map(|&x| x * sigmoid(x)).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a);
        self.push(Op::Silu { a: a.0 }, &shape, data, needs, "silu")
    }

    /// Softmax over the last axis with max subtraction.
    pub fn softmax_lastdim(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.data().iter().any(|v| v.is_nan()) {
            return Err(Error::numeric("softmax_lastdim", "NaN input"));
        }
        let n = t.last_dim();
        let mut data = Vec::with_capacity(t.numel());
        for row in t.data().chunks_exact(n) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = data.len();
            data.extend(row.iter().map(|&x| (x - mx).exp()));
            let z: f64 = data[start..].iter().sum();
            data[start..].iter_mut().for_each(|v| *v /= z);
        }
        let shape = t.shape().to_vec();
        let needs = self.needs(a);
        self.push(Op::Softmax { a: a.0 }, &shape, data, needs, "softmax_lastdim")
    }

    /// `x * w / sqrt(mean(x^2) + eps)` over the last axis.
    pub fn rmsnorm(&mut self, x: Var, w: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(Error::Config(format!("rmsnorm eps must be > 0, got {eps}")));
        }
        let n = self.value(x).last_dim();
        if self.shape(w) != [n] {
            return Err(Error::shape(
                "rmsnorm",
                format!("weight {:?} vs last extent {n}", self.shape(w)),
            ));
        }
        let wd = self.value(w).data();
        let mut inv_rms = Vec::with_capacity(self.value(x).rows());
        let mut data = Vec::with_capacity(self.value(x).numel());
        for row in self.value(x).data().chunks_exact(n) {
            let ms = row.iter().map(|v| v * v).sum::<f64>() / n as f64;
            let r = 1.0 / (ms + eps).sqrt();
            inv_rms.push(r);
            data.extend(row.iter().zip(wd).map(|(v, w)| v * r * w));
        }
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x) || self.needs(w);
        self.push(Op::RmsNorm { x: x.0, w: w.0, inv_rms }, &shape, data, needs, "rmsnorm")
    }

    /// `x @ w + b` for `x: [M,K]`, `w: [K,N]`, `b: [N]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add(y, b),
            None => Ok(y),
        }
    }

    /// Row lookup into `table: [V, D]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let ts = self.shape(table);
        if ts.len() != 2 || ids.is_empty() {
            return Err(Error::shape("embedding", format!("table {ts:?}, {} ids", ids.len())));
        }
        let (vocab, d) = (ts[0], ts[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(Error::shape("embedding", format!("id {bad} >= vocab {vocab}")));
        }
        let tv = self.value(table);
        let data = ids.iter().flat_map(|&i| tv.row(i).iter().copied()).collect();
        let needs = self.needs(table);
        self.push(
            Op::Embedding { table: table.0, ids: ids.to_vec() },
            &[ids.len(), d],
            data,
            needs,
            "embedding",
        )
    }

    pub fn concat_lastdim(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat_lastdim", "no inputs"))?;
        let lead = &self.shape(*first)[..self.shape(*first).len() - 1];
        let rows = self.value(*first).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || &s[..s.len() - 1] != lead {
                return Err(Error::shape("concat_lastdim", format!("{s:?} vs leading {lead:?}")));
            }
            widths.push((p.0, self.value(p).last_dim()));
        }
        let total: usize = widths.iter().map(|w| w.1).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &(idx, w) in &widths {
                data.extend_from_slice(&self.nodes[idx].value.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(Op::Concat { parts: widths }, &shape, data, needs, "concat_lastdim")
    }

    pub fn slice_lastdim(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let n = t.last_dim();
        if len == 0 || start + len > n || t.rank() == 0 {
            return Err(Error::shape("slice_lastdim", format!("[{start}, {}) of {n}", start + len)));
        }
        let data = t
            .data()
            .chunks_exact(n)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let needs = self.needs(a);
        self.push(Op::Slice { a: a.0, start }, &shape, data, needs, "slice_lastdim")
    }

    /// Splits the last axis into `n` equal parts.
    pub fn chunk(&mut self, a: Var, n: usize) -> Result<Vec<Var>> {
        let d = self.value(a).last_dim();
        if n == 0 || d % n != 0 {
            return Err(Error::shape("chunk", format!("{d} not divisible by {n}")));
        }
        let w = d / n;
        (0..n).map(|i| self.slice_lastdim(a, i * w, w)).collect()
    }

    /// Rotates consecutive pairs `(2k, 2k+1)` of every row. `angles` is laid out
    /// `[rows_per_batch, last/2]` and repeats over the leading batch extents.
    pub fn rotate_pairs(&mut self, a: Var, angles: &[f64]) -> Result<Var> {
        let t = self.value(a);
        let d = t.last_dim();
        if d % 2 != 0 {
            return Err(Error::Config(format!("rotary width {d} must be even")));
        }
        let half = d / 2;
        let seq = if t.rank() >= 2 { t.shape()[t.rank() - 2] } else { 1 };
        if angles.len() != seq * half {
            return Err(Error::shape(
                "rotate_pairs",
                format!("{} angles for {seq} rows of {half} pairs", angles.len()),
            ));
        }
        let cos: Vec<f64> = angles.iter().map(|a| a.cos()).collect();
        let sin: Vec<f64> = angles.iter().map(|a| a.sin()).collect();
        let mut data = t.data().to_vec();
        rotate_rows(&mut data, d, seq, &cos, &sin, false);
        let shape = t.shape().to_vec();
        let needs = self.needs(a);
        self.push(Op::Rotate { a: a.0, cos, sin }, &shape, data, needs, "rotate_pairs")
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    /// Reverse pass from a scalar `loss`. Each node is visited once; gradients
    /// are retained for leaves only.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.needs(loss) {
            grads[loss.0] = Some(vec![1.0]);
        }
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gy) = grads[idx].take() else { continue };
            self.propagate(idx, &gy, &mut grads);
        }
        let mut params: Vec<_> = self.params.iter().map(|(&k, v)| (k, v.0)).collect();
        params.sort_unstable();
        Ok(Gradients { grads, params })
    }

    fn propagate(&self, idx: usize, gy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let val = |i: usize| self.nodes[i].value.data();
        let needs = |i: usize| self.nodes[i].needs_grad;
        let mut acc = |i: usize, g: Vec<f64>| {
            if !self.nodes[i].needs_grad {
                return;
            }
            match &mut grads[i] {
                Some(a) => a.iter_mut().zip(&g).for_each(|(x, y)| *x += y),
                slot @ None => *slot = Some(g),
            }
        };
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                if needs(a) {
                    let bt = transpose_raw(val(b), k, n);
                    acc(a, matmul_raw(gy, &bt, m, n, k));
                }
                if needs(b) {
                    let at = transpose_raw(val(a), m, k);
                    acc(b, matmul_raw(&at, gy, k, m, n));
                }
            }
            &Op::Add { a, b } | &Op::Sub { a, b } => {
                let sign = if matches!(node.op, Op::Sub { .. }) { -1.0 } else { 1.0 };
                if needs(a) {
                    acc(a, gy.to_vec());
                }
                if needs(b) {
                    let nb = self.nodes[b].value.numel();
                    let mut gb = vec![0.0; nb];
                    gy.iter().enumerate().for_each(|(i, g)| gb[i % nb] += sign * g);
                    acc(b, gb);
                }
            }
            &Op::Mul { a, b } => {
                let (av, bv) = (val(a), val(b));
                let nb = bv.len();
                if needs(a) {
                    acc(a, gy.iter().enumerate().map(|(i, g)| g * bv[i % nb]).collect());
                }
                if needs(b) {
                    let mut gb = vec![0.0; nb];
                    gy.iter().enumerate().for_each(|(i, g)| gb[i % nb] += g * av[i]);
                    acc(b, gb);
                }
            }
            &Op::Scale { a, s } => acc(a, gy.iter().map(|g| g * s).collect()),
            &Op::Transpose { a } => {
                let s = node.value.shape();
                let (m, n) = (s[s.len() - 2], s[s.len() - 1]);
                let g = gy
                    .chunks_exact(m * n)
                    .flat_map(|blk| transpose_raw(blk, m, n))
                    .collect();
                acc(a, g);
            }
            &Op::Reshape { a } => acc(a, gy.to_vec()),
            &Op::Sum { a } => acc(a, vec![gy[0]; val(a).len()]),
            &Op::Mean { a } => {
                let n = val(a).len();
                acc(a, vec![gy[0] / n as f64; n]);
            }
            &Op::Gelu { a } => {
                let g = val(a)
                    .iter()
                    .zip(gy)
                    .map(|(&x, g)| {
                        let th = (GELU_C * (x + GELU_A * x * x * x)).tanh();
                        let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
                        g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du)
                    })
                    .collect();
                acc(a, g);
            }
            &Op::Silu { a } => {
                let g = val(a)
                    .iter()
                    .zip(gy)
                    .map(|(&x, g)| {
                        let s = sigmoid(x);
                        g * s * (1.0 + x * (1.0 - s))
                    })
                    .collect();
                acc(a, g);
            }
            &Op::Softmax { a } => {
                let y = node.value.data();
                let n = node.value.last_dim();
                let mut g = Vec::with_capacity(y.len());
                for (yr, gr) in y.chunks_exact(n).zip(gy.chunks_exact(n)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    g.extend(yr.iter().zip(gr).map(|(y, g)| y * (g - dot)));
                }
                acc(a, g);
            }
            Op::RmsNorm { x, w, inv_rms } => {
                let (x, w) = (*x, *w);
                let (xv, wv) = (val(x), val(w));
                let n = wv.len();
                if needs(x) {
                    let mut g = Vec::with_capacity(xv.len());
                    for ((xr, gr), &r) in xv.chunks_exact(n).zip(gy.chunks_exact(n)).zip(inv_rms) {
                        let dot: f64 = xr.iter().zip(gr).zip(wv).map(|((x, g), w)| x * g * w).sum();
                        let c = r * r * r * dot / n as f64;
                        g.extend(xr.iter().zip(gr).zip(wv).map(|((x, g), w)| g * w * r - x * c));
                    }
                    acc(x, g);
                }
                if needs(w) {
                    let mut g = vec![0.0; n];
                    for ((xr, gr), &r) in xv.chunks_exact(n).zip(gy.chunks_exact(n)).zip(inv_rms) {
                        g.iter_mut().zip(xr.iter().zip(gr)).for_each(|(o, (x, g))| *o += g * x * r);
                    }
                    acc(w, g);
                }
            }
            Op::Embedding { table, ids } => {
                let d = node.value.last_dim();
                let mut g = vec![0.0; val(*table).len()];
                for (r, &id) in ids.iter().enumerate() {
                    g[id * d..(id + 1) * d]
                        .iter_mut()
                        .zip(&gy[r * d..(r + 1) * d])
                        .for_each(|(o, v)| *o += v);
                }
                acc(*table, g);
            }
            Op::Concat { parts } => {
                let total = node.value.last_dim();
                let rows = node.value.rows();
                let mut off = 0;
                for &(p, w) in parts {
                    if needs(p) {
                        let g = (0..rows)
                            .flat_map(|r| gy[r * total + off..r * total + off + w].iter().copied())
                            .collect();
                        acc(p, g);
                    }
                    off += w;
                }
            }
            &Op::Slice { a, start } => {
                let w = node.value.last_dim();
                let n = self.nodes[a].value.last_dim();
                let mut g = vec![0.0; val(a).len()];
                for (r, gr) in gy.chunks_exact(w).enumerate() {
                    g[r * n + start..r * n + start + w].copy_from_slice(gr);
                }
                acc(a, g);
            }
            Op::Rotate { a, cos, sin } => {
                let s = node.value.shape();
                let d = node.value.last_dim();
                let seq = if s.len() >= 2 { s[s.len() - 2] } else { 1 };
                let mut g = gy.to_vec();
                rotate_rows(&mut g, d, seq, cos, sin, true);
                acc(*a, g);
            }
        }
    }
}

fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// In-place pair rotation; `inverse` applies the transpose (used for gradients).
fn rotate_rows(data: &mut [f64], d: usize, seq: usize, cos: &[f64], sin: &[f64], inverse: bool) {
    let half = d / 2;
    for (r, row) in data.chunks_exact_mut(d).enumerate() {
        let p = r % seq;
        for k in 0..half {
            let (c, s) = (cos[p * half + k], sin[p * half + k]);
            let s = if inverse { -s } else { s };
            let (x0, x1) = (row[2 * k], row[2 * k + 1]);
            row[2 * k] = x0 * c - x1 * s;
            row[2 * k + 1] = x0 * s + x1 * c;
        }
    }
}
