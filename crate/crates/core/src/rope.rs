//! Rotary positional embeddings with a per-modality position scale, and the
//! audio-by-video affinity matrices used to inspect temporal alignment.
//!
//! Scaling the audio positions by `L_v / L_a` puts an audio token at index
//! `i` on the same rotary phase as the video token at `i * L_v / L_a`, so
//! tokens that occur at the same wall-clock time line up in attention.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};
use crate::util::write_atomic;

pub const DEFAULT_ROPE_BASE: f64 = 10_000.0;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RopeConfig {
    pub head_dim: usize,
    pub base: f64,
    /// Multiplier on integer token positions (1.0 for video, `L_v / L_a` for audio).
    pub scale: f64,
}

impl RopeConfig {
    pub fn new(head_dim: usize, base: f64, scale: f64) -> Result<Self> {
        let cfg = Self { head_dim, base, scale };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn unscaled(head_dim: usize) -> Result<Self> {
        Self::new(head_dim, DEFAULT_ROPE_BASE, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.head_dim == 0 || self.head_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "rope head_dim must be even and positive, got {}",
                self.head_dim
            )));
        }
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::Config(format!("rope scale must be > 0, got {}", self.scale)));
        }
        if !(self.base > 1.0) || !self.base.is_finite() {
            return Err(Error::Config(format!("rope base must be > 1, got {}", self.base)));
        }
        Ok(())
    }

    /// `base^(-2k / head_dim)` for `k in 0..head_dim/2`.
    pub fn frequencies(&self) -> Vec<f64> {
        let d = self.head_dim as f64;
        (0..self.head_dim / 2)
            .map(|k| self.base.powf(-2.0 * k as f64 / d))
            .collect()
    }

    /// Rotation angles laid out `[seq_len, head_dim/2]`.
    pub fn angles(&self, seq_len: usize) -> Vec<f64> {
        let freqs = self.frequencies();
        (0..seq_len)
            .flat_map(|p| {
                let pos = self.scale * p as f64;
                freqs.iter().map(move |f| f * pos).collect::<Vec<_>>()
            })
            .collect()
    }

    /// Differentiable rotation of `x: [.., seq, head_dim]`.
    pub fn apply(&self, g: &mut Graph, x: Var) -> Result<Var> {
        self.validate()?;
        let shape = g.shape(x);
        if shape.last() != Some(&self.head_dim) {
            return Err(Error::shape(
                "apply_rope",
                format!("last extent of {shape:?} != head_dim {}", self.head_dim),
            ));
        }
        let seq = if shape.len() >= 2 { shape[shape.len() - 2] } else { 1 };
        let angles = self.angles(seq);
        g.rotate_pairs(x, &angles)
    }

    /// Same rotation outside a graph.
    pub fn apply_tensor(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let v = g.constant(x);
        let y = self.apply(&mut g, v)?;
        Ok(g.value(y).clone())
    }
}

/// Rotary affinities between audio rows and video columns.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl AffinityMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || values.len() != rows * cols {
            return Err(Error::shape(
                "affinity",
                format!("{rows}x{cols} with {} values", values.len()),
            ));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    /// Column of the row maximum. Entries within `1e-9` of the maximum count
    /// as tied and the highest such column wins, which matches rounding
    /// half-way positions upward.
    pub fn argmax_row(&self, i: usize) -> usize {
        let row = self.row(i);
        let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.iter().rposition(|&v| v >= mx - 1e-9).unwrap_or(0)
    }

    pub fn argmax_trace(&self) -> Vec<usize> {
        (0..self.rows).map(|i| self.argmax_row(i)).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("audio_pos,video_pos,affinity\n");
        for i in 0..self.rows {
            for j in 0..self.cols {
                let _ = writeln!(s, "{i},{j},{}", self.get(i, j));
            }
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some("audio_pos,video_pos,affinity") => {}
            other => return Err(Error::Format(format!("bad affinity header {other:?}"))),
        }
        let mut entries = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad = || Error::Record { line: n + 2, msg: format!("bad affinity row {line:?}") };
            let mut it = line.split(',');
            let i: usize = it.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let j: usize = it.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let v: f64 = it.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            entries.push((i, j, v));
        }
        let rows = entries.iter().map(|e| e.0 + 1).max().unwrap_or(0);
        let cols = entries.iter().map(|e| e.1 + 1).max().unwrap_or(0);
        if entries.len() != rows * cols {
            return Err(Error::Format("affinity CSV is not a full grid".into()));
        }
        let mut values = vec![0.0; rows * cols];
        for (i, j, v) in entries {
            values[i * cols + j] = v;
        }
        Self::new(rows, cols, values)
    }

    /// Binary PGM (P5, maxval 255), min-max normalized; a constant matrix maps to 0.
    pub fn to_pgm(&self) -> Vec<u8> {
        to_pgm(self.rows, self.cols, &self.values)
    }

    /// Writes `<stem>.csv` and `<stem>.pgm`.
    pub fn export(&self, stem: impl AsRef<Path>) -> Result<()> {
        let stem = stem.as_ref();
        write_atomic(stem.with_extension("csv"), self.to_csv().as_bytes())?;
        write_atomic(stem.with_extension("pgm"), &self.to_pgm())
    }
}

pub fn to_pgm(rows: usize, cols: usize, values: &[f64]) -> Vec<u8> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    out.extend(values.iter().map(|&v| {
        if hi > lo {
            (255.0 * (v - lo) / (hi - lo)).round() as u8
        } else {
            0
        }
    }));
    out
}

/// Parses a P5 image back into `(rows, cols, pixels)`.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(Error::Format(format!("unsupported PGM header {fields:?}")));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PGM extent {s}")));
    let (cols, rows) = (parse(&fields[1])?, parse(&fields[2])?);
    let pixels = bytes.get(pos..).unwrap_or_default().to_vec();
    if pixels.len() != rows * cols {
        return Err(Error::Format("PGM payload size mismatch".into()));
    }
    Ok((rows, cols, pixels))
}

/// Entry `(i, j)` is the dot product of a fixed probe (every pair set to
/// `(1, 1) / sqrt(2)`) rotated to audio position `i` with the same probe
/// rotated to video position `j`.
pub fn affinity_matrix(l_a: usize, l_v: usize, cfg_a: &RopeConfig, cfg_v: &RopeConfig) -> Result<AffinityMatrix> {
    if l_a == 0 || l_v == 0 {
        return Err(Error::Config(format!("affinity lengths must be >= 1, got {l_a}x{l_v}")));
    }
    cfg_a.validate()?;
    cfg_v.validate()?;
    if cfg_a.head_dim != cfg_v.head_dim {
        return Err(Error::Config("audio and video head_dim differ".into()));
    }
    let d = cfg_a.head_dim;
    let probe = |n: usize| Tensor::full(&[n, d], std::f64::consts::FRAC_1_SQRT_2);
    let qa = cfg_a.apply_tensor(&probe(l_a))?;
    let kv = cfg_v.apply_tensor(&probe(l_v))?;
    let mut values = Vec::with_capacity(l_a * l_v);
    for i in 0..l_a {
        for j in 0..l_v {
            values.push(qa.row(i).iter().zip(kv.row(j)).map(|(a, b)| a * b).sum());
        }
    }
    AffinityMatrix::new(l_a, l_v, values)
}

/// `round(i * l_v / l_a)` clamped to the video range: the column a
/// well-aligned audio row should peak at.
pub fn aligned_column(i: usize, l_a: usize, l_v: usize) -> usize {
    ((i as f64 * l_v as f64 / l_a as f64).round() as usize).min(l_v - 1)
}
