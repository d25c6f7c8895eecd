//! Clip admission rules over precomputed metadata. Scores from external models
//! (sync offset/confidence, motion, aesthetics, face counts) are inputs here;
//! only the decision logic lives in this crate.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipMetadata {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub n_frames: u32,
    pub fps: f64,
    pub motion_score: f64,
    pub aesthetic_score: f64,
    pub sync_offset: i64,
    pub sync_confidence: f64,
    pub mean_volume_db: f64,
    pub face_count: u32,
    pub caption: String,
}

/// A JSONL record before completeness is checked. Type errors are parse
/// errors; absent fields become a `missing_field` rejection.
#[derive(Clone, Debug, Default, Deserialize)]
pub struct ClipRecord {
    pub id: Option<String>,
    pub width: Option<u32>,
    pub height: Option<u32>,
    pub n_frames: Option<u32>,
    pub fps: Option<f64>,
    pub motion_score: Option<f64>,
    pub aesthetic_score: Option<f64>,
    pub sync_offset: Option<i64>,
    pub sync_confidence: Option<f64>,
    pub mean_volume_db: Option<f64>,
    pub face_count: Option<u32>,
    pub caption: Option<String>,
}

impl ClipRecord {
    /// Parses one JSONL line; `line` is 1-based and only used in errors.
    pub fn parse_line(text: &str, line: usize) -> Result<Self> {
        let rec: ClipRecord =
            serde_json::from_str(text).map_err(|e| Error::Record { line, msg: e.to_string() })?;
        let bad = |msg: &str| Err(Error::Record { line, msg: msg.into() });
        if rec.width == Some(0) || rec.height == Some(0) {
            return bad("width and height must be positive");
        }
        if rec.fps.is_some_and(|f| !(f > 0.0) || !f.is_finite()) {
            return bad("fps must be positive");
        }
        Ok(rec)
    }

    pub fn complete(self) -> Option<ClipMetadata> {
        Some(ClipMetadata {
            id: self.id?,
            width: self.width?,
            height: self.height?,
            n_frames: self.n_frames?,
            fps: self.fps?,
            motion_score: self.motion_score?,
            aesthetic_score: self.aesthetic_score?,
            sync_offset: self.sync_offset?,
            sync_confidence: self.sync_confidence?,
            mean_volume_db: self.mean_volume_db?,
            face_count: self.face_count?,
            caption: self.caption?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AreaMode {
    /// `width * height > min_area_px`.
    Area,
    /// Both sides longer than `sqrt(min_area_px)`.
    PerSide,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterPolicy {
    pub min_area_px: u64,
    pub area_mode: AreaMode,
    pub required_frames: u32,
    pub required_fps: f64,
    pub max_abs_offset: i64,
    /// Strict lower bound on sync confidence.
    pub min_confidence: f64,
    /// Inclusive lower bound on mean volume.
    pub min_volume_db: f64,
    pub motion_min: Option<f64>,
    pub aesthetic_min: Option<f64>,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self {
            min_area_px: 518_400,
            area_mode: AreaMode::Area,
            required_frames: 121,
            required_fps: 24.0,
            max_abs_offset: 3,
            min_confidence: 1.5,
            min_volume_db: -60.0,
            motion_min: None,
            aesthetic_min: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    MissingField,
    Resolution,
    NFrames,
    Fps,
    SyncOffset,
    SyncConfidence,
    MeanVolumeDb,
    MotionScore,
    AestheticScore,
}

impl RejectReason {
    pub fn name(self) -> &'static str {
        match self {
            RejectReason::MissingField => "missing_field",
            RejectReason::Resolution => "resolution",
            RejectReason::NFrames => "n_frames",
            RejectReason::Fps => "fps",
            RejectReason::SyncOffset => "sync_offset",
            RejectReason::SyncConfidence => "sync_confidence",
            RejectReason::MeanVolumeDb => "mean_volume_db",
            RejectReason::MotionScore => "motion_score",
            RejectReason::AestheticScore => "aesthetic_score",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Keep,
    Reject(RejectReason),
}

impl Decision {
    pub fn is_keep(self) -> bool {
        self == Decision::Keep
    }
}

const FPS_TOLERANCE: f64 = 1e-6;

/// Applies the rules in a fixed order and names the first one that fails.
pub fn filter_clip(m: &ClipMetadata, p: &FilterPolicy) -> Decision {
    use RejectReason::*;
    let area_ok = match p.area_mode {
        AreaMode::Area => m.width as u64 * m.height as u64 > p.min_area_px,
        AreaMode::PerSide => {
            let side = (p.min_area_px as f64).sqrt();
            m.width as f64 > side && m.height as f64 > side
        }
    };
    let checks = [
        (area_ok, Resolution),
        (m.n_frames == p.required_frames, NFrames),
        ((m.fps - p.required_fps).abs() <= FPS_TOLERANCE, Fps),
        (m.sync_offset.abs() <= p.max_abs_offset, SyncOffset),
        (m.sync_confidence > p.min_confidence, SyncConfidence),
        (m.mean_volume_db >= p.min_volume_db, MeanVolumeDb),
        (p.motion_min.is_none_or(|t| m.motion_score >= t), MotionScore),
        (p.aesthetic_min.is_none_or(|t| m.aesthetic_score >= t), AestheticScore),
    ];
    checks
        .into_iter()
        .find(|(ok, _)| !ok)
        .map_or(Decision::Keep, |(_, r)| Decision::Reject(r))
}

pub fn filter_record(r: ClipRecord, p: &FilterPolicy) -> Decision {
    match r.complete() {
        Some(m) => filter_clip(&m, p),
        None => Decision::Reject(RejectReason::MissingField),
    }
}
