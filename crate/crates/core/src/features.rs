//! Per-frame geometric features: for every landmark, the unit vector and
//! distance from the point of gaze to that landmark, plus the speaking
//! context. Distances are robust-scaled per landmark before they reach the
//! model.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{intersect, GeometryError, ScreenModel};
use crate::ingest::{FrameRecord, Gaze, Landmarks, Point2, SpeakingContext, N_LANDMARKS};
use crate::stats::quantile_sorted;

/// Components per landmark: unit x, unit y, magnitude.
pub const GEOM_COMPONENTS: usize = 3;
pub const IQR_FLOOR: f64 = 1e-6;

/// Landmark order used throughout the pipeline.
pub const LANDMARK_NAMES: [&str; N_LANDMARKS] = ["left_eye", "right_eye", "nose_tip", "mouth_center", "face_side", "chin"];
pub const NOSE: usize = 2;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("non-finite input coordinate")]
    NonFinite,
    #[error("ray stream needs a screen model in the header")]
    MissingScreen,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("scaler needs at least 4 frames, got {0}")]
    TooFewFrames(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureFrame {
    pub ux: [f64; N_LANDMARKS],
    pub uy: [f64; N_LANDMARKS],
    pub mag: [f64; N_LANDMARKS],
    pub ctx: SpeakingContext,
}

/// PoG -> landmark vectors. A landmark exactly at the PoG gets a zero unit
/// vector.
pub fn featurize(pog: Point2, lm: &Landmarks, ctx: SpeakingContext) -> Result<FeatureFrame, FeatureError> {
    if !pog.iter().chain(lm.iter().flatten()).all(|v| v.is_finite()) {
        return Err(FeatureError::NonFinite);
    }
    let mut out = FeatureFrame { ux: [0.0; N_LANDMARKS], uy: [0.0; N_LANDMARKS], mag: [0.0; N_LANDMARKS], ctx };
    for (j, p) in lm.iter().enumerate() {
        let dx = p[0] - pog[0];
        let dy = p[1] - pog[1];
        let mag = dx.hypot(dy);
        out.mag[j] = mag;
        if mag > 0.0 {
            out.ux[j] = dx / mag;
            out.uy[j] = dy / mag;
        }
    }
    Ok(out)
}

/// Resolves the frame's PoG (intersecting rays with `screen` when needed).
pub fn frame_pog(frame: &FrameRecord, screen: Option<&ScreenModel>) -> Result<Point2, FeatureError> {
    match &frame.gaze {
        Gaze::Pog(p) => Ok(*p),
        Gaze::Ray(r) => {
            let screen = screen.ok_or(FeatureError::MissingScreen)?;
            let pog = intersect(r, screen)?;
            Ok([pog.x_px, pog.y_px])
        }
    }
}

pub fn featurize_record(frame: &FrameRecord, screen: Option<&ScreenModel>) -> Result<FeatureFrame, FeatureError> {
    featurize(frame_pog(frame, screen)?, &frame.landmarks, frame.ctx)
}

/// Featurizes a whole stream; `screen` is needed only for ray streams.
pub fn featurize_frames(frames: &[FrameRecord], screen: Option<&ScreenModel>) -> Result<Vec<FeatureFrame>, FeatureError> {
    frames.iter().map(|f| featurize_record(f, screen)).collect()
}

/// Per-landmark median/IQR statistics of training magnitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustScaler {
    pub median: [f64; N_LANDMARKS],
    pub iqr: [f64; N_LANDMARKS],
}

impl Default for RobustScaler {
    /// Identity scaling.
    fn default() -> Self {
        Self { median: [0.0; N_LANDMARKS], iqr: [1.0; N_LANDMARKS] }
    }
}

pub fn fit_scaler(frames: &[FeatureFrame]) -> Result<RobustScaler, FeatureError> {
    if frames.len() < 4 {
        return Err(FeatureError::TooFewFrames(frames.len()));
    }
    let mut scaler = RobustScaler::default();
    let mut col = Vec::with_capacity(frames.len());
    for j in 0..N_LANDMARKS {
        col.clear();
        col.extend(frames.iter().map(|f| f.mag[j]));
        col.sort_by(f64::total_cmp);
        scaler.median[j] = quantile_sorted(&col, 0.5);
        let iqr = quantile_sorted(&col, 0.75) - quantile_sorted(&col, 0.25);
        scaler.iqr[j] = iqr.max(IQR_FLOOR);
    }
    Ok(scaler)
}

/// `mag' = (mag - median) / iqr`. Not idempotent: applying twice rescales twice.
pub fn apply_scaler(frame: &FeatureFrame, scaler: &RobustScaler) -> FeatureFrame {
    let mut out = *frame;
    for j in 0..N_LANDMARKS {
        out.mag[j] = (frame.mag[j] - scaler.median[j]) / scaler.iqr[j];
    }
    out
}

pub fn scale_frames(frames: &[FeatureFrame], scaler: &RobustScaler) -> Vec<FeatureFrame> {
    frames.iter().map(|f| apply_scaler(f, scaler)).collect()
}
