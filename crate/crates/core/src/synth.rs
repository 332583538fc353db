//! Synthetic dyadic-gaze streams for three actor profiles (genuine, a
//! live-swap-like fake and a single-image-swap-like fake), calibrated to
//! published distance-to-nose dispersion figures.
//!
//! Gaze is a regime-switching process: fixation targets are drawn from a
//! mixture over face regions whose off-face share depends on who is
//! speaking, fixation durations are lognormal, saccades are instantaneous,
//! and the result is perturbed by Ornstein-Uhlenbeck micro-jitter, optional
//! single-frame glitches and tracker error (a slow bias plus white noise).

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{self, Execution};
use crate::features::{frame_pog, FeatureError, NOSE};
use crate::geometry::{ray_through_pixel, ScreenModel};
use crate::ingest::{
    ClassLabel, ContextSegment, FrameRecord, Gaze, GazeKind, Landmarks, Point2, SpeakingContext, StreamHeader, DEFAULT_FPS,
};
use crate::rng::{mix_seed, stream_rng};
use crate::spectral::{average_psd, PsdEstimate, SpectralError, WELCH_OVERLAP, WINDOW_LEN};
use crate::stats;

pub const MIN_SCRIPT_MS: u64 = 60_000;
pub const MIN_VERIFY_FRAMES: usize = 1800;
/// Calibration tolerance on each statistic.
pub const CALIBRATION_TOLERANCE: f64 = 0.10;
pub const MAX_CALIBRATION_ITERATIONS: usize = 25;
/// Bisection stops once the probe STD is this close to the target.
const STD_CONVERGED: f64 = 0.005;
const PROBE_MS: u64 = 600_000;

const GENUINE: &str = "genuine";
const DFLIVE: &str = "dflive";
const FACESHIFTER: &str = "faceshifter";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("script must cover at least {MIN_SCRIPT_MS} ms, got {0}")]
    ScriptTooShort(u64),
    #[error("invalid profile: {0}")]
    InvalidProfile(String),
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("need at least {MIN_VERIFY_FRAMES} frames, got {0}")]
    TooShort(usize),
    #[error("calibration did not converge after {iterations} iterations (mad {:.2}, std {:.2}, iqr {:.2})", achieved.mad, achieved.std, achieved.iqr)]
    NonConvergence { iterations: usize, achieved: Dispersion },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorProfile {
    pub name: String,
    /// Multiplier on fixation scatter around region anchors and on off-face distance.
    pub dispersion_scale: f64,
    /// Stationary std (px) of the micro-jitter process.
    pub jitter_power: f64,
    /// Per-frame probability of a single-frame discontinuous jump.
    pub abruptness: f64,
    /// Relative increase of the off-face share while the tracked party speaks.
    pub context_gain: f64,
    /// Fixation-duration multiplier.
    pub stationarity: f64,
    /// Mean of the exponential tail added to the off-face radius (px, before scaling).
    pub offface_tail_px: f64,
}

impl ActorProfile {
    pub fn genuine() -> Self {
        Self {
            name: GENUINE.into(),
            dispersion_scale: 0.9062,
            jitter_power: 10.0,
            abruptness: 0.0,
            context_gain: 0.8,
            stationarity: 1.0,
            offface_tail_px: 500.0,
        }
    }

    pub fn dflive() -> Self {
        Self {
            name: DFLIVE.into(),
            dispersion_scale: 1.1578,
            jitter_power: 12.0,
            abruptness: 0.005,
            context_gain: 0.8,
            stationarity: 1.0,
            offface_tail_px: 450.0,
        }
    }

    pub fn faceshifter() -> Self {
        Self {
            name: FACESHIFTER.into(),
            dispersion_scale: 0.5566,
            jitter_power: 6.0,
            abruptness: 0.002,
            context_gain: 0.4,
            stationarity: 1.5,
            offface_tail_px: 450.0,
        }
    }

    /// Genuine, live-swap and single-image-swap defaults, in that order.
    pub fn defaults() -> Vec<Self> {
        vec![Self::genuine(), Self::dflive(), Self::faceshifter()]
    }

    pub fn label(&self) -> ClassLabel {
        if self.name == GENUINE {
            ClassLabel::Genuine
        } else {
            ClassLabel::Fake
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let fields = [
            ("dispersion_scale", self.dispersion_scale),
            ("jitter_power", self.jitter_power),
            ("abruptness", self.abruptness),
            ("context_gain", self.context_gain),
            ("stationarity", self.stationarity),
            ("offface_tail_px", self.offface_tail_px),
        ];
        if let Some((k, v)) = fields.iter().find(|(_, v)| !v.is_finite() || *v < 0.0) {
            return Err(SynthError::InvalidProfile(format!("{}: {k} = {v} must be finite and non-negative", self.name)));
        }
        if self.abruptness > 1.0 || self.stationarity == 0.0 || self.context_gain > 2.0 {
            return Err(SynthError::InvalidProfile(format!("{}: need abruptness <= 1, stationarity > 0, context_gain <= 2", self.name)));
        }
        if self.name == GENUINE && self.abruptness != 0.0 {
            return Err(SynthError::InvalidProfile("genuine profile must have abruptness 0".into()));
        }
        Ok(())
    }

    fn with_traits(&self, t: SubjectTraits) -> Self {
        Self { dispersion_scale: self.dispersion_scale * t.scale, jitter_power: self.jitter_power * t.jitter, ..self.clone() }
    }
}

/// Distance-to-nose dispersion targets (px).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationTarget {
    pub mad: f64,
    pub std: f64,
    pub iqr: f64,
}

impl CalibrationTarget {
    pub const ORIGINAL: Self = Self { mad: 200.24, std: 321.68, iqr: 413.54 };
    pub const DFLIVE: Self = Self { mad: 245.08, std: 361.83, iqr: 499.80 };
    pub const FACESHIFTER: Self = Self { mad: 130.84, std: 225.91, iqr: 269.75 };

    /// Published target for a default profile name.
    pub fn for_profile(name: &str) -> Option<Self> {
        match name {
            GENUINE => Some(Self::ORIGINAL),
            DFLIVE => Some(Self::DFLIVE),
            FACESHIFTER => Some(Self::FACESHIFTER),
            _ => None,
        }
    }

    /// Largest relative deviation of `d` from the target over the three statistics.
    pub fn worst_error(&self, d: &Dispersion) -> f64 {
        [(d.mad, self.mad), (d.std, self.std), (d.iqr, self.iqr)].iter().map(|(a, t)| (a / t - 1.0).abs()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScriptParams {
    pub turn_median_ms: f64,
    pub turn_sigma: f64,
    /// Chance of a Both segment at a turn change.
    pub overlap_probability: f64,
    pub overlap_median_ms: f64,
    /// Chance of a Neither segment at a turn change (when there is no overlap).
    pub pause_probability: f64,
    pub pause_median_ms: f64,
    pub gap_sigma: f64,
}

impl Default for ScriptParams {
    fn default() -> Self {
        Self {
            turn_median_ms: 4000.0,
            turn_sigma: 0.6,
            overlap_probability: 0.2,
            overlap_median_ms: 700.0,
            pause_probability: 0.3,
            pause_median_ms: 800.0,
            gap_sigma: 0.4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptSegment {
    pub duration_ms: u64,
    pub ctx: SpeakingContext,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationScript {
    pub segments: Vec<ScriptSegment>,
    pub mean_turn_ms: f64,
    pub pause_probability: f64,
}

impl ConversationScript {
    pub fn total_ms(&self) -> u64 {
        self.segments.iter().map(|s| s.duration_ms).sum()
    }

    pub fn context_segments(&self) -> Vec<ContextSegment> {
        let mut t = 0;
        self.segments
            .iter()
            .map(|s| {
                let seg = ContextSegment { start_ms: t, end_ms: t + s.duration_ms, ctx: s.ctx };
                t += s.duration_ms;
                seg
            })
            .collect()
    }
}

fn lognormal(rng: &mut ChaCha8Rng, median: f64, sigma: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    median * (sigma * z).exp()
}

/// Alternating speaker turns with lognormal lengths, occasional overlaps
/// (Both) and pauses (Neither). Durations sum exactly to `total_ms`.
pub fn generate_script(total_ms: u64, seed: u64, params: &ScriptParams) -> Result<ConversationScript, SynthError> {
    if total_ms < MIN_SCRIPT_MS {
        return Err(SynthError::ScriptTooShort(total_ms));
    }
    let mut rng = stream_rng(seed, 1);
    let mut segments = Vec::new();
    let mut t = 0u64;
    let mut tracked = rng.random::<bool>();
    let push = |segments: &mut Vec<ScriptSegment>, t: &mut u64, ms: f64, ctx| {
        let d = (ms.round() as u64).clamp(1, total_ms - *t);
        segments.push(ScriptSegment { duration_ms: d, ctx });
        *t += d;
    };
    let (mut turns, mut turn_ms) = (0usize, 0u64);
    while t < total_ms {
        let ctx = if tracked { SpeakingContext::TrackedSpeaking } else { SpeakingContext::PartnerSpeaking };
        let before = t;
        push(&mut segments, &mut t, lognormal(&mut rng, params.turn_median_ms, params.turn_sigma), ctx);
        turns += 1;
        turn_ms += t - before;
        if t >= total_ms {
            break;
        }
        let r: f64 = rng.random();
        if r < params.overlap_probability {
            push(&mut segments, &mut t, lognormal(&mut rng, params.overlap_median_ms, params.gap_sigma), SpeakingContext::Both);
        } else if r < params.overlap_probability + params.pause_probability {
            push(&mut segments, &mut t, lognormal(&mut rng, params.pause_median_ms, params.gap_sigma), SpeakingContext::Neither);
        }
        tracked = !tracked;
    }
    Ok(ConversationScript { segments, mean_turn_ms: turn_ms as f64 / turns as f64, pause_probability: params.pause_probability })
}

/// Dwell shares of fixation regions (normalized on use).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegionWeights {
    pub eyes: f64,
    pub nose: f64,
    pub mouth: f64,
    pub rest_of_face: f64,
    pub off_face: f64,
}

impl Default for RegionWeights {
    fn default() -> Self {
        Self { eyes: 0.40, nose: 0.15, mouth: 0.15, rest_of_face: 0.15, off_face: 0.15 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub fps: f64,
    pub screen: ScreenModel,
    /// Face center of the partner in screen pixels.
    pub face_center_px: Point2,
    /// Landmark offsets from the face center, in landmark order.
    pub landmark_offsets_px: Landmarks,
    /// Head sway: stationary std (px) and time constant of an OU drift shared by all landmarks.
    pub head_sway_px: f64,
    pub head_sway_tau_ms: f64,
    pub regions: RegionWeights,
    /// Fixation scatter std (px, per axis) around eye/nose anchors.
    pub region_scatter_px: f64,
    pub mouth_scatter_factor: f64,
    /// Half-axes (px) of the rest-of-face ellipse around the nose.
    pub face_extent_px: Point2,
    pub offface_radius_px: f64,
    pub fixation_median_ms: f64,
    pub fixation_sigma: f64,
    pub jitter_tau_ms: f64,
    /// Mean Euclidean tracker error on the screen (mm).
    pub noise_mm: f64,
    /// Share of the tracker error variance that is white; the rest is a slow bias.
    pub noise_white_fraction: f64,
    pub noise_bias_tau_ms: f64,
    /// Std (px, per axis, before scaling) of a glitch jump.
    pub glitch_px: f64,
    /// PoG is clamped to a box of this many screen sizes around the screen.
    pub clamp_margin: f64,
    /// Eye position (mm, camera frame) used when emitting gaze rays.
    pub eye_origin_mm: [f64; 3],
    /// Log-scale spread of per-subject dispersion and jitter multipliers.
    pub trait_spread: f64,
    pub script: ScriptParams,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            fps: DEFAULT_FPS,
            screen: ScreenModel::default(),
            face_center_px: [960.0, 540.0],
            landmark_offsets_px: [[-61.0, -43.0], [61.0, -43.0], [0.0, 18.0], [0.0, 97.0], [-137.0, 0.0], [0.0, 180.0]],
            head_sway_px: 15.0,
            head_sway_tau_ms: 2000.0,
            regions: RegionWeights::default(),
            region_scatter_px: 300.0,
            mouth_scatter_factor: 1.2,
            face_extent_px: [130.0, 180.0],
            offface_radius_px: 750.0,
            fixation_median_ms: 300.0,
            fixation_sigma: 0.4,
            jitter_tau_ms: 80.0,
            noise_mm: 42.0,
            noise_white_fraction: 0.06,
            noise_bias_tau_ms: 1000.0,
            glitch_px: 150.0,
            clamp_margin: 1.5,
            eye_origin_mm: [0.0, 0.0, 600.0],
            trait_spread: 0.1,
            script: ScriptParams::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad(format!("fps {}", self.fps));
        }
        self.screen.validate().map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
        let w = &self.regions;
        let ws = [w.eyes, w.nose, w.mouth, w.rest_of_face, w.off_face];
        if ws.iter().any(|v| !(*v >= 0.0)) || ws.iter().sum::<f64>() <= 0.0 {
            return bad("region weights must be non-negative with a positive sum".into());
        }
        let nonneg = [
            self.head_sway_px,
            self.region_scatter_px,
            self.mouth_scatter_factor,
            self.face_extent_px[0],
            self.face_extent_px[1],
            self.offface_radius_px,
            self.fixation_sigma,
            self.noise_mm,
            self.glitch_px,
            self.trait_spread,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad("spatial parameters must be finite and non-negative".into());
        }
        let positive = [self.head_sway_tau_ms, self.fixation_median_ms, self.jitter_tau_ms, self.noise_bias_tau_ms];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return bad("time constants must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.noise_white_fraction) || !(self.clamp_margin >= 1.0) {
            return bad("noise_white_fraction must be in [0, 1] and clamp_margin >= 1".into());
        }
        Ok(())
    }

    fn frame_ms(&self) -> f64 {
        1000.0 / self.fps
    }

    /// Per-axis std (px) of the tracker error: a 2D Gaussian with mean
    /// Euclidean norm `noise_mm` has per-axis sigma `noise_mm / sqrt(pi / 2)`.
    pub fn noise_sigma_px(&self) -> f64 {
        self.noise_mm / (std::f64::consts::PI / 2.0).sqrt() / self.screen.pitch_mm
    }
}

/// AR(1) discretization of an Ornstein-Uhlenbeck process, started in its
/// stationary distribution.
struct Ou {
    a: f64,
    innov: f64,
    x: [f64; 2],
}

impl Ou {
    fn new(sigma: f64, tau_ms: f64, frame_ms: f64, rng: &mut ChaCha8Rng) -> Self {
        let a = (-frame_ms / tau_ms).exp();
        let x = [sigma * rng.sample::<f64, _>(StandardNormal), sigma * rng.sample::<f64, _>(StandardNormal)];
        Self { a, innov: sigma * (1.0 - a * a).sqrt(), x }
    }

    fn step(&mut self, rng: &mut ChaCha8Rng) -> [f64; 2] {
        let out = self.x;
        for v in &mut self.x {
            *v = self.a * *v + self.innov * rng.sample::<f64, _>(StandardNormal);
        }
        out
    }
}

/// Frame times, contexts and partner landmarks of one conversation; shared
/// by all classes of a subject.
#[derive(Debug, Clone, PartialEq)]
pub struct Session {
    pub t_ms: Vec<u64>,
    pub ctx: Vec<SpeakingContext>,
    pub landmarks: Vec<Landmarks>,
}

impl Session {
    pub fn new(script: &ConversationScript, cfg: &SynthConfig, seed: u64) -> Self {
        let total = script.total_ms();
        let n = (total as f64 * cfg.fps / 1000.0).floor() as usize;
        let t_ms: Vec<u64> = (0..n).map(|i| (i as f64 * cfg.frame_ms()).round() as u64).collect();
        let segs = script.context_segments();
        let ctx = t_ms
            .iter()
            .map(|&t| {
                let k = segs.partition_point(|s| s.end_ms <= t).min(segs.len() - 1);
                segs[k].ctx
            })
            .collect();
        let mut rng = stream_rng(seed, 2);
        let mut sway = Ou::new(cfg.head_sway_px, cfg.head_sway_tau_ms, cfg.frame_ms(), &mut rng);
        let landmarks = (0..n)
            .map(|_| {
                let d = sway.step(&mut rng);
                let c = [cfg.face_center_px[0] + d[0], cfg.face_center_px[1] + d[1]];
                std::array::from_fn(|j| [c[0] + cfg.landmark_offsets_px[j][0], c[1] + cfg.landmark_offsets_px[j][1]])
            })
            .collect();
        Self { t_ms, ctx, landmarks }
    }

    pub fn len(&self) -> usize {
        self.t_ms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_ms.is_empty()
    }
}

#[derive(Clone, Copy)]
enum Region {
    Eyes,
    Nose,
    Mouth,
    RestOfFace,
    OffFace,
}

fn region_weights(w: &RegionWeights, ctx: SpeakingContext, gain: f64) -> [(Region, f64); 5] {
    let off = match ctx {
        SpeakingContext::TrackedSpeaking | SpeakingContext::Both => w.off_face * (1.0 + gain),
        SpeakingContext::PartnerSpeaking => w.off_face * (1.0 - gain / 2.0).max(0.0),
        SpeakingContext::Neither => w.off_face,
    };
    [(Region::Eyes, w.eyes), (Region::Nose, w.nose), (Region::Mouth, w.mouth), (Region::RestOfFace, w.rest_of_face), (Region::OffFace, off)]
}

/// Region sampler that leans toward regions drawn less often than their
/// share so far, keeping a trace's realised dwell mix close to nominal.
struct RegionPicker {
    credit: [f64; 5],
}

impl RegionPicker {
    const PULL: f64 = 1.0;

    fn new() -> Self {
        Self { credit: [0.0; 5] }
    }

    fn pick(&mut self, weights: &[(Region, f64); 5], rng: &mut ChaCha8Rng) -> Region {
        let total: f64 = weights.iter().map(|(_, w)| w).sum();
        let mut adjusted = [0.0; 5];
        for k in 0..5 {
            self.credit[k] += weights[k].1 / total;
            adjusted[k] = weights[k].1 * (Self::PULL * self.credit[k]).exp();
        }
        let mut u = rng.random::<f64>() * adjusted.iter().sum::<f64>();
        let mut chosen = 4;
        for (k, &w) in adjusted.iter().enumerate() {
            if u < w {
                chosen = k;
                break;
            }
            u -= w;
        }
        self.credit[chosen] -= 1.0;
        weights[chosen].0
    }
}

fn fixation_target(region: Region, lm: &Landmarks, p: &ActorProfile, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Point2 {
    let s = p.dispersion_scale;
    let gauss = |rng: &mut ChaCha8Rng, anchor: Point2, sd: f64| {
        let (zx, zy): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        [anchor[0] + s * sd * zx, anchor[1] + s * sd * zy]
    };
    match region {
        Region::Eyes => {
            let eye = if rng.random::<bool>() { lm[0] } else { lm[1] };
            gauss(rng, eye, cfg.region_scatter_px)
        }
        Region::Nose => gauss(rng, lm[NOSE], cfg.region_scatter_px),
        Region::Mouth => gauss(rng, lm[3], cfg.region_scatter_px * cfg.mouth_scatter_factor),
        Region::RestOfFace => {
            let a = rng.random::<f64>() * std::f64::consts::TAU;
            let r = rng.random::<f64>().sqrt();
            let n = lm[NOSE];
            [n[0] + s * cfg.face_extent_px[0] * r * a.cos(), n[1] + s * cfg.face_extent_px[1] * r * a.sin()]
        }
        Region::OffFace => {
            let a = rng.random::<f64>() * std::f64::consts::TAU;
            let tail = -p.offface_tail_px * (1.0 - rng.random::<f64>()).ln();
            let r = s * (cfg.offface_radius_px + tail);
            let n = lm[NOSE];
            [n[0] + r * a.cos(), n[1] + r * a.sin()]
        }
    }
}

/// PoG track (px) for one profile over a session.
pub fn generate_pog(profile: &ActorProfile, session: &Session, cfg: &SynthConfig, seed: u64) -> Vec<Point2> {
    let n = session.len();
    let frame_ms = cfg.frame_ms();
    let mut fix_rng = stream_rng(seed, 3);
    let mut jit_rng = stream_rng(seed, 4);
    let mut noise_rng = stream_rng(seed, 5);
    let mut glitch_rng = stream_rng(seed, 6);

    let mut picker = RegionPicker::new();
    let mut pog = Vec::with_capacity(n);
    while pog.len() < n {
        let i = pog.len();
        let weights = region_weights(&cfg.regions, session.ctx[i], profile.context_gain);
        let region = picker.pick(&weights, &mut fix_rng);
        let target = fixation_target(region, &session.landmarks[i], profile, cfg, &mut fix_rng);
        let dur_ms = lognormal(&mut fix_rng, cfg.fixation_median_ms, cfg.fixation_sigma) * profile.stationarity;
        let frames = (dur_ms / frame_ms).round().clamp(1.0, (n - i) as f64) as usize;
        pog.extend(std::iter::repeat_n(target, frames));
    }

    let sigma = cfg.noise_sigma_px();
    let white = sigma * cfg.noise_white_fraction.sqrt();
    let mut jitter = Ou::new(profile.jitter_power, cfg.jitter_tau_ms, frame_ms, &mut jit_rng);
    let mut bias = Ou::new(sigma * (1.0 - cfg.noise_white_fraction).sqrt(), cfg.noise_bias_tau_ms, frame_ms, &mut noise_rng);
    let glitch_sd = cfg.glitch_px * profile.dispersion_scale;
    let (w, h) = (cfg.screen.width_px as f64, cfg.screen.height_px as f64);
    let pad = (cfg.clamp_margin - 1.0) / 2.0;
    for p in &mut pog {
        let j = jitter.step(&mut jit_rng);
        let b = bias.step(&mut noise_rng);
        let (wx, wy): (f64, f64) = (noise_rng.sample(StandardNormal), noise_rng.sample(StandardNormal));
        let mut x = p[0] + j[0] + b[0] + white * wx;
        let mut y = p[1] + j[1] + b[1] + white * wy;
        if glitch_rng.random::<f64>() < profile.abruptness {
            let (gx, gy): (f64, f64) = (glitch_rng.sample(StandardNormal), glitch_rng.sample(StandardNormal));
            x += glitch_sd * gx;
            y += glitch_sd * gy;
        }
        *p = [x.clamp(-pad * w, (1.0 + pad) * w), y.clamp(-pad * h, (1.0 + pad) * h)];
    }
    pog
}

/// Frame records for one profile over a session, as PoG or as gaze rays
/// through the PoG from `cfg.eye_origin_mm`.
pub fn generate_trace(profile: &ActorProfile, session: &Session, cfg: &SynthConfig, seed: u64, kind: GazeKind) -> Vec<FrameRecord> {
    generate_pog(profile, session, cfg, seed)
        .into_iter()
        .enumerate()
        .map(|(i, p)| FrameRecord {
            t_ms: session.t_ms[i],
            gaze: match kind {
                GazeKind::Pog => Gaze::Pog(p),
                GazeKind::Ray => Gaze::Ray(ray_through_pixel(cfg.eye_origin_mm, &cfg.screen, p[0], p[1])),
            },
            landmarks: session.landmarks[i],
            ctx: session.ctx[i],
        })
        .collect()
}

/// Distance-to-nose dispersion with per-context medians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispersion {
    pub mad: f64,
    pub std: f64,
    pub iqr: f64,
    pub median: f64,
    /// Median distance per speaking context (contexts absent from the stream are omitted).
    pub context_medians: BTreeMap<String, f64>,
}

pub fn nose_distances(frames: &[FrameRecord], screen: Option<&ScreenModel>) -> Result<Vec<f64>, SynthError> {
    frames
        .iter()
        .map(|f| {
            let p = frame_pog(f, screen)?;
            let n = f.landmarks[NOSE];
            Ok((p[0] - n[0]).hypot(p[1] - n[1]))
        })
        .collect()
}

pub fn dispersion(distances: &[f64], ctx: &[SpeakingContext]) -> Dispersion {
    let mut context_medians = BTreeMap::new();
    for c in SpeakingContext::ALL {
        let d: Vec<f64> = distances.iter().zip(ctx).filter(|(_, k)| **k == c).map(|(d, _)| *d).collect();
        if !d.is_empty() {
            context_medians.insert(c.name().to_string(), stats::median(&d));
        }
    }
    Dispersion {
        mad: stats::mad(distances),
        std: stats::std_pop(distances),
        iqr: stats::iqr(distances),
        median: stats::median(distances),
        context_medians,
    }
}

/// MAD, population STD and IQR of the PoG-to-nose distance, plus the median
/// distance per speaking context.
pub fn verify_stats(frames: &[FrameRecord], screen: Option<&ScreenModel>) -> Result<Dispersion, SynthError> {
    if frames.len() < MIN_VERIFY_FRAMES {
        return Err(SynthError::TooShort(frames.len()));
    }
    let d = nose_distances(frames, screen)?;
    let ctx: Vec<SpeakingContext> = frames.iter().map(|f| f.ctx).collect();
    Ok(dispersion(&d, &ctx))
}

/// Welch PSD of the PoG-to-nose distance averaged over consecutive
/// `segment`-frame chunks.
pub fn distance_psd(distances: &[f64], segment: usize) -> Result<PsdEstimate, SynthError> {
    let chunks: Vec<&[f64]> = distances.chunks_exact(segment).collect();
    Ok(average_psd(&chunks, WINDOW_LEN, WELCH_OVERLAP)?)
}

/// Calibration probe: a fixed 10-minute session and trace seed.
pub struct Probe {
    session: Session,
    seed: u64,
}

impl Probe {
    pub fn new(cfg: &SynthConfig, seed: u64) -> Result<Self, SynthError> {
        let script = generate_script(PROBE_MS, mix_seed(seed, 11), &cfg.script)?;
        Ok(Self { session: Session::new(&script, cfg, mix_seed(seed, 12)), seed: mix_seed(seed, 13) })
    }

    pub fn measure(&self, profile: &ActorProfile, cfg: &SynthConfig) -> Dispersion {
        let pog = generate_pog(profile, &self.session, cfg, self.seed);
        let d: Vec<f64> = pog.iter().zip(&self.session.landmarks).map(|(p, lm)| (p[0] - lm[NOSE][0]).hypot(p[1] - lm[NOSE][1])).collect();
        dispersion(&d, &self.session.ctx)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub profile: ActorProfile,
    pub iterations: usize,
    pub achieved: Dispersion,
}

/// Bisection on `dispersion_scale` until the probe STD is within 0.5% of
/// `target_std`. Probe STD is monotone in the scale because the probe reuses
/// one set of random draws.
pub fn fit_dispersion(profile: &ActorProfile, target_std: f64, cfg: &SynthConfig, seed: u64) -> Result<Calibration, SynthError> {
    profile.validate()?;
    cfg.validate()?;
    if !(target_std > 0.0 && target_std.is_finite()) {
        return Err(SynthError::InvalidConfig(format!("target std {target_std}")));
    }
    let probe = Probe::new(cfg, seed)?;
    let at = |scale: f64| {
        let p = ActorProfile { dispersion_scale: scale, ..profile.clone() };
        let d = probe.measure(&p, cfg);
        (p, d)
    };
    let close = |d: &Dispersion| (d.std / target_std - 1.0).abs() < STD_CONVERGED;

    let mut iterations = 1;
    let (mut best, mut best_d) = at(profile.dispersion_scale);
    if close(&best_d) {
        return Ok(Calibration { profile: best, iterations, achieved: best_d });
    }
    let (mut lo, mut hi) = if best_d.std < target_std { (profile.dispersion_scale, f64::NAN) } else { (0.0, profile.dispersion_scale) };
    while hi.is_nan() && iterations < MAX_CALIBRATION_ITERATIONS {
        let trial = (lo.max(0.05) * 2.0).max(lo * target_std / best_d.std.max(1e-9));
        iterations += 1;
        let (p, d) = at(trial);
        if d.std >= target_std {
            hi = trial;
        } else if d.std <= best_d.std {
            // Clamping has saturated the spread: larger scales cannot help.
            return Err(SynthError::NonConvergence { iterations, achieved: best_d });
        } else {
            lo = trial;
        }
        (best, best_d) = (p, d);
        if close(&best_d) {
            return Ok(Calibration { profile: best, iterations, achieved: best_d });
        }
    }
    while iterations < MAX_CALIBRATION_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        iterations += 1;
        let (p, d) = at(mid);
        if d.std < target_std {
            lo = mid;
        } else {
            hi = mid;
        }
        (best, best_d) = (p, d);
        if close(&best_d) {
            return Ok(Calibration { profile: best, iterations, achieved: best_d });
        }
    }
    Err(SynthError::NonConvergence { iterations, achieved: best_d })
}

/// Fits `dispersion_scale` to the target STD and checks that MAD, STD and
/// IQR all land within 10%.
pub fn calibrate(profile: &ActorProfile, target: &CalibrationTarget, cfg: &SynthConfig, seed: u64) -> Result<Calibration, SynthError> {
    let fit = fit_dispersion(profile, target.std, cfg, seed)?;
    if target.worst_error(&fit.achieved) > CALIBRATION_TOLERANCE {
        return Err(SynthError::NonConvergence { iterations: fit.iterations, achieved: fit.achieved });
    }
    Ok(fit)
}

/// Per-subject multipliers shared by all classes of that subject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubjectTraits {
    pub scale: f64,
    pub jitter: f64,
}

impl SubjectTraits {
    pub fn draw(seed: u64, spread: f64) -> Self {
        let mut rng = stream_rng(seed, 7);
        let (a, b): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        Self { scale: (spread * a).exp(), jitter: (spread * b).exp() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub subjects: usize,
    pub minutes: f64,
    pub seed: u64,
    pub gaze: GazeKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthStream {
    pub header: StreamHeader,
    pub frames: Vec<FrameRecord>,
}

impl SynthStream {
    /// File stem `<subject>_<profile>`.
    pub fn file_stem(&self) -> String {
        format!("{}_{}", self.header.subject_id, self.header.generator.as_deref().unwrap_or("stream"))
    }
}

pub fn subject_id(index: usize) -> String {
    format!("S{:03}", index + 1)
}

/// One conversation session rendered through every profile.
pub fn synthesize_subject(
    index: usize,
    spec: &CorpusSpec,
    cfg: &SynthConfig,
    profiles: &[ActorProfile],
    config_hash: Option<&str>,
) -> Result<Vec<SynthStream>, SynthError> {
    let seed = mix_seed(spec.seed, index as u64 + 1);
    let total_ms = (spec.minutes * 60_000.0).round() as u64;
    let script = generate_script(total_ms, seed, &cfg.script)?;
    let session = Session::new(&script, cfg, seed);
    let traits = SubjectTraits::draw(seed, cfg.trait_spread);
    let id = subject_id(index);
    profiles
        .iter()
        .enumerate()
        .map(|(k, p)| {
            p.validate()?;
            let frames = generate_trace(&p.with_traits(traits), &session, cfg, mix_seed(seed, 100 + k as u64), spec.gaze);
            let header = StreamHeader {
                fps_nominal: cfg.fps,
                subject_id: id.clone(),
                class_label: Some(p.label()),
                generator: Some(p.name.clone()),
                screen: (spec.gaze == GazeKind::Ray).then(|| cfg.screen.clone()),
                config_hash: config_hash.map(str::to_string),
            };
            Ok(SynthStream { header, frames })
        })
        .collect()
}

/// All subjects, in subject order, each with one stream per profile.
pub fn synthesize_corpus(
    spec: &CorpusSpec,
    cfg: &SynthConfig,
    profiles: &[ActorProfile],
    config_hash: Option<&str>,
    exec: Execution,
) -> Result<Vec<SynthStream>, SynthError> {
    cfg.validate()?;
    if spec.subjects == 0 {
        return Err(SynthError::InvalidConfig("need at least one subject".into()));
    }
    let per = exec::map_range(exec, spec.subjects, |i| synthesize_subject(i, spec, cfg, profiles, config_hash));
    let mut out = Vec::with_capacity(spec.subjects * profiles.len());
    for s in per {
        out.extend(s?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn script_is_conserved_and_seeded() {
        let p = ScriptParams::default();
        let s = generate_script(600_000, 4, &p).unwrap();
        assert_eq!(s.total_ms(), 600_000);
        assert_eq!(s, generate_script(600_000, 4, &p).unwrap());
        assert!(s.segments.iter().all(|g| g.duration_ms > 0));
        assert!(matches!(generate_script(59_999, 4, &p), Err(SynthError::ScriptTooShort(_))));
    }

    #[test]
    fn degenerate_profile_is_constant() {
        let cfg = SynthConfig { noise_mm: 0.0, head_sway_px: 0.0, ..Default::default() };
        let p = ActorProfile {
            name: "still".into(),
            dispersion_scale: 0.0,
            jitter_power: 0.0,
            abruptness: 0.0,
            context_gain: 0.0,
            stationarity: 1e12,
            offface_tail_px: 0.0,
        };
        let script = generate_script(60_000, 1, &cfg.script).unwrap();
        let session = Session::new(&script, &cfg, 1);
        let pog = generate_pog(&p, &session, &cfg, 2);
        assert!(pog.len() > 1700);
        assert!(pog.iter().all(|q| q == &pog[0]));
    }

    #[test]
    fn session_frame_count_follows_fps() {
        let cfg = SynthConfig::default();
        let script = generate_script(660_600, 3, &cfg.script).unwrap();
        let s = Session::new(&script, &cfg, 3);
        assert_eq!(s.len(), (660.6 * DEFAULT_FPS).floor() as usize);
        assert!(s.t_ms.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn noise_sigma_matches_mean_error() {
        let cfg = SynthConfig::default();
        let s = cfg.noise_sigma_px();
        // Rayleigh mean sigma * sqrt(pi / 2) equals 42 mm at 0.2 mm / px
        assert!((s * (std::f64::consts::PI / 2.0).sqrt() * 0.2 - 42.0).abs() < 1e-9);
        assert!((s - 167.556).abs() < 1e-3);
    }
}
