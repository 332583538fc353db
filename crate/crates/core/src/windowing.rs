//! Fixed-length windows over feature streams, the two model input tensors,
//! and subject-level evaluation splits.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{self, Execution};
use crate::features::{FeatureFrame, GEOM_COMPONENTS};
use crate::ingest::N_LANDMARKS;
use crate::model::EMBED_DIM;
use crate::spectral::{SpectralError, Stft};

pub const SEQ_LEN: usize = 1800;
pub const STRIDE: usize = 180;

#[derive(Debug, Error)]
pub enum WindowError {
    #[error("invalid window parameters: length {length}, stride {stride}")]
    InvalidParams { length: usize, stride: usize },
    #[error("need at least {need} subjects, got {got}")]
    TooFewSubjects { need: usize, got: usize },
    #[error("split fraction {0} must be in (0, 1)")]
    InvalidFraction(f64),
    #[error("batch shape mismatch at sample {0}")]
    ShapeMismatch(usize),
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("window cache: {0}")]
    Cache(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowParams {
    pub length: usize,
    pub stride: usize,
}

impl Default for WindowParams {
    fn default() -> Self {
        Self { length: SEQ_LEN, stride: STRIDE }
    }
}

impl WindowParams {
    pub fn validate(&self) -> Result<(), WindowError> {
        if self.length == 0 || self.stride == 0 || self.stride > self.length {
            return Err(WindowError::InvalidParams { length: self.length, stride: self.stride });
        }
        Ok(())
    }

    pub fn count(&self, n: usize) -> usize {
        window_count(n, self.length, self.stride)
    }

    /// Frames elapsed before a verdict fusing `n_voters` consecutive windows.
    pub fn latency_frames(&self, n_voters: usize) -> usize {
        self.length + n_voters.saturating_sub(1) * self.stride
    }
}

/// `floor((n - length) / stride) + 1` for `n >= length`, else 0.
pub fn window_count(n: usize, length: usize, stride: usize) -> usize {
    if n < length || stride == 0 {
        0
    } else {
        (n - length) / stride + 1
    }
}

/// Start frames of every window, in order.
pub fn window_starts(n: usize, length: usize, stride: usize) -> impl Iterator<Item = usize> {
    (0..window_count(n, length, stride)).map(move |k| k * stride)
}

/// Identity of the stream a window was cut from.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StreamMeta {
    pub subject_id: String,
    /// 0 genuine, 1 fake.
    pub label: u8,
    pub generator: Option<String>,
}

/// One model input: geometric channels `[3][6][len]` (unit x, unit y, scaled
/// magnitude), context codes, and per-landmark spectrograms `[bins][6][frames]`.
/// The four embedding channels of the primary tensor are produced by the model
/// from `ctx_codes`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub length: usize,
    pub n_bins: usize,
    pub n_frames: usize,
    pub geom: Vec<f32>,
    pub ctx_codes: Vec<u8>,
    pub spectro: Vec<f32>,
    pub label: u8,
    pub subject_id: String,
    pub generator: Option<String>,
    pub start_frame: usize,
}

impl WindowSample {
    /// Shape of the primary tensor once context embeddings are attached.
    pub fn primary_shape(&self) -> [usize; 3] {
        [GEOM_COMPONENTS + EMBED_DIM, N_LANDMARKS, self.length]
    }

    pub fn spectro_shape(&self) -> [usize; 3] {
        [self.n_bins, N_LANDMARKS, self.n_frames]
    }

    pub fn geom_at(&self, channel: usize, landmark: usize, t: usize) -> f32 {
        self.geom[(channel * N_LANDMARKS + landmark) * self.length + t]
    }

    /// Scaled magnitude series of one landmark.
    pub fn magnitudes(&self, landmark: usize) -> &[f32] {
        let off = (2 * N_LANDMARKS + landmark) * self.length;
        &self.geom[off..off + self.length]
    }

    /// Recomputes the spectrogram tensor from the magnitude channel.
    pub fn recompute_spectro(&self, stft: &Stft) -> Result<Vec<f32>, SpectralError> {
        let mags: Vec<Vec<f64>> = (0..N_LANDMARKS).map(|j| self.magnitudes(j).iter().map(|&v| v as f64).collect()).collect();
        spectro_tensor(stft, &mags)
    }
}

/// Stacks per-landmark spectrograms into `[bins][landmark][frames]`.
pub fn spectro_tensor(stft: &Stft, mags: &[Vec<f64>]) -> Result<Vec<f32>, SpectralError> {
    let specs = mags.iter().map(|m| stft.spectrogram(m)).collect::<Result<Vec<_>, _>>()?;
    let (n_bins, n_frames) = (specs[0].n_bins, specs[0].n_frames);
    let mut out = vec![0.0f32; n_bins * mags.len() * n_frames];
    for (j, s) in specs.iter().enumerate() {
        for k in 0..n_bins {
            for f in 0..n_frames {
                out[(k * mags.len() + j) * n_frames + f] = s.get(k, f) as f32;
            }
        }
    }
    Ok(out)
}

/// Builds one window from `frames[start..start + length]` (already scaled).
pub fn build_window(
    frames: &[FeatureFrame],
    start: usize,
    length: usize,
    stft: &Stft,
    meta: &StreamMeta,
) -> Result<WindowSample, WindowError> {
    let slice = &frames[start..start + length];
    let mut geom = vec![0.0f32; GEOM_COMPONENTS * N_LANDMARKS * length];
    for (t, f) in slice.iter().enumerate() {
        for j in 0..N_LANDMARKS {
            geom[j * length + t] = f.ux[j] as f32;
            geom[(N_LANDMARKS + j) * length + t] = f.uy[j] as f32;
            geom[(2 * N_LANDMARKS + j) * length + t] = f.mag[j] as f32;
        }
    }
    let ctx_codes = slice.iter().map(|f| f.ctx.code()).collect();
    let mut sample = WindowSample {
        length,
        n_bins: stft.n_bins(),
        n_frames: stft.frames_for(length),
        geom,
        ctx_codes,
        spectro: Vec::new(),
        label: meta.label,
        subject_id: meta.subject_id.clone(),
        generator: meta.generator.clone(),
        start_frame: start,
    };
    sample.spectro = sample.recompute_spectro(stft)?;
    Ok(sample)
}

/// Cuts all windows `[k * stride, k * stride + length)` out of a scaled
/// feature stream. Streams shorter than one window yield nothing.
pub fn make_windows(
    frames: &[FeatureFrame],
    params: WindowParams,
    stft: &Stft,
    meta: &StreamMeta,
    exec: Execution,
) -> Result<Vec<WindowSample>, WindowError> {
    params.validate()?;
    let starts: Vec<usize> = window_starts(frames.len(), params.length, params.stride).collect();
    exec::try_map(exec, &starts, |&s| build_window(frames, s, params.length, stft, meta))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// Independent random subject-level holdouts, one per repeat.
    #[default]
    Repeated,
    /// Classic disjoint folds; `repeats` is the number of folds.
    KFold,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRepeat {
    pub train: Vec<String>,
    pub validation: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub repeats: Vec<SplitRepeat>,
    pub fraction: f64,
}

pub const MIN_SPLIT_SUBJECTS: usize = 5;

/// Subject-disjoint train/validation splits, deterministic in `seed`.
/// Repeat `r` shuffles with ChaCha8 stream `r`.
pub fn make_split(subjects: &[String], repeats: usize, fraction: f64, seed: u64, mode: SplitMode) -> Result<SplitPlan, WindowError> {
    let mut pool = subjects.to_vec();
    pool.sort();
    pool.dedup();
    let n = pool.len();
    if n < MIN_SPLIT_SUBJECTS {
        return Err(WindowError::TooFewSubjects { need: MIN_SPLIT_SUBJECTS, got: n });
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(WindowError::InvalidFraction(fraction));
    }
    let side = |mut v: Vec<String>| {
        v.sort();
        v
    };
    let plan = match mode {
        SplitMode::Repeated => {
            let n_val = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
            (0..repeats)
                .map(|r| {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(r as u64);
                    let mut order = pool.clone();
                    order.shuffle(&mut rng);
                    let train = order.split_off(n_val);
                    SplitRepeat { train: side(train), validation: side(order) }
                })
                .collect()
        }
        SplitMode::KFold => {
            if repeats < 2 || repeats > n {
                return Err(WindowError::TooFewSubjects { need: repeats.max(2), got: n });
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut order = pool.clone();
            order.shuffle(&mut rng);
            (0..repeats)
                .map(|k| {
                    let (val, train): (Vec<_>, Vec<_>) = order.iter().cloned().enumerate().partition(|(i, _)| i % repeats == k);
                    SplitRepeat {
                        train: side(train.into_iter().map(|(_, s)| s).collect()),
                        validation: side(val.into_iter().map(|(_, s)| s).collect()),
                    }
                })
                .collect()
        }
    };
    Ok(SplitPlan { repeats: plan, fraction })
}

/// Samples stacked along a leading batch axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub length: usize,
    pub n_bins: usize,
    pub n_frames: usize,
    pub geom: Vec<f32>,
    pub ctx_codes: Vec<u8>,
    pub spectro: Vec<f32>,
    pub labels: Vec<u8>,
}

impl Batch {
    pub fn primary_shape(&self) -> [usize; 4] {
        [self.size, GEOM_COMPONENTS + EMBED_DIM, N_LANDMARKS, self.length]
    }

    pub fn spectro_shape(&self) -> [usize; 4] {
        [self.size, self.n_bins, N_LANDMARKS, self.n_frames]
    }

    /// Splits back into per-sample tensors (labels and tensors only).
    pub fn unbatch(&self) -> Vec<(Vec<f32>, Vec<u8>, Vec<f32>, u8)> {
        let g = self.geom.len() / self.size;
        let c = self.length;
        let s = self.spectro.len() / self.size;
        (0..self.size)
            .map(|i| {
                (
                    self.geom[i * g..(i + 1) * g].to_vec(),
                    self.ctx_codes[i * c..(i + 1) * c].to_vec(),
                    self.spectro[i * s..(i + 1) * s].to_vec(),
                    self.labels[i],
                )
            })
            .collect()
    }
}

pub fn assemble_batch(samples: &[&WindowSample]) -> Result<Batch, WindowError> {
    let first = samples.first().ok_or(WindowError::EmptyBatch)?;
    let mut batch = Batch {
        size: samples.len(),
        length: first.length,
        n_bins: first.n_bins,
        n_frames: first.n_frames,
        geom: Vec::with_capacity(first.geom.len() * samples.len()),
        ctx_codes: Vec::with_capacity(first.length * samples.len()),
        spectro: Vec::with_capacity(first.spectro.len() * samples.len()),
        labels: Vec::with_capacity(samples.len()),
    };
    for (i, s) in samples.iter().enumerate() {
        if s.length != first.length
            || s.n_bins != first.n_bins
            || s.n_frames != first.n_frames
            || s.geom.len() != first.geom.len()
            || s.spectro.len() != first.spectro.len()
            || s.ctx_codes.len() != s.length
        {
            return Err(WindowError::ShapeMismatch(i));
        }
        batch.geom.extend_from_slice(&s.geom);
        batch.ctx_codes.extend_from_slice(&s.ctx_codes);
        batch.spectro.extend_from_slice(&s.spectro);
        batch.labels.push(s.label);
    }
    Ok(batch)
}

const CACHE_MAGIC: &[u8; 8] = b"GZCKWIN1";

/// Optional binary window cache: little-endian f32 tensors behind a shape
/// header. JSONL streams remain the source of truth.
pub fn write_window_cache(path: impl AsRef<Path>, samples: &[WindowSample]) -> Result<(), WindowError> {
    let mut w = BufWriter::new(File::create(path)?);
    let first = samples.first();
    let dims = first.map_or([0, 0, 0], |s| [s.length, s.n_bins, s.n_frames]);
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&(samples.len() as u32).to_le_bytes())?;
    for d in dims {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for (i, s) in samples.iter().enumerate() {
        if [s.length, s.n_bins, s.n_frames] != dims {
            return Err(WindowError::ShapeMismatch(i));
        }
        w.write_all(&[s.label])?;
        w.write_all(&(s.start_frame as u64).to_le_bytes())?;
        write_str(&mut w, Some(&s.subject_id))?;
        write_str(&mut w, s.generator.as_deref())?;
        w.write_all(&s.ctx_codes)?;
        for v in s.geom.iter().chain(&s.spectro) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn write_str<W: Write>(w: &mut W, s: Option<&str>) -> std::io::Result<()> {
    match s {
        Some(s) => {
            w.write_all(&(s.len() as u32).to_le_bytes())?;
            w.write_all(s.as_bytes())
        }
        None => w.write_all(&u32::MAX.to_le_bytes()),
    }
}

pub fn read_window_cache(path: impl AsRef<Path>) -> Result<Vec<WindowSample>, WindowError> {
    let mut r = BufReader::new(File::open(path)?);
    let corrupt = |e: std::io::Error| WindowError::Cache(format!("truncated or unreadable: {e}"));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(corrupt)?;
    if &magic != CACHE_MAGIC {
        return Err(WindowError::Cache("bad magic".into()));
    }
    let count = read_u32(&mut r).map_err(corrupt)? as usize;
    let length = read_u32(&mut r).map_err(corrupt)? as usize;
    let n_bins = read_u32(&mut r).map_err(corrupt)? as usize;
    let n_frames = read_u32(&mut r).map_err(corrupt)? as usize;
    let n_geom = GEOM_COMPONENTS * N_LANDMARKS * length;
    let n_spec = n_bins * N_LANDMARKS * n_frames;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut label = [0u8; 1];
        r.read_exact(&mut label).map_err(corrupt)?;
        let mut start = [0u8; 8];
        r.read_exact(&mut start).map_err(corrupt)?;
        let subject_id = read_str(&mut r)?.ok_or_else(|| WindowError::Cache("missing subject".into()))?;
        let generator = read_str(&mut r)?;
        let mut ctx_codes = vec![0u8; length];
        r.read_exact(&mut ctx_codes).map_err(corrupt)?;
        let mut floats = vec![0u8; 4 * (n_geom + n_spec)];
        r.read_exact(&mut floats).map_err(corrupt)?;
        let mut vals = floats.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
        let geom: Vec<f32> = vals.by_ref().take(n_geom).collect();
        let spectro: Vec<f32> = vals.collect();
        out.push(WindowSample {
            length,
            n_bins,
            n_frames,
            geom,
            ctx_codes,
            spectro,
            label: label[0],
            subject_id,
            generator,
            start_frame: u64::from_le_bytes(start) as usize,
        });
    }
    Ok(out)
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_str<R: Read>(r: &mut R) -> Result<Option<String>, WindowError> {
    let corrupt = |e: std::io::Error| WindowError::Cache(format!("truncated: {e}"));
    let len = read_u32(r).map_err(corrupt)?;
    if len == u32::MAX {
        return Ok(None);
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf).map_err(corrupt)?;
    String::from_utf8(buf).map(Some).map_err(|_| WindowError::Cache("invalid utf-8".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::SpeakingContext;

    fn stream(n: usize) -> Vec<FeatureFrame> {
        (0..n)
            .map(|t| {
                let a = t as f64 * 0.01;
                FeatureFrame {
                    ux: [a.cos(); 6],
                    uy: [a.sin(); 6],
                    mag: std::array::from_fn(|j| (a * (j + 1) as f64).sin()),
                    ctx: SpeakingContext::from_code((t / 100 % 4) as u8).unwrap(),
                }
            })
            .collect()
    }

    fn meta() -> StreamMeta {
        StreamMeta { subject_id: "s01".into(), label: 1, generator: Some("dflive".into()) }
    }

    #[test]
    fn boundary_counts() {
        assert_eq!(window_count(1800, SEQ_LEN, STRIDE), 1);
        assert_eq!(window_count(1799, SEQ_LEN, STRIDE), 0);
        assert_eq!(window_count(3600, SEQ_LEN, 180), 11);
        assert_eq!(window_count(3600, SEQ_LEN, 1800), 2);
        assert_eq!(WindowParams::default().latency_frames(10), 3420);
    }

    #[test]
    fn windows_carry_shapes_and_meta() {
        let stft = Stft::default();
        let w = make_windows(&stream(2000), WindowParams::default(), &stft, &meta(), Execution::Parallel).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[1].start_frame, 180);
        assert_eq!(w[0].primary_shape(), [7, 6, 1800]);
        assert_eq!(w[0].spectro_shape(), [46, 6, 22]);
        assert_eq!(w[0].ctx_codes.len(), 1800);
        assert_eq!(w[1].ctx_codes[0], 1);
        assert_eq!(w[0].label, 1);
        assert_eq!(w[0].recompute_spectro(&stft).unwrap(), w[0].spectro);
        assert!(make_windows(&stream(100), WindowParams::default(), &stft, &meta(), Execution::Sequential).unwrap().is_empty());
    }

    #[test]
    fn bad_params() {
        let p = WindowParams { length: 100, stride: 101 };
        assert!(p.validate().is_err());
        assert!(WindowParams { length: 100, stride: 0 }.validate().is_err());
    }

    fn subjects(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i:02}")).collect()
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let plan = make_split(&subjects(47), 10, 0.2, 7, SplitMode::Repeated).unwrap();
        assert_eq!(plan.repeats.len(), 10);
        for r in &plan.repeats {
            assert!(r.validation.len() == 9 || r.validation.len() == 10);
            assert_eq!(r.train.len() + r.validation.len(), 47);
            assert!(r.train.iter().all(|s| !r.validation.contains(s)));
        }
        assert_eq!(plan, make_split(&subjects(47), 10, 0.2, 7, SplitMode::Repeated).unwrap());
        assert_ne!(plan, make_split(&subjects(47), 10, 0.2, 8, SplitMode::Repeated).unwrap());
    }

    #[test]
    fn kfold_partitions() {
        let plan = make_split(&subjects(12), 4, 0.25, 1, SplitMode::KFold).unwrap();
        let mut seen: Vec<String> = plan.repeats.iter().flat_map(|r| r.validation.clone()).collect();
        seen.sort();
        assert_eq!(seen, subjects(12));
    }

    #[test]
    fn too_few_subjects() {
        assert!(matches!(make_split(&subjects(4), 10, 0.2, 0, SplitMode::Repeated), Err(WindowError::TooFewSubjects { .. })));
    }

    #[test]
    fn batch_roundtrip() {
        let stft = Stft::default();
        let w = make_windows(&stream(1800 + 31 * 180), WindowParams::default(), &stft, &meta(), Execution::Parallel).unwrap();
        assert_eq!(w.len(), 32);
        let one = assemble_batch(&[&w[0]]).unwrap();
        assert_eq!(one.primary_shape(), [1, 7, 6, 1800]);
        assert_eq!(one.spectro_shape(), [1, 46, 6, 22]);
        let refs: Vec<&WindowSample> = w.iter().collect();
        let b = assemble_batch(&refs).unwrap();
        assert_eq!(b.primary_shape()[0], 32);
        for (s, (g, c, sp, l)) in w.iter().zip(b.unbatch()) {
            assert_eq!((&s.geom, &s.ctx_codes, &s.spectro, s.label), (&g, &c, &sp, l));
        }
        let mut odd = w[1].clone();
        odd.geom.pop();
        assert!(matches!(assemble_batch(&[&w[0], &odd]), Err(WindowError::ShapeMismatch(1))));
        assert!(matches!(assemble_batch(&[]), Err(WindowError::EmptyBatch)));
    }

    #[test]
    fn cache_roundtrip() {
        let stft = Stft::default();
        let w = make_windows(&stream(2200), WindowParams::default(), &stft, &meta(), Execution::Parallel).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.bin");
        write_window_cache(&p, &w).unwrap();
        assert_eq!(read_window_cache(&p).unwrap(), w);
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_window_cache(&p), Err(WindowError::Cache(_))));
    }
}
