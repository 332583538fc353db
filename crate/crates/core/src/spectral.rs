//! Short-time spectra of landmark-distance series.
//!
//! The model consumes log-power spectrograms (Hann window of 90 frames, hop
//! 80, one-sided: 46 bins x 22 time frames for an 1800-frame window). Welch
//! PSD estimates with the same segment length are used for analysis.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const WINDOW_LEN: usize = 90;
pub const HOP: usize = 80;
pub const N_BINS: usize = WINDOW_LEN / 2 + 1;
/// Time frames produced for an 1800-sample window.
pub const N_FRAMES: usize = (1800 - WINDOW_LEN) / HOP + 1;
pub const WELCH_OVERLAP: usize = WINDOW_LEN / 2;

#[derive(Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error("series of length {len} is shorter than the {need}-sample window")]
    TooShort { len: usize, need: usize },
    #[error("series contains non-finite values")]
    NonFinite,
    #[error("no segments to average")]
    Empty,
    #[error("invalid spectral parameters: {0}")]
    InvalidParams(String),
}

/// STFT settings for the spectrogram input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectralParams {
    pub window_len: usize,
    pub hop: usize,
}

impl Default for SpectralParams {
    fn default() -> Self {
        Self { window_len: WINDOW_LEN, hop: HOP }
    }
}

impl SpectralParams {
    pub fn stft(&self) -> Result<Stft, SpectralError> {
        Stft::new(self.window_len, self.hop)
    }
}

/// Number of STFT frames, `floor((n - window) / hop) + 1`, or 0 when `n < window`.
pub fn frame_count(n: usize, window: usize, hop: usize) -> usize {
    if n < window || window == 0 || hop == 0 {
        0
    } else {
        (n - window) / hop + 1
    }
}

/// Periodic Hann window, `0.5 - 0.5 cos(2 pi n / N)`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()).collect()
}

/// `ln(1 + |X|^2)` values laid out `[bin][frame]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub n_bins: usize,
    pub n_frames: usize,
    pub values: Vec<f64>,
}

impl Spectrogram {
    pub fn get(&self, bin: usize, frame: usize) -> f64 {
        self.values[bin * self.n_frames + frame]
    }

    /// Index of the strongest bin in one time frame.
    pub fn argmax_bin(&self, frame: usize) -> usize {
        (0..self.n_bins).max_by(|&a, &b| self.get(a, frame).total_cmp(&self.get(b, frame))).unwrap_or(0)
    }
}

/// Reusable STFT plan.
#[derive(Clone)]
pub struct Stft {
    window_len: usize,
    hop: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft").field("window_len", &self.window_len).field("hop", &self.hop).finish()
    }
}

impl Default for Stft {
    fn default() -> Self {
        Self::new(WINDOW_LEN, HOP).expect("default parameters are valid")
    }
}

impl Stft {
    pub fn new(window_len: usize, hop: usize) -> Result<Self, SpectralError> {
        if window_len < 2 || hop == 0 {
            return Err(SpectralError::InvalidParams(format!("window {window_len}, hop {hop}")));
        }
        let fft = FftPlanner::new().plan_fft_forward(window_len);
        Ok(Self { window_len, hop, window: hann(window_len), fft })
    }

    pub fn n_bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    pub fn frames_for(&self, n: usize) -> usize {
        frame_count(n, self.window_len, self.hop)
    }

    /// One-sided power `|X_k|^2` of each Hann-windowed frame, `[frame][bin]`.
    fn frame_powers(&self, series: &[f64], starts: impl Iterator<Item = usize>) -> Vec<Vec<f64>> {
        let n_bins = self.n_bins();
        let mut buf = vec![Complex::new(0.0, 0.0); self.window_len];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        starts
            .map(|s| {
                for (b, (x, w)) in buf.iter_mut().zip(series[s..s + self.window_len].iter().zip(&self.window)) {
                    *b = Complex::new(x * w, 0.0);
                }
                self.fft.process_with_scratch(&mut buf, &mut scratch);
                buf[..n_bins].iter().map(|c| c.norm_sqr()).collect()
            })
            .collect()
    }

    pub fn spectrogram(&self, series: &[f64]) -> Result<Spectrogram, SpectralError> {
        check_series(series, self.window_len)?;
        let n_frames = self.frames_for(series.len());
        let n_bins = self.n_bins();
        let powers = self.frame_powers(series, (0..n_frames).map(|f| f * self.hop));
        let mut values = vec![0.0; n_bins * n_frames];
        for (f, p) in powers.iter().enumerate() {
            for (k, &pk) in p.iter().enumerate() {
                values[k * n_frames + f] = pk.ln_1p();
            }
        }
        Ok(Spectrogram { n_bins, n_frames, values })
    }

    /// Welch estimate with this plan's window length and the given overlap.
    pub fn welch(&self, series: &[f64], overlap: usize) -> Result<PsdEstimate, SpectralError> {
        check_series(series, self.window_len)?;
        if overlap >= self.window_len {
            return Err(SpectralError::InvalidParams(format!("overlap {overlap} >= window")));
        }
        let step = self.window_len - overlap;
        let n_seg = frame_count(series.len(), self.window_len, step);
        let n_bins = self.n_bins();
        let win_power: f64 = self.window.iter().map(|w| w * w).sum();
        let mut power = vec![0.0; n_bins];
        for p in self.frame_powers(series, (0..n_seg).map(|s| s * step)) {
            for (acc, v) in power.iter_mut().zip(p) {
                *acc += v;
            }
        }
        let nyquist = (self.window_len % 2 == 0).then_some(n_bins - 1);
        for (k, v) in power.iter_mut().enumerate() {
            *v /= n_seg as f64 * win_power;
            if k != 0 && Some(k) != nyquist {
                *v *= 2.0;
            }
        }
        let freqs = (0..n_bins).map(|k| k as f64 / self.window_len as f64).collect();
        Ok(PsdEstimate { freqs, power })
    }
}

fn check_series(series: &[f64], need: usize) -> Result<(), SpectralError> {
    if series.len() < need {
        return Err(SpectralError::TooShort { len: series.len(), need });
    }
    if !series.iter().all(|v| v.is_finite()) {
        return Err(SpectralError::NonFinite);
    }
    Ok(())
}

/// Log-power spectrogram of one magnitude series.
pub fn stft_spectrogram(series: &[f64], window_len: usize, hop: usize) -> Result<Spectrogram, SpectralError> {
    Stft::new(window_len, hop)?.spectrogram(series)
}

/// One-sided power spectral density; frequencies in cycles per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdEstimate {
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
}

impl PsdEstimate {
    pub fn bin_width(&self) -> f64 {
        self.freqs.get(1).copied().unwrap_or(0.0)
    }

    /// Integral of the density, approximating the series variance.
    pub fn total_power(&self) -> f64 {
        self.power.iter().sum::<f64>() * self.bin_width()
    }

    /// Power in the upper half of the frequency band.
    pub fn upper_band_power(&self) -> f64 {
        let half = self.power.len() / 2;
        self.power[half..].iter().sum::<f64>() * self.bin_width()
    }
}

/// Hann-windowed averaged periodogram (density scaling, fs = 1).
pub fn welch_psd(series: &[f64], nperseg: usize, overlap: usize) -> Result<PsdEstimate, SpectralError> {
    Stft::new(nperseg, nperseg - overlap.min(nperseg - 1))?.welch(series, overlap)
}

/// Element-wise mean of the per-segment Welch estimates.
pub fn average_psd<S: AsRef<[f64]>>(segments: &[S], nperseg: usize, overlap: usize) -> Result<PsdEstimate, SpectralError> {
    let stft = Stft::new(nperseg, nperseg - overlap.min(nperseg - 1))?;
    let psds = segments.iter().map(|s| stft.welch(s.as_ref(), overlap)).collect::<Result<Vec<_>, _>>()?;
    mean_psd(&psds)
}

pub fn mean_psd(psds: &[PsdEstimate]) -> Result<PsdEstimate, SpectralError> {
    let first = psds.first().ok_or(SpectralError::Empty)?;
    let mut power = vec![0.0; first.power.len()];
    for p in psds {
        for (acc, v) in power.iter_mut().zip(&p.power) {
            *acc += v;
        }
    }
    let n = psds.len() as f64;
    power.iter_mut().for_each(|v| *v /= n);
    Ok(PsdEstimate { freqs: first.freqs.clone(), power })
}
