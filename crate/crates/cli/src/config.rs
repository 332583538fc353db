//! Layered pipeline configuration: built-in defaults, then an optional TOML
//! file, then `--set section.key=value` overrides and command flags.

use std::path::Path;

use gazecheck_core::exec::Execution;
use gazecheck_core::fusion::{EvalConfig, Protocol, VoteMode, DEFAULT_THRESHOLD};
use gazecheck_core::ingest::{ErrorBudget, N_LANDMARKS};
use gazecheck_core::model::{ArchConfig, TrainConfig};
use gazecheck_core::spectral::SpectralParams;
use gazecheck_core::synth::{ActorProfile, SynthConfig};
use gazecheck_core::windowing::WindowParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{usage, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestConfig {
    /// Share of malformed records tolerated before a stream is rejected.
    pub error_fraction: f64,
    pub min_error_allowance: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        let b = ErrorBudget::default();
        Self { error_fraction: b.fraction, min_error_allowance: b.min_allowance }
    }
}

impl IngestConfig {
    pub fn budget(&self) -> ErrorBudget {
        ErrorBudget { fraction: self.error_fraction, min_allowance: self.min_error_allowance }
    }
}

/// Indices of the six landmarks in the upstream face-mesh output, in stream
/// order (left eye, right eye, nose tip, mouth center, face side, chin).
/// Only the capture front end uses them; they are kept here so artifacts
/// record which points were tracked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LandmarkConfig {
    pub upstream_indices: [u32; N_LANDMARKS],
}

impl Default for LandmarkConfig {
    fn default() -> Self {
        Self { upstream_indices: [468, 473, 1, 13, 234, 152] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectConfig {
    pub voters: usize,
    pub mode: VoteMode,
    pub threshold: f64,
    /// Capacity of the queue between feature extraction and inference.
    pub queue_windows: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self { voters: 1, mode: VoteMode::Soft, threshold: DEFAULT_THRESHOLD, queue_windows: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub execution: Execution,
    pub ingest: IngestConfig,
    pub landmarks: LandmarkConfig,
    pub window: WindowParams,
    pub spectral: SpectralParams,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub detect: DetectConfig,
    pub synth: SynthConfig,
    pub profiles: Vec<ActorProfile>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            execution: Execution::default(),
            ingest: IngestConfig::default(),
            landmarks: LandmarkConfig::default(),
            window: WindowParams::default(),
            spectral: SpectralParams::default(),
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            detect: DetectConfig::default(),
            synth: SynthConfig::default(),
            profiles: ActorProfile::defaults(),
        }
    }
}

impl PipelineConfig {
    /// Defaults overlaid with `file` (if any) and then `overrides`.
    pub fn load(file: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        Self::layered(Self::default(), file, overrides)
    }

    /// `base` overlaid with `file` (if any) and then `overrides`. Tables are
    /// merged key by key; arrays are replaced whole.
    pub fn layered(base: Self, file: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let mut cfg = base;
        if let Some(p) = file {
            let text = std::fs::read_to_string(p).map_err(|e| usage(format!("config {}: {e}", p.display())))?;
            cfg = cfg.merged_with_toml(&text).map_err(|e| usage(format!("config {}: {e}", p.display())))?;
        }
        for o in overrides {
            cfg = cfg.with_override(o)?;
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn merged_with_toml(&self, text: &str) -> Result<Self, String> {
        let over: toml::Table = toml::from_str(text).map_err(|e| e.to_string())?;
        let mut root = toml::Value::try_from(self).map_err(|e| e.to_string())?;
        merge(&mut root, toml::Value::Table(over));
        root.try_into().map_err(|e: toml::de::Error| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Applies one `dotted.key=value` override. The value is parsed as a TOML
    /// value and falls back to a plain string.
    pub fn with_override(&self, spec: &str) -> CliResult<Self> {
        let (key, raw) = spec.split_once('=').ok_or_else(|| usage(format!("override {spec:?} is not key=value")))?;
        let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let mut root = toml::Value::try_from(self).map_err(|e| usage(e.to_string()))?;
        let path: Vec<&str> = key.trim().split('.').collect();
        let (last, parents) = path.split_last().expect("split yields at least one item");
        let mut node = &mut root;
        for p in parents {
            node = node.get_mut(*p).filter(|n| n.is_table()).ok_or_else(|| usage(format!("unknown config section {key:?}")))?;
        }
        let table = node.as_table_mut().ok_or_else(|| usage(format!("{key:?} is not inside a section")))?;
        // Unknown keys surface as deserialization errors; optional keys that
        // are currently unset are absent from the table but still accepted.
        table.insert(last.to_string(), value);
        root.try_into().map_err(|e: toml::de::Error| usage(format!("override {spec:?}: {e}")))
    }

    pub fn validate(&self) -> CliResult<()> {
        self.protocol().validate().map_err(|e| usage(e.to_string()))?;
        self.synth.validate().map_err(|e| usage(e.to_string()))?;
        for p in &self.profiles {
            p.validate().map_err(|e| usage(e.to_string()))?;
        }
        if self.detect.voters == 0 || self.detect.queue_windows == 0 {
            return Err(usage("detect.voters and detect.queue_windows must be positive"));
        }
        if !(self.ingest.error_fraction >= 0.0 && self.ingest.error_fraction <= 1.0) {
            return Err(usage("ingest.error_fraction must be in [0, 1]"));
        }
        Ok(())
    }

    pub fn protocol(&self) -> Protocol {
        Protocol {
            arch: self.arch.clone(),
            train: self.train.clone(),
            window: self.window,
            spectral: self.spectral,
            eval: self.eval.clone(),
        }
    }

    /// SHA-256 (hex) of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let c = PipelineConfig::default();
        let back = PipelineConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = PipelineConfig::from_toml("[train]\nepochs = 3\n[window]\nstride = 90\n").unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.batch_size, 32);
        assert_eq!(c.window.stride, 90);
        assert_eq!(c.window.length, 1800);
    }

    #[test]
    fn file_layers_over_a_custom_base() {
        let base = PipelineConfig::default().with_override("train.epochs=9").unwrap();
        let c = base.merged_with_toml("[train]\nbatch_size = 8\n").unwrap();
        assert_eq!((c.train.epochs, c.train.batch_size), (9, 8));
        assert!(base.merged_with_toml("[train]\nbatch = 8\n").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::from_toml("[train]\nepochz = 3\n").is_err());
        assert!(PipelineConfig::from_toml("[nonsense]\n").is_err());
        let c = PipelineConfig::default();
        assert!(c.with_override("train.epochz=3").is_err());
        assert!(c.with_override("bogus.epochs=3").is_err());
    }

    #[test]
    fn overrides_apply_and_change_hash() {
        let c = PipelineConfig::default();
        let d = c.with_override("train.epochs=7").unwrap().with_override("execution=sequential").unwrap();
        assert_eq!(d.train.epochs, 7);
        assert_eq!(d.execution, Execution::Sequential);
        assert_ne!(c.hash(), d.hash());
        assert_eq!(c.with_override("eval.train_stride=900").unwrap().eval.train_stride, Some(900));
        assert!(c.with_override("train.epochs=seven").is_err());
    }
}
