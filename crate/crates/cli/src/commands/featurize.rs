use std::path::{Path, PathBuf};

use gazecheck_core::features::{fit_scaler, scale_frames, FeatureFrame, RobustScaler, LANDMARK_NAMES};
use gazecheck_core::windowing::{make_windows, write_window_cache};
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::corpus::{corpus_features, load_corpus};
use crate::error::{CliError, CliResult};
use crate::output::{prepare_dir, write_config, write_json};

#[derive(Debug, Clone)]
pub struct FeaturizeArgs {
    pub data: PathBuf,
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct ScalerFile<'a> {
    config_hash: &'a str,
    scaler: &'a RobustScaler,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeaturizeSummary {
    pub streams: usize,
    pub frames: usize,
    pub windows: usize,
}

/// Column order of the per-stream feature CSV.
pub fn feature_columns() -> Vec<String> {
    let mut cols = vec!["frame".to_string(), "ctx".to_string()];
    for part in ["ux", "uy", "mag"] {
        cols.extend(LANDMARK_NAMES.iter().map(|l| format!("{l}_{part}")));
    }
    cols
}

fn write_features(path: &Path, frames: &[FeatureFrame]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let io = |e: csv::Error| CliError::Data(format!("{}: {e}", path.display()));
    w.write_record(feature_columns()).map_err(io)?;
    for (i, f) in frames.iter().enumerate() {
        let mut row = vec![i.to_string(), f.ctx.code().to_string()];
        row.extend(f.ux.iter().chain(&f.uy).chain(&f.mag).map(|v| v.to_string()));
        w.write_record(&row).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes, per stream, unscaled per-frame features (`<stem>.features.csv`)
/// and scaled windows (`<stem>.windows`), plus the corpus scaler.
pub fn run(cfg: &PipelineConfig, args: &FeaturizeArgs) -> CliResult<FeaturizeSummary> {
    cfg.validate()?;
    let streams = load_corpus(&args.data, cfg.ingest.budget(), cfg.execution)?;
    let feats = corpus_features(&streams, &cfg.synth.screen, cfg.execution)?;
    let all: Vec<FeatureFrame> = feats.iter().flat_map(|s| s.frames.iter().copied()).collect();
    let scaler = fit_scaler(&all).map_err(|e| CliError::Data(e.to_string()))?;
    let stft = cfg.spectral.stft().map_err(|e| CliError::Usage(e.to_string()))?;
    prepare_dir(&args.out)?;

    let mut summary = FeaturizeSummary { streams: streams.len(), frames: all.len(), windows: 0 };
    for (s, f) in streams.iter().zip(&feats) {
        let stem = s.stem();
        write_features(&args.out.join(format!("{stem}.features.csv")), &f.frames)?;
        let windows = make_windows(&scale_frames(&f.frames, &scaler), cfg.window, &stft, &f.meta, cfg.execution)?;
        summary.windows += windows.len();
        write_window_cache(args.out.join(format!("{stem}.windows")), &windows)?;
    }
    let hash = cfg.hash();
    write_json(&args.out.join("scaler.json"), &ScalerFile { config_hash: &hash, scaler: &scaler })?;
    write_config(&args.out, cfg)?;
    Ok(summary)
}
