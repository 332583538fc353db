use std::path::PathBuf;

use gazecheck_core::ingest::{write_stream, GazeKind};
use gazecheck_core::synth::{synthesize_corpus, CorpusSpec, MIN_SCRIPT_MS};
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::{usage, CliResult};
use crate::output::{prepare_dir, write_config, write_json};

#[derive(Debug, Clone)]
pub struct SynthArgs {
    pub subjects: usize,
    pub minutes: f64,
    pub seed: u64,
    pub gaze: GazeKind,
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    config_hash: &'a str,
    subjects: usize,
    minutes: f64,
    seed: u64,
    gaze: GazeKind,
    files: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize)]
struct ManifestEntry {
    file: String,
    subject: String,
    generator: String,
    frames: usize,
}

/// Writes one stream per subject and profile, plus `manifest.json` and the
/// effective `config.toml`. Returns the stream file paths.
pub fn run(cfg: &PipelineConfig, args: &SynthArgs) -> CliResult<Vec<PathBuf>> {
    cfg.validate()?;
    if args.subjects == 0 {
        return Err(usage("--subjects must be at least 1"));
    }
    if !(args.minutes.is_finite() && args.minutes * 60_000.0 >= MIN_SCRIPT_MS as f64) {
        return Err(usage(format!("--minutes must be at least {}", MIN_SCRIPT_MS / 60_000)));
    }
    if cfg.profiles.is_empty() {
        return Err(usage("config lists no profiles"));
    }
    prepare_dir(&args.out)?;
    let hash = cfg.hash();
    let spec = CorpusSpec { subjects: args.subjects, minutes: args.minutes, seed: args.seed, gaze: args.gaze };
    let streams = synthesize_corpus(&spec, &cfg.synth, &cfg.profiles, Some(&hash), cfg.execution)?;

    let mut files = Vec::with_capacity(streams.len());
    let mut entries = Vec::with_capacity(streams.len());
    for s in &streams {
        let name = format!("{}.jsonl", s.file_stem());
        let path = args.out.join(&name);
        write_stream(&s.header, &s.frames, &path)?;
        entries.push(ManifestEntry {
            file: name,
            subject: s.header.subject_id.clone(),
            generator: s.header.class_name().to_string(),
            frames: s.frames.len(),
        });
        files.push(path);
    }
    let manifest =
        Manifest { config_hash: &hash, subjects: args.subjects, minutes: args.minutes, seed: args.seed, gaze: args.gaze, files: entries };
    write_json(&args.out.join("manifest.json"), &manifest)?;
    write_config(&args.out, cfg)?;
    Ok(files)
}
