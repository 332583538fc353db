//! Loading a directory of JSONL streams.

use std::path::{Path, PathBuf};

use gazecheck_core::exec::{self, Execution};
use gazecheck_core::features::featurize_frames;
use gazecheck_core::fusion::StreamFeatures;
use gazecheck_core::geometry::ScreenModel;
use gazecheck_core::ingest::{read_stream, ErrorBudget, GazeStream};
use gazecheck_core::windowing::StreamMeta;

use crate::error::{data, CliError, CliResult};

pub const STREAM_EXT: &str = "jsonl";

#[derive(Debug, Clone)]
pub struct LoadedStream {
    pub path: PathBuf,
    pub stream: GazeStream,
}

impl LoadedStream {
    pub fn stem(&self) -> String {
        self.path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
    }

    /// Identity used for windows and splits. Streams without a class label are rejected.
    pub fn meta(&self) -> CliResult<StreamMeta> {
        let h = &self.stream.header;
        let label = h.class_label.ok_or_else(|| data(format!("{}: header has no class label", self.path.display())))?;
        Ok(StreamMeta { subject_id: h.subject_id.clone(), label: label.target(), generator: h.generator.clone() })
    }

    pub fn features(&self, fallback_screen: &ScreenModel) -> CliResult<StreamFeatures> {
        let screen = self.stream.header.screen.unwrap_or(*fallback_screen);
        let frames = featurize_frames(&self.stream.frames, Some(&screen)).map_err(|e| data(format!("{}: {e}", self.path.display())))?;
        Ok(StreamFeatures { meta: self.meta()?, frames })
    }
}

/// Stream files in `dir`, sorted by file name.
pub fn list_streams(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| data(format!("{}: {e}", dir.display())))?;
    let mut paths = Vec::new();
    for entry in entries {
        let p = entry?.path();
        if p.is_file() && p.extension().is_some_and(|e| e == STREAM_EXT) {
            paths.push(p);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(data(format!("no .{STREAM_EXT} streams in {}", dir.display())));
    }
    Ok(paths)
}

pub fn load_corpus(dir: &Path, budget: ErrorBudget, exec: Execution) -> CliResult<Vec<LoadedStream>> {
    let paths = list_streams(dir)?;
    exec::map(exec, &paths, |p| {
        read_stream(p, budget).map(|stream| LoadedStream { path: p.clone(), stream }).map_err(|e| data(format!("{}: {e}", p.display())))
    })
    .into_iter()
    .collect()
}

pub fn corpus_features(streams: &[LoadedStream], screen: &ScreenModel, exec: Execution) -> CliResult<Vec<StreamFeatures>> {
    exec::map(exec, streams, |s| s.features(screen)).into_iter().collect::<Result<Vec<_>, CliError>>()
}
