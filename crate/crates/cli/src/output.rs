use std::path::Path;

use serde::Serialize;

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};

pub fn prepare_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Effective config echoed next to an artifact, hash on the first line.
pub fn write_config(dir: &Path, cfg: &PipelineConfig) -> CliResult<()> {
    let text = format!("# config hash {}\n{}", cfg.hash(), cfg.to_toml());
    let path = dir.join("config.toml");
    std::fs::write(&path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}
