use std::path::{Path, PathBuf};

use gazecheck_core::fusion::{cut_windows, fit_corpus_scaler, StreamFeatures, Task};
use gazecheck_core::model::{save_model, train_with_progress, EpochStats, ModelMeta, ModelParams};
use gazecheck_core::windowing::{make_split, SplitMode, WindowParams, WindowSample};
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::corpus::{corpus_features, load_corpus};
use crate::error::{data, usage, CliResult};
use crate::output::write_json;

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub data: PathBuf,
    pub out: PathBuf,
    pub task: Task,
    /// Share of subjects held out for best-epoch selection; 0 trains on
    /// everything and keeps the last epoch.
    pub validation_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainHistory {
    pub config_hash: String,
    pub task: Task,
    pub train_subjects: Vec<String>,
    pub validation_subjects: Vec<String>,
    pub train_windows: usize,
    pub validation_windows: usize,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
}

pub fn history_path(model: &Path) -> PathBuf {
    model.with_extension("history.json")
}

fn flatten(grouped: Vec<(gazecheck_core::windowing::StreamMeta, Vec<WindowSample>)>) -> Vec<WindowSample> {
    grouped.into_iter().flat_map(|(_, w)| w).collect()
}

pub fn run(cfg: &PipelineConfig, args: &TrainArgs, log: &mut dyn FnMut(String)) -> CliResult<TrainHistory> {
    cfg.validate()?;
    if !(0.0..1.0).contains(&args.validation_fraction) {
        return Err(usage("--validation-fraction must be in [0, 1)"));
    }
    let streams = load_corpus(&args.data, cfg.ingest.budget(), cfg.execution)?;
    let feats: Vec<StreamFeatures> =
        corpus_features(&streams, &cfg.synth.screen, cfg.execution)?.into_iter().filter(|s| args.task.includes(&s.meta)).collect();
    if feats.is_empty() {
        return Err(data(format!("no streams belong to task {}", args.task.name())));
    }
    let mut subjects: Vec<String> = feats.iter().map(|s| s.meta.subject_id.clone()).collect();
    subjects.sort();
    subjects.dedup();
    let (train_subjects, validation_subjects) = if args.validation_fraction > 0.0 {
        let plan = make_split(&subjects, 1, args.validation_fraction, cfg.eval.seed, SplitMode::Repeated)?;
        let r = plan.repeats.into_iter().next().expect("one repeat requested");
        (r.train, r.validation)
    } else {
        (subjects, Vec::new())
    };
    let pick =
        |ids: &[String]| -> Vec<&StreamFeatures> { feats.iter().filter(|s| ids.binary_search(&s.meta.subject_id).is_ok()).collect() };
    let (train_streams, val_streams) = (pick(&train_subjects), pick(&validation_subjects));

    let scaler = fit_corpus_scaler(&train_streams)?;
    let stft = cfg.spectral.stft().map_err(|e| usage(e.to_string()))?;
    let train_window = WindowParams { length: cfg.window.length, stride: cfg.eval.train_stride.unwrap_or(cfg.window.stride) };
    let train_set = flatten(cut_windows(&train_streams, &scaler, train_window, &stft, cfg.execution)?);
    let val_set = flatten(cut_windows(&val_streams, &scaler, cfg.window, &stft, cfg.execution)?);
    if train_set.is_empty() {
        return Err(data("training streams are shorter than one window"));
    }
    log(format!("training on {} windows, validating on {}", train_set.len(), val_set.len()));

    let outcome = train_with_progress(&cfg.arch, &train_set, &val_set, &cfg.train, cfg.execution, |s| {
        let val = match (s.val_loss, s.val_accuracy) {
            (Some(l), Some(a)) => format!(" val loss {l:.4} acc {a:.4}"),
            _ => String::new(),
        };
        log(format!("epoch {:>3} loss {:.4} acc {:.4}{val}", s.epoch, s.train_loss, s.train_accuracy));
    })?;
    let hash = cfg.hash();
    let validation_accuracy = outcome.best_epoch.checked_sub(1).and_then(|i| outcome.history.get(i)).and_then(|h| h.val_accuracy);
    let model = ModelParams {
        arch: cfg.arch.clone(),
        weights: outcome.weights,
        scaler,
        meta: ModelMeta {
            seed: cfg.train.seed,
            epochs_trained: outcome.history.len(),
            best_epoch: outcome.best_epoch,
            validation_accuracy,
            config_hash: hash.clone(),
            train: cfg.train.clone(),
            window: cfg.window,
            spectral: cfg.spectral,
        },
    };
    save_model(&args.out, &model)?;
    let history = TrainHistory {
        config_hash: hash,
        task: args.task,
        train_subjects,
        validation_subjects,
        train_windows: train_set.len(),
        validation_windows: val_set.len(),
        best_epoch: outcome.best_epoch,
        history: outcome.history,
    };
    write_json(&history_path(&args.out), &history)?;
    Ok(history)
}
