use std::path::PathBuf;

use gazecheck_core::fusion::{
    cut_windows, format_summary, format_voting_table, run_tasks, score_windows, EvalEvent, ScoreReport, StreamFeatures, Task, TaskReport,
};
use gazecheck_core::model::ModelParams;
use gazecheck_core::windowing::make_split;
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::corpus::{corpus_features, load_corpus};
use crate::error::{data, usage, CliResult};
use crate::output::write_json;

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub data: PathBuf,
    pub tasks: Vec<Task>,
    pub out: PathBuf,
}

/// Sections of the effective config that disagree with a model file.
pub fn model_conflicts(cfg: &PipelineConfig, model: &ModelParams) -> Vec<String> {
    let mut out = Vec::new();
    if cfg.arch != model.arch {
        out.push("arch".to_string());
    }
    if cfg.train != model.meta.train {
        out.push("train".to_string());
    }
    if cfg.window != model.meta.window {
        out.push("window".to_string());
    }
    if cfg.spectral != model.meta.spectral {
        out.push("spectral".to_string());
    }
    out
}

/// Built-in defaults with the model's embedded sections layered on top, as
/// the base for the config file and flags.
pub fn model_base(model: &ModelParams) -> PipelineConfig {
    PipelineConfig {
        arch: model.arch.clone(),
        train: model.meta.train.clone(),
        window: model.meta.window,
        spectral: model.meta.spectral,
        ..PipelineConfig::default()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelScore {
    pub task: Task,
    pub score: ScoreReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub config: PipelineConfig,
    pub model_config_hash: Option<String>,
    /// Conflicting sections accepted with `--force`.
    pub forced_conflicts: Vec<String>,
    pub model_scores: Vec<ModelScore>,
    pub tasks: Vec<TaskReport>,
}

impl EvalReport {
    pub fn tables(&self) -> String {
        let mut out = String::new();
        for m in &self.model_scores {
            let r = &m.score.metrics;
            out += &format!("model on {}: accuracy {:.2}% auc {:.3} eer {:.3}\n", m.task.name(), 100.0 * r.accuracy, r.auc, r.eer);
        }
        if !self.tasks.is_empty() {
            out += &format_summary(&self.tasks);
            out.push('\n');
            out += &format_voting_table(&self.tasks);
        }
        out
    }
}

/// Scores `model` (if any) on every task, then runs the repeated
/// subject-disjoint protocol (`eval.repeats` splits, a fresh model per split).
pub fn run(
    cfg: &PipelineConfig,
    args: &EvalArgs,
    model: Option<&ModelParams>,
    forced_conflicts: Vec<String>,
    log: &mut dyn FnMut(String),
) -> CliResult<EvalReport> {
    cfg.validate()?;
    if args.tasks.is_empty() {
        return Err(usage("no tasks selected"));
    }
    if cfg.eval.repeats == 0 && model.is_none() {
        return Err(usage("--repeats 0 only makes sense with --model"));
    }
    let streams = load_corpus(&args.data, cfg.ingest.budget(), cfg.execution)?;
    let corpus = corpus_features(&streams, &cfg.synth.screen, cfg.execution)?;
    drop(streams);

    let mut model_scores = Vec::new();
    if let Some(m) = model {
        let net = m.network()?;
        let stft = m.meta.spectral.stft().map_err(|e| usage(e.to_string()))?;
        for &task in &args.tasks {
            let picked: Vec<&StreamFeatures> = corpus.iter().filter(|s| task.includes(&s.meta)).collect();
            let windows = cut_windows(&picked, &m.scaler, m.meta.window, &stft, cfg.execution)?;
            let score = score_windows(&net, &windows, &cfg.eval.voters, cfg.eval.threshold, m.meta.window, cfg.execution)?;
            log(format!("model on {}: accuracy {:.4}", task.name(), score.metrics.accuracy));
            model_scores.push(ModelScore { task, score });
        }
    }

    let tasks = if cfg.eval.repeats > 0 {
        let mut subjects: Vec<String> = corpus.iter().map(|s| s.meta.subject_id.clone()).collect();
        subjects.sort();
        subjects.dedup();
        let plan = make_split(&subjects, cfg.eval.repeats, cfg.eval.validation_fraction, cfg.eval.seed, cfg.eval.split_mode)
            .map_err(|e| data(e.to_string()))?;
        run_tasks(&corpus, &args.tasks, &plan, &cfg.protocol(), cfg.execution, &mut |ev| match ev {
            EvalEvent::RepeatStarted { task, repeat, train_windows, validation_windows } => log(format!(
                "{} repeat {}: {train_windows} training windows, {validation_windows} validation windows",
                task.name(),
                repeat + 1
            )),
            EvalEvent::Epoch { .. } => {}
            EvalEvent::RepeatFinished { task, repeat, accuracy } => {
                log(format!("{} repeat {}: accuracy {accuracy:.4}", task.name(), repeat + 1))
            }
        })?
    } else {
        Vec::new()
    };

    let report = EvalReport {
        config_hash: cfg.hash(),
        config: cfg.clone(),
        model_config_hash: model.map(|m| m.meta.config_hash.clone()),
        forced_conflicts,
        model_scores,
        tasks,
    };
    write_json(&args.out, &report)?;
    Ok(report)
}
