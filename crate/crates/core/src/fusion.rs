//! Window fusion (hard and soft voting), detection metrics, and the
//! repeated subject-disjoint evaluation harness.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::features::{fit_scaler, scale_frames, FeatureError, FeatureFrame, RobustScaler};
use crate::ingest::ClassLabel;
use crate::model::{predict_windows, train_with_progress, ArchConfig, EpochStats, ModelError, Network, TrainConfig};
use crate::spectral::{SpectralError, SpectralParams, Stft};
use crate::windowing::{make_windows, SplitMode, SplitPlan, StreamMeta, WindowError, WindowParams, WindowSample};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_VOTERS: [usize; 7] = [1, 3, 5, 10, 15, 30, 60];

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("no probabilities to fuse")]
    Empty,
    #[error("voter count must be at least 1")]
    ZeroVoters,
    #[error("non-finite probability at index {0}")]
    NonFinite(usize),
    #[error("metrics need both classes (positives {positives}, negatives {negatives})")]
    SingleClass { positives: usize, negatives: usize },
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("{0}")]
    Setup(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoteMode {
    Hard,
    Soft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    /// Mean fake probability over the voters.
    pub probability: f64,
    pub label: ClassLabel,
    pub n_voters: usize,
    /// Voters at or above the threshold.
    pub fake_votes: usize,
    pub window_ids: Vec<usize>,
    /// `length + (n_voters - 1) * stride`.
    pub latency_frames: usize,
    /// Frames consumed when the verdict became available (end of the newest window).
    pub frame: usize,
}

fn check_probs(probs: &[f64]) -> Result<(), FusionError> {
    if probs.is_empty() {
        return Err(FusionError::Empty);
    }
    match probs.iter().position(|p| !p.is_finite()) {
        Some(i) => Err(FusionError::NonFinite(i)),
        None => Ok(()),
    }
}

/// Fuses consecutive windows `first_id..first_id + probs.len()`.
pub fn fuse(mode: VoteMode, probs: &[f64], threshold: f64, params: WindowParams, first_id: usize) -> Result<Verdict, FusionError> {
    check_probs(probs)?;
    let n = probs.len();
    let fake_votes = probs.iter().filter(|&&p| p >= threshold).count();
    let probability = probs.iter().sum::<f64>() / n as f64;
    let fake = match mode {
        // ties go to fake
        VoteMode::Hard => 2 * fake_votes >= n,
        VoteMode::Soft => probability >= threshold,
    };
    let last = first_id + n - 1;
    Ok(Verdict {
        probability,
        label: if fake { ClassLabel::Fake } else { ClassLabel::Genuine },
        n_voters: n,
        fake_votes,
        window_ids: (first_id..=last).collect(),
        latency_frames: params.latency_frames(n),
        frame: last * params.stride + params.length,
    })
}

/// Majority of thresholded window labels; even splits resolve to fake.
pub fn hard_vote(probs: &[f64], threshold: f64) -> Result<Verdict, FusionError> {
    fuse(VoteMode::Hard, probs, threshold, WindowParams::default(), 0)
}

/// Mean probability against the threshold (inclusive).
pub fn soft_vote(probs: &[f64], threshold: f64) -> Result<Verdict, FusionError> {
    fuse(VoteMode::Soft, probs, threshold, WindowParams::default(), 0)
}

/// Sliding vote over the most recent `n_voters` window probabilities.
#[derive(Debug, Clone)]
pub struct StreamingVoter {
    mode: VoteMode,
    n_voters: usize,
    threshold: f64,
    params: WindowParams,
    recent: VecDeque<f64>,
    next_window: usize,
}

impl StreamingVoter {
    pub fn new(mode: VoteMode, n_voters: usize, threshold: f64, params: WindowParams) -> Result<Self, FusionError> {
        if n_voters == 0 {
            return Err(FusionError::ZeroVoters);
        }
        Ok(Self { mode, n_voters, threshold, params, recent: VecDeque::with_capacity(n_voters), next_window: 0 })
    }

    pub fn n_voters(&self) -> usize {
        self.n_voters
    }

    /// Feeds the next window's probability; yields a verdict once warm.
    pub fn push(&mut self, prob: f64) -> Result<Option<Verdict>, FusionError> {
        if !prob.is_finite() {
            return Err(FusionError::NonFinite(self.next_window));
        }
        if self.recent.len() == self.n_voters {
            self.recent.pop_front();
        }
        self.recent.push_back(prob);
        self.next_window += 1;
        if self.recent.len() < self.n_voters {
            return Ok(None);
        }
        let probs: Vec<f64> = self.recent.iter().copied().collect();
        fuse(self.mode, &probs, self.threshold, self.params, self.next_window - self.n_voters).map(Some)
    }
}

pub fn streaming_verdicts(
    probs: &[f64],
    n_voters: usize,
    mode: VoteMode,
    threshold: f64,
    params: WindowParams,
) -> Result<Vec<Verdict>, FusionError> {
    let mut voter = StreamingVoter::new(mode, n_voters, threshold, params)?;
    let mut out = Vec::with_capacity(probs.len().saturating_sub(n_voters - 1));
    for &p in probs {
        if let Some(v) = voter.push(p)? {
            out.push(v);
        }
    }
    Ok(out)
}

/// `threshold: None` is the operating point that flags nothing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    pub fpr: f64,
    pub fnr: f64,
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n_positive: usize,
    pub n_negative: usize,
    pub accuracy: f64,
    pub auc: f64,
    pub eer: f64,
    /// Sweep point with the smallest `|fpr - fnr|`.
    pub eer_threshold: Option<f64>,
    pub roc: Vec<RocPoint>,
    pub det: Vec<DetPoint>,
}

/// Scores are fake probabilities; label 1 is fake. A score at or above
/// `threshold` counts as a fake prediction.
pub fn compute_metrics(scores: &[f64], labels: &[u8], threshold: f64) -> Result<MetricReport, FusionError> {
    if scores.len() != labels.len() {
        return Err(FusionError::LengthMismatch { scores: scores.len(), labels: labels.len() });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(FusionError::NonFinite(i));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(FusionError::SingleClass { positives, negatives });
    }
    let correct = scores.iter().zip(labels).filter(|(s, l)| (**s >= threshold) == (**l == 1)).count();

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (p, n) = (positives as f64, negatives as f64);
    let mut roc = vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: None }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        roc.push(RocPoint { fpr: fp as f64 / n, tpr: tp as f64 / p, threshold: Some(t) });
    }
    let auc = roc.windows(2).map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0).sum::<f64>();
    let det: Vec<DetPoint> = roc.iter().map(|r| DetPoint { fpr: r.fpr, fnr: 1.0 - r.tpr, threshold: r.threshold }).collect();

    // fpr - fnr rises from -1 to +1 along the sweep; interpolate its zero.
    let gap = |d: &DetPoint| d.fpr - d.fnr;
    let k = det.iter().position(|d| gap(d) >= 0.0).expect("last sweep point has fpr 1 and fnr 0");
    let eer = if gap(&det[k]) == 0.0 || k == 0 {
        det[k].fpr
    } else {
        let (a, b) = (&det[k - 1], &det[k]);
        let alpha = -gap(a) / (gap(b) - gap(a));
        a.fpr + alpha * (b.fpr - a.fpr)
    };
    let eer_threshold = det.iter().min_by(|a, b| gap(a).abs().total_cmp(&gap(b).abs())).and_then(|d| d.threshold);

    Ok(MetricReport {
        n_positive: positives,
        n_negative: negatives,
        accuracy: correct as f64 / labels.len() as f64,
        auc,
        eer,
        eer_threshold,
        roc,
        det,
    })
}

/// Which fake class is pitted against the genuine streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    FaceShifter,
    DfLive,
    Mixed,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::FaceShifter, Task::DfLive, Task::Mixed];

    pub fn name(self) -> &'static str {
        match self {
            Task::FaceShifter => "faceshifter",
            Task::DfLive => "dflive",
            Task::Mixed => "mixed",
        }
    }

    /// Genuine streams are in every task; fakes are filtered by generator tag.
    pub fn includes(self, meta: &StreamMeta) -> bool {
        if meta.label == 0 {
            return true;
        }
        match self {
            Task::Mixed => true,
            t => meta.generator.as_deref() == Some(t.name()),
        }
    }
}

impl FromStr for Task {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Task::ALL.into_iter().find(|t| t.name() == s).ok_or_else(|| format!("unknown task {s:?}"))
    }
}

/// Per-frame features of one stream, before magnitude scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamFeatures {
    pub meta: StreamMeta,
    pub frames: Vec<FeatureFrame>,
}

/// Group key for the per-generator breakdown.
pub fn generator_key(meta: &StreamMeta) -> String {
    if meta.label == 0 {
        "genuine".to_string()
    } else {
        meta.generator.clone().unwrap_or_else(|| "fake".to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub repeats: usize,
    pub validation_fraction: f64,
    pub split_mode: SplitMode,
    pub seed: u64,
    pub voters: Vec<usize>,
    pub threshold: f64,
    /// Stride for cutting training windows (validation windows always use
    /// the window stride). `None` means the window stride.
    pub train_stride: Option<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            repeats: 10,
            validation_fraction: 0.2,
            split_mode: SplitMode::Repeated,
            seed: 0,
            voters: DEFAULT_VOTERS.to_vec(),
            threshold: DEFAULT_THRESHOLD,
            train_stride: None,
        }
    }
}

/// Everything a training-and-scoring run depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub window: WindowParams,
    pub spectral: SpectralParams,
    pub eval: EvalConfig,
}

impl Protocol {
    pub fn validate(&self) -> Result<(), FusionError> {
        self.arch.validate()?;
        self.train.validate()?;
        self.window.validate()?;
        if self.arch.seq_len != self.window.length {
            return Err(FusionError::Setup(format!(
                "architecture expects windows of {} frames, window length is {}",
                self.arch.seq_len, self.window.length
            )));
        }
        if let Some(s) = self.eval.train_stride {
            WindowParams { length: self.window.length, stride: s }.validate()?;
        }
        if self.eval.voters.contains(&0) {
            return Err(FusionError::ZeroVoters);
        }
        Ok(())
    }

    fn train_window(&self) -> WindowParams {
        WindowParams { length: self.window.length, stride: self.eval.train_stride.unwrap_or(self.window.stride) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VotingRow {
    pub n: usize,
    /// `None` when no stream has `n` windows.
    pub hard: Option<f64>,
    pub soft: Option<f64>,
    pub verdicts: usize,
}

/// Window scores for a set of streams and everything derived from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub metrics: MetricReport,
    pub per_generator: BTreeMap<String, f64>,
    pub voting: Vec<VotingRow>,
}

fn voting_rows(
    streams: &[(StreamMeta, Vec<f64>)],
    voters: &[usize],
    threshold: f64,
    params: WindowParams,
) -> Result<Vec<VotingRow>, FusionError> {
    let mut ns: Vec<usize> = voters.to_vec();
    ns.push(1);
    ns.sort_unstable();
    ns.dedup();
    ns.into_iter()
        .map(|n| {
            let acc = |mode| -> Result<(Option<f64>, usize), FusionError> {
                let (mut right, mut total) = (0usize, 0usize);
                for (meta, probs) in streams {
                    if probs.len() < n {
                        continue;
                    }
                    for v in streaming_verdicts(probs, n, mode, threshold, params)? {
                        total += 1;
                        right += usize::from(
                            v.label == ClassLabel::Fake && meta.label == 1 || v.label == ClassLabel::Genuine && meta.label == 0,
                        );
                    }
                }
                Ok(((total > 0).then(|| right as f64 / total as f64), total))
            };
            let (hard, verdicts) = acc(VoteMode::Hard)?;
            let (soft, _) = acc(VoteMode::Soft)?;
            Ok(VotingRow { n, hard, soft, verdicts })
        })
        .collect()
}

/// Scores already-cut windows (grouped per stream, in window order).
pub fn score_windows<T: crate::model::layers::Real>(
    net: &Network<T>,
    streams: &[(StreamMeta, Vec<WindowSample>)],
    voters: &[usize],
    threshold: f64,
    params: WindowParams,
    exec: Execution,
) -> Result<ScoreReport, FusionError> {
    let mut scored = Vec::with_capacity(streams.len());
    for (meta, windows) in streams {
        scored.push((meta.clone(), predict_windows(net, windows, exec)?));
    }
    let scores: Vec<f64> = scored.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    let labels: Vec<u8> = scored.iter().flat_map(|(m, p)| std::iter::repeat_n(m.label, p.len())).collect();
    let metrics = compute_metrics(&scores, &labels, threshold)?;
    let mut groups: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (meta, probs) in &scored {
        let e = groups.entry(generator_key(meta)).or_default();
        e.0 += probs.iter().filter(|&&p| (p >= threshold) == (meta.label == 1)).count();
        e.1 += probs.len();
    }
    let per_generator = groups.into_iter().filter(|(_, (_, t))| *t > 0).map(|(k, (c, t))| (k, c as f64 / t as f64)).collect();
    let voting = voting_rows(&scored, voters, threshold, params)?;
    Ok(ScoreReport { metrics, per_generator, voting })
}

/// Scales and windows streams for inference.
pub fn cut_windows(
    streams: &[&StreamFeatures],
    scaler: &RobustScaler,
    params: WindowParams,
    stft: &Stft,
    exec: Execution,
) -> Result<Vec<(StreamMeta, Vec<WindowSample>)>, FusionError> {
    streams
        .iter()
        .map(|s| {
            let scaled = scale_frames(&s.frames, scaler);
            Ok((s.meta.clone(), make_windows(&scaled, params, stft, &s.meta, exec)?))
        })
        .collect()
}

/// Fits the magnitude scaler on the concatenated frames of `streams`.
pub fn fit_corpus_scaler(streams: &[&StreamFeatures]) -> Result<RobustScaler, FusionError> {
    let all: Vec<FeatureFrame> = streams.iter().flat_map(|s| s.frames.iter().copied()).collect();
    Ok(fit_scaler(&all)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatReport {
    pub repeat: usize,
    pub seed: u64,
    pub train_subjects: Vec<String>,
    pub validation_subjects: Vec<String>,
    pub train_windows: usize,
    pub validation_windows: usize,
    pub best_epoch: usize,
    pub score: ScoreReport,
    pub history: Vec<EpochStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        Some(Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

/// Mean voting accuracy and gain over single-window accuracy, across the
/// repeats where `n` voters were possible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VotingGain {
    pub n: usize,
    pub hard_accuracy: Option<f64>,
    pub soft_accuracy: Option<f64>,
    pub hard_gain: Option<f64>,
    pub soft_gain: Option<f64>,
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub task: Task,
    pub accuracy: Summary,
    pub auc: Summary,
    pub eer: Summary,
    pub per_generator: BTreeMap<String, Summary>,
    pub voting: Vec<VotingGain>,
    pub repeats: Vec<RepeatReport>,
}

fn aggregate(task: Task, repeats: Vec<RepeatReport>) -> TaskReport {
    let col = |f: &dyn Fn(&RepeatReport) -> f64| Summary::of(&repeats.iter().map(f).collect::<Vec<_>>()).expect("at least one repeat");
    let accuracy = col(&|r| r.score.metrics.accuracy);
    let auc = col(&|r| r.score.metrics.auc);
    let eer = col(&|r| r.score.metrics.eer);
    let keys: BTreeSet<&String> = repeats.iter().flat_map(|r| r.score.per_generator.keys()).collect();
    let per_generator = keys
        .into_iter()
        .filter_map(|k| {
            let v: Vec<f64> = repeats.iter().filter_map(|r| r.score.per_generator.get(k).copied()).collect();
            Summary::of(&v).map(|s| (k.clone(), s))
        })
        .collect();
    let ns: BTreeSet<usize> = repeats.iter().flat_map(|r| r.score.voting.iter().map(|v| v.n)).collect();
    let voting = ns
        .into_iter()
        .map(|n| {
            let rows: Vec<(&VotingRow, &VotingRow)> = repeats
                .iter()
                .filter_map(|r| {
                    let base = r.score.voting.iter().find(|v| v.n == 1)?;
                    let row = r.score.voting.iter().find(|v| v.n == n)?;
                    Some((base, row))
                })
                .collect();
            let mean = |f: &dyn Fn(&(&VotingRow, &VotingRow)) -> Option<f64>| {
                let v: Vec<f64> = rows.iter().filter_map(f).collect();
                Summary::of(&v).map(|s| s.mean)
            };
            VotingGain {
                n,
                hard_accuracy: mean(&|(_, r)| r.hard),
                soft_accuracy: mean(&|(_, r)| r.soft),
                hard_gain: mean(&|(b, r)| Some(r.hard? - b.hard?)),
                soft_gain: mean(&|(b, r)| Some(r.soft? - b.soft?)),
                repeats: rows.iter().filter(|(_, r)| r.hard.is_some()).count(),
            }
        })
        .collect();
    TaskReport { task, accuracy, auc, eer, per_generator, voting, repeats }
}

/// Progress notifications from [`run_evaluation`].
#[derive(Debug, Clone)]
pub enum EvalEvent<'a> {
    RepeatStarted { task: Task, repeat: usize, train_windows: usize, validation_windows: usize },
    Epoch { task: Task, repeat: usize, stats: &'a EpochStats },
    RepeatFinished { task: Task, repeat: usize, accuracy: f64 },
}

/// Trains and scores one model per split repeat on the streams of `task`.
pub fn run_evaluation(
    corpus: &[StreamFeatures],
    task: Task,
    plan: &SplitPlan,
    protocol: &Protocol,
    exec: Execution,
    progress: &mut dyn FnMut(EvalEvent<'_>),
) -> Result<TaskReport, FusionError> {
    protocol.validate()?;
    if plan.repeats.is_empty() {
        return Err(FusionError::Setup("split plan has no repeats".into()));
    }
    let stft = protocol.spectral.stft()?;
    let in_task: Vec<&StreamFeatures> = corpus.iter().filter(|s| task.includes(&s.meta)).collect();
    let mut reports = Vec::with_capacity(plan.repeats.len());
    for (r, split) in plan.repeats.iter().enumerate() {
        let pick = |subjects: &[String]| -> Vec<&StreamFeatures> {
            in_task.iter().copied().filter(|s| subjects.binary_search(&s.meta.subject_id).is_ok()).collect()
        };
        let (train_streams, val_streams) = (pick(&split.train), pick(&split.validation));
        if train_streams.is_empty() || val_streams.is_empty() {
            return Err(FusionError::Setup(format!("repeat {r} of task {} has an empty side", task.name())));
        }
        let scaler = fit_corpus_scaler(&train_streams)?;
        let train_set: Vec<WindowSample> =
            cut_windows(&train_streams, &scaler, protocol.train_window(), &stft, exec)?.into_iter().flat_map(|(_, w)| w).collect();
        let val_grouped = cut_windows(&val_streams, &scaler, protocol.window, &stft, exec)?;
        let val_set: Vec<WindowSample> = val_grouped.iter().flat_map(|(_, w)| w.iter().cloned()).collect();
        if val_set.is_empty() {
            return Err(FusionError::Setup(format!("repeat {r}: validation streams are shorter than one window")));
        }
        progress(EvalEvent::RepeatStarted { task, repeat: r, train_windows: train_set.len(), validation_windows: val_set.len() });

        let seed = protocol.train.seed.wrapping_add(r as u64);
        let cfg = TrainConfig { seed, ..protocol.train.clone() };
        let outcome = train_with_progress(&protocol.arch, &train_set, &val_set, &cfg, exec, |stats| {
            progress(EvalEvent::Epoch { task, repeat: r, stats })
        })?;
        drop(val_set);
        let net = Network::<f32>::from_params(protocol.arch.clone(), outcome.weights)?;
        let score = score_windows(&net, &val_grouped, &protocol.eval.voters, protocol.eval.threshold, protocol.window, exec)?;
        progress(EvalEvent::RepeatFinished { task, repeat: r, accuracy: score.metrics.accuracy });
        reports.push(RepeatReport {
            repeat: r,
            seed,
            train_subjects: split.train.clone(),
            validation_subjects: split.validation.clone(),
            train_windows: train_set.len(),
            validation_windows: val_grouped.iter().map(|(_, w)| w.len()).sum(),
            best_epoch: outcome.best_epoch,
            score,
            history: outcome.history,
        });
    }
    Ok(aggregate(task, reports))
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{:.2}", 100.0 * x))
}

fn signed_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{:+.2}", 100.0 * x))
}

/// Aligned text: one row per voter count, hard and soft gains in percentage
/// points for every task.
pub fn format_voting_table(reports: &[TaskReport]) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:>8}", "voters");
    for r in reports {
        let _ = write!(out, " {:>14} {:>14}", format!("{} hard", r.task.name()), format!("{} soft", r.task.name()));
    }
    out.push('\n');
    let ns: BTreeSet<usize> = reports.iter().flat_map(|r| r.voting.iter().map(|v| v.n)).collect();
    for n in ns {
        let _ = write!(out, "{n:>8}");
        for r in reports {
            let row = r.voting.iter().find(|v| v.n == n);
            let _ = write!(out, " {:>14} {:>14}", signed_pct(row.and_then(|v| v.hard_gain)), signed_pct(row.and_then(|v| v.soft_gain)));
        }
        out.push('\n');
    }
    out
}

/// Aligned text summary of per-task accuracy, AUC and EER.
pub fn format_summary(reports: &[TaskReport]) -> String {
    let mut out = format!("{:<12} {:>9} {:>9} {:>9} {:>7} {:>7}\n", "task", "acc mean", "acc min", "acc max", "auc", "eer");
    for r in reports {
        let _ = writeln!(
            out,
            "{:<12} {:>9} {:>9} {:>9} {:>7.3} {:>7.3}",
            r.task.name(),
            pct(Some(r.accuracy.mean)),
            pct(Some(r.accuracy.min)),
            pct(Some(r.accuracy.max)),
            r.auc.mean,
            r.eer.mean
        );
    }
    out
}

/// Evaluates several tasks in order over the same split plan.
pub fn run_tasks(
    corpus: &[StreamFeatures],
    tasks: &[Task],
    plan: &SplitPlan,
    protocol: &Protocol,
    exec: Execution,
    progress: &mut dyn FnMut(EvalEvent<'_>),
) -> Result<Vec<TaskReport>, FusionError> {
    tasks.iter().map(|&t| run_evaluation(corpus, t, plan, protocol, exec, progress)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_vote_examples() {
        let v = hard_vote(&[0.6, 0.6, 0.1], 0.5).unwrap();
        assert_eq!((v.label, v.fake_votes), (ClassLabel::Fake, 2));
        assert_eq!(hard_vote(&[0.4, 0.6], 0.5).unwrap().label, ClassLabel::Fake);
        let s = soft_vote(&[0.6, 0.6, 0.1], 0.5).unwrap();
        assert_eq!(s.label, ClassLabel::Genuine);
        assert!((s.probability - 1.3 / 3.0).abs() < 1e-15);
        assert_eq!(soft_vote(&[0.5], 0.5).unwrap().label, ClassLabel::Fake);
        assert!(matches!(hard_vote(&[], 0.5), Err(FusionError::Empty)));
    }

    #[test]
    fn streaming_warmup() {
        let p = WindowParams::default();
        let v = streaming_verdicts(&[0.9; 11], 1, VoteMode::Hard, 0.5, p).unwrap();
        assert_eq!(v.len(), 11);
        assert_eq!(v[0].frame, 1800);
        let v = streaming_verdicts(&[0.9; 12], 10, VoteMode::Soft, 0.5, p).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v[0].frame, 3420);
        assert_eq!(v[0].latency_frames, 3420);
        assert_eq!(v[2].window_ids, (2..12).collect::<Vec<_>>());
    }

    #[test]
    fn metric_examples() {
        let m = compute_metrics(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1], 0.5).unwrap();
        assert!((m.auc - 0.75).abs() < 1e-15);
        let perfect = compute_metrics(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1], 0.5).unwrap();
        assert_eq!((perfect.auc, perfect.eer, perfect.accuracy), (1.0, 0.0, 1.0));
        let inv = compute_metrics(&[0.1, 0.4, 0.35, 0.8], &[1, 1, 0, 0], 0.5).unwrap();
        assert!((inv.auc - 0.25).abs() < 1e-15);
        assert!(matches!(compute_metrics(&[0.1], &[1], 0.5), Err(FusionError::SingleClass { .. })));
    }

    #[test]
    fn eer_interpolates() {
        // sweep: (0,1) (0,.5) (.5,.5) (.5,0) (1,0) in (fpr, fnr); crossing at 0.5
        let m = compute_metrics(&[0.9, 0.7, 0.5, 0.3], &[1, 0, 1, 0], 0.5).unwrap();
        assert!((m.eer - 0.5).abs() < 1e-15);
        for (r, d) in m.roc.iter().zip(&m.det) {
            assert_eq!(d.fnr, 1.0 - r.tpr);
        }
    }

    #[test]
    fn task_filtering() {
        let m = |label, g: Option<&str>| StreamMeta { subject_id: "s".into(), label, generator: g.map(String::from) };
        assert!(Task::FaceShifter.includes(&m(0, Some("genuine"))));
        assert!(Task::FaceShifter.includes(&m(1, Some("faceshifter"))));
        assert!(!Task::FaceShifter.includes(&m(1, Some("dflive"))));
        assert!(Task::Mixed.includes(&m(1, Some("dflive"))));
        assert_eq!("dflive".parse::<Task>().unwrap(), Task::DfLive);
    }
}
