//! Mini-batch Adam training with deterministic data-parallel gradients.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::layers::{bce_with_logit, Real};
use super::network::{ArchConfig, Network, SampleView};
use super::ModelError;
use crate::exec::{self, Execution};
use crate::rng::{mix_seed, stream_rng};
use crate::windowing::WindowSample;

/// Batches are cut into this many fixed slices whose gradients are summed in
/// order, so results do not depend on the thread count.
const GRAD_CHUNKS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub dropout: f64,
    pub seed: u64,
    /// Pin the context embedding to the identity and never update it, which
    /// turns the learned embedding into a plain one-hot encoding.
    pub one_hot_context: bool,
    /// Weight each class's loss by `N / (2 N_class)` so an imbalanced set
    /// trains as if balanced. Exactly 1 for both classes on balanced sets.
    pub balance_classes: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            dropout: 0.3,
            seed: 0,
            one_hot_context: false,
            balance_classes: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.epsilon > 0.0) {
            return bad("learning rate and epsilon must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("betas must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-validation-accuracy snapshot (last epoch without validation data).
    pub weights: Vec<f32>,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
}

struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f32], grads: &[f32], cfg: &TrainConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
        let lr = cfg.learning_rate as f32;
        let eps = cfg.epsilon as f32;
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
}

fn chunk_ranges(n: usize, chunks: usize) -> Vec<std::ops::Range<usize>> {
    let per = n.div_ceil(chunks).max(1);
    (0..chunks).map(|c| (c * per).min(n)..((c + 1) * per).min(n)).filter(|r| !r.is_empty()).collect()
}

/// Per-class loss weights `[genuine, fake]` giving both classes equal total weight.
pub fn class_weights(n: usize, positives: usize) -> [f64; 2] {
    let n = n as f64;
    [n / (2.0 * (n - positives as f64)), n / (2.0 * positives as f64)]
}

/// Fake-class probabilities for `windows`, in order.
pub fn predict_windows<T: Real>(net: &Network<T>, windows: &[WindowSample], exec: Execution) -> Result<Vec<f64>, ModelError> {
    exec::try_map(exec, windows, |w| net.predict(&SampleView::from(w)).map(|p| p.to_f64().unwrap_or(f64::NAN)))
}

fn evaluate(net: &Network<f32>, windows: &[WindowSample], exec: Execution) -> Result<(f64, f64), ModelError> {
    let logits = exec::try_map(exec, windows, |w| net.logit(&SampleView::from(w)).map(|z| z as f64))?;
    let n = windows.len() as f64;
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (z, w) in logits.iter().zip(windows) {
        loss += bce_with_logit(*z, w.label as f64);
        correct += usize::from((*z >= 0.0) == (w.label == 1));
    }
    Ok((loss / n, correct as f64 / n))
}

/// Trains a fresh network on `train_set`, tracking `val_set` each epoch.
pub fn train(
    arch: &ArchConfig,
    train_set: &[WindowSample],
    val_set: &[WindowSample],
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<TrainOutcome, ModelError> {
    train_with_progress(arch, train_set, val_set, cfg, exec, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with_progress(
    arch: &ArchConfig,
    train_set: &[WindowSample],
    val_set: &[WindowSample],
    cfg: &TrainConfig,
    exec: Execution,
    mut progress: impl FnMut(&EpochStats),
) -> Result<TrainOutcome, ModelError> {
    cfg.validate()?;
    let positives = train_set.iter().filter(|w| w.label == 1).count();
    if positives == 0 || positives == train_set.len() {
        return Err(ModelError::SingleClass);
    }
    let class_weights = if cfg.balance_classes { class_weights(train_set.len(), positives) } else { [1.0, 1.0] };
    let mut net = Network::<f32>::init(arch.clone(), cfg.seed)?;
    let embed = net.layout.range("embedding");
    if cfg.one_hot_context {
        if arch.embed_dim != arch.n_contexts {
            return Err(ModelError::Config("one-hot context needs embed_dim == n_contexts".into()));
        }
        let k = arch.embed_dim;
        for (i, w) in net.params[embed.clone()].iter_mut().enumerate() {
            *w = if i / k == i % k { 1.0 } else { 0.0 };
        }
    }
    let mut adam = Adam::new(net.params.len());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Vec<f32>)> = None;

    for epoch in 0..cfg.epochs {
        let mut rng = stream_rng(cfg.seed, 1 + epoch as u64);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let ranges = chunk_ranges(batch.len(), GRAD_CHUNKS);
            let partials = exec::try_map(exec, &ranges, |r| {
                let idx = &batch[r.clone()];
                let views: Vec<SampleView<'_>> = idx.iter().map(|&i| SampleView::from(&train_set[i])).collect();
                let labels: Vec<u8> = idx.iter().map(|&i| train_set[i].label).collect();
                let seeds: Vec<u64> =
                    (r.start..r.end).map(|pos| mix_seed(cfg.seed, ((epoch as u64) << 40) ^ ((b as u64) << 16) ^ pos as u64)).collect();
                let mut grads = vec![0.0f32; net.params.len()];
                let stats = net.accumulate(&views, &labels, class_weights, Some((cfg.dropout, &seeds)), batch.len(), &mut grads)?;
                Ok::<_, ModelError>((stats, grads))
            })?;
            let mut iter = partials.into_iter();
            let (first_stats, mut grads) = iter.next().expect("non-empty batch");
            loss_sum += first_stats.loss as f64 * batch.len() as f64;
            correct += first_stats.correct;
            for (stats, g) in iter {
                loss_sum += stats.loss as f64 * batch.len() as f64;
                correct += stats.correct;
                grads.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
            if let Some(bad) = net.layout.groups.iter().find(|(_, r)| !grads[r.clone()].iter().all(|g| g.is_finite())) {
                return Err(ModelError::NonFiniteGradient(bad.0.clone()));
            }
            if cfg.one_hot_context {
                grads[embed.clone()].fill(0.0);
            }
            adam.step(&mut net.params, &grads, cfg);
        }
        let n = train_set.len() as f64;
        let (val_loss, val_accuracy) = if val_set.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate(&net, val_set, exec)?;
            (Some(l), Some(a))
        };
        let stats = EpochStats { epoch: epoch + 1, train_loss: loss_sum / n, train_accuracy: correct as f64 / n, val_loss, val_accuracy };
        progress(&stats);
        if let Some(acc) = val_accuracy {
            if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                best = Some((acc, epoch + 1, net.params.clone()));
            }
        }
        history.push(stats);
    }
    let (weights, best_epoch) = match best {
        Some((_, e, w)) => (w, e),
        None => (net.params, cfg.epochs),
    };
    Ok(TrainOutcome { weights, best_epoch, history })
}
