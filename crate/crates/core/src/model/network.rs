//! The dual-input 2D CNN.
//!
//! ```text
//! primary [3 geom + 4 ctx-embedding][6][1800]
//!   conv 1x9 -> 16, relu, pool 1x4   -> 16 x 6 x 450
//!   conv 1x9 -> 32, relu, pool 1x4   -> 32 x 6 x 112
//!   conv 1x9 -> 64, relu, pool 1x5   -> 64 x 6 x 22
//! concat spectrograms [46][6][22]    -> 110 x 6 x 22
//!   conv 3x3 -> 256, relu            -> 256 x 6 x 22
//!   conv 3x3 -> 512, relu, pool 2x2  -> 512 x 3 x 11
//! flatten 16896 -> dense 128, relu, dropout -> dense 1 -> sigmoid
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{self, gemm, ConvGeom, Real};
use super::ModelError;

pub const EMBED_DIM: usize = 4;
pub const N_CONTEXTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvStage {
    pub out_channels: usize,
    pub kernel: [usize; 2],
    pub padding: [usize; 2],
    /// Max-pool window (and stride); `[1, 1]` disables pooling.
    pub pool: [usize; 2],
}

impl ConvStage {
    pub const fn new(out_channels: usize, kernel: [usize; 2], padding: [usize; 2], pool: [usize; 2]) -> Self {
        Self { out_channels, kernel, padding, pool }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub landmarks: usize,
    pub seq_len: usize,
    pub geom_channels: usize,
    pub embed_dim: usize,
    pub n_contexts: usize,
    pub conv_a: Vec<ConvStage>,
    pub spectro_bins: usize,
    pub conv_b: Vec<ConvStage>,
    pub hidden: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            landmarks: 6,
            seq_len: 1800,
            geom_channels: 3,
            embed_dim: EMBED_DIM,
            n_contexts: N_CONTEXTS,
            conv_a: vec![
                ConvStage::new(16, [1, 9], [0, 4], [1, 4]),
                ConvStage::new(32, [1, 9], [0, 4], [1, 4]),
                ConvStage::new(64, [1, 9], [0, 4], [1, 5]),
            ],
            spectro_bins: 46,
            conv_b: vec![ConvStage::new(256, [3, 3], [1, 1], [1, 1]), ConvStage::new(512, [3, 3], [1, 1], [2, 2])],
            hidden: 128,
        }
    }
}

/// Named tensor shape `[channels, rows, cols]` at one point of the pipeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Waypoint {
    pub name: String,
    pub shape: [usize; 3],
}

impl ArchConfig {
    /// Width-reduced network with identical layer math, for gradient checks.
    pub fn shrunken() -> Self {
        Self {
            landmarks: 6,
            seq_len: 90,
            geom_channels: 3,
            embed_dim: EMBED_DIM,
            n_contexts: N_CONTEXTS,
            conv_a: vec![ConvStage::new(4, [1, 3], [0, 1], [1, 3]), ConvStage::new(8, [1, 3], [0, 1], [1, 3])],
            spectro_bins: 3,
            conv_b: vec![ConvStage::new(6, [3, 3], [1, 1], [1, 1]), ConvStage::new(8, [3, 3], [1, 1], [2, 2])],
            hidden: 8,
        }
    }

    pub fn input_channels(&self) -> usize {
        self.geom_channels + self.embed_dim
    }

    fn stage_geoms(&self) -> Result<(Vec<(ConvGeom, ConvStage)>, Vec<(ConvGeom, ConvStage)>, [usize; 3]), ModelError> {
        let mut shape = [self.input_channels(), self.landmarks, self.seq_len];
        let walk = |stages: &[ConvStage], shape: &mut [usize; 3]| -> Result<Vec<(ConvGeom, ConvStage)>, ModelError> {
            stages
                .iter()
                .map(|st| {
                    let g = ConvGeom {
                        c_in: shape[0],
                        h: shape[1],
                        w: shape[2],
                        kh: st.kernel[0],
                        kw: st.kernel[1],
                        ph: st.padding[0],
                        pw: st.padding[1],
                    };
                    if st.kernel[0] == 0
                        || st.kernel[1] == 0
                        || g.h + 2 * g.ph < g.kh
                        || g.w + 2 * g.pw < g.kw
                        || st.pool[0] == 0
                        || st.pool[1] == 0
                    {
                        return Err(ModelError::Arch(format!("stage {st:?} does not fit input {shape:?}")));
                    }
                    *shape = [st.out_channels, g.out_h() / st.pool[0], g.out_w() / st.pool[1]];
                    if shape[1] == 0 || shape[2] == 0 {
                        return Err(ModelError::Arch(format!("stage {st:?} pools away its input")));
                    }
                    Ok((g, *st))
                })
                .collect()
        };
        let a = walk(&self.conv_a, &mut shape)?;
        shape[0] += self.spectro_bins;
        let b = walk(&self.conv_b, &mut shape)?;
        Ok((a, b, shape))
    }

    /// Time frames the spectrogram input must have (the conv-A output width).
    pub fn spectro_frames(&self) -> usize {
        self.waypoints().ok().and_then(|w| w.iter().find(|p| p.name == "spectro").map(|p| p.shape[2])).unwrap_or(0)
    }

    pub fn flat_len(&self) -> Result<usize, ModelError> {
        let (_, _, s) = self.stage_geoms()?;
        Ok(s[0] * s[1] * s[2])
    }

    /// Shapes after every stage, derived from the configuration.
    pub fn waypoints(&self) -> Result<Vec<Waypoint>, ModelError> {
        let (a, b, last) = self.stage_geoms()?;
        let mut out = vec![Waypoint { name: "input".into(), shape: [self.input_channels(), self.landmarks, self.seq_len] }];
        let after = |g: &ConvGeom, st: &ConvStage| [st.out_channels, g.out_h() / st.pool[0], g.out_w() / st.pool[1]];
        for (i, (g, st)) in a.iter().enumerate() {
            out.push(Waypoint { name: format!("conv_a{}", i + 1), shape: after(g, st) });
        }
        let a_out = out.last().expect("input present").shape;
        out.push(Waypoint { name: "spectro".into(), shape: [self.spectro_bins, a_out[1], a_out[2]] });
        out.push(Waypoint { name: "concat".into(), shape: [a_out[0] + self.spectro_bins, a_out[1], a_out[2]] });
        for (i, (g, st)) in b.iter().enumerate() {
            out.push(Waypoint { name: format!("conv_b{}", i + 1), shape: after(g, st) });
        }
        out.push(Waypoint { name: "flatten".into(), shape: [last[0] * last[1] * last[2], 1, 1] });
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.landmarks == 0 || self.seq_len == 0 || self.hidden == 0 || self.n_contexts == 0 {
            return Err(ModelError::Arch("zero-sized dimension".into()));
        }
        self.stage_geoms().map(|_| ())
    }
}

/// Offsets of every parameter group inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub groups: Vec<(String, std::ops::Range<usize>)>,
    pub total: usize,
}

impl ParamLayout {
    pub fn new(arch: &ArchConfig) -> Result<Self, ModelError> {
        let (a, b, _) = arch.stage_geoms()?;
        let mut groups = Vec::new();
        let mut off = 0;
        let mut push = |name: String, len: usize| {
            groups.push((name, off..off + len));
            off += len;
        };
        push("embedding".into(), arch.n_contexts * arch.embed_dim);
        for (prefix, stages) in [("conv_a", &a), ("conv_b", &b)] {
            for (i, (g, st)) in stages.iter().enumerate() {
                push(format!("{prefix}{}.weight", i + 1), st.out_channels * g.k());
                push(format!("{prefix}{}.bias", i + 1), st.out_channels);
            }
        }
        let flat = arch.flat_len()?;
        push("dense1.weight".into(), arch.hidden * flat);
        push("dense1.bias".into(), arch.hidden);
        push("dense2.weight".into(), arch.hidden);
        push("dense2.bias".into(), 1);
        Ok(Self { groups, total: off })
    }

    pub fn range(&self, name: &str) -> std::ops::Range<usize> {
        self.groups.iter().find(|(n, _)| n == name).map(|(_, r)| r.clone()).expect("known parameter group")
    }
}

/// Borrowed model input for one window.
#[derive(Debug, Clone, Copy)]
pub struct SampleView<'a> {
    /// `[geom_channels][landmarks][seq_len]`
    pub geom: &'a [f32],
    pub ctx: &'a [u8],
    /// `[spectro_bins][landmarks][spectro_frames]`
    pub spectro: &'a [f32],
}

impl<'a> From<&'a crate::windowing::WindowSample> for SampleView<'a> {
    fn from(w: &'a crate::windowing::WindowSample) -> Self {
        SampleView { geom: &w.geom, ctx: &w.ctx_codes, spectro: &w.spectro }
    }
}

/// Dropout applied to the hidden layer in training mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub rate: f64,
    pub seed: u64,
}

struct ConvTrace<T> {
    geom: ConvGeom,
    stage: ConvStage,
    cols: Vec<T>,
    /// Post-ReLU activations before pooling.
    act: Vec<T>,
    argmax: Option<Vec<u32>>,
}

/// Everything the backward pass needs from one forward evaluation.
pub struct ForwardTrace<T> {
    pub prob: T,
    pub logit: T,
    /// Shapes actually produced, in pipeline order.
    pub waypoints: Vec<Waypoint>,
    conv_a: Vec<ConvTrace<T>>,
    conv_b: Vec<ConvTrace<T>>,
    flat: Vec<T>,
    hidden: Vec<T>,
    mask: Option<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub arch: ArchConfig,
    pub layout: ParamLayout,
    pub params: Vec<T>,
}

impl<T: Real> Network<T> {
    /// He-normal conv/dense weights, zero biases, N(0, 0.5) embeddings.
    pub fn init(arch: ArchConfig, seed: u64) -> Result<Self, ModelError> {
        arch.validate()?;
        let layout = ParamLayout::new(&arch)?;
        let mut params = vec![T::zero(); layout.total];
        let (a, b, _) = arch.stage_geoms()?;
        let fan_ins: Vec<usize> = a.iter().chain(&b).map(|(g, _)| g.k()).collect();
        let mut conv_idx = 0;
        for (gi, (name, range)) in layout.groups.iter().enumerate() {
            let std = if name == "embedding" {
                0.5
            } else if name.ends_with(".bias") {
                continue;
            } else if name == "dense1.weight" {
                (2.0 / arch.flat_len()? as f64).sqrt()
            } else if name == "dense2.weight" {
                (1.0 / arch.hidden as f64).sqrt()
            } else {
                let fan_in = fan_ins[conv_idx];
                conv_idx += 1;
                (2.0 / fan_in as f64).sqrt()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(gi as u64);
            let normal = Normal::new(0.0, std).expect("positive std");
            for p in &mut params[range.clone()] {
                *p = T::of(normal.sample(&mut rng));
            }
        }
        Ok(Self { arch, layout, params })
    }

    pub fn from_params(arch: ArchConfig, params: Vec<T>) -> Result<Self, ModelError> {
        arch.validate()?;
        let layout = ParamLayout::new(&arch)?;
        if params.len() != layout.total {
            return Err(ModelError::Shape(format!("expected {} parameters, got {}", layout.total, params.len())));
        }
        Ok(Self { arch, layout, params })
    }

    pub fn group(&self, name: &str) -> &[T] {
        &self.params[self.layout.range(name)]
    }

    fn check_input(&self, x: &SampleView<'_>) -> Result<(), ModelError> {
        let a = &self.arch;
        let want_geom = a.geom_channels * a.landmarks * a.seq_len;
        let want_spec = a.spectro_bins * a.landmarks * a.spectro_frames();
        if x.geom.len() != want_geom || x.ctx.len() != a.seq_len || x.spectro.len() != want_spec {
            return Err(ModelError::Shape(format!(
                "got geom {}, ctx {}, spectro {}; expected {want_geom}, {}, {want_spec}",
                x.geom.len(),
                x.ctx.len(),
                x.spectro.len(),
                a.seq_len
            )));
        }
        if let Some(&c) = x.ctx.iter().find(|&&c| c as usize >= a.n_contexts) {
            return Err(ModelError::ContextCode(c));
        }
        Ok(())
    }

    /// Context embedding broadcast over landmarks: `[embed_dim][landmarks][seq_len]`.
    pub fn embed_context(&self, ctx: &[u8]) -> Result<Vec<T>, ModelError> {
        let a = &self.arch;
        if let Some(&c) = ctx.iter().find(|&&c| c as usize >= a.n_contexts) {
            return Err(ModelError::ContextCode(c));
        }
        let table = self.group("embedding");
        let len = ctx.len();
        let mut out = vec![T::zero(); a.embed_dim * a.landmarks * len];
        for e in 0..a.embed_dim {
            for l in 0..a.landmarks {
                let row = &mut out[(e * a.landmarks + l) * len..][..len];
                for (v, &c) in row.iter_mut().zip(ctx) {
                    *v = table[c as usize * a.embed_dim + e];
                }
            }
        }
        Ok(out)
    }

    /// Full primary tensor `[geom + embed][landmarks][seq_len]`.
    pub fn primary_tensor(&self, x: &SampleView<'_>) -> Result<Vec<T>, ModelError> {
        let mut input: Vec<T> = x.geom.iter().map(|&v| T::of(v as f64)).collect();
        input.extend(self.embed_context(x.ctx)?);
        Ok(input)
    }

    fn conv_stage(&self, name: &str, geom: ConvGeom, stage: ConvStage, input: &[T], keep: bool) -> (ConvTrace<T>, Vec<T>, [usize; 3]) {
        let w = &self.params[self.layout.range(&format!("{name}.weight"))];
        let b = &self.params[self.layout.range(&format!("{name}.bias"))];
        let mut cols = vec![T::zero(); geom.k() * geom.n()];
        layers::im2col(&geom, input, &mut cols);
        let mut act = vec![T::zero(); stage.out_channels * geom.n()];
        layers::conv_forward(&geom, stage.out_channels, w, b, &cols, &mut act);
        layers::relu_inplace(&mut act);
        let (oh, ow) = (geom.out_h(), geom.out_w());
        let (out, argmax, shape) = if stage.pool == [1, 1] {
            (act.clone(), None, [stage.out_channels, oh, ow])
        } else {
            let (o, idx) = layers::maxpool_forward(&act, stage.out_channels, oh, ow, stage.pool);
            (o, Some(idx), [stage.out_channels, oh / stage.pool[0], ow / stage.pool[1]])
        };
        if !keep {
            cols = Vec::new();
        }
        (ConvTrace { geom, stage, cols, act, argmax }, out, shape)
    }

    /// Forward pass. `dropout` applies only when training.
    pub fn forward_trace(&self, x: &SampleView<'_>, dropout: Option<Dropout>) -> Result<ForwardTrace<T>, ModelError> {
        self.forward_impl(x, dropout, true)
    }

    /// Probability that the window is fake (inference mode).
    pub fn predict(&self, x: &SampleView<'_>) -> Result<T, ModelError> {
        Ok(self.forward_impl(x, None, false)?.prob)
    }

    /// Pre-sigmoid score (inference mode).
    pub fn logit(&self, x: &SampleView<'_>) -> Result<T, ModelError> {
        Ok(self.forward_impl(x, None, false)?.logit)
    }

    fn forward_impl(&self, x: &SampleView<'_>, dropout: Option<Dropout>, keep: bool) -> Result<ForwardTrace<T>, ModelError> {
        self.check_input(x)?;
        let (ga, gb, _) = self.arch.stage_geoms()?;
        let arch = &self.arch;
        let mut waypoints = Vec::new();
        let mut cur = self.primary_tensor(x)?;
        let mut shape = [arch.input_channels(), arch.landmarks, arch.seq_len];
        waypoints.push(Waypoint { name: "input".into(), shape });
        let finite = |v: &[T], stage: &str| -> Result<(), ModelError> {
            if v.iter().all(|x| x.is_finite()) {
                Ok(())
            } else {
                Err(ModelError::NonFinite(stage.to_string()))
            }
        };
        let mut conv_a = Vec::with_capacity(ga.len());
        for (i, (g, st)) in ga.into_iter().enumerate() {
            let name = format!("conv_a{}", i + 1);
            let (tr, out, s) = self.conv_stage(&name, g, st, &cur, keep);
            finite(&out, &name)?;
            waypoints.push(Waypoint { name, shape: s });
            conv_a.push(tr);
            cur = out;
            shape = s;
        }
        let spec_shape = [arch.spectro_bins, shape[1], shape[2]];
        waypoints.push(Waypoint { name: "spectro".into(), shape: spec_shape });
        cur.extend(x.spectro.iter().map(|&v| T::of(v as f64)));
        shape[0] += arch.spectro_bins;
        finite(&cur, "concat")?;
        waypoints.push(Waypoint { name: "concat".into(), shape });
        let mut conv_b = Vec::with_capacity(gb.len());
        for (i, (g, st)) in gb.into_iter().enumerate() {
            let name = format!("conv_b{}", i + 1);
            let (tr, out, s) = self.conv_stage(&name, g, st, &cur, keep);
            finite(&out, &name)?;
            waypoints.push(Waypoint { name, shape: s });
            conv_b.push(tr);
            cur = out;
        }
        let flat = cur;
        waypoints.push(Waypoint { name: "flatten".into(), shape: [flat.len(), 1, 1] });

        let hidden_n = arch.hidden;
        let mut hidden = self.group("dense1.bias").to_vec();
        gemm(hidden_n, flat.len(), 1, self.group("dense1.weight"), false, &flat, false, T::one(), &mut hidden);
        layers::relu_inplace(&mut hidden);
        let mask = dropout.filter(|d| d.rate > 0.0).map(|d| {
            let mut rng = ChaCha8Rng::seed_from_u64(d.seed);
            let keep_p = 1.0 - d.rate;
            let bern = Bernoulli::new(keep_p).expect("rate in [0, 1)");
            let scale = T::of(1.0 / keep_p);
            (0..hidden_n).map(|_| if bern.sample(&mut rng) { scale } else { T::zero() }).collect::<Vec<T>>()
        });
        let mut h_used = hidden.clone();
        if let Some(m) = &mask {
            h_used.iter_mut().zip(m).for_each(|(h, m)| *h = *h * *m);
        }
        let w2 = self.group("dense2.weight");
        let logit = self.group("dense2.bias")[0] + h_used.iter().zip(w2).map(|(h, w)| *h * *w).sum::<T>();
        if !logit.is_finite() {
            return Err(ModelError::NonFinite("logit".into()));
        }
        Ok(ForwardTrace {
            prob: layers::sigmoid(logit),
            logit,
            waypoints,
            conv_a,
            conv_b,
            flat: if keep { flat } else { Vec::new() },
            hidden,
            mask,
        })
    }

    /// Backpropagates `dloss/dlogit` through a kept trace, accumulating into
    /// `grads` (same layout as `params`).
    pub fn backward(&self, x: &SampleView<'_>, trace: &ForwardTrace<T>, dlogit: T, grads: &mut [T]) -> Result<(), ModelError> {
        let arch = &self.arch;
        let lay = &self.layout;
        if trace.flat.is_empty() {
            return Err(ModelError::Shape("trace was produced without activations".into()));
        }
        // dense2
        let mut h_used = trace.hidden.clone();
        if let Some(m) = &trace.mask {
            h_used.iter_mut().zip(m).for_each(|(h, m)| *h = *h * *m);
        }
        let r = lay.range("dense2.weight");
        for (g, h) in grads[r].iter_mut().zip(&h_used) {
            *g += dlogit * *h;
        }
        grads[lay.range("dense2.bias")][0] += dlogit;
        // hidden
        let w2 = self.group("dense2.weight");
        let mut dh: Vec<T> = w2.iter().map(|w| *w * dlogit).collect();
        if let Some(m) = &trace.mask {
            dh.iter_mut().zip(m).for_each(|(d, m)| *d = *d * *m);
        }
        layers::relu_backward(&trace.hidden, &mut dh);
        let flat_len = trace.flat.len();
        let r = lay.range("dense1.weight");
        for (o, &d) in dh.iter().enumerate() {
            if d != T::zero() {
                let row = &mut grads[r.start + o * flat_len..r.start + (o + 1) * flat_len];
                for (g, f) in row.iter_mut().zip(&trace.flat) {
                    *g += d * *f;
                }
            }
        }
        for (g, d) in grads[lay.range("dense1.bias")].iter_mut().zip(&dh) {
            *g += *d;
        }
        let mut dcur = vec![T::zero(); flat_len];
        gemm(flat_len, arch.hidden, 1, self.group("dense1.weight"), true, &dh, false, T::zero(), &mut dcur);

        for (i, tr) in trace.conv_b.iter().enumerate().rev() {
            dcur = self.conv_stage_backward(&format!("conv_b{}", i + 1), tr, &dcur, grads, true);
        }
        // Drop spectrogram channels; they are inputs, not parameters.
        let a_last = trace.conv_a.last().expect("at least one conv_a stage");
        let a_len = a_last.stage.out_channels * (a_last.geom.out_h() / a_last.stage.pool[0]) * (a_last.geom.out_w() / a_last.stage.pool[1]);
        dcur.truncate(a_len);
        for (i, tr) in trace.conv_a.iter().enumerate().rev() {
            dcur = self.conv_stage_backward(&format!("conv_a{}", i + 1), tr, &dcur, grads, true);
        }
        // dcur is now d(primary input); fold embedding channels into the table.
        let len = arch.seq_len;
        let r = lay.range("embedding");
        for e in 0..arch.embed_dim {
            for l in 0..arch.landmarks {
                let ch = arch.geom_channels + e;
                let row = &dcur[(ch * arch.landmarks + l) * len..][..len];
                for (d, &c) in row.iter().zip(x.ctx) {
                    grads[r.start + c as usize * arch.embed_dim + e] += *d;
                }
            }
        }
        Ok(())
    }

    fn conv_stage_backward(&self, name: &str, tr: &ConvTrace<T>, dout: &[T], grads: &mut [T], need_input: bool) -> Vec<T> {
        let g = tr.geom;
        let c_out = tr.stage.out_channels;
        let mut dact = match &tr.argmax {
            Some(idx) => layers::maxpool_backward(dout, idx, tr.act.len()),
            None => dout.to_vec(),
        };
        layers::relu_backward(&tr.act, &mut dact);
        let w = &self.params[self.layout.range(&format!("{name}.weight"))];
        let wr = self.layout.range(&format!("{name}.weight"));
        let br = self.layout.range(&format!("{name}.bias"));
        let (gw, gb) = {
            let (lo, hi) = grads.split_at_mut(br.start);
            (&mut lo[wr], &mut hi[..br.len()])
        };
        if need_input {
            let mut dcols = vec![T::zero(); g.k() * g.n()];
            layers::conv_backward(&g, c_out, w, &tr.cols, &dact, gw, gb, Some(&mut dcols));
            let mut din = vec![T::zero(); g.c_in * g.h * g.w];
            layers::col2im(&g, &dcols, &mut din);
            din
        } else {
            layers::conv_backward(&g, c_out, w, &tr.cols, &dact, gw, gb, None);
            Vec::new()
        }
    }

    /// Mean binary cross-entropy over `samples` and its gradient.
    pub fn loss_and_grad(
        &self,
        samples: &[SampleView<'_>],
        labels: &[u8],
        dropout: Option<(f64, &[u64])>,
    ) -> Result<(T, Vec<T>), ModelError> {
        let mut grads = vec![T::zero(); self.params.len()];
        let stats = self.accumulate(samples, labels, [1.0, 1.0], dropout, samples.len(), &mut grads)?;
        Ok((stats.loss, grads))
    }

    /// Adds `sum_i w[y_i] dL_i / denom` over `samples` into `grads`, where `w`
    /// is `class_weights` indexed by label; the returned loss is weighted and
    /// divided the same way.
    pub fn accumulate(
        &self,
        samples: &[SampleView<'_>],
        labels: &[u8],
        class_weights: [f64; 2],
        dropout: Option<(f64, &[u64])>,
        denom: usize,
        grads: &mut [T],
    ) -> Result<BatchStats<T>, ModelError> {
        let n = T::of(denom as f64);
        let mut stats = BatchStats { loss: T::zero(), correct: 0 };
        for (i, (x, &y)) in samples.iter().zip(labels).enumerate() {
            let d = dropout.map(|(rate, seeds)| Dropout { rate, seed: seeds[i] });
            let tr = self.forward_trace(x, d)?;
            let target = T::of(y as f64);
            let w = T::of(class_weights[usize::from(y == 1)]);
            stats.loss += w * layers::bce_with_logit(tr.logit, target) / n;
            stats.correct += usize::from((tr.prob >= T::of(0.5)) == (y == 1));
            self.backward(x, &tr, w * (tr.prob - target) / n, grads)?;
        }
        Ok(stats)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchStats<T> {
    pub loss: T,
    pub correct: usize,
}
