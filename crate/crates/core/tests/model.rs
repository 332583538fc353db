use gazecheck_core::exec::Execution;
use gazecheck_core::features::RobustScaler;
use gazecheck_core::model::{read_model, train, write_model, ArchConfig, ModelMeta, ModelParams, Network, SampleView, TrainConfig};
use gazecheck_core::spectral::SpectralParams;
use gazecheck_core::windowing::{WindowParams, WindowSample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Random window for `arch`; fakes get a shifted magnitude channel.
fn sample(arch: &ArchConfig, label: u8, rng: &mut ChaCha8Rng) -> WindowSample {
    let len = arch.seq_len;
    let n_frames = arch.spectro_frames();
    let shift = if label == 1 { 0.8 } else { -0.8 };
    let mut geom: Vec<f32> = (0..arch.geom_channels * arch.landmarks * len).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    let mag0 = 2 * arch.landmarks * len;
    geom[mag0..].iter_mut().for_each(|v| *v += shift);
    WindowSample {
        length: len,
        n_bins: arch.spectro_bins,
        n_frames,
        geom,
        ctx_codes: (0..len).map(|t| ((t / 7) % arch.n_contexts) as u8).collect(),
        spectro: (0..arch.spectro_bins * arch.landmarks * n_frames).map(|_| rng.random_range(0.0..2.0)).collect(),
        label,
        subject_id: "S001".into(),
        generator: None,
        start_frame: 0,
    }
}

#[test]
fn gradients_match_central_differences() {
    let arch = ArchConfig::shrunken();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let windows: Vec<WindowSample> = (0..3).map(|i| sample(&arch, (i % 2) as u8, &mut rng)).collect();
    let views: Vec<SampleView<'_>> = windows.iter().map(SampleView::from).collect();
    let labels: Vec<u8> = windows.iter().map(|w| w.label).collect();
    let net = Network::<f64>::init(arch, 5).unwrap();
    let (_, grads) = net.loss_and_grad(&views, &labels, None).unwrap();
    let loss_at = |params: &[f64]| {
        let n = Network::<f64>::from_params(net.arch.clone(), params.to_vec()).unwrap();
        n.loss_and_grad(&views, &labels, None).unwrap().0
    };

    let h = 1e-5;
    let start = std::time::Instant::now();
    for (name, range) in &net.layout.groups {
        let step = (range.len() / 25).max(1);
        let mut worst = 0.0f64;
        for i in range.clone().step_by(step) {
            let mut p = net.params.clone();
            p[i] += h;
            let up = loss_at(&p);
            p[i] -= 2.0 * h;
            let down = loss_at(&p);
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads[i];
            let scale = analytic.abs().max(numeric.abs());
            if scale > 1e-7 {
                worst = worst.max((analytic - numeric).abs() / scale);
            } else {
                assert!((analytic - numeric).abs() < 1e-9, "{name}[{i}]: {analytic} vs {numeric}");
            }
        }
        assert!(worst < 1e-4, "{name}: max relative error {worst}");
    }
    assert!(start.elapsed().as_secs() < 300);
}

#[test]
fn class_weights_scale_each_sample() {
    let arch = ArchConfig::shrunken();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let windows: Vec<WindowSample> = [0u8, 1, 1, 0, 1].iter().map(|&l| sample(&arch, l, &mut rng)).collect();
    let net = Network::<f64>::init(arch, 3).unwrap();
    let part = |keep: u8| {
        let picked: Vec<&WindowSample> = windows.iter().filter(|w| w.label == keep).collect();
        let views: Vec<SampleView<'_>> = picked.iter().map(|w| SampleView::from(*w)).collect();
        let labels = vec![keep; picked.len()];
        let mut g = vec![0.0; net.params.len()];
        let loss = net.accumulate(&views, &labels, [1.0, 1.0], None, windows.len(), &mut g).unwrap().loss;
        (loss, g)
    };
    let w = gazecheck_core::model::class_weights(5, 3);
    assert!((w[0] * 2.0 + w[1] * 3.0 - 5.0).abs() < 1e-12);
    let views: Vec<SampleView<'_>> = windows.iter().map(SampleView::from).collect();
    let labels: Vec<u8> = windows.iter().map(|w| w.label).collect();
    let mut g = vec![0.0; net.params.len()];
    let loss = net.accumulate(&views, &labels, w, None, windows.len(), &mut g).unwrap().loss;
    let ((l0, g0), (l1, g1)) = (part(0), part(1));
    assert!((loss - (w[0] * l0 + w[1] * l1)).abs() < 1e-12);
    for i in 0..g.len() {
        assert!((g[i] - (w[0] * g0[i] + w[1] * g1[i])).abs() < 1e-12 * (1.0 + g[i].abs()));
    }
}

#[test]
fn published_shapes_and_size() {
    let arch = ArchConfig::default();
    let net = Network::<f32>::init(arch.clone(), 0).unwrap();
    assert_eq!(net.params.len(), 3_620_977);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w = sample(&arch, 1, &mut rng);
    assert_eq!(w.primary_shape(), [7, 6, 1800]);
    assert_eq!(w.spectro_shape(), [46, 6, 22]);
    let trace = net.forward_trace(&SampleView::from(&w), None).unwrap();
    let got = |n: &str| trace.waypoints.iter().find(|p| p.name == n).unwrap().shape;
    assert_eq!(got("input"), [7, 6, 1800]);
    assert_eq!(got("conv_a3"), [64, 6, 22]);
    assert_eq!(got("spectro"), [46, 6, 22]);
    assert_eq!(got("concat"), [110, 6, 22]);
    assert_eq!(got("conv_b2"), [512, 3, 11]);
    assert!((0.0..=1.0).contains(&trace.prob));
}

fn quick_config(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, batch_size: 4, learning_rate: 3e-3, dropout: 0.0, seed: 9, ..TrainConfig::default() }
}

#[test]
fn overfits_eight_windows() {
    let arch = ArchConfig::shrunken();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let set: Vec<WindowSample> = (0..8).map(|i| sample(&arch, (i % 2) as u8, &mut rng)).collect();
    let out = train(&arch, &set, &[], &quick_config(150), Execution::Sequential).unwrap();
    let last = out.history.last().unwrap();
    assert_eq!(out.best_epoch, 150);
    assert_eq!(last.train_accuracy, 1.0);
    assert!(last.train_loss < 0.05, "loss {}", last.train_loss);
    assert!(last.train_loss < out.history[0].train_loss);
}

#[test]
fn training_is_deterministic_across_execution_modes() {
    let arch = ArchConfig::shrunken();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let set: Vec<WindowSample> = (0..13).map(|i| sample(&arch, (i % 2) as u8, &mut rng)).collect();
    let val: Vec<WindowSample> = (0..4).map(|i| sample(&arch, (i % 2) as u8, &mut rng)).collect();
    let cfg = TrainConfig { dropout: 0.3, ..quick_config(4) };
    let a = train(&arch, &set, &val, &cfg, Execution::Sequential).unwrap();
    let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
    let b = pool(4).install(|| train(&arch, &set, &val, &cfg, Execution::Parallel)).unwrap();
    let c = pool(3).install(|| train(&arch, &set, &val, &cfg, Execution::Parallel)).unwrap();
    assert_eq!(a.weights, b.weights);
    assert_eq!(b.weights, c.weights);
    assert_eq!(a.history, b.history);
    assert!((1..=4).contains(&a.best_epoch));
    let other = train(&arch, &set, &val, &TrainConfig { seed: 10, ..cfg }, Execution::Sequential).unwrap();
    assert_ne!(a.weights, other.weights);
}

#[test]
fn learned_embedding_folds_into_one_hot() {
    // An embedding table E feeding conv_a1 is the same map as a one-hot
    // context feeding conv_a1 with the context weights multiplied through E.
    let arch = ArchConfig::shrunken();
    let net = Network::<f64>::init(arch.clone(), 31).unwrap();
    let (k, g) = (arch.embed_dim, arch.geom_channels);
    let table = net.group("embedding").to_vec();
    let st = arch.conv_a[0];
    let taps = st.kernel[0] * st.kernel[1];
    let c_in = arch.input_channels();
    let wr = net.layout.range("conv_a1.weight");
    let mut folded = net.params.clone();
    for o in 0..st.out_channels {
        for c in 0..arch.n_contexts {
            for t in 0..taps {
                let v: f64 = (0..k).map(|e| net.params[wr.start + (o * c_in + g + e) * taps + t] * table[c * k + e]).sum();
                folded[wr.start + (o * c_in + g + c) * taps + t] = v;
            }
        }
    }
    let er = net.layout.range("embedding");
    for (i, w) in folded[er].iter_mut().enumerate() {
        *w = if i / k == i % k { 1.0 } else { 0.0 };
    }
    let one_hot = Network::<f64>::from_params(arch.clone(), folded).unwrap();

    let emb = one_hot.embed_context(&[0, 1, 2, 3]).unwrap();
    for c in 0..4 {
        for e in 0..4 {
            assert_eq!(emb[e * arch.landmarks * 4 + c], if c == e { 1.0 } else { 0.0 });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for label in [0, 1] {
        let w = sample(&arch, label, &mut rng);
        let (a, b) = (net.logit(&SampleView::from(&w)).unwrap(), one_hot.logit(&SampleView::from(&w)).unwrap());
        assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()), "{a} vs {b}");
    }
}

#[test]
fn one_hot_training_freezes_the_identity_table() {
    let arch = ArchConfig::shrunken();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let set: Vec<WindowSample> = (0..8).map(|i| sample(&arch, (i % 2) as u8, &mut rng)).collect();
    let cfg = TrainConfig { one_hot_context: true, ..quick_config(3) };
    let out = train(&arch, &set, &[], &cfg, Execution::Sequential).unwrap();
    let net = Network::<f32>::from_params(arch, out.weights).unwrap();
    let table = net.group("embedding");
    for (i, v) in table.iter().enumerate() {
        assert_eq!(*v, if i / 4 == i % 4 { 1.0 } else { 0.0 });
    }
}

#[test]
fn model_file_round_trip() {
    let arch = ArchConfig::shrunken();
    let net = Network::<f32>::init(arch.clone(), 12).unwrap();
    let model = ModelParams {
        arch,
        weights: net.params.clone(),
        scaler: RobustScaler { median: [1.0, 2.0, 3.0, 4.0, 5.0, 6.0], iqr: [0.5; 6] },
        meta: ModelMeta {
            seed: 12,
            epochs_trained: 3,
            best_epoch: 2,
            validation_accuracy: Some(0.75),
            config_hash: "ab".repeat(32),
            train: TrainConfig::default(),
            window: WindowParams { length: 90, stride: 9 },
            spectral: SpectralParams { window_len: 30, hop: 30 },
        },
    };
    let mut a = Vec::new();
    write_model(&mut a, &model).unwrap();
    let back = read_model(a.as_slice()).unwrap();
    assert_eq!(back, model);
    let mut b = Vec::new();
    write_model(&mut b, &back).unwrap();
    assert_eq!(a, b);
    let mut flipped = a.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 1;
    assert!(read_model(flipped.as_slice()).is_err());
}
