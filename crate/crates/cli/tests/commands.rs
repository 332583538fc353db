use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::OnceLock;
use std::time::Instant;

use serde_json::Value;

fn gazecheck(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gazecheck")).args(args).output().expect("binary runs")
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "exit {:?}\n{}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn jsonl_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> =
        fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).filter(|p| p.extension().is_some_and(|e| e == "jsonl")).collect();
    v.sort();
    v
}

/// One subject, two and a half minutes (4334 frames), and a one-epoch model
/// trained on it. Shared by the tests that need a model file.
struct Fixture {
    _dir: tempfile::TempDir,
    data: PathBuf,
    model: PathBuf,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("corpus");
        let model = dir.path().join("model.bin");
        ok(gazecheck(&["synth", "--subjects", "1", "--minutes", "2.5", "--seed", "3", "--out", p(&data)]));
        ok(gazecheck(&["train", "--data", p(&data), "--out", p(&model), "--epochs", "1", "--set", "train.batch_size=8"]));
        Fixture { _dir: dir, data, model }
    })
}

#[test]
fn synth_rejects_zero_subjects() {
    let dir = tempfile::tempdir().unwrap();
    let out = gazecheck(&["synth", "--subjects", "0", "--out", p(&dir.path().join("c"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_config_keys_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = gazecheck(&["synth", "--subjects", "1", "--minutes", "1", "--set", "train.epochz=3", "--out", p(&dir.path().join("c"))]);
    assert_eq!(out.status.code(), Some(1));
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[nonsense]\n").unwrap();
    let out = gazecheck(&["--config", p(&cfg), "synth", "--subjects", "1", "--out", p(&dir.path().join("c"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn synth_writes_three_streams_per_subject_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(gazecheck(&["synth", "--subjects", "4", "--minutes", "11", "--seed", "7", "--out", p(d)]));
    }
    let files = jsonl_files(&a);
    assert_eq!(files.len(), 12);
    for f in &files {
        let lines = fs::read_to_string(f).unwrap().lines().count();
        // One header line, then 11 minutes at the nominal 28.8948 fps.
        assert_eq!(lines, 1 + 19_070, "{}", f.display());
        let twin = b.join(f.file_name().unwrap());
        assert_eq!(fs::read(f).unwrap(), fs::read(twin).unwrap());
    }
    for g in ["genuine", "dflive", "faceshifter"] {
        assert_eq!(files.iter().filter(|f| p(f).ends_with(&format!("_{g}.jsonl"))).count(), 4);
    }
    assert_eq!(fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());
    assert!(fs::read_to_string(a.join("config.toml")).unwrap().starts_with("# config hash "));

    let c = dir.path().join("c");
    ok(gazecheck(&["synth", "--subjects", "4", "--minutes", "11", "--seed", "8", "--out", p(&c)]));
    assert_ne!(fs::read(&files[0]).unwrap(), fs::read(c.join(files[0].file_name().unwrap())).unwrap());
}

#[test]
fn featurize_exports_the_documented_columns() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    ok(gazecheck(&["featurize", "--data", p(&f.data), "--out", p(dir.path())]));
    let csvs: Vec<PathBuf> =
        fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().path()).filter(|p| p.to_str().unwrap().ends_with(".features.csv")).collect();
    assert_eq!(csvs.len(), 3);
    let text = fs::read_to_string(&csvs[0]).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), 2 + 18);
    assert_eq!(&header[..3], &["frame", "ctx", "left_eye_ux"]);
    assert_eq!(header[19], "chin_mag");
    assert_eq!(text.lines().count(), 1 + 4334);
    assert!(dir.path().join("scaler.json").exists());
}

#[test]
fn one_epoch_training_keeps_epoch_one() {
    let f = fixture();
    let hist: Value = serde_json::from_slice(&fs::read(f.model.with_extension("history.json")).unwrap()).unwrap();
    assert_eq!(hist["history"].as_array().unwrap().len(), 1);
    assert_eq!(hist["history"][0]["epoch"], 1);
    assert_eq!(hist["best_epoch"], 1);
    assert_eq!(hist["train_windows"], 3 * 15);
    assert_eq!(&fs::read(&f.model).unwrap()[..8], b"GZCKMDL\0");
}

#[test]
fn eval_refuses_conflicting_settings_without_force() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let base = ["eval", "--data", p(&f.data), "--model", p(&f.model), "--out", p(&report), "--repeats", "0", "--task", "dflive"];

    let out = gazecheck(&[&base[..], &["--epochs", "5"]].concat());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--force"));
    assert!(!report.exists());

    ok(gazecheck(&[&base[..], &["--epochs", "5", "--force"]].concat()));
    let r: Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(r["forced_conflicts"], serde_json::json!(["train"]));
    assert_eq!(r["model_scores"].as_array().unwrap().len(), 1);

    // No flags: the model's own settings are the base, so nothing conflicts.
    ok(gazecheck(&base));
    let r: Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(r["forced_conflicts"], serde_json::json!([]));
    let auc = r["model_scores"][0]["score"]["metrics"]["auc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auc));
}

#[test]
fn eval_needs_five_subjects_for_splits() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = gazecheck(&["eval", "--data", p(&f.data), "--out", p(&dir.path().join("r.json")), "--repeats", "1", "--epochs", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn analyze_writes_per_class_tables() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let out = ok(gazecheck(&["analyze", "--data", p(&f.data), "--out", p(dir.path())]));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().count(), 3);
    let psd = fs::read_to_string(dir.path().join("psd.csv")).unwrap();
    assert_eq!(psd.lines().next(), Some("class,bin,freq_hz,power"));
    for class in ["genuine", "dflive", "faceshifter"] {
        assert_eq!(psd.lines().filter(|l| l.starts_with(&format!("{class},"))).count(), 46, "{class}");
    }
    let stats = fs::read_to_string(dir.path().join("stats.csv")).unwrap();
    assert_eq!(stats.lines().count(), 4);
    for name in ["distance_summary.csv", "distance_hist.csv", "config.toml"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
}

#[test]
fn analyze_on_an_empty_corpus_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let out = gazecheck(&["analyze", "--data", p(&empty), "--out", p(&dir.path().join("out"))]);
    assert_eq!(out.status.code(), Some(2));
}

fn detect(model: &Path, input: &[u8], extra: &[&str]) -> (Vec<Value>, f64) {
    let mut child = Command::new(env!("CARGO_BIN_EXE_gazecheck"))
        .args([&["detect", "--model", p(model)], extra].concat())
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let start = Instant::now();
    let mut stdin = child.stdin.take().unwrap();
    let input = input.to_vec();
    let feeder = std::thread::spawn(move || stdin.write_all(&input));
    let out = child.wait_with_output().unwrap();
    let secs = start.elapsed().as_secs_f64();
    feeder.join().unwrap().unwrap();
    let out = ok(out);
    let lines = String::from_utf8(out.stdout).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    (lines, secs)
}

#[test]
fn detect_streams_verdicts_from_stdin() {
    let f = fixture();
    let stream = jsonl_files(&f.data).into_iter().find(|p| p.to_str().unwrap().ends_with("_genuine.jsonl")).unwrap();
    // Header plus exactly 3600 frames.
    let text = fs::read_to_string(&stream).unwrap();
    let input: String = text.lines().take(3601).flat_map(|l| [l, "\n"]).collect();
    let input = input.into_bytes();

    let (one, secs) = detect(&f.model, &input, &["--voters", "1"]);
    assert_eq!(one.len(), 11);
    assert_eq!(one[0]["frame"], 1800);
    assert_eq!(one[10]["frame"], 3600);
    for v in &one {
        assert_eq!(v["voters"], 1);
        let prob = v["prob"].as_f64().unwrap();
        assert_eq!(v["label"], if prob >= 0.5 { "fake" } else { "genuine" });
    }
    assert!(3600.0 / secs >= 300.0, "{:.0} frames/s", 3600.0 / secs);

    let (ten, _) = detect(&f.model, &input, &["--voters", "10", "--mode", "hard"]);
    assert_eq!(ten.len(), 2);
    assert_eq!(ten[0]["frame"], 3420);
    assert_eq!(ten[1]["frame"], 3600);
}

#[test]
fn detect_rejects_garbage_streams() {
    let f = fixture();
    let mut input = b"{\"not\": \"a header\"}\n".to_vec();
    input.extend(std::iter::repeat_n(b"garbage\n".as_slice(), 50).flatten());
    let out = Command::new(env!("CARGO_BIN_EXE_gazecheck"))
        .args(["detect", "--model", p(&f.model)])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .and_then(|mut c| {
            c.stdin.take().unwrap().write_all(&input)?;
            c.wait_with_output()
        })
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
