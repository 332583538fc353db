//! Live detection over a JSONL frame stream.
//!
//! Two stages joined by a bounded queue: the reader featurizes each frame
//! into a ring of one window and emits a window every `stride` frames after
//! warm-up; the consumer runs inference and the streaming voter. A full queue
//! blocks the reader.

use std::collections::VecDeque;
use std::io::{BufRead, Write};
use std::sync::mpsc::sync_channel;

use gazecheck_core::features::{apply_scaler, featurize_record, FeatureFrame};
use gazecheck_core::fusion::StreamingVoter;
use gazecheck_core::geometry::ScreenModel;
use gazecheck_core::ingest::{ClassLabel, ErrorBudget, StreamReader, N_LANDMARKS};
use gazecheck_core::model::{ModelParams, SampleView};
use gazecheck_core::windowing::{build_window, StreamMeta, WindowSample};
use serde::Serialize;

use crate::config::DetectConfig;
use crate::error::{data, usage, CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct DetectSummary {
    pub frames: usize,
    pub rejected: usize,
    pub windows: usize,
    pub verdicts: usize,
}

#[derive(Serialize)]
struct VerdictLine<'a> {
    frame: usize,
    prob: f64,
    label: &'a str,
    voters: usize,
}

fn label_name(l: ClassLabel) -> &'static str {
    match l {
        ClassLabel::Genuine => "genuine",
        ClassLabel::Fake => "fake",
    }
}

/// Reads frames from `input` and writes one verdict line per window once
/// `settings.voters` windows are available.
pub fn run<R, W>(
    model: &ModelParams,
    settings: &DetectConfig,
    fallback_screen: &ScreenModel,
    budget: ErrorBudget,
    input: R,
    output: &mut W,
) -> CliResult<DetectSummary>
where
    R: BufRead + Send,
    W: Write,
{
    if model.arch.landmarks != N_LANDMARKS {
        return Err(data(format!("model expects {} landmarks, streams carry {N_LANDMARKS}", model.arch.landmarks)));
    }
    if settings.queue_windows == 0 {
        return Err(usage("detect.queue_windows must be positive"));
    }
    let params = model.meta.window;
    let stft = model.meta.spectral.stft().map_err(|e| usage(e.to_string()))?;
    let net = model.network()?;
    let mut voter = StreamingVoter::new(settings.mode, settings.voters, settings.threshold, params)?;
    let (tx, rx) = sync_channel::<WindowSample>(settings.queue_windows);

    std::thread::scope(|scope| {
        let reader = scope.spawn(move || -> CliResult<(usize, usize, usize)> {
            let mut frames = StreamReader::new(input, budget)?;
            let screen = frames.header().screen.unwrap_or(*fallback_screen);
            let meta = StreamMeta { subject_id: frames.header().subject_id.clone(), ..StreamMeta::default() };
            let mut ring: VecDeque<FeatureFrame> = VecDeque::with_capacity(params.length);
            let (mut accepted, mut bad_features, mut windows) = (0usize, 0usize, 0usize);
            while let Some(rec) = frames.next() {
                let rec = rec?;
                let feat = match featurize_record(&rec, Some(&screen)) {
                    Ok(f) => apply_scaler(&f, &model.scaler),
                    Err(e) => {
                        bad_features += 1;
                        if frames.rejected() + bad_features > budget.allowance(frames.seen()) {
                            return Err(data(format!("too many unusable frames, last: {e}")));
                        }
                        continue;
                    }
                };
                if ring.len() == params.length {
                    ring.pop_front();
                }
                ring.push_back(feat);
                accepted += 1;
                if accepted >= params.length && (accepted - params.length) % params.stride == 0 {
                    let w = build_window(ring.make_contiguous(), 0, params.length, &stft, &meta)?;
                    windows += 1;
                    if tx.send(w).is_err() {
                        break;
                    }
                }
            }
            Ok((accepted, frames.rejected() + bad_features, windows))
        });

        // Owning the receiver here drops it on error, which unblocks the reader.
        let consumed = (move || -> CliResult<usize> {
            let mut verdicts = 0usize;
            for w in rx.iter() {
                let prob = net.predict(&SampleView::from(&w))? as f64;
                if let Some(v) = voter.push(prob)? {
                    let line = VerdictLine { frame: v.frame, prob: v.probability, label: label_name(v.label), voters: v.n_voters };
                    serde_json::to_writer(&mut *output, &line).map_err(|e| CliError::Runtime(e.to_string()))?;
                    output.write_all(b"\n")?;
                    verdicts += 1;
                }
            }
            output.flush()?;
            Ok(verdicts)
        })();
        let produced = reader.join().map_err(|_| CliError::Runtime("reader thread panicked".into()))?;
        let (frames, rejected, windows) = produced?;
        let verdicts = consumed?;
        Ok(DetectSummary { frames, rejected, windows, verdicts })
    })
}
