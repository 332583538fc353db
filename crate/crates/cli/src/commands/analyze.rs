use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use gazecheck_core::ingest::SpeakingContext;
use gazecheck_core::spectral::{mean_psd, PsdEstimate};
use gazecheck_core::stats;
use gazecheck_core::synth::{dispersion, distance_psd, nose_distances, CalibrationTarget, Dispersion};

use crate::config::PipelineConfig;
use crate::corpus::load_corpus;
use crate::error::{data, CliError, CliResult};
use crate::output::{prepare_dir, write_config};

#[derive(Debug, Clone)]
pub struct AnalyzeArgs {
    pub data: PathBuf,
    pub out: PathBuf,
}

/// Histogram bin width (px) of the distance distribution table.
pub const HIST_BIN_PX: f64 = 50.0;
pub const HIST_MAX_PX: f64 = 2000.0;
/// Frames per segment averaged into the per-class PSD (one window).
pub const PSD_SEGMENT: usize = 1800;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassAnalysis {
    pub class: String,
    pub frames: usize,
    pub stats: Dispersion,
    pub psd: Option<PsdEstimate>,
}

struct Pooled {
    distances: Vec<f64>,
    ctx: Vec<SpeakingContext>,
    psds: Vec<PsdEstimate>,
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Data(e.to_string())
}

/// Writes `stats.csv`, `distance_summary.csv`, `distance_hist.csv` and
/// `psd.csv` for every class present in the corpus.
pub fn run(cfg: &PipelineConfig, args: &AnalyzeArgs) -> CliResult<Vec<ClassAnalysis>> {
    let streams = load_corpus(&args.data, cfg.ingest.budget(), cfg.execution)?;
    let mut pooled: BTreeMap<String, Pooled> = BTreeMap::new();
    for s in &streams {
        let screen = s.stream.header.screen.unwrap_or(cfg.synth.screen);
        let d = nose_distances(&s.stream.frames, Some(&screen)).map_err(|e| data(format!("{}: {e}", s.path.display())))?;
        let entry = pooled.entry(s.stream.header.class_name().to_string()).or_insert_with(|| Pooled {
            distances: Vec::new(),
            ctx: Vec::new(),
            psds: Vec::new(),
        });
        if d.len() >= PSD_SEGMENT {
            entry.psds.push(distance_psd(&d, PSD_SEGMENT).map_err(|e| CliError::Runtime(e.to_string()))?);
        }
        entry.ctx.extend(s.stream.frames.iter().map(|f| f.ctx));
        entry.distances.extend(d);
    }
    if pooled.values().all(|p| p.distances.is_empty()) {
        return Err(data("corpus has no frames"));
    }
    prepare_dir(&args.out)?;

    let fps = streams[0].stream.header.fps_nominal;
    let mut results = Vec::new();
    let mut stats_csv = csv_writer(&args.out.join("stats.csv"))?;
    stats_csv
        .write_record(["class", "frames", "mad", "std", "iqr", "median", "target_mad", "target_std", "target_iqr", "worst_rel_error"])
        .map_err(csv_err)?;
    let mut summary_csv = csv_writer(&args.out.join("distance_summary.csv"))?;
    summary_csv.write_record(["class", "context", "frames", "p05", "q1", "median", "q3", "p95", "mean"]).map_err(csv_err)?;
    let mut hist_csv = csv_writer(&args.out.join("distance_hist.csv"))?;
    hist_csv.write_record(["class", "context", "bin_lo_px", "bin_hi_px", "count", "share"]).map_err(csv_err)?;
    let mut psd_csv = csv_writer(&args.out.join("psd.csv"))?;
    psd_csv.write_record(["class", "bin", "freq_hz", "power"]).map_err(csv_err)?;

    for (class, p) in &pooled {
        let disp = dispersion(&p.distances, &p.ctx);
        let target = CalibrationTarget::for_profile(class);
        let t = |f: fn(&CalibrationTarget) -> f64| target.as_ref().map_or(String::new(), |t| f(t).to_string());
        stats_csv
            .write_record([
                class.clone(),
                p.distances.len().to_string(),
                disp.mad.to_string(),
                disp.std.to_string(),
                disp.iqr.to_string(),
                disp.median.to_string(),
                t(|t| t.mad),
                t(|t| t.std),
                t(|t| t.iqr),
                target.as_ref().map_or(String::new(), |t| t.worst_error(&disp).to_string()),
            ])
            .map_err(csv_err)?;

        let groups = std::iter::once(("all", None)).chain(SpeakingContext::ALL.iter().map(|c| (c.name(), Some(*c))));
        for (name, want) in groups {
            let d: Vec<f64> = p.distances.iter().zip(&p.ctx).filter(|(_, c)| want.is_none_or(|w| **c == w)).map(|(d, _)| *d).collect();
            if d.is_empty() {
                continue;
            }
            let sorted = stats::sorted_copy(&d);
            let q = |x| stats::quantile_sorted(&sorted, x).to_string();
            summary_csv
                .write_record([
                    class.clone(),
                    name.to_string(),
                    d.len().to_string(),
                    q(0.05),
                    q(0.25),
                    q(0.5),
                    q(0.75),
                    q(0.95),
                    stats::mean(&d).to_string(),
                ])
                .map_err(csv_err)?;
            let n_bins = (HIST_MAX_PX / HIST_BIN_PX) as usize;
            let mut counts = vec![0usize; n_bins + 1];
            for v in &d {
                counts[((v / HIST_BIN_PX) as usize).min(n_bins)] += 1;
            }
            for (k, c) in counts.iter().enumerate() {
                let lo = k as f64 * HIST_BIN_PX;
                let hi = if k == n_bins { "inf".to_string() } else { (lo + HIST_BIN_PX).to_string() };
                hist_csv
                    .write_record([
                        class.clone(),
                        name.to_string(),
                        lo.to_string(),
                        hi,
                        c.to_string(),
                        (*c as f64 / d.len() as f64).to_string(),
                    ])
                    .map_err(csv_err)?;
            }
        }

        let psd = if p.psds.is_empty() { None } else { Some(mean_psd(&p.psds).map_err(|e| CliError::Runtime(e.to_string()))?) };
        if let Some(psd) = &psd {
            for (k, (f, pw)) in psd.freqs.iter().zip(&psd.power).enumerate() {
                psd_csv.write_record([class.clone(), k.to_string(), (f * fps).to_string(), pw.to_string()]).map_err(csv_err)?;
            }
        }
        results.push(ClassAnalysis { class: class.clone(), frames: p.distances.len(), stats: disp, psd });
    }
    for w in [&mut stats_csv, &mut summary_csv, &mut hist_csv, &mut psd_csv] {
        w.flush()?;
    }
    write_config(&args.out, cfg)?;
    Ok(results)
}
