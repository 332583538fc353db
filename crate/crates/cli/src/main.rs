use std::io::BufReader;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gazecheck_cli::commands::{analyze, detect, eval, featurize, synth, train};
use gazecheck_cli::error::usage;
use gazecheck_cli::{CliResult, PipelineConfig};
use gazecheck_core::fusion::Task;
use gazecheck_core::ingest::GazeKind;
use gazecheck_core::model::load_model;

#[derive(Parser)]
#[command(name = "gazecheck", version, about = "Gaze-dynamics deepfake detection for one-on-one video calls")]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config layered over the built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum GazeArg {
    Pog,
    Ray,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Hard,
    Soft,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic corpus: one genuine and two fake streams per subject.
    Synth {
        #[arg(long)]
        subjects: usize,
        #[arg(long, default_value_t = 11.0)]
        minutes: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "pog")]
        gaze: GazeArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export per-frame features and scaled window tensors.
    Featurize {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model on a corpus.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "mixed")]
        task: Task,
        #[arg(long, default_value_t = 0.0)]
        validation_fraction: f64,
    },
    /// Repeated subject-disjoint evaluation, optionally scoring a trained model.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        repeats: Option<usize>,
        /// Comma-separated voter counts.
        #[arg(long, value_delimiter = ',')]
        voting: Option<Vec<usize>>,
        #[arg(long = "task")]
        tasks: Vec<Task>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Split seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Accept flags or config that disagree with the model file.
        #[arg(long)]
        force: bool,
    },
    /// Distance distributions, per-class PSD and dispersion statistics as CSV.
    Analyze {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stream verdicts for frames read from standard input.
    Detect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        voters: Option<usize>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        threshold: Option<f64>,
    },
}

fn push<T: std::fmt::Display>(sets: &mut Vec<String>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        sets.push(format!("{key}={v}"));
    }
}

fn log_stderr(line: String) {
    eprintln!("{line}");
}

fn run(cli: Cli) -> CliResult<()> {
    let ConfigArgs { config, set } = cli.config;
    let mut sets = set;
    let file = config.as_deref();
    match cli.command {
        Command::Synth { subjects, minutes, seed, gaze, out } => {
            let cfg = PipelineConfig::load(file, &sets)?;
            let gaze = match gaze {
                GazeArg::Pog => GazeKind::Pog,
                GazeArg::Ray => GazeKind::Ray,
            };
            let files = synth::run(&cfg, &synth::SynthArgs { subjects, minutes, seed, gaze, out: out.clone() })?;
            println!("wrote {} streams to {}", files.len(), out.display());
        }
        Command::Featurize { data, out } => {
            let cfg = PipelineConfig::load(file, &sets)?;
            let s = featurize::run(&cfg, &featurize::FeaturizeArgs { data, out })?;
            println!("{} streams, {} frames, {} windows", s.streams, s.frames, s.windows);
        }
        Command::Train { data, out, epochs, seed, task, validation_fraction } => {
            push(&mut sets, "train.epochs", epochs);
            push(&mut sets, "train.seed", seed);
            let cfg = PipelineConfig::load(file, &sets)?;
            let h = train::run(&cfg, &train::TrainArgs { data, out: out.clone(), task, validation_fraction }, &mut log_stderr)?;
            println!("trained {} epochs (kept epoch {}), model {}", h.history.len(), h.best_epoch, out.display());
        }
        Command::Eval { data, out, model, repeats, voting, tasks, epochs, seed, force } => {
            push(&mut sets, "eval.repeats", repeats);
            push(&mut sets, "train.epochs", epochs);
            push(&mut sets, "eval.seed", seed);
            if let Some(v) = voting {
                let list: Vec<String> = v.iter().map(usize::to_string).collect();
                sets.push(format!("eval.voters=[{}]", list.join(",")));
            }
            let model = model.map(load_model).transpose()?;
            let (cfg, conflicts) = match &model {
                Some(m) => {
                    let cfg = PipelineConfig::layered(eval::model_base(m), file, &sets)?;
                    let conflicts = eval::model_conflicts(&cfg, m);
                    if !conflicts.is_empty() && !force {
                        return Err(usage(format!(
                            "settings conflict with the model file in [{}]; pass --force to override",
                            conflicts.join(", ")
                        )));
                    }
                    (cfg, conflicts)
                }
                None => (PipelineConfig::load(file, &sets)?, Vec::new()),
            };
            let tasks = if tasks.is_empty() { Task::ALL.to_vec() } else { tasks };
            let report = eval::run(&cfg, &eval::EvalArgs { data, tasks, out }, model.as_ref(), conflicts, &mut log_stderr)?;
            print!("{}", report.tables());
        }
        Command::Analyze { data, out } => {
            let cfg = PipelineConfig::load(file, &sets)?;
            let classes = analyze::run(&cfg, &analyze::AnalyzeArgs { data, out })?;
            for c in classes {
                println!("{:<12} mad {:>8.2} std {:>8.2} iqr {:>8.2}", c.class, c.stats.mad, c.stats.std, c.stats.iqr);
            }
        }
        Command::Detect { model, voters, mode, threshold } => {
            push(&mut sets, "detect.voters", voters);
            push(&mut sets, "detect.threshold", threshold);
            if let Some(m) = mode {
                sets.push(format!("detect.mode=\"{}\"", if matches!(m, ModeArg::Hard) { "hard" } else { "soft" }));
            }
            let cfg = PipelineConfig::load(file, &sets)?;
            cfg.validate()?;
            let model = load_model(&model)?;
            let stdout = std::io::stdout();
            let mut out = std::io::BufWriter::new(stdout.lock());
            let s = detect::run(&model, &cfg.detect, &cfg.synth.screen, cfg.ingest.budget(), BufReader::new(std::io::stdin()), &mut out)?;
            eprintln!("{} frames, {} rejected, {} windows, {} verdicts", s.frames, s.rejected, s.windows, s.verdicts);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
