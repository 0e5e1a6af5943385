//! `hfprep`: preprocessing, pseudo-labeling, training, prediction and
//! evaluation from the command line.
//!
//! Exit status is 0 on success, 1 on a runtime failure (one `hfprep: error:`
//! line on stderr) and 2 on a usage error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "hfprep", version, about = "Adaptive high-frequency preprocessing for video coding")]
struct Cli {
    /// TOML run configuration; defaults apply to anything unset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// JSON-lines run log; overrides `log_path` from the config.
    #[arg(long, global = true)]
    log: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Apply unsharp masking of strength ALPHA to a y4m video.
    Preprocess(PreprocessArgs),
    /// Pseudo-label a manifest by sweeping strategies and bitrates.
    Label(LabelArgs),
    /// Train the strength predictor on a labeled manifest.
    Train(TrainArgs),
    /// Predict the strength for one video or a whole manifest.
    Predict(PredictArgs),
    /// PLCC and RMSE of predictions against labels.
    Evaluate(EvaluateArgs),
    /// Per-video RD curves from a labeling audit, as CSV.
    Rdplot(RdplotArgs),
    /// Seeded train/test split of a manifest.
    Split(SplitArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BoundaryArg {
    Reflect,
    Wrap,
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    #[arg(long, allow_hyphen_values = true)]
    alpha: f64,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    ksize: Option<usize>,
    #[arg(long, value_enum)]
    boundary: Option<BoundaryArg>,
    #[arg(short = 'i', long)]
    input: PathBuf,
    #[arg(short = 'o', long)]
    output: PathBuf,
}

#[derive(Args, Debug)]
struct LabelArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Labels CSV: video_id, alpha_label, quality_at_target, target_kbps.
    #[arg(long, default_value = "labels.csv")]
    out: PathBuf,
    /// RD audit CSV: video_id, alpha, nominal_kbps, measured_kbps, quality.
    #[arg(long, default_value = "rd_audit.csv")]
    audit: PathBuf,
    /// Cache and scratch directory; overrides HFPREP_WORKDIR and the config.
    #[arg(long)]
    workdir: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// `builtin` or a command template with `{image}`.
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    no_cache: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Manifest with an alpha_label column, or any manifest plus --labels.
    #[arg(long)]
    manifest: PathBuf,
    /// Labels CSV joined onto the manifest by video_id.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Train without frequency attention.
    #[arg(long)]
    no_fa: bool,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(short = 'i', long, conflicts_with = "manifest", required_unless_present = "manifest")]
    input: Option<PathBuf>,
    /// Predict every entry; writes video_id, s_pred to --out.
    #[arg(long, requires = "out")]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    clips: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// CSV with video_id and s_pred.
    #[arg(long)]
    pred: PathBuf,
    /// CSV with video_id and alpha_label.
    #[arg(long)]
    gt: PathBuf,
}

#[derive(Args, Debug)]
struct RdplotArgs {
    #[arg(long)]
    audit: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to the configured target bitrate.
    #[arg(long)]
    target: Option<f64>,
}

#[derive(Args, Debug)]
struct SplitArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    fraction: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    train_out: PathBuf,
    #[arg(long)]
    test_out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let name = cli.command.name();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("hfprep: error: {name}: {msg}");
            ExitCode::from(1)
        }
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Preprocess(_) => "preprocess",
            Command::Label(_) => "label",
            Command::Train(_) => "train",
            Command::Predict(_) => "predict",
            Command::Evaluate(_) => "evaluate",
            Command::Rdplot(_) => "rdplot",
            Command::Split(_) => "split",
        }
    }
}
