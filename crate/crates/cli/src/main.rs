mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Blink segmentation for frontal EEG.
#[derive(Parser)]
#[command(name = "blinkseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic labelled recordings and a manifest.
    Synth(SynthArgs),
    /// Train one configuration on the training split.
    Train(TrainArgs),
    /// Train every configuration of a grid and write the report.
    Search(SearchArgs),
    /// Predict per-sample labels for every recording of a manifest.
    Segment(SegmentArgs),
    /// Score prediction files against the manifest labels.
    Eval(EvalArgs),
    /// Rebuild the report files from a result store.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Healthy-control recordings.
    #[arg(long, default_value_t = 6)]
    pub hc: usize,
    /// Recordings with tremor.
    #[arg(long, default_value_t = 6)]
    pub pd: usize,
    #[arg(long, default_value_t = 60.0)]
    pub duration_s: f64,
    #[arg(long, default_value_t = 20.0)]
    pub noise_uv: f64,
    #[arg(long, default_value_t = 20.0)]
    pub blink_rate: f64,
    #[arg(long, default_value_t = 512.0)]
    pub sample_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Windowing and voting used to score whole recordings.
#[derive(Args, Clone)]
pub struct WindowArgs {
    #[arg(long, default_value_t = 1024)]
    pub window_len: usize,
    /// Defaults to the window length.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Comma-separated. Defaults to quarter steps of the window length.
    #[arg(long, value_delimiter = ',')]
    pub offsets: Vec<usize>,
}

#[derive(Args, Clone)]
pub struct FitArgs {
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0.2)]
    pub dropout: f64,
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// Training window length; defaults to --window-len.
    #[arg(long)]
    pub train_window_len: Option<usize>,
    /// Training window stride; defaults to half the training window.
    #[arg(long)]
    pub train_stride: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seed of the subject split; defaults to --seed.
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset manifest.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Model kind such as CNN-RNN-ST, TCN-DW or BiLSTM.
    #[arg(long, default_value = "CNN-RNN-ST")]
    pub model: String,
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    #[arg(long)]
    pub filter_size: Option<usize>,
    #[arg(long)]
    pub num_blocks: Option<usize>,
    #[arg(long)]
    pub num_filters: Option<usize>,
    #[arg(long)]
    pub num_rnn_blocks: Option<usize>,
    #[arg(long)]
    pub num_units: Option<usize>,
    /// Cell of a hybrid's recurrent stage.
    #[arg(long)]
    pub rnn_cell: Option<String>,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub window: WindowArgs,
}

#[derive(Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Grid file; overrides --preset.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Built-in grid: table1 or coarse.
    #[arg(long, default_value = "table1")]
    pub preset: String,
    /// Comma-separated model kinds to keep.
    #[arg(long, value_delimiter = ',')]
    pub models: Vec<String>,
    /// Comma-separated channel counts replacing the grid's channel axis.
    #[arg(long, value_delimiter = ',')]
    pub channels: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Finalists per model kind scored on the validation split.
    #[arg(long, default_value_t = 1)]
    pub top_k: usize,
    /// Stop after this many newly trained configurations.
    #[arg(long)]
    pub max_new: Option<usize>,
    #[command(flatten)]
    pub fit: FitArgs,
    #[command(flatten)]
    pub window: WindowArgs,
}

#[derive(Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub window: WindowArgs,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Directory of `<subject>.pred.csv` files.
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub iou: f64,
    /// Model label for the aggregate table; read from the predictions
    /// directory when absent.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub channels: Option<usize>,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Result store directory written by `search`.
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub top_k: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Search(a) => commands::search(&a),
        Command::Segment(a) => commands::segment(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Report(a) => commands::report(&a),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let line = serde_json::json!({ "kind": e.kind(), "message": e.to_string() });
            eprintln!("error: {line}");
            ExitCode::FAILURE
        }
    }
}
