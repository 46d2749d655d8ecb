//! `radarpc`: generate synthetic radar data, run CFAR or the learned
//! detector, and report metrics.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or parse error.

mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use run::Failure;

#[derive(Parser, Debug)]
#[command(name = "radarpc", version, about = "4D radar cube to point cloud pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Seed for every random stream of the command.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory receiving the command's outputs.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render synthetic scenes into cubes, ground truth and a manifest.
    Generate(GenerateArgs),
    /// Run a CFAR detector over a dataset.
    Cfar(CfarArgs),
    /// Train the learned detector.
    Train(TrainArgs),
    /// Run a trained checkpoint over a dataset.
    Infer(InferArgs),
    /// Score predicted grids against ground truth.
    Eval(EvalArgs),
    /// Train and evaluate a grid of (temporal layers, backbone blocks) cells.
    Sweep(SweepArgs),
    /// Render a metrics or sweep CSV as SVG.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: Common,
    /// A single scene to render. Without it, scenes are sampled.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// `compact`, `desk`, or a path to a geometry JSON file.
    #[arg(long, default_value = "desk")]
    pub geometry: String,
    /// Frames per scene.
    #[arg(long)]
    pub frames: Option<usize>,
    /// Number of sampled scenes.
    #[arg(long, default_value_t = 1)]
    pub scenes: usize,
    /// Scene sampler settings as JSON.
    #[arg(long)]
    pub sampler: Option<PathBuf>,
    /// Overrides the sampler's flicker probability.
    #[arg(long)]
    pub flicker: Option<f64>,
}

#[derive(Args, Debug)]
pub struct CfarArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub dataset: PathBuf,
    /// CFAR configuration JSON; defaults to CA-CFAR.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct NetArgs {
    /// Network configuration JSON.
    #[arg(long)]
    pub net_cfg: Option<PathBuf>,
    /// Training configuration JSON.
    #[arg(long)]
    pub train_cfg: Option<PathBuf>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Held-out dataset scored after every epoch.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    #[command(flatten)]
    pub net: NetArgs,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub temporal: Option<usize>,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory with a manifest listing predicted grids.
    #[arg(long)]
    pub pred_dir: PathBuf,
    /// Dataset directory with ground-truth grids.
    #[arg(long)]
    pub gt_dir: PathBuf,
    /// Report path; defaults to `report.csv` in the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Evaluation dataset. Without it the last sequences of `--dataset`
    /// are held out.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    /// Fraction of sequences held out when no validation set is given.
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,12")]
    pub backbones: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0,2,4,6")]
    pub temporal: Vec<usize>,
    #[command(flatten)]
    pub net: NetArgs,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: Common,
    /// A metrics or sweep CSV.
    #[arg(long)]
    pub input: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Err(f) = run::init_threads() {
        return f.report();
    }
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Cfar(a) => commands::cfar(&a),
        Command::Train(a) => commands::train(&a),
        Command::Infer(a) => commands::infer(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Sweep(a) => commands::sweep(&a),
        Command::Report(a) => commands::report(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.report(),
    }
}

impl Failure {
    fn report(self) -> ExitCode {
        let (code, e) = match self {
            Failure::Usage(e) => (2, e),
            Failure::Runtime(e) => (1, e),
        };
        eprintln!("error: {e}");
        ExitCode::from(code)
    }
}
