mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "vad", version, about = "Flow-guided future frame prediction for video anomaly detection")]
struct Cli {
    /// Run every data-parallel section on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,

    /// Log level for standard error.
    #[arg(long, global = true, default_value = "info")]
    log_level: log::LevelFilter,

    #[command(subcommand)]
    command: Command,
}

/// Options every subcommand accepts. Flags override the config file.
#[derive(Args, Debug, Clone)]
pub struct Common {
    #[arg(long)]
    pub seed: Option<u64>,
    /// TOML file with `synthetic`, `train`, `motion_net`, `frame_net`,
    /// `frame_size`, `motion_epochs` and `frame_epochs` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Side length frames are resized to.
    #[arg(long)]
    pub frame_size: Option<usize>,
}

/// Which model to score with.
#[derive(Args, Debug, Clone)]
#[group(required = true, multiple = false)]
pub struct ModelArg {
    /// Pipeline directory or its `pipeline.toml`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Freshly initialized networks from the config and `--seed`.
    #[arg(long)]
    pub untrained: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the synthetic moving-sprites dataset.
    GenSynthetic {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        train_clips: Option<usize>,
        #[arg(long)]
        test_clips: Option<usize>,
        #[arg(long)]
        clip_length: Option<usize>,
    },
    /// Fill the flow tree of a dataset by block matching or import.
    PrecomputeFlow {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        /// Flow tree root; defaults to `<dataset>/flow`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Copy `.flo` files from `<dir>/<video_id>/` instead of estimating.
        #[arg(long)]
        import: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        block: usize,
        #[arg(long, default_value_t = 4)]
        radius: usize,
        #[arg(long, value_enum, default_value = "train")]
        split: SplitArg,
    },
    /// Train the motion network on (frame, flow) pairs.
    TrainMotion {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Flow tree root; defaults to `<dataset>/flow`.
        #[arg(long)]
        flow_root: Option<PathBuf>,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Train the frame network, guided by a frozen motion network.
    TrainFrame {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Motion checkpoint from `train-motion`.
        #[arg(long, required_unless_present = "no_flow")]
        motion: Option<PathBuf>,
        #[arg(long)]
        no_flow: bool,
        #[arg(long)]
        no_margin: bool,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Per-frame scores of the test split as CSV.
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        frame_size: Option<usize>,
    },
    /// Scores, frame-level AUC summary and optional patch masks.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        frame_size: Option<usize>,
        /// Also write patch-PSNR masks for every test video.
        #[arg(long)]
        masks: bool,
        #[arg(long, default_value_t = 8)]
        patch: usize,
    },
    /// Train and evaluate the four flow/margin cells.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Seeds to repeat the grid over; defaults to `--seed`.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        motion_epochs: Option<usize>,
        #[arg(long)]
        frame_epochs: Option<usize>,
    },
    /// Prediction and detection throughput at batch size 1.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        frame_size: Option<usize>,
        /// Upper bound on frames timed.
        #[arg(long, default_value_t = 200)]
        frames: usize,
    },
    /// Patch-PSNR masks as grayscale images.
    Mask {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelArg,
        #[arg(long)]
        frame_size: Option<usize>,
        /// Restrict to one test video.
        #[arg(long)]
        video: Option<String>,
        #[arg(long, default_value_t = 8)]
        patch: usize,
        /// PSNR rendered black.
        #[arg(long, default_value_t = 10.0)]
        lo_db: f64,
        /// PSNR rendered white.
        #[arg(long, default_value_t = 40.0)]
        hi_db: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .format_timestamp_secs()
        .init();
    if cli.sequential {
        vad_core::exec::set_mode(vad_core::exec::ExecMode::Sequential);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    use commands as c;
    match command {
        Command::GenSynthetic {
            common,
            out,
            train_clips,
            test_clips,
            clip_length,
        } => c::gen_synthetic(&common, &out, train_clips, test_clips, clip_length),
        Command::PrecomputeFlow {
            common,
            dataset,
            out,
            import,
            block,
            radius,
            split,
        } => c::precompute_flow(&common, &dataset, out, import, block, radius, split),
        Command::TrainMotion {
            common,
            dataset,
            out,
            flow_root,
            train,
        } => c::train_motion(&common, &dataset, &out, flow_root, &train),
        Command::TrainFrame {
            common,
            dataset,
            out,
            motion,
            no_flow,
            no_margin,
            train,
        } => c::train_frame(&common, &dataset, &out, motion, no_flow, no_margin, &train),
        Command::Score {
            common,
            dataset,
            out,
            model,
            frame_size,
        } => c::score(&common, &dataset, &out, &model, frame_size, false, 0),
        Command::Evaluate {
            common,
            dataset,
            out,
            model,
            frame_size,
            masks,
            patch,
        } => c::score(&common, &dataset, &out, &model, frame_size, true, if masks { patch } else { 0 }),
        Command::Ablate {
            common,
            dataset,
            out,
            seeds,
            motion_epochs,
            frame_epochs,
        } => c::ablate(&common, &dataset, &out, seeds, motion_epochs, frame_epochs),
        Command::Bench {
            common,
            dataset,
            out,
            model,
            frame_size,
            frames,
        } => c::bench(&common, &dataset, &out, &model, frame_size, frames),
        Command::Mask {
            common,
            dataset,
            out,
            model,
            frame_size,
            video,
            patch,
            lo_db,
            hi_db,
        } => c::mask(&common, &dataset, &out, &model, frame_size, video, patch, (lo_db, hi_db)),
    }
}
