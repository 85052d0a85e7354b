//! Command-line pipeline: preprocessing, layer-wise STDP training, classifier
//! training, evaluation, compression reports and exports.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use restocnet::plasticity::Layout;

#[derive(Parser, Debug)]
#[command(name = "restocnet", version, about = "Binary-kernel convolutional SNN trained with stochastic STDP")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Experiment TOML file, or the name of a built-in preset.
    #[arg(long, global = true, default_value = "mnist-16c3")]
    pub config: String,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory for checkpoints, caches and reports.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub workers: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the resolved configuration as TOML.
    ShowConfig,
    /// Load the dataset, normalise it and write tensor caches.
    Preprocess,
    /// Train one convolutional layer with mini-batch STDP.
    TrainConv {
        #[arg(long)]
        layer: usize,
        /// Keep the random initial kernels and zero thresholds instead of training.
        #[arg(long)]
        random_kernels: bool,
    },
    /// Train the fully-connected readout on spiking activations.
    TrainFc(Limits),
    /// Evaluate the trained readout on the test split.
    Eval(Limits),
    /// Kernel and synaptic memory compression figures.
    ReportCompression(commands::CompressionArgs),
    /// Write kernel grids as PGM images.
    ExportKernels {
        /// Pixels per kernel weight.
        #[arg(long, default_value_t = 8)]
        scale: usize,
    },
    /// Compute spiking activations for the train and test splits.
    ExportActivations(Limits),
    /// Train and evaluate the fully-connected SNN baseline.
    RunFcsnn {
        #[arg(long, value_parser = parse_layout)]
        layout: Option<Layout>,
        #[arg(long)]
        train_patterns: Option<usize>,
        #[arg(long)]
        test_limit: Option<usize>,
    },
}

#[derive(Args, Debug, Clone, Copy, Default)]
pub struct Limits {
    /// Use only the first N training images.
    #[arg(long)]
    pub train_limit: Option<usize>,
    /// Use only the first N test images.
    #[arg(long)]
    pub test_limit: Option<usize>,
    /// Overrides the configured number of classifier epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
}

fn parse_layout(s: &str) -> Result<Layout, String> {
    match s.to_ascii_lowercase().as_str() {
        "hb" => Ok(Layout::Hb),
        "hb2" => Ok(Layout::Hb2),
        "hb3" => Ok(Layout::Hb3),
        _ => Err(format!("unknown layout `{s}` (hb, hb2, hb3)")),
    }
}

fn run(cli: Cli) -> restocnet::Result<()> {
    if cli.common.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.common.workers)
            .build_global()
            .map_err(|e| restocnet::Error::Config(e.to_string()))?;
    }
    let ctx = commands::Context::new(&cli.common)?;
    match cli.command {
        Command::ShowConfig => {
            print!("{}", ctx.config.to_toml_string()?);
            Ok(())
        }
        Command::Preprocess => ctx.preprocess(),
        Command::TrainConv { layer, random_kernels } => ctx.train_conv(layer, random_kernels),
        Command::TrainFc(limits) => ctx.train_fc(limits),
        Command::Eval(limits) => ctx.eval(limits),
        Command::ReportCompression(args) => ctx.report_compression(&args),
        Command::ExportKernels { scale } => ctx.export_kernels(scale),
        Command::ExportActivations(limits) => ctx.export_activations(limits).map(|_| ()),
        Command::RunFcsnn {
            layout,
            train_patterns,
            test_limit,
        } => ctx.run_fcsnn(layout, train_patterns, test_limit),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
