use std::path::PathBuf;

use clap::{Parser, Subcommand};
use gpuarray_cli::{init_logging, output_report, DeviceArgs};
use gpuarray_core::workloads::mlp::{DeviceEngine, HostEngine};
use gpuarray_core::workloads::{run_mlp_train, MlpConfig};

/// Training demos.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fully connected classifier on synthetic Gaussian blobs.
    Mlp {
        #[arg(long, default_value_t = 100)]
        steps: usize,
        /// Hidden layer widths.
        #[arg(long, value_delimiter = ',', default_value = "32")]
        hidden: Vec<usize>,
        #[arg(long, default_value_t = 64)]
        batch: usize,
        #[arg(long, default_value_t = 0.1)]
        lr: f32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Training set size.
        #[arg(long, default_value_t = 1024)]
        samples: usize,
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        device: DeviceArgs,
    },
}

fn main() -> anyhow::Result<()> {
    init_logging();
    let Cmd::Mlp {
        steps,
        hidden,
        batch,
        lr,
        seed,
        samples,
        report,
        device,
    } = Cli::parse().cmd;
    let cfg = MlpConfig {
        hidden,
        batch,
        steps,
        lr,
        seed,
        samples,
        ..Default::default()
    };
    let rep = match device.context()? {
        Some(ctx) => run_mlp_train(&DeviceEngine::new(ctx), &cfg)?,
        None => run_mlp_train(&HostEngine, &cfg)?,
    };
    output_report(&rep, report.as_deref())
}
