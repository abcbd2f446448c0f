use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use gpuarray_cli::{init_logging, output_report, DeviceArgs};
use gpuarray_core::workloads::{
    emit_image, run_mandelbrot, run_matmul_sweep, MandelbrotMode, MandelbrotParams, SweepVariant, Timing,
};

/// Mandelbrot and matrix-multiplication benchmarks.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Composed,
    Custom,
    Host,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    Naive,
    Tiled,
    Host,
    All,
}

#[derive(clap::Args)]
struct TimingArgs {
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    #[arg(long, default_value_t = 5)]
    samples: usize,
}

impl TimingArgs {
    fn timing(&self) -> anyhow::Result<Timing> {
        anyhow::ensure!(self.samples >= 1, "need at least one sample");
        Ok(Timing {
            warmup: self.warmup,
            samples: self.samples,
        })
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Escape-time counts over a square grid.
    Mandelbrot {
        #[arg(long, default_value_t = 1024)]
        size: usize,
        #[arg(long, default_value_t = 500)]
        iters: u32,
        #[arg(long, value_enum, default_value = "custom")]
        mode: ModeArg,
        /// Write the counts as a PGM image.
        #[arg(long)]
        out_image: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        timing: TimingArgs,
        #[command(flatten)]
        device: DeviceArgs,
    },
    /// Square matmul sweep over sizes and kernel variants.
    Matmul {
        #[arg(long, value_delimiter = ',', default_value = "64,256,1024")]
        sizes: Vec<usize>,
        #[arg(long, value_enum, default_value = "all")]
        variant: VariantArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        timing: TimingArgs,
        #[command(flatten)]
        device: DeviceArgs,
    },
}

fn main() -> anyhow::Result<()> {
    init_logging();
    match Cli::parse().cmd {
        Cmd::Mandelbrot {
            size,
            iters,
            mode,
            out_image,
            report,
            timing,
            device,
        } => {
            let mode = match mode {
                _ if device.is_host() => MandelbrotMode::Host,
                ModeArg::Composed => MandelbrotMode::Composed,
                ModeArg::Custom => MandelbrotMode::Custom,
                ModeArg::Host => MandelbrotMode::Host,
            };
            let ctx = if mode == MandelbrotMode::Host {
                None
            } else {
                device.context()?
            };
            let params = MandelbrotParams {
                max_iter: iters,
                ..MandelbrotParams::square(size)
            };
            let (rep, counts) = run_mandelbrot(ctx.as_ref(), &params, mode, timing.timing()?)?;
            if let Some(path) = out_image {
                emit_image(&counts, params.height, params.width, params.max_iter, &path)?;
            }
            output_report(&rep, report.as_deref())
        }
        Cmd::Matmul {
            mut sizes,
            variant,
            seed,
            report,
            timing,
            device,
        } => {
            sizes.sort_unstable();
            sizes.dedup();
            let variants: Vec<SweepVariant> = match variant {
                _ if device.is_host() => vec![SweepVariant::Host],
                VariantArg::All => SweepVariant::ALL.to_vec(),
                VariantArg::Naive => vec![SweepVariant::Naive],
                VariantArg::Tiled => vec![SweepVariant::Tiled],
                VariantArg::Host => vec![SweepVariant::Host],
            };
            let needs_device = variants.iter().any(|v| *v != SweepVariant::Host);
            let ctx = if needs_device { device.context()? } else { None };
            let rep = run_matmul_sweep(ctx.as_ref(), &sizes, &variants, timing.timing()?, seed)?;
            output_report(&rep, report.as_deref())
        }
    }
}
