//! Options and output helpers shared by the `bench`, `train` and
//! `gridsearch` binaries.

use std::path::Path;

use anyhow::Context;
use clap::{Args, ValueEnum};
use gpuarray_core::workloads::{emit_report, write_report, BenchReport, ReportFormat};
use gpuarray_core::{create_context, BackendChoice, DeviceConfig, DeviceContext};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    /// Hardware adapter if one exists, else the emulated device.
    Auto,
    Gpu,
    Emulated,
    /// No device at all: the f32 host implementation.
    Host,
}

#[derive(Clone, Debug, Args)]
pub struct DeviceArgs {
    /// Defaults to GPUARRAY_BACKEND, then auto.
    #[arg(long, value_enum)]
    pub backend: Option<BackendArg>,
    #[arg(long)]
    pub workgroup_size: Option<u32>,
    /// Bytes of idle buffers the memory pool may keep; 0 disables pooling.
    #[arg(long)]
    pub pool_cap: Option<u64>,
}

impl DeviceArgs {
    pub fn is_host(&self) -> bool {
        self.backend == Some(BackendArg::Host)
    }

    /// `None` when running on the host.
    pub fn context(&self) -> anyhow::Result<Option<DeviceContext>> {
        let mut config = DeviceConfig::from_env()?;
        match self.backend {
            Some(BackendArg::Host) => return Ok(None),
            Some(BackendArg::Auto) => config.backend = BackendChoice::Auto,
            Some(BackendArg::Gpu) => config.backend = BackendChoice::Gpu,
            Some(BackendArg::Emulated) => config.backend = BackendChoice::Emulated,
            None => {}
        }
        if let Some(ws) = self.workgroup_size {
            config.workgroup_size = ws;
        }
        if let Some(cap) = self.pool_cap {
            config.pool_cap = cap;
        }
        let ctx = create_context(config).context("creating device context")?;
        log::info!("device backend: {}", ctx.backend_name());
        Ok(Some(ctx))
    }
}

/// Writes `report` to `path` (CSV if it ends in `.csv`, else JSON), or as
/// JSON to stdout when no path is given.
pub fn output_report(report: &BenchReport, path: Option<&Path>) -> anyhow::Result<()> {
    match path {
        Some(p) => {
            emit_report(report, ReportFormat::from_path(p), p).with_context(|| format!("writing {}", p.display()))
        }
        None => Ok(write_report(report, ReportFormat::Json, std::io::stdout().lock())?),
    }
}

pub fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
}
