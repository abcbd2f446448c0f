use std::fs;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::time::Duration;

use anyhow::Context;
use clap::{Parser, Subcommand};
use gpuarray_cli::{init_logging, output_report, DeviceArgs};
use gpuarray_core::gridsearch::{
    enumerate_grid, scaling_experiment, worker_loop, Backoff, Coordinator, JobTemplate, ServeOptions, WorkerBackend,
    WorkerOptions,
};

/// Set to a non-empty value other than 0 to make workers train on the host.
const HOST_TRAINING_ENV: &str = "GPUARRAY_HOST_TRAINING";

/// Distributed grid search over hidden-layer widths.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct JobArgs {
    #[arg(long, default_value_t = 1000)]
    train_size: usize,
    #[arg(long, default_value_t = 200)]
    eval_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    batch: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f32,
    /// Replace training with a sleep of this many milliseconds.
    #[arg(long)]
    stub_job_ms: Option<u64>,
}

impl JobArgs {
    fn template(&self) -> JobTemplate {
        JobTemplate {
            train_size: self.train_size,
            eval_size: self.eval_size,
            seed: self.seed,
            batch: self.batch,
            lr: self.lr,
            stub_ms: self.stub_job_ms,
            ..Default::default()
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the coordinator until every job has a result.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        bind: String,
        #[arg(long, default_value_t = 3)]
        layers: usize,
        /// Width choices, shared by every layer.
        #[arg(long, value_delimiter = ',', default_value = "4,8,16")]
        choices: Vec<usize>,
        #[arg(long, default_value_t = 60.0)]
        deadline_s: f64,
        /// Keep serving until this many workers have been told to stop.
        #[arg(long, default_value_t = 0)]
        expect_workers: usize,
        /// Write the summary as JSON here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        jobs: JobArgs,
    },
    /// Pull and run jobs until the coordinator says done.
    Worker {
        #[arg(long, default_value = "127.0.0.1:7878")]
        connect: String,
        /// Attempts per request before giving up.
        #[arg(long, default_value_t = 8)]
        retries: u32,
        #[arg(long, default_value_t = 100)]
        backoff_ms: u64,
        #[command(flatten)]
        device: DeviceArgs,
    },
    /// Time equal stub jobs against increasing numbers of worker processes.
    Scale {
        #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
        workers: Vec<usize>,
        #[arg(long, default_value_t = 400)]
        stub_job_ms: u64,
        #[arg(long, default_value_t = 8)]
        jobs: usize,
        #[arg(long, default_value_t = 3)]
        runs: usize,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn host_training_forced() -> bool {
    std::env::var(HOST_TRAINING_ENV).is_ok_and(|v| !v.is_empty() && v != "0")
}

fn launch_worker(addr: SocketAddr) -> std::io::Result<Child> {
    Command::new(std::env::current_exe()?)
        .args(["worker", "--connect", &addr.to_string(), "--backend", "host"])
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .spawn()
}

fn main() -> anyhow::Result<()> {
    init_logging();
    match Cli::parse().cmd {
        Cmd::Serve {
            bind,
            layers,
            choices,
            deadline_s,
            expect_workers,
            report,
            jobs,
        } => {
            anyhow::ensure!(deadline_s > 0.0 && deadline_s.is_finite(), "deadline must be positive");
            let grid = enumerate_grid(&vec![choices; layers], &jobs.template())?;
            let coordinator = Coordinator::bind(&bind).with_context(|| format!("binding {bind}"))?;
            eprintln!("serving {} jobs on {}", grid.len(), coordinator.local_addr()?);
            let opts = ServeOptions {
                deadline: Duration::from_secs_f64(deadline_s),
                expect_workers,
                ..Default::default()
            };
            let summary = coordinator.run(grid, &opts)?;
            let json = serde_json::to_string_pretty(&summary)?;
            match report {
                Some(p) => fs::write(&p, json + "\n").with_context(|| format!("writing {}", p.display()))?,
                None => println!("{json}"),
            }
            Ok(())
        }
        Cmd::Worker {
            connect,
            retries,
            backoff_ms,
            device,
        } => {
            let backend = if host_training_forced() {
                WorkerBackend::Host
            } else {
                device.context()?.map_or(WorkerBackend::Host, WorkerBackend::Device)
            };
            let mut opts = WorkerOptions::new(backend);
            opts.backoff = Backoff {
                base: Duration::from_millis(backoff_ms),
                tries: retries.max(1),
                ..Default::default()
            };
            let stats = worker_loop(&connect, &opts)?;
            eprintln!("worker {} finished {} jobs", stats.worker_id, stats.jobs_done);
            Ok(())
        }
        Cmd::Scale {
            workers,
            stub_job_ms,
            jobs,
            runs,
            report,
        } => {
            anyhow::ensure!(jobs >= 1, "need at least one job");
            let template = JobTemplate {
                stub_ms: Some(stub_job_ms),
                ..Default::default()
            };
            let grid = enumerate_grid(&[(1..=jobs).collect()], &template)?;
            let outcome = scaling_experiment(&workers, &grid, runs, &ServeOptions::default(), &mut launch_worker)?;
            for (n, secs, speedup) in &outcome.rows {
                eprintln!("{n} workers: {secs:.3} s, speedup {speedup:.2}");
            }
            output_report(&outcome.report, report.as_deref())
        }
    }
}
