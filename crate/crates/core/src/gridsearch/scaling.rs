use std::net::SocketAddr;
use std::process::Child;
use std::thread;
use std::time::{Duration, Instant};

use serde_json::json;

use super::coordinator::{Coordinator, ServeOptions};
use super::JobSpec;
use crate::error::{Error, Result};
use crate::workloads::{median, BenchCell, BenchReport, Correctness};

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingOutcome {
    pub report: BenchReport,
    /// `(workers, median seconds, speedup over the first count)`
    pub rows: Vec<(usize, f64, f64)>,
}

/// For each worker count, serves `jobs` to that many worker processes
/// `runs` times and records the median wall time. `launch` starts one worker
/// process connected to the given address.
pub fn scaling_experiment(
    counts: &[usize],
    jobs: &[JobSpec],
    runs: usize,
    opts: &ServeOptions,
    launch: &mut dyn FnMut(SocketAddr) -> std::io::Result<Child>,
) -> Result<ScalingOutcome> {
    if counts.is_empty() || counts.contains(&0) || counts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(
            "worker counts must be positive and strictly ascending".into(),
        ));
    }
    if jobs.is_empty() || runs == 0 {
        return Err(Error::InvalidConfig("need at least one job and one run".into()));
    }
    let mut cells = Vec::new();
    let mut rows = Vec::new();
    for &n in counts {
        let mut samples = Vec::with_capacity(runs);
        let mut complete = true;
        for _ in 0..runs {
            let coordinator = Coordinator::bind("127.0.0.1:0")?;
            let addr = coordinator.local_addr()?;
            let mut children = Vec::with_capacity(n);
            for _ in 0..n {
                match launch(addr) {
                    Ok(c) => children.push(c),
                    Err(e) => {
                        reap(&mut children, Duration::ZERO);
                        return Err(Error::Io(format!("failed to start a worker: {e}")));
                    }
                }
            }
            let opts = ServeOptions {
                expect_workers: n,
                ..opts.clone()
            };
            let summary = coordinator.run(jobs.to_vec(), &opts);
            reap(&mut children, Duration::from_secs(10));
            let summary = summary?;
            complete &= summary.results.len() == jobs.len();
            samples.push(summary.total_seconds * 1e3);
        }
        let med = median(&samples);
        let base = rows.first().map_or(med, |r: &(usize, f64, f64)| r.1 * 1e3);
        rows.push((n, med / 1e3, base / med));
        cells.push(BenchCell {
            name: format!("workers={n}"),
            params: json!({ "workers": n, "jobs": jobs.len(), "runs": runs }),
            median_ms: med,
            throughput: jobs.len() as f64 / (med / 1e3),
            throughput_unit: "jobs/s".into(),
            samples_ms: samples,
            correctness: Correctness {
                passed: complete,
                max_rel_err: 0.0,
                pixel_mismatch_ppm: None,
            },
            skipped: None,
        });
    }
    let headline = cells.len() - 1;
    let mut report = BenchReport::from_cells(
        "gridsearch-scaling",
        "process-workers",
        json!({ "counts": counts, "jobs": jobs.len(), "runs": runs }),
        cells,
        headline,
    );
    report
        .series
        .insert("speedup".into(), rows.iter().map(|r| r.2).collect());
    for (n, secs, speedup) in &rows {
        report
            .notes
            .push(format!("{n} workers: median {secs:.3} s, speedup {speedup:.2}"));
    }
    Ok(ScalingOutcome { report, rows })
}

/// Waits up to `grace` for the children to exit, then kills the rest.
fn reap(children: &mut Vec<Child>, grace: Duration) {
    let deadline = Instant::now() + grace;
    for c in children.iter_mut() {
        loop {
            match c.try_wait() {
                Ok(Some(status)) => {
                    if !status.success() {
                        log::warn!("worker exited with {status}");
                    }
                    break;
                }
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(10)),
                _ => {
                    let _ = c.kill();
                    let _ = c.wait();
                    break;
                }
            }
        }
    }
    children.clear();
}
