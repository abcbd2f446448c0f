use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Agreement with the reference implementation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Correctness {
    pub passed: bool,
    pub max_rel_err: f64,
    /// Mismatching pixels per million (image workloads only).
    pub pixel_mismatch_ppm: Option<f64>,
}

/// One measured configuration of a workload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchCell {
    pub name: String,
    pub params: serde_json::Value,
    pub samples_ms: Vec<f64>,
    pub median_ms: f64,
    pub throughput: f64,
    pub throughput_unit: String,
    pub correctness: Correctness,
    /// Set when the cell was not run, e.g. after running out of memory.
    pub skipped: Option<String>,
}

/// Result of one workload run. The top-level timing fields repeat the
/// headline cell; `cells` lists every measured configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchReport {
    pub workload: String,
    pub backend: String,
    pub params: serde_json::Value,
    pub samples_ms: Vec<f64>,
    pub median_ms: f64,
    pub throughput: f64,
    pub throughput_unit: String,
    pub correctness: Correctness,
    pub cells: Vec<BenchCell>,
    /// Named series such as a loss curve.
    #[serde(default)]
    pub series: std::collections::BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl BenchReport {
    /// A report whose headline is `headline`, one of `cells`.
    pub fn from_cells(
        workload: &str,
        backend: &str,
        params: serde_json::Value,
        cells: Vec<BenchCell>,
        headline: usize,
    ) -> Self {
        let h = cells.get(headline).cloned();
        let h = h.unwrap_or(BenchCell {
            name: String::new(),
            params: serde_json::Value::Null,
            samples_ms: Vec::new(),
            median_ms: 0.0,
            throughput: 0.0,
            throughput_unit: String::new(),
            correctness: Correctness::default(),
            skipped: Some("no cells".into()),
        });
        let passed = cells
            .iter()
            .filter(|c| c.skipped.is_none())
            .all(|c| c.correctness.passed);
        let max_rel_err = cells.iter().map(|c| c.correctness.max_rel_err).fold(0.0, f64::max);
        BenchReport {
            workload: workload.to_string(),
            backend: backend.to_string(),
            params,
            samples_ms: h.samples_ms,
            median_ms: h.median_ms,
            throughput: h.throughput,
            throughput_unit: h.throughput_unit,
            correctness: Correctness {
                passed,
                max_rel_err,
                pixel_mismatch_ppm: h.correctness.pixel_mismatch_ppm,
            },
            cells,
            series: Default::default(),
            notes: Vec::new(),
        }
    }

    /// Parses and validates a serialized report.
    pub fn from_json(text: &str) -> Result<Self> {
        let r: BenchReport = serde_json::from_str(text)?;
        r.validate()?;
        Ok(r)
    }

    /// Checks the timing invariants of every run cell.
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, samples: &[f64], median: f64| -> Result<()> {
            if samples.is_empty() {
                return Err(Error::InvalidConfig(format!("{name}: no samples")));
            }
            if samples.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
                return Err(Error::InvalidConfig(format!("{name}: non-positive sample")));
            }
            let max = samples.iter().cloned().fold(f64::MIN, f64::max);
            if (median - self::median(samples)).abs() > 1e-9 * median.abs().max(1.0) || median > max {
                return Err(Error::InvalidConfig(format!("{name}: median does not match samples")));
            }
            Ok(())
        };
        for c in self.cells.iter().filter(|c| c.skipped.is_none()) {
            check(&c.name, &c.samples_ms, c.median_ms)?;
        }
        if !self.samples_ms.is_empty() {
            check(&self.workload, &self.samples_ms, self.median_ms)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    /// `.csv` selects CSV, anything else JSON.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => ReportFormat::Csv,
            _ => ReportFormat::Json,
        }
    }
}

#[derive(Serialize)]
struct CsvRow<'a> {
    workload: &'a str,
    backend: &'a str,
    cell: &'a str,
    params: String,
    median_ms: f64,
    throughput: f64,
    throughput_unit: &'a str,
    passed: bool,
    max_rel_err: f64,
    pixel_mismatch_ppm: Option<f64>,
    skipped: Option<&'a str>,
    samples_ms: String,
}

/// Serializes a report. CSV output has one row per cell.
pub fn write_report(report: &BenchReport, format: ReportFormat, out: impl Write) -> Result<()> {
    match format {
        ReportFormat::Json => {
            let mut out = out;
            serde_json::to_writer_pretty(&mut out, report)?;
            writeln!(out)?;
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            for c in &report.cells {
                w.serialize(CsvRow {
                    workload: &report.workload,
                    backend: &report.backend,
                    cell: &c.name,
                    params: c.params.to_string(),
                    median_ms: c.median_ms,
                    throughput: c.throughput,
                    throughput_unit: &c.throughput_unit,
                    passed: c.correctness.passed,
                    max_rel_err: c.correctness.max_rel_err,
                    pixel_mismatch_ppm: c.correctness.pixel_mismatch_ppm,
                    skipped: c.skipped.as_deref(),
                    samples_ms: c
                        .samples_ms
                        .iter()
                        .map(|s| format!("{s:.4}"))
                        .collect::<Vec<_>>()
                        .join(";"),
                })
                .map_err(|e| Error::Io(e.to_string()))?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

pub fn emit_report(report: &BenchReport, format: ReportFormat, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_report(report, format, std::io::BufWriter::new(file))
}

/// Writes iteration counts as an 8-bit binary PGM, `255·count/max_iter`.
pub fn emit_image(counts: &[i32], height: usize, width: usize, max_iter: u32, path: &Path) -> Result<()> {
    std::fs::write(path, pgm_bytes(counts, height, width, max_iter)?)?;
    Ok(())
}

pub fn pgm_bytes(counts: &[i32], height: usize, width: usize, max_iter: u32) -> Result<Vec<u8>> {
    if counts.len() != height * width {
        return Err(Error::ShapeMismatch(format!(
            "{} counts for a {height}x{width} image",
            counts.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    let max = max_iter.max(1) as i64;
    out.extend(counts.iter().map(|&c| (255 * (c as i64).clamp(0, max) / max) as u8));
    Ok(out)
}

pub fn median(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Timing protocol: `warmup` discarded runs, then `samples` timed runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timing {
    pub warmup: usize,
    pub samples: usize,
}

impl Default for Timing {
    fn default() -> Self {
        Timing { warmup: 1, samples: 5 }
    }
}

impl Timing {
    /// Runs `f` and returns wall times in milliseconds plus the last output.
    pub fn measure<T>(&self, mut f: impl FnMut() -> Result<T>) -> Result<(Vec<f64>, T)> {
        if self.samples == 0 {
            return Err(Error::InvalidConfig("at least one timed sample is required".into()));
        }
        for _ in 0..self.warmup {
            f()?;
        }
        let mut times = Vec::with_capacity(self.samples);
        let mut last = None;
        for _ in 0..self.samples {
            let t = Instant::now();
            let out = f()?;
            // guard against clocks too coarse to see a run
            times.push((t.elapsed().as_secs_f64() * 1e3).max(1e-6));
            last = Some(out);
        }
        Ok((times, last.expect("samples > 0")))
    }
}
