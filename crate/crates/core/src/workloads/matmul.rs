use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::report::{median, BenchCell, BenchReport, Correctness, Timing};
use crate::array::HostArray;
use crate::device::DeviceContext;
use crate::error::{Error, Result};
use crate::ops::{matmul, MatmulVariant};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepVariant {
    Host,
    Naive,
    Tiled,
}

impl SweepVariant {
    pub const ALL: [SweepVariant; 3] = [SweepVariant::Host, SweepVariant::Naive, SweepVariant::Tiled];
}

impl std::str::FromStr for SweepVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "host" => Ok(SweepVariant::Host),
            "naive" => Ok(SweepVariant::Naive),
            "tiled" => Ok(SweepVariant::Tiled),
            other => Err(Error::InvalidConfig(format!("unknown matmul variant `{other}`"))),
        }
    }
}

/// Uniform values in `[-1, 1)`.
pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Vec<f32> {
    (0..rows * cols).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

/// `f32` product in i-k-j order.
pub fn matmul_host(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut c = vec![0f32; m * n];
    for i in 0..m {
        let row = &mut c[i * n..(i + 1) * n];
        for q in 0..k {
            let av = a[i * k + q];
            for (cv, &bv) in row.iter_mut().zip(&b[q * n..(q + 1) * n]) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// Double-precision reference product.
pub fn matmul_oracle(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0f64; m * n];
    for i in 0..m {
        for q in 0..k {
            let av = a[i * k + q] as f64;
            for j in 0..n {
                c[i * n + j] += av * b[q * n + j] as f64;
            }
        }
    }
    c
}

/// `max |x - r| / max |r|`, the error relative to the largest reference
/// magnitude. Zero when both are all zeros.
pub fn max_norm_rel_err(x: &[f32], reference: &[f64]) -> f64 {
    let scale = reference.iter().fold(0f64, |m, v| m.max(v.abs()));
    let err = x
        .iter()
        .zip(reference)
        .fold(0f64, |m, (&a, &r)| m.max((a as f64 - r).abs()));
    if scale == 0.0 {
        err
    } else {
        err / scale
    }
}

fn run_cell(
    ctx: Option<&DeviceContext>,
    variant: SweepVariant,
    a: &[f32],
    b: &[f32],
    n: usize,
    timing: Timing,
) -> Result<(Vec<f64>, Vec<f32>)> {
    match variant {
        SweepVariant::Host => timing.measure(|| Ok(matmul_host(a, b, n, n, n))),
        v => {
            let ctx = ctx.ok_or_else(|| Error::InvalidConfig("device variants need a device".into()))?;
            let da = ctx.upload(&HostArray::from_f32(&[n, n], a.to_vec())?)?;
            let db = ctx.upload(&HostArray::from_f32(&[n, n], b.to_vec())?)?;
            let mv = if v == SweepVariant::Naive {
                MatmulVariant::Naive
            } else {
                MatmulVariant::Tiled
            };
            timing.measure(|| matmul(&da, &db, mv)?.to_host()?.to_f32_vec())
        }
    }
}

/// Multiplies random `N×N` matrices for each size and variant, recording
/// readback-inclusive times, GFLOP/s (`2N³/t`) and the error against a
/// double-precision product. Cells that run out of memory are skipped with a
/// note.
pub fn run_matmul_sweep(
    ctx: Option<&DeviceContext>,
    sizes: &[usize],
    variants: &[SweepVariant],
    timing: Timing,
    seed: u64,
) -> Result<BenchReport> {
    if sizes.is_empty() || sizes.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidConfig("sizes must be non-empty and ascending".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells = Vec::new();
    let mut notes = Vec::new();
    for &n in sizes {
        let a = random_matrix(&mut rng, n, n);
        let b = random_matrix(&mut rng, n, n);
        let oracle = matmul_oracle(&a, &b, n, n, n);
        for &v in variants {
            let name = format!("matmul-{}-{n}", serde_json::to_value(v)?.as_str().unwrap_or_default());
            let params = serde_json::json!({ "n": n, "variant": v });
            let cell = match run_cell(ctx, v, &a, &b, n, timing) {
                Ok((samples, c)) => {
                    let err = max_norm_rel_err(&c, &oracle);
                    let med = median(&samples);
                    BenchCell {
                        name,
                        params,
                        samples_ms: samples,
                        median_ms: med,
                        throughput: 2.0 * (n as f64).powi(3) / (med / 1e3) / 1e9,
                        throughput_unit: "GFLOP/s".into(),
                        correctness: Correctness {
                            passed: err <= 1e-3,
                            max_rel_err: err,
                            pixel_mismatch_ppm: None,
                        },
                        skipped: None,
                    }
                }
                Err(e @ (Error::OutOfMemory { .. } | Error::AllocTooLarge { .. })) => {
                    notes.push(format!("{name} skipped: {e}"));
                    BenchCell {
                        name,
                        params,
                        samples_ms: Vec::new(),
                        median_ms: 0.0,
                        throughput: 0.0,
                        throughput_unit: "GFLOP/s".into(),
                        correctness: Correctness::default(),
                        skipped: Some(e.to_string()),
                    }
                }
                Err(e) => return Err(e),
            };
            cells.push(cell);
        }
    }
    if let Some(msg) = identity_check(ctx, variants, seed)? {
        notes.push(msg);
    }
    if let Some(msg) = tiled_vs_naive(ctx, &cells) {
        notes.push(msg);
    }
    let headline = cells.iter().rposition(|c| c.skipped.is_none()).unwrap_or(0);
    let backend = ctx.map_or_else(|| "host".to_string(), |c| c.backend_name());
    let params = serde_json::json!({ "sizes": sizes, "variants": variants, "timing": timing, "seed": seed });
    let mut report = BenchReport::from_cells("matmul", &backend, params, cells, headline);
    report.notes = notes;
    Ok(report)
}

/// `A·I == A` at N=64 for each device variant.
fn identity_check(ctx: Option<&DeviceContext>, variants: &[SweepVariant], seed: u64) -> Result<Option<String>> {
    let Some(ctx) = ctx else { return Ok(None) };
    let n = 64;
    let a = random_matrix(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x1d), n, n);
    let eye: Vec<f32> = (0..n * n).map(|i| if i / n == i % n { 1.0 } else { 0.0 }).collect();
    let da = ctx.upload(&HostArray::from_f32(&[n, n], a.clone())?)?;
    let di = ctx.upload(&HostArray::from_f32(&[n, n], eye)?)?;
    let mut parts = Vec::new();
    for &v in variants {
        let mv = match v {
            SweepVariant::Host => continue,
            SweepVariant::Naive => MatmulVariant::Naive,
            SweepVariant::Tiled => MatmulVariant::Tiled,
        };
        let c = matmul(&da, &di, mv)?;
        let ok = c.dims() == [n, n] && c.to_host()?.to_f32_vec()? == a;
        parts.push(format!("{mv:?} {}", if ok { "pass" } else { "FAIL" }));
    }
    Ok((!parts.is_empty()).then(|| format!("identity check A·I=A at N=64: {}", parts.join(", "))))
}

/// Soft check: on hardware at N=1024 the tiled kernel should not be slower.
fn tiled_vs_naive(ctx: Option<&DeviceContext>, cells: &[BenchCell]) -> Option<String> {
    let ctx = ctx?;
    let find = |v: &str| {
        cells
            .iter()
            .find(|c| c.name == format!("matmul-{v}-1024") && c.skipped.is_none())
    };
    let (naive, tiled) = (find("naive")?, find("tiled")?);
    if ctx.is_emulated() {
        return Some("tiled vs naive throughput not compared on the emulated device".into());
    }
    Some(if tiled.throughput >= naive.throughput {
        format!(
            "tiled ≥ naive at N=1024: {:.2} vs {:.2} GFLOP/s",
            tiled.throughput, naive.throughput
        )
    } else {
        format!(
            "warning: tiled slower than naive at N=1024: {:.2} vs {:.2} GFLOP/s",
            tiled.throughput, naive.throughput
        )
    })
}
