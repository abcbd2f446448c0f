use serde::{Deserialize, Serialize};

use super::report::{BenchCell, BenchReport, Correctness, Timing};
use crate::array::{DType, HostArray};
use crate::device::{DeviceArray, DeviceContext};
use crate::error::{Error, Result};
use crate::kernel::{ConstValue, Constants, KernelSpec};
use crate::ops::{astype, binary, binary_scalar, BinaryOpKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MandelbrotMode {
    /// One dispatch per array operation.
    Composed,
    /// A single elementwise kernel running the whole iteration.
    Custom,
    /// Single-threaded CPU loop in `f32`.
    Host,
}

impl std::str::FromStr for MandelbrotMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "composed" => Ok(MandelbrotMode::Composed),
            "custom" => Ok(MandelbrotMode::Custom),
            "host" => Ok(MandelbrotMode::Host),
            other => Err(Error::InvalidConfig(format!("unknown mandelbrot mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MandelbrotParams {
    pub height: usize,
    pub width: usize,
    /// Real axis range, sampled inclusively across the columns.
    pub real: [f64; 2],
    /// Imaginary axis range, sampled inclusively across the rows.
    pub imag: [f64; 2],
    pub max_iter: u32,
}

impl Default for MandelbrotParams {
    fn default() -> Self {
        MandelbrotParams {
            height: 1024,
            width: 1024,
            real: [-2.0, 0.5],
            imag: [-1.2, 1.2],
            max_iter: 500,
        }
    }
}

/// `n` evenly spaced points over `[lo, hi]`, computed in `f64` and rounded.
fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f32> {
    if n == 1 {
        return vec![lo as f32];
    }
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| (lo + step * i as f64) as f32).collect()
}

impl MandelbrotParams {
    pub fn square(size: usize) -> Self {
        MandelbrotParams {
            height: size,
            width: size,
            ..Default::default()
        }
    }

    /// Real and imaginary parts of every pixel's `c`, each of shape `[H, W]`.
    pub fn grid(&self) -> Result<(HostArray, HostArray)> {
        let re = linspace(self.real[0], self.real[1], self.width);
        let im = linspace(self.imag[0], self.imag[1], self.height);
        let mut real = Vec::with_capacity(self.height * self.width);
        let mut imag = Vec::with_capacity(self.height * self.width);
        for &y in &im {
            real.extend_from_slice(&re);
            imag.extend(std::iter::repeat_n(y, self.width));
        }
        let dims = [self.height, self.width];
        Ok((HostArray::from_f32(&dims, real)?, HostArray::from_f32(&dims, imag)?))
    }
}

/// The iteration written as individual array operations. A pixel's count
/// grows each step whose updated `|z|²` is strictly below 4.
pub fn mandelbrot_composed(real: &DeviceArray, imag: &DeviceArray, max_iter: u32) -> Result<DeviceArray> {
    let ctx = real.context();
    let mut xs = ctx.zeros(DType::F32, real.dims())?;
    let mut ys = ctx.zeros(DType::F32, real.dims())?;
    let mut count = ctx.zeros(DType::I32, real.dims())?;
    use BinaryOpKind::*;
    for _ in 0..max_iter {
        let nx = binary(
            Add,
            &binary(Sub, &binary(Mul, &xs, &xs)?, &binary(Mul, &ys, &ys)?)?,
            real,
        )?;
        let ny = binary(Add, &binary_scalar(Mul, &binary(Mul, &xs, &ys)?, 2.0)?, imag)?;
        xs = nx;
        ys = ny;
        let mag = binary(Add, &binary(Mul, &xs, &xs)?, &binary(Mul, &ys, &ys)?)?;
        count = binary(Add, &count, &astype(&binary_scalar(Less, &mag, 4.0)?, DType::I32)?)?;
    }
    Ok(count)
}

/// The single-kernel form, with the iteration count substituted as a
/// compile-time constant.
pub fn mandelbrot_spec() -> KernelSpec {
    KernelSpec::new(
        "mandelbrot",
        "f32 real, f32 imag",
        "i32 c",
        "c = 0;
var x: f32 = 0.0;
var y: f32 = 0.0;
for (var k: u32 = 0u; k < max_iter; k = k + 1u) {
    var nx: f32 = x * x - y * y + real;
    var ny: f32 = x * y * 2.0 + imag;
    x = nx;
    y = ny;
    if (x * x + y * y < 4.0) {
        c = c + 1;
    }
}",
    )
    .and_then(|k| k.with_constants("u32 max_iter"))
    .expect("static kernel spec")
}

pub fn mandelbrot_custom(real: &DeviceArray, imag: &DeviceArray, max_iter: u32) -> Result<DeviceArray> {
    let consts = Constants::new().with("max_iter", ConstValue::U32(max_iter));
    Ok(real
        .context()
        .elementwise(&mandelbrot_spec(), &consts, &[real, imag])?
        .remove(0))
}

/// CPU baseline with the same `f32` operation order as the device paths.
pub fn mandelbrot_host(real: &[f32], imag: &[f32], max_iter: u32) -> Vec<i32> {
    real.iter()
        .zip(imag)
        .map(|(&cr, &ci)| {
            let (mut x, mut y, mut c) = (0f32, 0f32, 0i32);
            for _ in 0..max_iter {
                let nx = x * x - y * y + cr;
                let ny = x * y * 2.0 + ci;
                x = nx;
                y = ny;
                if x * x + y * y < 4.0 {
                    c += 1;
                }
            }
            c
        })
        .collect()
}

/// Reference counts in double precision.
pub fn mandelbrot_oracle(real: &[f32], imag: &[f32], max_iter: u32) -> Vec<i32> {
    real.iter()
        .zip(imag)
        .map(|(&cr, &ci)| {
            let (cr, ci) = (cr as f64, ci as f64);
            let (mut x, mut y, mut c) = (0f64, 0f64, 0i32);
            for _ in 0..max_iter {
                let nx = x * x - y * y + cr;
                let ny = x * y * 2.0 + ci;
                x = nx;
                y = ny;
                if x * x + y * y < 4.0 {
                    c += 1;
                }
            }
            c
        })
        .collect()
}

/// Mismatching entries per million.
pub fn mismatch_ppm(a: &[i32], b: &[i32]) -> f64 {
    let bad = a.iter().zip(b).filter(|(x, y)| x != y).count() + a.len().abs_diff(b.len());
    bad as f64 * 1e6 / a.len().max(b.len()).max(1) as f64
}

/// Counts for one mode, computed once.
pub fn mandelbrot_counts(ctx: Option<&DeviceContext>, p: &MandelbrotParams, mode: MandelbrotMode) -> Result<Vec<i32>> {
    let (real, imag) = p.grid()?;
    run_once(ctx, &real, &imag, p.max_iter, mode)
}

fn run_once(
    ctx: Option<&DeviceContext>,
    real: &HostArray,
    imag: &HostArray,
    max_iter: u32,
    mode: MandelbrotMode,
) -> Result<Vec<i32>> {
    if mode == MandelbrotMode::Host {
        return Ok(mandelbrot_host(&real.to_f32_vec()?, &imag.to_f32_vec()?, max_iter));
    }
    let ctx = ctx.ok_or_else(|| Error::InvalidConfig(format!("{mode:?} mode needs a device")))?;
    let (r, i) = (ctx.upload(real)?, ctx.upload(imag)?);
    let counts = match mode {
        MandelbrotMode::Composed => mandelbrot_composed(&r, &i, max_iter)?,
        _ => mandelbrot_custom(&r, &i, max_iter)?,
    };
    counts.to_host()?.to_i32_vec()
}

/// Times one mode (upload and readback included) and checks it against the
/// double-precision reference. Returns the report and the counts.
pub fn run_mandelbrot(
    ctx: Option<&DeviceContext>,
    p: &MandelbrotParams,
    mode: MandelbrotMode,
    timing: Timing,
) -> Result<(BenchReport, Vec<i32>)> {
    let (real, imag) = p.grid()?;
    let (samples, counts) = timing.measure(|| run_once(ctx, &real, &imag, p.max_iter, mode))?;
    let oracle = mandelbrot_oracle(&real.to_f32_vec()?, &imag.to_f32_vec()?, p.max_iter);
    let ppm = mismatch_ppm(&counts, &oracle);
    let median = super::report::median(&samples);
    let params = serde_json::json!({
        "height": p.height,
        "width": p.width,
        "real": p.real,
        "imag": p.imag,
        "max_iter": p.max_iter,
        "mode": mode,
        "timing": timing,
    });
    let cell = BenchCell {
        name: format!(
            "mandelbrot-{}",
            serde_json::to_value(mode)?.as_str().unwrap_or_default()
        ),
        params: params.clone(),
        samples_ms: samples,
        median_ms: median,
        throughput: (p.height * p.width) as f64 / (median / 1e3),
        throughput_unit: "pixels/s".into(),
        correctness: Correctness {
            passed: ppm <= 1000.0,
            max_rel_err: 0.0,
            pixel_mismatch_ppm: Some(ppm),
        },
        skipped: None,
    };
    let backend = match (mode, ctx) {
        (MandelbrotMode::Host, _) | (_, None) => "host".to_string(),
        (_, Some(c)) => c.backend_name(),
    };
    Ok((
        BenchReport::from_cells("mandelbrot", &backend, params, vec![cell], 0),
        counts,
    ))
}
