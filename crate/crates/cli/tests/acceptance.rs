//! Acceptance runner: one PASS/FAIL/SKIP line per criterion.
//!
//! Exits nonzero when a criterion fails that is not listed in
//! `KNOWN_FAILURES`. Set `GPUARRAY_ACCEPTANCE_FULL=1` to also run the checks
//! that are too slow for the emulated device.

use std::net::SocketAddr;
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Result};
use gpuarray_core::array::host_eval_elementwise;
use gpuarray_core::gridsearch::{
    desk_grid, enumerate_grid, scaling_experiment, Coordinator, JobTemplate, ServeOptions,
};
use gpuarray_core::kernel::{generate_source, parse_params};
use gpuarray_core::ops::{self, relu_bwd_spec, BinaryOpKind, MatmulVariant, ReduceOp};
use gpuarray_core::workloads::mlp::{grad_check, make_blobs, train, DeviceEngine, HostEngine};
use gpuarray_core::workloads::{
    mandelbrot_counts, mandelbrot_custom, mandelbrot_oracle, matmul_oracle, max_norm_rel_err, mismatch_ppm,
    run_matmul_sweep, MandelbrotMode, MandelbrotParams, MlpConfig, SweepVariant, Timing,
};
use gpuarray_core::{
    create_context, ArrayDescriptor, BackendChoice, Constants, DType, DeviceArray, DeviceConfig, DeviceContext,
    HostArray, KernelSpec, Shape,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria expected to fail, with the reason. Details are in the decisions
/// ledger.
const KNOWN_FAILURES: &[(&str, &str)] = &[(
    "mandelbrot.oracle_agreement_256",
    "f32 orbits of late-escaping pixels drift from the f64 oracle on ~0.3% of pixels at every grid size",
)];

const CASES: usize = 200;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

use Outcome::{Fail, Pass, Skip};

struct Runner {
    rows: Vec<(String, &'static str)>,
}

impl Runner {
    fn check(&mut self, id: &str, f: impl FnOnce() -> Result<Outcome>) {
        let t = Instant::now();
        let outcome = match panic::catch_unwind(AssertUnwindSafe(f)) {
            Ok(Ok(o)) => o,
            Ok(Err(e)) => Fail(format!("error: {e:#}")),
            Err(p) => {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Fail(format!("panic: {msg}"))
            }
        };
        let secs = t.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Pass(d) => ("PASS", d),
            Fail(d) => ("FAIL", d),
            Skip(d) => ("SKIP", d),
        };
        let known = KNOWN_FAILURES.iter().find(|k| k.0 == id);
        let suffix = match (tag, known) {
            ("FAIL", Some(k)) => format!(" [known failure: {}]", k.1),
            ("PASS", Some(_)) => " [listed as a known failure but passed]".to_string(),
            _ => String::new(),
        };
        println!("{tag} {id} ({secs:.1}s): {detail}{suffix}");
        self.rows.push((id.to_string(), tag));
    }

    fn finish(self) -> bool {
        let count = |t: &str| self.rows.iter().filter(|r| r.1 == t).count();
        let unexpected: Vec<&String> = self
            .rows
            .iter()
            .filter(|r| r.1 == "FAIL" && !KNOWN_FAILURES.iter().any(|k| k.0 == r.0))
            .map(|r| &r.0)
            .collect();
        println!(
            "acceptance: {} pass, {} fail ({} known), {} skip",
            count("PASS"),
            count("FAIL"),
            count("FAIL") - unexpected.len(),
            count("SKIP")
        );
        if !unexpected.is_empty() {
            println!("unexpected failures: {unexpected:?}");
        }
        unexpected.is_empty()
    }
}

fn full_run() -> bool {
    std::env::var("GPUARRAY_ACCEPTANCE_FULL").is_ok_and(|v| !v.is_empty() && v != "0")
}

fn tol_ok(got: f64, want: f64, rel: f64, floor: f64) -> bool {
    if got.is_nan() || want.is_nan() {
        return got.is_nan() && want.is_nan();
    }
    got == want || (got - want).abs() <= (rel * want.abs()).max(floor)
}

// ---------------------------------------------------------------- shapes

fn random_dims(rng: &mut ChaCha8Rng, max_rank: usize) -> Vec<usize> {
    let rank = rng.random_range(0..=max_rank);
    (0..rank).map(|_| rng.random_range(1..=5)).collect()
}

/// `k` shapes that broadcast together: each keeps or collapses every axis of
/// a base shape and may drop leading axes.
fn broadcast_family(rng: &mut ChaCha8Rng, k: usize) -> Vec<Vec<usize>> {
    let base = random_dims(rng, 4);
    (0..k)
        .map(|_| {
            let drop = rng.random_range(0..=base.len());
            base.iter()
                .skip(drop)
                .map(|&n| if rng.random_bool(0.3) { 1 } else { n })
                .collect()
        })
        .collect()
}

fn out_shape(shapes: &[Vec<usize>]) -> Vec<usize> {
    let r = shapes.iter().map(Vec::len).max().unwrap_or(0);
    (0..r)
        .map(|i| {
            shapes
                .iter()
                .map(|s| if i + s.len() >= r { s[i + s.len() - r] } else { 1 })
                .max()
                .unwrap_or(1)
        })
        .collect()
}

/// Flat index into a right-aligned, broadcast `dims` for output position `idx`.
fn source_index(dims: &[usize], out: &[usize], idx: usize) -> usize {
    let mut rem = idx;
    let mut coords = vec![0; out.len()];
    for d in (0..out.len()).rev() {
        coords[d] = rem % out[d];
        rem /= out[d];
    }
    let skip = out.len() - dims.len();
    dims.iter()
        .enumerate()
        .fold(0, |acc, (d, &n)| acc * n + if n == 1 { 0 } else { coords[skip + d] })
}

fn random_words(rng: &mut ChaCha8Rng, dtype: DType, n: usize) -> Vec<u32> {
    (0..n)
        .map(|_| match dtype {
            DType::F32 => rng.random_range(-10.0f32..10.0).to_bits(),
            DType::I32 | DType::U32 => {
                if rng.random_bool(0.25) {
                    rng.random()
                } else {
                    rng.random_range(-20i32..20) as u32
                }
            }
            DType::Bool => rng.random_range(0..2),
        })
        .collect()
}

fn host(dtype: DType, dims: &[usize], words: Vec<u32>) -> HostArray {
    HostArray::from_words(
        ArrayDescriptor::contiguous(dtype, Shape::new(dims.to_vec()).unwrap()),
        words,
    )
    .unwrap()
}

// ---------------------------------------------------------------- oracle suite

fn binary_oracle(kind: BinaryOpKind, dtype: DType, x: u32, y: u32) -> u32 {
    use BinaryOpKind::*;
    match dtype {
        DType::F32 => {
            let (a, b) = (f32::from_bits(x) as f64, f32::from_bits(y) as f64);
            let v = match kind {
                Add => a + b,
                Sub => a - b,
                Mul => a * b,
                Div => a / b,
                Maximum => a.max(b),
                Greater => return u32::from(a > b),
                Less => return u32::from(a < b),
                Equal => return u32::from(a == b),
            };
            (v as f32).to_bits()
        }
        DType::I32 => {
            let (a, b) = (x as i32, y as i32);
            (match kind {
                Add => a.wrapping_add(b),
                Sub => a.wrapping_sub(b),
                Mul => a.wrapping_mul(b),
                Maximum => a.max(b),
                Greater => i32::from(a > b),
                Less => i32::from(a < b),
                Equal => i32::from(a == b),
                Div => unreachable!(),
            }) as u32
        }
        DType::U32 => match kind {
            Add => x.wrapping_add(y),
            Sub => x.wrapping_sub(y),
            Mul => x.wrapping_mul(y),
            Maximum => x.max(y),
            Greater => u32::from(x > y),
            Less => u32::from(x < y),
            Equal => u32::from(x == y),
            Div => unreachable!(),
        },
        DType::Bool => match kind {
            Maximum => x | y,
            Greater => u32::from(x > y),
            Less => u32::from(x < y),
            Equal => u32::from(x == y),
            _ => unreachable!(),
        },
    }
}

fn dtypes_for(kind: BinaryOpKind) -> &'static [DType] {
    use BinaryOpKind::*;
    match kind {
        Div => &[DType::F32],
        Add | Sub | Mul => &[DType::F32, DType::I32, DType::U32],
        _ => &[DType::F32, DType::I32, DType::U32, DType::Bool],
    }
}

/// Compares device words to oracle words: exact unless `rel` is given and the
/// dtype is F32.
fn compare(dtype: DType, got: &[u32], want: &[u32], rel: Option<f64>) -> Result<()> {
    ensure!(got.len() == want.len(), "length {} vs {}", got.len(), want.len());
    for (i, (&g, &w)) in got.iter().zip(want).enumerate() {
        let ok = match (dtype, rel) {
            (DType::F32, Some(r)) => tol_ok(f32::from_bits(g) as f64, f32::from_bits(w) as f64, r, 1e-7),
            _ => g == w,
        };
        ensure!(ok, "element {i}: got {g:#x}, want {w:#x} ({dtype:?})");
    }
    Ok(())
}

fn binary_suite(ctx: &DeviceContext, kind: BinaryOpKind, seed: u64) -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut broadcast_cases = 0;
    for case in 0..CASES {
        let dtypes = dtypes_for(kind);
        let dtype = dtypes[case % dtypes.len()];
        let shapes = broadcast_family(&mut rng, 2);
        let out = out_shape(&shapes);
        broadcast_cases += usize::from(shapes[0] != shapes[1]);
        let wa = random_words(&mut rng, dtype, shapes[0].iter().product());
        let mut wb = random_words(&mut rng, dtype, shapes[1].iter().product());
        if kind == BinaryOpKind::Div {
            for w in wb.iter_mut() {
                let v = f32::from_bits(*w);
                if v.abs() < 0.5 {
                    *w = (v.signum() * 0.5 + v).to_bits();
                }
            }
        }
        let n: usize = out.iter().product();
        let want: Vec<u32> = (0..n)
            .map(|i| {
                binary_oracle(
                    kind,
                    dtype,
                    wa[source_index(&shapes[0], &out, i)],
                    wb[source_index(&shapes[1], &out, i)],
                )
            })
            .collect();
        let a = ctx.upload(&host(dtype, &shapes[0], wa))?;
        let b = ctx.upload(&host(dtype, &shapes[1], wb))?;
        let z = ops::binary(kind, &a, &b)?;
        ensure!(
            z.dims() == out.as_slice(),
            "case {case}: shape {:?} vs {out:?}",
            z.dims()
        );
        let rel = (!kind.is_comparison() && kind != BinaryOpKind::Maximum).then_some(1e-6);
        compare(z.dtype(), &z.to_host()?.words(), &want, rel).map_err(|e| anyhow::anyhow!("case {case}: {e}"))?;
    }
    Ok(Pass(format!(
        "{CASES} cases over {:?}, {broadcast_cases} with broadcasting",
        dtypes_for(kind)
    )))
}

fn where_suite(ctx: &DeviceContext) -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let all = [DType::F32, DType::I32, DType::U32, DType::Bool];
    for case in 0..CASES {
        let dtype = all[case % 4];
        let shapes = broadcast_family(&mut rng, 3);
        let out = out_shape(&shapes);
        let wc = random_words(&mut rng, DType::Bool, shapes[0].iter().product());
        let wa = random_words(&mut rng, dtype, shapes[1].iter().product());
        let wb = random_words(&mut rng, dtype, shapes[2].iter().product());
        let n: usize = out.iter().product();
        let want: Vec<u32> = (0..n)
            .map(|i| {
                if wc[source_index(&shapes[0], &out, i)] != 0 {
                    wa[source_index(&shapes[1], &out, i)]
                } else {
                    wb[source_index(&shapes[2], &out, i)]
                }
            })
            .collect();
        let z = ops::where_(
            &ctx.upload(&host(DType::Bool, &shapes[0], wc))?,
            &ctx.upload(&host(dtype, &shapes[1], wa))?,
            &ctx.upload(&host(dtype, &shapes[2], wb))?,
        )?;
        compare(dtype, &z.to_host()?.words(), &want, None).map_err(|e| anyhow::anyhow!("case {case}: {e}"))?;
    }
    Ok(Pass(format!("{CASES} cases, three-way broadcasting, all dtypes")))
}

fn cast_oracle(from: DType, to: DType, w: u32) -> u32 {
    if from == to {
        return w;
    }
    match (from, to) {
        (_, DType::Bool) => u32::from(match from {
            DType::F32 => f32::from_bits(w) != 0.0,
            _ => w != 0,
        }),
        (DType::F32, DType::I32) => f32::from_bits(w) as i32 as u32,
        (DType::F32, DType::U32) => f32::from_bits(w) as u32,
        (DType::I32, DType::F32) => (w as i32 as f32).to_bits(),
        (DType::U32 | DType::Bool, DType::F32) => (w as f32).to_bits(),
        // integer to integer keeps the bit pattern
        _ => w,
    }
}

fn astype_suite(ctx: &DeviceContext) -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let all = [DType::F32, DType::I32, DType::U32, DType::Bool];
    for case in 0..CASES {
        let (from, to) = (all[case % 4], all[(case / 4) % 4]);
        let dims = random_dims(&mut rng, 4);
        let n: usize = dims.iter().product();
        let mut words = random_words(&mut rng, from, n);
        if from == DType::F32 {
            // include zeros, exact integers and out-of-range magnitudes
            for w in words.iter_mut() {
                match rng.random_range(0..6) {
                    0 => *w = 0f32.to_bits(),
                    1 => *w = (rng.random_range(-100i32..100) as f32).to_bits(),
                    2 => *w = (rng.random_range(-1e10f32..1e10)).to_bits(),
                    _ => {}
                }
            }
        }
        let want: Vec<u32> = words.iter().map(|&w| cast_oracle(from, to, w)).collect();
        let a = ctx.upload(&host(from, &dims, words))?;
        let z = ops::astype(&a, to)?;
        ensure!(z.dtype() == to && z.dims() == dims.as_slice());
        if from == to {
            ensure!(z.buffer().id() != a.buffer().id(), "identity cast must copy");
        }
        compare(to, &z.to_host()?.words(), &want, None)
            .map_err(|e| anyhow::anyhow!("case {case} {from:?}->{to:?}: {e}"))?;
    }
    Ok(Pass(format!("{CASES} cases over all 16 dtype pairs")))
}

fn reduce_suite(ctx: &DeviceContext) -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let dts = [DType::F32, DType::I32, DType::U32];
    let mut worst = 0f64;
    for case in 0..CASES {
        let dtype = dts[case % 3];
        let op = if case % 2 == 0 { ReduceOp::Sum } else { ReduceOp::Max };
        let mut dims = random_dims(&mut rng, 4);
        if dims.is_empty() {
            dims.push(1);
        }
        if case % 10 == 0 {
            dims = vec![rng.random_range(2000..6000)];
        }
        let axis = if rng.random_bool(0.5) {
            None
        } else {
            Some(rng.random_range(0..dims.len()))
        };
        let words = random_words(&mut rng, dtype, dims.iter().product());
        let x = host(dtype, &dims, words.clone());
        let (outer, len, inner) = match axis {
            None => (1, words.len(), 1),
            Some(a) => (
                dims[..a].iter().product(),
                dims[a],
                dims[a + 1..].iter().product::<usize>(),
            ),
        };
        let got = ops::reduce(&ctx.upload(&x)?, op, axis)?.to_host()?.words();
        ensure!(got.len() == outer * inner, "case {case}: {} outputs", got.len());
        for o in 0..outer {
            for i in 0..inner {
                let items = (0..len).map(|k| words[(o * len + k) * inner + i]);
                let g = got[o * inner + i];
                let ok = match (dtype, op) {
                    (DType::F32, ReduceOp::Sum) => {
                        let vals: Vec<f64> = items.map(|w| f32::from_bits(w) as f64).collect();
                        let exact: f64 = vals.iter().sum();
                        let maxabs = vals.iter().fold(0f64, |m, v| m.max(v.abs()));
                        let err = (f32::from_bits(g) as f64 - exact).abs();
                        worst = worst.max(err / (len as f64 * maxabs).max(1e-30));
                        err <= 1e-5 * len as f64 * maxabs
                    }
                    (DType::F32, ReduceOp::Max) => {
                        g == items.map(f32::from_bits).fold(f32::NEG_INFINITY, f32::max).to_bits()
                    }
                    (DType::I32, ReduceOp::Sum) => g == items.fold(0i32, |s, w| s.wrapping_add(w as i32)) as u32,
                    (DType::I32, ReduceOp::Max) => g == items.map(|w| w as i32).max().unwrap() as u32,
                    (_, ReduceOp::Sum) => g == items.fold(0u32, u32::wrapping_add),
                    (_, ReduceOp::Max) => g == items.max().unwrap(),
                };
                ensure!(
                    ok,
                    "case {case} {dtype:?} {op:?} axis {axis:?} dims {dims:?}: mismatch at {o},{i}"
                );
            }
        }
    }
    Ok(Pass(format!("{CASES} cases; worst F32 sum error {worst:.2e}·n·max|a|")))
}

fn custom_suite(ctx: &DeviceContext, which: &str) -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(14 + which.len() as u64);
    let spec = match which {
        "squared_diff" => KernelSpec::new(
            "squared_diff",
            "float32 x, float32 y",
            "float32 z",
            "z = (x - y) * (x - y)",
        )?,
        "relu_bwd" => relu_bwd_spec(),
        _ => KernelSpec::new("identity", "f32 x", "f32 z", "z = x;")?,
    };
    for case in 0..CASES {
        let arity = spec.arity() - 1;
        let shapes = broadcast_family(&mut rng, arity);
        let inputs: Vec<HostArray> = shapes
            .iter()
            .map(|s| {
                let mut w = random_words(&mut rng, DType::F32, s.iter().product());
                for v in w.iter_mut() {
                    if rng.random_bool(0.1) {
                        *v = 0f32.to_bits();
                    }
                }
                host(DType::F32, s, w)
            })
            .collect();
        let refs: Vec<&HostArray> = inputs.iter().collect();
        let want = match which {
            "squared_diff" => host_eval_elementwise(DType::F32, &refs, |v| (v[0] - v[1]) * (v[0] - v[1]))?,
            "relu_bwd" => host_eval_elementwise(DType::F32, &refs, |v| if v[0] > 0.0 { v[1] } else { 0.0 })?,
            _ => host_eval_elementwise(DType::F32, &refs, |v| v[0])?,
        };
        let mut dev: Vec<DeviceArray> = inputs.iter().map(|h| ctx.upload(h)).collect::<Result<_, _>>()?;
        if which == "identity" && dev[0].rank() >= 2 {
            // strided input: a transposed view
            let r = dev[0].rank();
            let mut axes: Vec<usize> = (0..r).collect();
            axes.swap(0, r - 1);
            let t = dev[0].transpose(&axes)?;
            let want_t = t.to_host()?;
            let z = ctx.elementwise(&spec, &Constants::new(), &[&t])?;
            compare(DType::F32, &z[0].to_host()?.words(), &want_t.words(), None)?;
            dev[0] = t;
            continue;
        }
        let refs: Vec<&DeviceArray> = dev.iter().collect();
        let z = ctx.elementwise(&spec, &Constants::new(), &refs)?;
        let rel = (which == "squared_diff").then_some(1e-6);
        compare(DType::F32, &z[0].to_host()?.words(), &want.words(), rel)
            .map_err(|e| anyhow::anyhow!("case {case}: {e}"))?;
    }
    Ok(Pass(format!("{CASES} cases")))
}

// ---------------------------------------------------------------- mandelbrot

fn mandel_equal(ctx: &DeviceContext, n: usize) -> Result<Outcome> {
    let p = MandelbrotParams::square(n);
    let t = Instant::now();
    let composed = mandelbrot_counts(Some(ctx), &p, MandelbrotMode::Composed)?;
    let custom = mandelbrot_counts(Some(ctx), &p, MandelbrotMode::Custom)?;
    let diff = composed.iter().zip(&custom).filter(|(a, b)| a != b).count();
    let detail = format!("{n}²: {diff} differing pixels, {:.1}s", t.elapsed().as_secs_f64());
    Ok(if diff == 0 { Pass(detail) } else { Fail(detail) })
}

// ---------------------------------------------------------------- grid search

fn worker_process(addr: SocketAddr) -> std::io::Result<Child> {
    Command::new(env!("CARGO_BIN_EXE_gridsearch"))
        .args(["worker", "--connect", &addr.to_string(), "--backend", "host"])
        .env("GPUARRAY_HOST_TRAINING", "1")
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
}

fn wait_all(children: &mut [Child]) -> Result<()> {
    for c in children {
        let deadline = Instant::now() + Duration::from_secs(20);
        while c.try_wait()?.is_none() {
            if Instant::now() > deadline {
                let _ = c.kill();
                bail!("worker did not exit");
            }
            thread::sleep(Duration::from_millis(10));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- main

fn main() {
    let mut r = Runner { rows: Vec::new() };
    let hw = create_context(DeviceConfig {
        backend: BackendChoice::Gpu,
        ..Default::default()
    });
    let hardware = hw.is_ok();
    let ctx = match hw {
        Ok(c) => c,
        Err(_) => create_context(DeviceConfig {
            backend: BackendChoice::Emulated,
            ..Default::default()
        })
        .expect("emulated device"),
    };
    let backend = ctx.backend_name();
    println!("acceptance on {backend}");

    r.check("env.hardware_adapter", || {
        Ok(if hardware {
            Pass(backend.clone())
        } else {
            Skip("no GPU adapter; device criteria below run on the emulated device".into())
        })
    });

    // oracle suite
    let suite_start = Instant::now();
    for (i, kind) in BinaryOpKind::ALL.iter().enumerate() {
        r.check(&format!("oracle.binary.{}", kind.name()), || {
            binary_suite(&ctx, *kind, 100 + i as u64)
        });
    }
    r.check("oracle.where", || where_suite(&ctx));
    r.check("oracle.astype", || astype_suite(&ctx));
    r.check("oracle.reduce", || reduce_suite(&ctx));
    for k in ["squared_diff", "relu_bwd", "identity"] {
        r.check(&format!("oracle.custom.{k}"), || custom_suite(&ctx, k));
    }
    let suite_secs = suite_start.elapsed().as_secs_f64();
    r.check("oracle.runtime", || {
        let d = format!("{suite_secs:.1}s (limit 120s)");
        Ok(if suite_secs < 120.0 { Pass(d) } else { Fail(d) })
    });

    // mandelbrot
    r.check("mandelbrot.composed_eq_custom_64", || mandel_equal(&ctx, 64));
    let mut secs_256 = f64::NAN;
    r.check("mandelbrot.composed_eq_custom_256", || {
        let t = Instant::now();
        let out = mandel_equal(&ctx, 256);
        secs_256 = t.elapsed().as_secs_f64();
        out
    });
    r.check("mandelbrot.composed_eq_custom_1024", || {
        if hardware || full_run() {
            mandel_equal(&ctx, 1024)
        } else {
            Ok(Skip(
                "composed mode needs ~6500 launches over 1M pixels; several minutes on the emulated device \
                 (set GPUARRAY_ACCEPTANCE_FULL=1)"
                    .into(),
            ))
        }
    });
    r.check("mandelbrot.oracle_agreement_256", || {
        let p = MandelbrotParams::square(256);
        let custom = mandelbrot_counts(Some(&ctx), &p, MandelbrotMode::Custom)?;
        let (re, im) = p.grid()?;
        let oracle = mandelbrot_oracle(&re.to_f32_vec()?, &im.to_f32_vec()?, p.max_iter);
        let ppm = mismatch_ppm(&custom, &oracle);
        let d = format!("{:.3}% agreement (target 99.9%)", 100.0 - ppm / 1e4);
        Ok(if ppm <= 1000.0 { Pass(d) } else { Fail(d) })
    });
    r.check("mandelbrot.origin_500", || {
        let zero = ctx.upload(&HostArray::from_f32(&[1], vec![0.0])?)?;
        let n = mandelbrot_custom(&zero, &zero, 500)?.to_host()?.to_i32_vec()?[0];
        Ok(if n == 500 {
            Pass("c = 0 gives 500".into())
        } else {
            Fail(format!("c = 0 gives {n}"))
        })
    });
    r.check("mandelbrot.runtime_256", || {
        let d = format!("composed + custom at 256²: {secs_256:.1}s (limit 60s)");
        Ok(if secs_256 < 60.0 { Pass(d) } else { Fail(d) })
    });

    // matmul
    r.check("matmul.random_shapes", || {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut worst = (0f64, 0f64);
        let mut shapes = vec![(256, 256, 256), (17, 33, 250)];
        while shapes.len() < 20 {
            shapes.push((
                rng.random_range(1..=256),
                rng.random_range(1..=256),
                rng.random_range(1..=256),
            ));
        }
        let odd = shapes
            .iter()
            .filter(|s| s.0 % 16 != 0 || s.1 % 16 != 0 || s.2 % 16 != 0)
            .count();
        for &(m, k, n) in &shapes {
            let a: Vec<f32> = (0..m * k).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f32> = (0..k * n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let oracle = matmul_oracle(&a, &b, m, k, n);
            let (da, db) = (
                ctx.upload(&HostArray::from_f32(&[m, k], a)?)?,
                ctx.upload(&HostArray::from_f32(&[k, n], b)?)?,
            );
            let naive = ops::matmul(&da, &db, MatmulVariant::Naive)?.to_host()?.to_f32_vec()?;
            let tiled = ops::matmul(&da, &db, MatmulVariant::Tiled)?.to_host()?.to_f32_vec()?;
            let cross = max_norm_rel_err(&naive, &tiled.iter().map(|&v| v as f64).collect::<Vec<_>>());
            let vs = max_norm_rel_err(&naive, &oracle).max(max_norm_rel_err(&tiled, &oracle));
            worst = (worst.0.max(cross), worst.1.max(vs));
            ensure!(
                cross <= 1e-4 && vs <= 1e-3,
                "({m},{k},{n}): naive/tiled {cross:.2e}, vs oracle {vs:.2e}"
            );
        }
        Ok(Pass(format!(
            "20 shapes ({odd} not tile multiples); naive/tiled {:.1e}, vs oracle {:.1e}",
            worst.0, worst.1
        )))
    });
    r.check("matmul.identity", || {
        let rep = run_matmul_sweep(
            Some(&ctx),
            &[64],
            &[SweepVariant::Naive, SweepVariant::Tiled],
            Timing { warmup: 1, samples: 3 },
            0,
        )?;
        let note = rep
            .notes
            .iter()
            .find(|n| n.contains("identity"))
            .cloned()
            .unwrap_or_default();
        Ok(if note.contains("pass") && !note.contains("fail") {
            Pass(note)
        } else {
            Fail(note)
        })
    });
    r.check("matmul.tiled_throughput_1024_soft", || {
        if !hardware {
            return Ok(Skip("soft check needs a hardware adapter".into()));
        }
        let rep = run_matmul_sweep(
            Some(&ctx),
            &[1024],
            &[SweepVariant::Naive, SweepVariant::Tiled],
            Timing::default(),
            0,
        )?;
        let (n, t) = (rep.cells[0].throughput, rep.cells[1].throughput);
        // warn, never fail
        Ok(Pass(format!(
            "naive {n:.1} GFLOP/s, tiled {t:.1} GFLOP/s{}",
            if t >= n { "" } else { " (warning: tiled slower)" }
        )))
    });

    // readback bridge
    r.check("readback.cycles_100", || {
        let mut host_v: Vec<f32> = (0..1000).map(|i| i as f32).collect();
        let mut dev = ctx.upload(&HostArray::from_f32(&[1000], host_v.clone())?)?;
        for step in 0..100 {
            dev = ops::binary_scalar(
                BinaryOpKind::Add,
                &ops::binary_scalar(BinaryOpKind::Mul, &dev, 0.5)?,
                step as f64,
            )?;
            host_v.iter_mut().for_each(|v| *v = *v * 0.5 + step as f32);
            ensure!(dev.to_host()?.to_f32_vec()? == host_v, "cycle {step}");
        }
        Ok(Pass("100 cycles match the host".into()))
    });
    r.check("readback.implicit_flush", || {
        let a = ctx.upload(&HostArray::from_i32(&[3], vec![1, 2, 3])?)?;
        let b = ops::binary(BinaryOpKind::Add, &a, &a)?;
        let pending = ctx.pending_commands();
        let v = b.to_host()?.to_i32_vec()?;
        ensure!(v == [2, 4, 6], "{v:?}");
        Ok(Pass(format!("{pending} recorded command(s) flushed by readback")))
    });
    r.check("readback.round_trip_all_dtypes", || {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for dtype in [DType::F32, DType::I32, DType::U32, DType::Bool] {
            for _ in 0..50 {
                let dims = random_dims(&mut rng, 4);
                let mut words: Vec<u32> = (0..dims.iter().product()).map(|_| rng.random()).collect();
                if dtype == DType::Bool {
                    words.iter_mut().for_each(|w| *w &= 1);
                }
                let h = host(dtype, &dims, words);
                ensure!(ctx.upload(&h)?.to_host()?.words() == h.words(), "{dtype:?} {dims:?}");
            }
        }
        Ok(Pass("200 random arrays, bitwise equal (NaN payloads included)".into()))
    });

    // kernel machinery
    r.check("kernel.parse_params", || {
        let a = parse_params("float32 x, float32 y")?;
        let b = parse_params("f32 y, f32 gy")?;
        ensure!(a.len() == 2 && b.len() == 2 && a.iter().chain(&b).all(|p| p.dtype == DType::F32));
        ensure!(parse_params("f64 x").is_err(), "f64 accepted");
        Ok(Pass("both spellings parse; f64 rejected".into()))
    });
    r.check("kernel.golden_sources", || {
        let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden");
        let sq = KernelSpec::new(
            "squared_diff",
            "float32 x, float32 y",
            "float32 z",
            "z = (x - y) * (x - y)",
        )?;
        let id = KernelSpec::new("identity", "f32 x", "f32 z", "z = x;")?;
        for (file, spec, rank) in [
            ("squared_diff_rank1.wgsl", &sq, 1),
            ("relu_bwd_rank2.wgsl", &relu_bwd_spec(), 2),
            ("identity_rank4.wgsl", &id, 4),
        ] {
            let golden = std::fs::read_to_string(dir.join(file))?;
            ensure!(generate_source(spec, rank)? == golden, "{file} differs");
            ensure!(
                generate_source(spec, rank)? == generate_source(spec, rank)?,
                "not deterministic"
            );
        }
        Ok(Pass("3 sources byte-identical to golden copies".into()))
    });
    r.check("kernel.cache_once", || {
        let c = create_context(ctx.config().clone())?;
        let spec = KernelSpec::new("cache_probe", "f32 x", "f32 z", "z = x + 1.0;")?;
        let before = c.counters().compilations;
        for _ in 0..5 {
            c.compile_or_get(&spec, 2, &Constants::new())?;
        }
        c.compile_or_get(
            &KernelSpec::new("cache_probe", "f32 x", "f32 z", "z = x + 2.0;")?,
            2,
            &Constants::new(),
        )?;
        let n = c.counters().compilations - before;
        Ok(if n == 2 {
            Pass("2 distinct keys, 2 compilations".into())
        } else {
            Fail(format!("{n} compilations"))
        })
    });
    r.check("kernel.launch_completeness", || {
        let ws = ctx.config().workgroup_size as usize;
        let spec = KernelSpec::new("identity", "f32 x", "f32 z", "z = x;")?;
        let k = ctx.compile_or_get(&spec, 1, &Constants::new())?;
        let sizes = [1, ws - 1, ws, ws * 65535 + 1];
        for n in sizes {
            let x = ctx.full(DType::F32, &[n], 3.0)?;
            let out = ctx.full(DType::F32, &[n], f32::NAN as f64)?;
            ctx.launch(&k, &[&x], &[&out])?;
            let bad = out.to_host()?.to_f32_vec()?.iter().filter(|&&v| v != 3.0).count();
            ensure!(bad == 0, "{bad} sentinels survived at size {n}");
        }
        Ok(Pass(format!("sizes {sizes:?}")))
    });

    // mlp
    r.check("mlp.grad_check", || {
        let cfg = MlpConfig {
            batch: 8,
            hidden: vec![16],
            ..Default::default()
        };
        let data = make_blobs(cfg.samples, cfg.input_dim, cfg.classes, cfg.seed, 0);
        let check = grad_check(&cfg, &data, 1e-2)?;
        let worst = check.iter().map(|c| c.rel_err).fold(0.0, f64::max);
        let checked: usize = check.iter().map(|c| c.checked).sum();
        let d = format!("worst {worst:.2e} over {checked} entries");
        Ok(if worst < 1e-2 && checked > 0 { Pass(d) } else { Fail(d) })
    });
    r.check("mlp.device_loss_decreases", || {
        let cfg = MlpConfig {
            steps: 100,
            ..Default::default()
        };
        let data = make_blobs(cfg.samples, cfg.input_dim, cfg.classes, cfg.seed, 0);
        let out = train(&DeviceEngine::new(ctx.clone()), &cfg, &data)?;
        let (first, last) = (out.losses[0], *out.losses.last().unwrap());
        let d = format!("{first:.4} -> {last:.4} on {backend}");
        Ok(if last < first { Pass(d) } else { Fail(d) })
    });
    r.check("mlp.zero_lr_constant", || {
        // one full batch so every step sees the same data
        let cfg = MlpConfig {
            steps: 20,
            lr: 0.0,
            batch: 64,
            samples: 64,
            ..Default::default()
        };
        let data = make_blobs(cfg.samples, cfg.input_dim, cfg.classes, cfg.seed, 0);
        let out = train(&DeviceEngine::new(ctx.clone()), &cfg, &data)?;
        Ok(if out.losses.iter().all(|&l| l == out.losses[0]) {
            Pass(format!("20 steps at {:.6}", out.losses[0]))
        } else {
            Fail(format!("{:?}", out.losses))
        })
    });

    // grid search
    let grid_start = Instant::now();
    r.check("grid.desk_exactly_once", || {
        let jobs = enumerate_grid(&desk_grid(), &JobTemplate::default())?;
        ensure!(jobs.len() == 27);
        let coord = Coordinator::bind("127.0.0.1:0")?;
        let addr = coord.local_addr()?;
        let mut kids: Vec<Child> = (0..3).map(|_| worker_process(addr)).collect::<Result<_, _>>()?;
        let opts = ServeOptions {
            expect_workers: 3,
            ..Default::default()
        };
        let s = coord.run(jobs, &opts)?;
        wait_all(&mut kids)?;
        let ids: Vec<usize> = s.results.iter().map(|r| r.job_id).collect();
        ensure!(ids == (0..27).collect::<Vec<_>>(), "ids {ids:?}");
        ensure!(s.duplicate_results == 0 && s.requeues == 0 && s.rejected_results == 0);
        let best = s.best.unwrap();
        Ok(Pass(format!(
            "27 results from {} workers in {:.1}s; best job {} {:.3}",
            s.workers_seen, s.total_seconds, best.job_id, best.accuracy
        )))
    });
    r.check("grid.speedup_4_workers", || {
        let jobs = enumerate_grid(
            &[(1..=8).collect()],
            &JobTemplate {
                stub_ms: Some(400),
                ..Default::default()
            },
        )?;
        let out = scaling_experiment(&[1, 2, 4], &jobs, 3, &ServeOptions::default(), &mut worker_process)?;
        let times: Vec<f64> = out.rows.iter().map(|r| r.1).collect();
        let s4 = out.rows[2].2;
        let d = format!(
            "medians {:.2}/{:.2}/{:.2}s, speedup(4) {s4:.2}",
            times[0], times[1], times[2]
        );
        let monotone = times.windows(2).all(|w| w[1] <= w[0]);
        Ok(if s4 >= 3.0 && monotone { Pass(d) } else { Fail(d) })
    });
    r.check("grid.worker_kill", || {
        let jobs = enumerate_grid(
            &[(1..=6).collect()],
            &JobTemplate {
                stub_ms: Some(500),
                ..Default::default()
            },
        )?;
        let coord = Coordinator::bind("127.0.0.1:0")?;
        let addr = coord.local_addr()?;
        let opts = ServeOptions {
            deadline: Duration::from_secs(2),
            ..Default::default()
        };
        let server = thread::spawn(move || coord.run(jobs, &opts));
        let mut victim = worker_process(addr)?;
        let mut survivor = worker_process(addr)?;
        thread::sleep(Duration::from_millis(750));
        victim.kill()?;
        victim.wait()?;
        let s = server.join().map_err(|_| anyhow::anyhow!("coordinator panicked"))??;
        wait_all(std::slice::from_mut(&mut survivor))?;
        ensure!(s.results.len() == 6, "{} results", s.results.len());
        ensure!(s.requeues >= 1, "no requeue recorded");
        Ok(Pass(format!(
            "6/6 jobs, {} requeue(s), {:.1}s",
            s.requeues, s.total_seconds
        )))
    });
    let grid_secs = grid_start.elapsed().as_secs_f64();
    r.check("grid.runtime", || {
        let d = format!("{grid_secs:.1}s (limit 180s)");
        Ok(if grid_secs < 180.0 { Pass(d) } else { Fail(d) })
    });

    // host fallback
    r.check("fallback.host_paths", || {
        let p = MandelbrotParams::square(64);
        let host_counts = mandelbrot_counts(None, &p, MandelbrotMode::Host)?;
        let custom = mandelbrot_counts(Some(&ctx), &p, MandelbrotMode::Custom)?;
        ensure!(host_counts == custom, "host f32 Mandelbrot differs from the device");
        let rep = run_matmul_sweep(None, &[32], &[SweepVariant::Host], Timing { warmup: 1, samples: 3 }, 0)?;
        ensure!(rep.correctness.passed);
        let cfg = MlpConfig {
            steps: 50,
            ..Default::default()
        };
        let data = make_blobs(cfg.samples, cfg.input_dim, cfg.classes, cfg.seed, 0);
        let out = train(&HostEngine, &cfg, &data)?;
        ensure!(out.losses.last().unwrap() < &out.losses[0]);
        Ok(Pass("Mandelbrot, matmul and MLP run without a device context".into()))
    });

    if !r.finish() {
        std::process::exit(1);
    }
}
