//! A small fully connected classifier trained by hand-written backprop.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::matmul::matmul_host;
use super::report::{median, BenchCell, BenchReport, Correctness};
use crate::array::{DType, HostArray};
use crate::device::{DeviceArray, DeviceContext};
use crate::error::{Error, Result};
use crate::kernel::{Constants, KernelSpec};
use crate::ops::{self, BinaryOpKind, MatmulVariant, ReduceOp};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    /// Widths of the hidden layers, each followed by a ReLU.
    pub hidden: Vec<usize>,
    pub classes: usize,
    pub batch: usize,
    pub steps: usize,
    pub lr: f32,
    pub seed: u64,
    /// Size of the synthetic training set.
    pub samples: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            input_dim: 8,
            hidden: vec![32],
            classes: 4,
            batch: 64,
            steps: 100,
            lr: 0.1,
            seed: 0,
            samples: 1024,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        let dims_ok = self.input_dim > 0 && self.classes > 0 && self.hidden.iter().all(|&h| h > 0);
        if !dims_ok || self.batch == 0 || self.samples == 0 {
            return Err(Error::InvalidConfig("MLP sizes must be positive".into()));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::InvalidConfig(format!("learning rate {} is invalid", self.lr)));
        }
        Ok(())
    }

    /// Layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(&self.hidden);
        w.push(self.classes);
        w
    }
}

/// Per-layer `(dW, db)`.
pub type LayerGrads<A> = Vec<(A, A)>;

/// Gaussian clusters, one per class.
#[derive(Clone, Debug, PartialEq)]
pub struct Blobs {
    pub dim: usize,
    pub classes: usize,
    /// Row-major `[n, dim]`.
    pub x: Vec<f32>,
    pub y: Vec<usize>,
}

impl Blobs {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Rows `start, start+1, ...` wrapping around, as features and one-hot labels.
    pub fn batch(&self, start: usize, size: usize) -> (Vec<f32>, Vec<f32>, Vec<usize>) {
        let mut x = Vec::with_capacity(size * self.dim);
        let mut t = vec![0f32; size * self.classes];
        let mut y = Vec::with_capacity(size);
        for r in 0..size {
            let i = (start + r) % self.len();
            x.extend_from_slice(&self.x[i * self.dim..(i + 1) * self.dim]);
            t[r * self.classes + self.y[i]] = 1.0;
            y.push(self.y[i]);
        }
        (x, t, y)
    }
}

/// `n` points in `classes` clusters. Centers are drawn from `N(0, 3²)` per
/// coordinate and points scatter around them with unit variance. The same
/// `seed` always yields the same centers, so train and eval sets drawn with
/// different `offset`s share a distribution.
pub fn make_blobs(n: usize, dim: usize, classes: usize, seed: u64, offset: u64) -> Blobs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wide = Normal::new(0.0f32, 3.0).expect("valid normal");
    let centers: Vec<f32> = (0..classes * dim).map(|_| wide.sample(&mut rng)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(
        seed.wrapping_add(offset.wrapping_mul(0x9e37_79b9_7f4a_7c15))
            .wrapping_add(1),
    );
    let unit = Normal::new(0.0f32, 1.0).expect("valid normal");
    let mut y: Vec<usize> = (0..n).map(|i| i % classes).collect();
    y.shuffle(&mut rng);
    let mut x = Vec::with_capacity(n * dim);
    for &c in &y {
        x.extend((0..dim).map(|d| centers[c * dim + d] + unit.sample(&mut rng)));
    }
    Blobs { dim, classes, x, y }
}

/// Per layer weights `[in, out]` and biases `[out]`, as host data.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub widths: Vec<usize>,
    pub weights: Vec<Vec<f32>>,
    pub biases: Vec<Vec<f32>>,
}

impl Params {
    /// He-normal weights, zero biases.
    pub fn init(widths: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in widths.windows(2) {
            let std = (2.0 / w[0] as f32).sqrt();
            let dist = Normal::new(0.0, std).expect("valid normal");
            weights.push((0..w[0] * w[1]).map(|_| dist.sample(&mut rng)).collect());
            biases.push(vec![0.0; w[1]]);
        }
        Params {
            widths: widths.to_vec(),
            weights,
            biases,
        }
    }

    pub fn layers(&self) -> usize {
        self.weights.len()
    }
}

/// Array operations the training loop needs, on some backend.
pub trait Engine {
    type A: Clone;
    fn name(&self) -> String;
    fn upload(&self, dims: &[usize], data: Vec<f32>) -> Result<Self::A>;
    fn download(&self, a: &Self::A) -> Result<Vec<f32>>;
    fn dims(&self, a: &Self::A) -> Vec<usize>;
    fn matmul(&self, a: &Self::A, b: &Self::A) -> Result<Self::A>;
    fn transpose(&self, a: &Self::A) -> Result<Self::A>;
    /// `a[B, n] + bias[n]` broadcast over rows.
    fn add_bias(&self, a: &Self::A, bias: &Self::A) -> Result<Self::A>;
    fn relu(&self, a: &Self::A) -> Result<Self::A>;
    /// `gy` where the ReLU output `y` is positive, else 0.
    fn relu_bwd(&self, y: &Self::A, gy: &Self::A) -> Result<Self::A>;
    /// Mean softmax cross-entropy against one-hot targets, and its gradient
    /// with respect to the logits.
    fn softmax_xent(&self, logits: &Self::A, onehot: &Self::A) -> Result<(f64, Self::A)>;
    /// Column sums of a matrix.
    fn sum_rows(&self, a: &Self::A) -> Result<Self::A>;
    /// `w - lr·g`
    fn sgd(&self, w: &Self::A, g: &Self::A, lr: f32) -> Result<Self::A>;
}

/// Host arrays in `f32`.
#[derive(Clone, Copy, Debug, Default)]
pub struct HostEngine;

#[derive(Clone, Debug, PartialEq)]
pub struct HostMat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Engine for HostEngine {
    type A = HostMat;

    fn name(&self) -> String {
        "host".into()
    }

    fn upload(&self, dims: &[usize], data: Vec<f32>) -> Result<HostMat> {
        let (rows, cols) = match *dims {
            [n] => (1, n),
            [r, c] => (r, c),
            _ => return Err(Error::ShapeMismatch(format!("{dims:?} is not a matrix"))),
        };
        if rows * cols != data.len() {
            return Err(Error::CountMismatch {
                from: data.len(),
                to: rows * cols,
            });
        }
        Ok(HostMat { rows, cols, data })
    }

    fn download(&self, a: &HostMat) -> Result<Vec<f32>> {
        Ok(a.data.clone())
    }

    fn dims(&self, a: &HostMat) -> Vec<usize> {
        vec![a.rows, a.cols]
    }

    fn matmul(&self, a: &HostMat, b: &HostMat) -> Result<HostMat> {
        if a.cols != b.rows {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} · {}x{}",
                a.rows, a.cols, b.rows, b.cols
            )));
        }
        Ok(HostMat {
            rows: a.rows,
            cols: b.cols,
            data: matmul_host(&a.data, &b.data, a.rows, a.cols, b.cols),
        })
    }

    fn transpose(&self, a: &HostMat) -> Result<HostMat> {
        let mut data = vec![0f32; a.data.len()];
        for i in 0..a.rows {
            for j in 0..a.cols {
                data[j * a.rows + i] = a.data[i * a.cols + j];
            }
        }
        Ok(HostMat {
            rows: a.cols,
            cols: a.rows,
            data,
        })
    }

    fn add_bias(&self, a: &HostMat, bias: &HostMat) -> Result<HostMat> {
        let mut out = a.clone();
        for row in out.data.chunks_mut(a.cols) {
            for (v, b) in row.iter_mut().zip(&bias.data) {
                *v += b;
            }
        }
        Ok(out)
    }

    fn relu(&self, a: &HostMat) -> Result<HostMat> {
        let mut out = a.clone();
        out.data.iter_mut().for_each(|v| *v = v.max(0.0));
        Ok(out)
    }

    fn relu_bwd(&self, y: &HostMat, gy: &HostMat) -> Result<HostMat> {
        let mut out = gy.clone();
        for (g, &v) in out.data.iter_mut().zip(&y.data) {
            if v <= 0.0 {
                *g = 0.0;
            }
        }
        Ok(out)
    }

    fn softmax_xent(&self, logits: &HostMat, onehot: &HostMat) -> Result<(f64, HostMat)> {
        let (b, c) = (logits.rows, logits.cols);
        let inv_b = 1.0 / b as f32;
        let mut grad = vec![0f32; b * c];
        let mut loss = 0f64;
        for r in 0..b {
            let x = &logits.data[r * c..(r + 1) * c];
            let t = &onehot.data[r * c..(r + 1) * c];
            let m = x.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let e: Vec<f32> = x.iter().map(|&v| (v - m).exp()).collect();
            let s: f32 = e.iter().sum();
            for k in 0..c {
                loss += (t[k] * (s.ln() - (x[k] - m))) as f64;
                grad[r * c + k] = (e[k] / s - t[k]) * inv_b;
            }
        }
        Ok((
            loss / b as f64,
            HostMat {
                rows: b,
                cols: c,
                data: grad,
            },
        ))
    }

    fn sum_rows(&self, a: &HostMat) -> Result<HostMat> {
        let mut out = vec![0f32; a.cols];
        for row in a.data.chunks(a.cols) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        Ok(HostMat {
            rows: 1,
            cols: a.cols,
            data: out,
        })
    }

    fn sgd(&self, w: &HostMat, g: &HostMat, lr: f32) -> Result<HostMat> {
        let mut out = w.clone();
        for (v, gv) in out.data.iter_mut().zip(&g.data) {
            *v -= lr * gv;
        }
        Ok(out)
    }
}

/// Device arrays; ReLU backward runs through the `relu_bwd` elementwise kernel.
#[derive(Clone, Debug)]
pub struct DeviceEngine {
    pub ctx: DeviceContext,
}

impl DeviceEngine {
    pub fn new(ctx: DeviceContext) -> Self {
        DeviceEngine { ctx }
    }

    fn kernel(&self, spec: &KernelSpec, inputs: &[&DeviceArray]) -> Result<DeviceArray> {
        Ok(self.ctx.elementwise(spec, &Constants::new(), inputs)?.remove(0))
    }
}

fn spec(name: &str, ins: &str, out: &str, op: &str) -> KernelSpec {
    KernelSpec::new(name, ins, out, op).expect("static kernel spec")
}

impl Engine for DeviceEngine {
    type A = DeviceArray;

    fn name(&self) -> String {
        self.ctx.backend_name()
    }

    fn upload(&self, dims: &[usize], data: Vec<f32>) -> Result<DeviceArray> {
        self.ctx.upload(&HostArray::from_f32(dims, data)?)
    }

    fn download(&self, a: &DeviceArray) -> Result<Vec<f32>> {
        a.to_host()?.to_f32_vec()
    }

    fn dims(&self, a: &DeviceArray) -> Vec<usize> {
        a.dims().to_vec()
    }

    fn matmul(&self, a: &DeviceArray, b: &DeviceArray) -> Result<DeviceArray> {
        ops::matmul(a, b, MatmulVariant::Tiled)
    }

    fn transpose(&self, a: &DeviceArray) -> Result<DeviceArray> {
        a.transpose(&[1, 0])
    }

    fn add_bias(&self, a: &DeviceArray, bias: &DeviceArray) -> Result<DeviceArray> {
        ops::binary(BinaryOpKind::Add, a, bias)
    }

    fn relu(&self, a: &DeviceArray) -> Result<DeviceArray> {
        self.kernel(&spec("relu", "f32 x", "f32 y", "y = max(x, 0.0)"), &[a])
    }

    fn relu_bwd(&self, y: &DeviceArray, gy: &DeviceArray) -> Result<DeviceArray> {
        self.kernel(&ops::relu_bwd_spec(), &[y, gy])
    }

    fn softmax_xent(&self, logits: &DeviceArray, onehot: &DeviceArray) -> Result<(f64, DeviceArray)> {
        let b = logits.dims()[0];
        let m = ops::reduce(logits, ReduceOp::Max, Some(1))?.reshape(&[b, 1])?;
        let e = self.kernel(
            &spec("softmax_exp", "f32 x, f32 m", "f32 e", "e = exp(x - m)"),
            &[logits, &m],
        )?;
        let s = ops::reduce(&e, ReduceOp::Sum, Some(1))?.reshape(&[b, 1])?;
        let nll = self.kernel(
            &spec(
                "xent_terms",
                "f32 x, f32 m, f32 s, f32 t",
                "f32 l",
                "l = t * (log(s) - (x - m))",
            ),
            &[logits, &m, &s, onehot],
        )?;
        let inv_b = self.ctx.scalar(DType::F32, 1.0 / b as f64)?;
        let grad = self.kernel(
            &spec(
                "xent_grad",
                "f32 e, f32 s, f32 t, f32 k",
                "f32 g",
                "g = (e / s - t) * k",
            ),
            &[&e, &s, onehot, &inv_b],
        )?;
        let total = ops::reduce(&nll, ReduceOp::Sum, None)?.to_host()?.to_f32_vec()?[0];
        Ok((total as f64 / b as f64, grad))
    }

    fn sum_rows(&self, a: &DeviceArray) -> Result<DeviceArray> {
        ops::reduce(a, ReduceOp::Sum, Some(0))
    }

    fn sgd(&self, w: &DeviceArray, g: &DeviceArray, lr: f32) -> Result<DeviceArray> {
        let lr = self.ctx.scalar(DType::F32, lr as f64)?;
        self.kernel(
            &spec("sgd", "f32 w, f32 g, f32 lr", "f32 o", "o = w - lr * g"),
            &[w, g, &lr],
        )
    }
}

/// Parameters resident on an engine.
pub struct Model<E: Engine> {
    pub weights: Vec<E::A>,
    pub biases: Vec<E::A>,
}

impl<E: Engine> Model<E> {
    pub fn load(engine: &E, p: &Params) -> Result<Self> {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, w) in p.widths.windows(2).enumerate() {
            weights.push(engine.upload(&[w[0], w[1]], p.weights[l].clone())?);
            biases.push(engine.upload(&[w[1]], p.biases[l].clone())?);
        }
        Ok(Model { weights, biases })
    }

    pub fn store(&self, engine: &E, widths: &[usize]) -> Result<Params> {
        Ok(Params {
            widths: widths.to_vec(),
            weights: self.weights.iter().map(|w| engine.download(w)).collect::<Result<_>>()?,
            biases: self.biases.iter().map(|b| engine.download(b)).collect::<Result<_>>()?,
        })
    }

    /// Layer inputs (post-ReLU activations, starting with `x`) and the logits.
    pub fn forward(&self, engine: &E, x: &E::A) -> Result<(Vec<E::A>, E::A)> {
        let mut acts = vec![x.clone()];
        let last = self.weights.len() - 1;
        for l in 0..=last {
            let z = engine.add_bias(&engine.matmul(&acts[l], &self.weights[l])?, &self.biases[l])?;
            if l == last {
                return Ok((acts, z));
            }
            acts.push(engine.relu(&z)?);
        }
        unreachable!("at least one layer")
    }

    /// Loss and per-layer `(dW, db)` for one batch.
    pub fn gradients(&self, engine: &E, x: &E::A, onehot: &E::A) -> Result<(f64, LayerGrads<E::A>)> {
        let (acts, logits) = self.forward(engine, x)?;
        let (loss, mut g) = engine.softmax_xent(&logits, onehot)?;
        let mut grads = Vec::with_capacity(self.weights.len());
        for l in (0..self.weights.len()).rev() {
            let dw = engine.matmul(&engine.transpose(&acts[l])?, &g)?;
            let db = engine.sum_rows(&g)?;
            if l > 0 {
                let gh = engine.matmul(&g, &engine.transpose(&self.weights[l])?)?;
                g = engine.relu_bwd(&acts[l], &gh)?;
            }
            grads.push((dw, db));
        }
        grads.reverse();
        Ok((loss, grads))
    }

    pub fn step(&mut self, engine: &E, x: &E::A, onehot: &E::A, lr: f32) -> Result<f64> {
        let (loss, grads) = self.gradients(engine, x, onehot)?;
        for (l, (dw, db)) in grads.iter().enumerate() {
            self.weights[l] = engine.sgd(&self.weights[l], dw, lr)?;
            self.biases[l] = engine.sgd(&self.biases[l], db, lr)?;
        }
        Ok(loss)
    }

    /// Fraction of rows whose largest logit is the label.
    pub fn accuracy(&self, engine: &E, data: &Blobs) -> Result<f64> {
        if data.is_empty() {
            return Ok(0.0);
        }
        let x = engine.upload(&[data.len(), data.dim], data.x.clone())?;
        let (_, logits) = self.forward(engine, &x)?;
        let logits = engine.download(&logits)?;
        let hits = logits
            .chunks(data.classes)
            .zip(&data.y)
            .filter(|(row, &y)| argmax(row) == y)
            .count();
        Ok(hits as f64 / data.len() as f64)
    }
}

/// Index of the first maximum.
pub fn argmax(row: &[f32]) -> usize {
    row.iter()
        .enumerate()
        .fold(
            (0, f32::NEG_INFINITY),
            |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
        )
        .0
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub losses: Vec<f64>,
    /// Wall time of each step in milliseconds, readback of the loss included.
    pub step_ms: Vec<f64>,
    pub params: Params,
}

/// Runs `cfg.steps` SGD steps over consecutive minibatches of `data`.
pub fn train<E: Engine>(engine: &E, cfg: &MlpConfig, data: &Blobs) -> Result<TrainOutcome> {
    cfg.validate()?;
    let widths = cfg.widths();
    if data.dim != cfg.input_dim || data.classes != cfg.classes {
        return Err(Error::ShapeMismatch("data does not match the model".into()));
    }
    let mut model = Model::load(engine, &Params::init(&widths, cfg.seed))?;
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut step_ms = Vec::with_capacity(cfg.steps);
    for s in 0..cfg.steps {
        let t = Instant::now();
        let (x, onehot, _) = data.batch(s * cfg.batch, cfg.batch);
        let x = engine.upload(&[cfg.batch, cfg.input_dim], x)?;
        let onehot = engine.upload(&[cfg.batch, cfg.classes], onehot)?;
        let loss = model.step(engine, &x, &onehot, cfg.lr)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step: s, loss });
        }
        losses.push(loss);
        step_ms.push((t.elapsed().as_secs_f64() * 1e3).max(1e-6));
    }
    Ok(TrainOutcome {
        losses,
        step_ms,
        params: model.store(engine, &widths)?,
    })
}

/// Finite-difference comparison for one parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckEntry {
    pub tensor: String,
    /// `‖numeric − analytic‖ / max(‖numeric‖ + ‖analytic‖, 1e-12)`
    pub rel_err: f64,
    pub checked: usize,
    /// Entries left out because the perturbation moved some ReLU across its
    /// kink, where the loss is not differentiable.
    pub kinked: usize,
}

/// Central differences with step `eps` on the host path, for every entry of
/// every weight and bias, on one batch of `cfg.batch` rows. Entries whose
/// `±eps` perturbations give different ReLU activation patterns are skipped.
pub fn grad_check(cfg: &MlpConfig, data: &Blobs, eps: f32) -> Result<Vec<GradCheckEntry>> {
    let e = HostEngine;
    let widths = cfg.widths();
    let params = Params::init(&widths, cfg.seed);
    let (x, onehot, _) = data.batch(0, cfg.batch);
    let x = e.upload(&[cfg.batch, cfg.input_dim], x)?;
    let onehot = e.upload(&[cfg.batch, cfg.classes], onehot)?;
    let (_, grads) = Model::load(&e, &params)?.gradients(&e, &x, &onehot)?;
    let loss_at = |p: &Params| -> Result<(f64, Vec<bool>)> {
        let m = Model::load(&e, p)?;
        let (acts, logits) = m.forward(&e, &x)?;
        let active = acts
            .iter()
            .skip(1)
            .flat_map(|a| a.data.iter().map(|&v| v > 0.0))
            .collect();
        Ok((e.softmax_xent(&logits, &onehot)?.0, active))
    };
    let mut out = Vec::new();
    for (l, (dw, db)) in grads.iter().enumerate() {
        for (is_bias, analytic) in [(false, &dw.data), (true, &db.data)] {
            let len = analytic.len();
            let mut pairs = Vec::with_capacity(len);
            for (i, &an) in analytic.iter().enumerate() {
                let mut plus = params.clone();
                let mut minus = params.clone();
                let (pv, mv) = if is_bias {
                    (&mut plus.biases[l][i], &mut minus.biases[l][i])
                } else {
                    (&mut plus.weights[l][i], &mut minus.weights[l][i])
                };
                *pv += eps;
                *mv -= eps;
                let ((lp, ap), (lm, am)) = (loss_at(&plus)?, loss_at(&minus)?);
                if ap == am {
                    pairs.push(((lp - lm) / (2.0 * eps as f64), an as f64));
                }
            }
            let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
            let diff = norm(&mut pairs.iter().map(|(n, a)| n - a));
            let scale = norm(&mut pairs.iter().map(|p| p.0)) + norm(&mut pairs.iter().map(|p| p.1));
            out.push(GradCheckEntry {
                tensor: format!("{}{}", if is_bias { "b" } else { "W" }, l + 1),
                rel_err: diff / scale.max(1e-12),
                checked: pairs.len(),
                kinked: len - pairs.len(),
            });
        }
    }
    Ok(out)
}

/// Trains on `engine`, runs a gradient check on the host path and summarizes
/// both. Steps after the first count as timing samples.
pub fn run_mlp_train<E: Engine>(engine: &E, cfg: &MlpConfig) -> Result<BenchReport> {
    let data = make_blobs(cfg.samples, cfg.input_dim, cfg.classes, cfg.seed, 0);
    let outcome = train(engine, cfg, &data)?;
    let check_cfg = MlpConfig {
        batch: cfg.batch.min(8),
        hidden: cfg.hidden.iter().map(|&h| h.min(16)).collect(),
        ..cfg.clone()
    };
    let check = grad_check(&check_cfg, &data, 1e-2)?;
    let worst = check.iter().map(|c| c.rel_err).fold(0.0, f64::max);
    let (first, last) = (outcome.losses[0], *outcome.losses.last().unwrap_or(&f64::NAN));
    let converged = if cfg.lr > 0.0 && cfg.steps > 1 {
        last < first
    } else {
        true
    };
    let samples: Vec<f64> = outcome.step_ms.iter().skip(1).copied().collect();
    let samples = if samples.is_empty() {
        outcome.step_ms.clone()
    } else {
        samples
    };
    let med = median(&samples);
    let params = serde_json::to_value(cfg)?;
    let cell = BenchCell {
        name: "mlp-train".into(),
        params: params.clone(),
        samples_ms: samples,
        median_ms: med,
        throughput: cfg.batch as f64 / (med / 1e3),
        throughput_unit: "samples/s".into(),
        correctness: Correctness {
            passed: converged && worst <= 1e-2,
            max_rel_err: worst,
            pixel_mismatch_ppm: None,
        },
        skipped: None,
    };
    let mut report = BenchReport::from_cells("mlp", &engine.name(), params, vec![cell], 0);
    report.series.insert("loss".into(), outcome.losses.clone());
    report
        .notes
        .push(format!("loss {first:.6} -> {last:.6} over {} steps", cfg.steps));
    for c in &check {
        report.notes.push(format!(
            "grad check {}: rel err {:.3e} over {} entries ({} skipped at ReLU kinks)",
            c.tensor, c.rel_err, c.checked, c.kinked
        ));
    }
    Ok(report)
}
