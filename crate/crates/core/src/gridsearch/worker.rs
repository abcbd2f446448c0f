use std::io::{BufReader, BufWriter};
use std::net::{TcpStream, ToSocketAddrs};
use std::thread;
use std::time::{Duration, Instant};

use super::protocol::{read_message, write_message, Message};
use super::{JobResult, JobSpec};
use crate::device::DeviceContext;
use crate::error::{Error, Result};
use crate::workloads::mlp::{make_blobs, train, DeviceEngine, Engine, HostEngine, Model};
use crate::workloads::MlpConfig;

/// Exponential retry schedule for network errors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Backoff {
    pub base: Duration,
    pub cap: Duration,
    /// Attempts per request, the first one included.
    pub tries: u32,
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff {
            base: Duration::from_millis(100),
            cap: Duration::from_secs(5),
            tries: 8,
        }
    }
}

impl Backoff {
    /// Pause after the `failures`-th consecutive failure (1-based).
    pub fn delay(&self, failures: u32) -> Duration {
        let factor = 1u32.checked_shl(failures.saturating_sub(1)).unwrap_or(u32::MAX);
        self.base.saturating_mul(factor).min(self.cap)
    }
}

/// Where a worker trains.
#[derive(Clone)]
pub enum WorkerBackend {
    /// The f32 host engine; deterministic and GPU-free.
    Host,
    Device(DeviceContext),
}

#[derive(Clone)]
pub struct WorkerOptions {
    pub worker_id: String,
    pub backend: WorkerBackend,
    pub backoff: Backoff,
}

impl WorkerOptions {
    pub fn new(backend: WorkerBackend) -> Self {
        WorkerOptions {
            worker_id: format!("w{}-{:08x}", std::process::id(), rand::random::<u32>()),
            backend,
            backoff: Backoff::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorkerStats {
    pub worker_id: String,
    pub jobs_done: usize,
}

struct Conn {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

fn connect(addr: &str) -> Result<Conn> {
    let mut last = None;
    for a in addr.to_socket_addrs()? {
        match TcpStream::connect_timeout(&a, Duration::from_secs(2)) {
            Ok(s) => {
                s.set_nodelay(true)?;
                return Ok(Conn {
                    reader: BufReader::new(s.try_clone()?),
                    writer: BufWriter::new(s),
                });
            }
            Err(e) => last = Some(e),
        }
    }
    Err(last.map_or_else(|| Error::Io(format!("{addr} resolved to no address")), Error::from))
}

fn exchange(conn: &mut Conn, msg: &Message) -> Result<Message> {
    write_message(&mut conn.writer, msg)?;
    read_message(&mut conn.reader)?.ok_or_else(|| Error::Io("coordinator closed the connection".into()))
}

/// Sends `msg` and returns the reply, reconnecting with backoff on network
/// errors.
fn request(conn: &mut Option<Conn>, addr: &str, msg: &Message, backoff: &Backoff) -> Result<Message> {
    let mut failures = 0;
    loop {
        let attempt = match conn {
            Some(c) => exchange(c, msg),
            None => connect(addr).and_then(|c| exchange(conn.insert(c), msg)),
        };
        match attempt {
            Ok(reply) => return Ok(reply),
            Err(e @ (Error::Io(_) | Error::Protocol(_))) => {
                *conn = None;
                failures += 1;
                if failures >= backoff.tries {
                    return Err(Error::Io(format!("giving up after {failures} attempts: {e}")));
                }
                let pause = backoff.delay(failures);
                log::warn!("request failed ({e}); retrying in {pause:?}");
                thread::sleep(pause);
            }
            Err(e) => return Err(e),
        }
    }
}

/// Trains one candidate for a single pass over its training subset and
/// returns its accuracy on the evaluation subset.
pub fn run_job(spec: &JobSpec, backend: &WorkerBackend) -> Result<f64> {
    if let Some(ms) = spec.stub_ms {
        thread::sleep(Duration::from_millis(ms));
        return Ok(0.0);
    }
    match backend {
        WorkerBackend::Host => train_and_eval(&HostEngine, spec),
        WorkerBackend::Device(ctx) => train_and_eval(&DeviceEngine::new(ctx.clone()), spec),
    }
}

fn train_and_eval<E: Engine>(engine: &E, spec: &JobSpec) -> Result<f64> {
    if spec.batch == 0 {
        return Err(Error::InvalidConfig("batch must be positive".into()));
    }
    let cfg = MlpConfig {
        input_dim: spec.input_dim,
        hidden: spec.widths.clone(),
        classes: spec.classes,
        batch: spec.batch,
        steps: spec.train_size.div_ceil(spec.batch),
        lr: spec.lr,
        seed: spec.seed,
        samples: spec.train_size,
    };
    let data = make_blobs(spec.train_size, spec.input_dim, spec.classes, spec.seed, 0);
    let eval = make_blobs(spec.eval_size, spec.input_dim, spec.classes, spec.seed, 1);
    let outcome = train(engine, &cfg, &data)?;
    Model::load(engine, &outcome.params)?.accuracy(engine, &eval)
}

/// Pulls jobs from the coordinator at `addr` until it answers `done`.
pub fn worker_loop(addr: &str, opts: &WorkerOptions) -> Result<WorkerStats> {
    let mut conn = None;
    let mut jobs_done = 0;
    let get = Message::GetJob {
        worker_id: opts.worker_id.clone(),
    };
    loop {
        match request(&mut conn, addr, &get, &opts.backoff)? {
            Message::Done => break,
            Message::Wait { ms } => thread::sleep(Duration::from_millis(ms)),
            Message::Job { spec } => {
                let t = Instant::now();
                let accuracy = run_job(&spec, &opts.backend)?;
                let result = JobResult {
                    job_id: spec.id,
                    accuracy,
                    worker_id: opts.worker_id.clone(),
                    train_seconds: t.elapsed().as_secs_f64(),
                };
                log::info!("job {} widths {:?}: accuracy {:.4}", spec.id, spec.widths, accuracy);
                match request(&mut conn, addr, &Message::Result { result }, &opts.backoff)? {
                    Message::Ok => jobs_done += 1,
                    Message::Error { message } => log::warn!("result for job {} refused: {message}", spec.id),
                    other => return Err(Error::Protocol(format!("expected ok, got {other:?}"))),
                }
            }
            Message::Error { message } => return Err(Error::Protocol(message)),
            other => return Err(Error::Protocol(format!("unexpected reply {other:?}"))),
        }
    }
    Ok(WorkerStats {
        worker_id: opts.worker_id.clone(),
        jobs_done,
    })
}
