use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::io::{self, BufReader, BufWriter, ErrorKind};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::protocol::{read_message, write_message, Message};
use super::{best_candidate, JobResult, JobSpec};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct ServeOptions {
    /// How long an assigned job may run before it is handed out again.
    pub deadline: Duration,
    /// Back-off suggested to workers when every remaining job is assigned.
    pub wait_ms: u64,
    /// After the last result, how long to keep answering `done` to workers
    /// that have not yet been told.
    pub linger: Duration,
    /// Keep serving (within `linger`) until at least this many distinct
    /// workers have been told `done`.
    pub expect_workers: usize,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions {
            deadline: Duration::from_secs(60),
            wait_ms: 50,
            linger: Duration::from_secs(5),
            expect_workers: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub total_seconds: f64,
    /// One result per job, ordered by job id.
    pub results: Vec<JobResult>,
    pub best: Option<JobResult>,
    /// Number of times a job went back to the queue after its deadline.
    pub requeues: usize,
    /// Results for jobs that had already completed; ignored.
    pub duplicate_results: usize,
    /// Results that were refused (unknown or never assigned job, bad accuracy).
    pub rejected_results: usize,
    pub workers_seen: usize,
}

/// A bound, not yet running coordinator.
pub struct Coordinator {
    listener: TcpListener,
}

enum Event {
    Request { msg: Message, reply: Sender<Message> },
    Closed { worker_id: Option<String> },
}

struct State {
    jobs: Vec<JobSpec>,
    pending: VecDeque<usize>,
    assigned: HashMap<usize, (String, Instant)>,
    completed: BTreeMap<usize, JobResult>,
    ever_assigned: HashSet<usize>,
    /// Connected workers and whether each has been told `done`.
    workers: HashMap<String, bool>,
    seen: HashSet<String>,
    told_done: HashSet<String>,
    requeues: usize,
    duplicates: usize,
    rejected: usize,
}

impl State {
    fn new(jobs: Vec<JobSpec>) -> Self {
        State {
            pending: (0..jobs.len()).collect(),
            jobs,
            assigned: HashMap::new(),
            completed: BTreeMap::new(),
            ever_assigned: HashSet::new(),
            workers: HashMap::new(),
            seen: HashSet::new(),
            told_done: HashSet::new(),
            requeues: 0,
            duplicates: 0,
            rejected: 0,
        }
    }

    fn finished(&self) -> bool {
        self.completed.len() == self.jobs.len()
    }

    fn expire(&mut self, now: Instant) {
        let mut late: Vec<usize> = self
            .assigned
            .iter()
            .filter(|(_, (_, d))| *d <= now)
            .map(|(&i, _)| i)
            .collect();
        late.sort_unstable();
        for i in late {
            self.assigned.remove(&i);
            log::warn!("job {} passed its deadline; requeued", self.jobs[i].id);
            self.pending.push_back(i);
            self.requeues += 1;
        }
    }

    fn handle(&mut self, msg: Message, opts: &ServeOptions, index: &HashMap<usize, usize>) -> Message {
        let now = Instant::now();
        self.expire(now);
        match msg {
            Message::GetJob { worker_id } => {
                self.seen.insert(worker_id.clone());
                if let Some(i) = self.pending.pop_front() {
                    self.workers.insert(worker_id.clone(), false);
                    self.assigned.insert(i, (worker_id, now + opts.deadline));
                    self.ever_assigned.insert(i);
                    Message::Job {
                        spec: self.jobs[i].clone(),
                    }
                } else if self.finished() {
                    self.told_done.insert(worker_id.clone());
                    self.workers.insert(worker_id, true);
                    Message::Done
                } else {
                    self.workers.insert(worker_id, false);
                    Message::Wait { ms: opts.wait_ms }
                }
            }
            Message::Result { result } => {
                let Some(&i) = index.get(&result.job_id) else {
                    self.rejected += 1;
                    return Message::Error {
                        message: format!("unknown job {}", result.job_id),
                    };
                };
                if !self.ever_assigned.contains(&i) {
                    self.rejected += 1;
                    return Message::Error {
                        message: format!("job {} was never assigned", result.job_id),
                    };
                }
                if !result.accuracy.is_finite() || !(0.0..=1.0).contains(&result.accuracy) {
                    self.rejected += 1;
                    return Message::Error {
                        message: format!("accuracy {} is outside [0, 1]", result.accuracy),
                    };
                }
                if self.completed.contains_key(&i) {
                    self.duplicates += 1;
                    return Message::Ok;
                }
                self.assigned.remove(&i);
                self.pending.retain(|&p| p != i);
                self.completed.insert(i, result);
                Message::Ok
            }
            other => Message::Error {
                message: format!("unexpected message {other:?}"),
            },
        }
    }
}

impl Coordinator {
    pub fn bind(addr: impl ToSocketAddrs) -> Result<Self> {
        let listener = TcpListener::bind(addr).map_err(|e| Error::Io(format!("bind failed: {e}")))?;
        Ok(Coordinator { listener })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Serves `jobs` until each has a result and every worker that asked for
    /// work has been told `done` (or `linger` runs out).
    pub fn run(self, jobs: Vec<JobSpec>, opts: &ServeOptions) -> Result<Summary> {
        let mut index = HashMap::new();
        for (i, j) in jobs.iter().enumerate() {
            if index.insert(j.id, i).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate job id {}", j.id)));
            }
        }
        let start = Instant::now();
        let stop = Arc::new(AtomicBool::new(false));
        let (tx, rx) = mpsc::channel();
        self.listener.set_nonblocking(true)?;
        let acceptor = {
            let stop = stop.clone();
            let listener = self.listener;
            thread::spawn(move || accept_loop(listener, tx, stop))
        };

        let mut state = State::new(jobs);
        let mut finished_at: Option<Instant> = None;
        let outcome = serve_events(&rx, &mut state, opts, &index, start, &mut finished_at);
        stop.store(true, Ordering::SeqCst);
        let _ = acceptor.join();
        outcome?;

        let total_seconds = finished_at
            .unwrap_or_else(Instant::now)
            .duration_since(start)
            .as_secs_f64();
        let results: Vec<JobResult> = state.completed.into_values().collect();
        let best = best_candidate(&results).cloned();
        Ok(Summary {
            total_seconds,
            results,
            best,
            requeues: state.requeues,
            duplicate_results: state.duplicates,
            rejected_results: state.rejected,
            workers_seen: state.seen.len(),
        })
    }
}

fn serve_events(
    rx: &Receiver<Event>,
    state: &mut State,
    opts: &ServeOptions,
    index: &HashMap<usize, usize>,
    start: Instant,
    finished_at: &mut Option<Instant>,
) -> Result<()> {
    loop {
        match rx.recv_timeout(Duration::from_millis(20)) {
            Ok(Event::Request { msg, reply }) => {
                let answer = state.handle(msg, opts, index);
                let _ = reply.send(answer);
            }
            Ok(Event::Closed { worker_id }) => {
                if let Some(w) = worker_id {
                    state.workers.remove(&w);
                }
            }
            Err(RecvTimeoutError::Timeout) => state.expire(Instant::now()),
            Err(RecvTimeoutError::Disconnected) => {
                return Err(Error::Io("connection acceptor stopped".into()));
            }
        }
        if state.finished() {
            let t = *finished_at.get_or_insert_with(|| {
                log::info!("all jobs complete after {:.3} s", start.elapsed().as_secs_f64());
                Instant::now()
            });
            let all_told = state.workers.values().all(|&told| told) && state.told_done.len() >= opts.expect_workers;
            if all_told || t.elapsed() >= opts.linger {
                return Ok(());
            }
        }
    }
}

fn accept_loop(listener: TcpListener, tx: Sender<Event>, stop: Arc<AtomicBool>) {
    let mut handlers = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                log::debug!("worker connected from {peer}");
                let tx = tx.clone();
                let stop = stop.clone();
                handlers.push(thread::spawn(move || {
                    let mut worker_id = None;
                    if let Err(e) = connection(stream, &tx, &stop, &mut worker_id) {
                        log::debug!("connection from {peer} ended: {e}");
                    }
                    let _ = tx.send(Event::Closed { worker_id });
                }));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                log::warn!("accept failed: {e}");
                thread::sleep(Duration::from_millis(5));
            }
        }
    }
    for h in handlers {
        let _ = h.join();
    }
}

/// Reader that turns read timeouts into retries until `stop` is set.
struct Interruptible<'a> {
    stream: &'a TcpStream,
    stop: &'a AtomicBool,
}

impl io::Read for Interruptible<'_> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        loop {
            match (&mut &*self.stream).read(buf) {
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                    if self.stop.load(Ordering::SeqCst) {
                        return Err(io::Error::new(ErrorKind::Interrupted, "coordinator stopped"));
                    }
                }
                other => return other,
            }
        }
    }
}

fn connection(stream: TcpStream, tx: &Sender<Event>, stop: &AtomicBool, worker_id: &mut Option<String>) -> Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(Duration::from_millis(100)))?;
    let mut reader = BufReader::new(Interruptible { stream: &stream, stop });
    let mut writer = BufWriter::new(&stream);
    while let Some(msg) = read_message(&mut reader)? {
        if let Message::GetJob { worker_id: w } = &msg {
            *worker_id = Some(w.clone());
        }
        let (reply_tx, reply_rx) = mpsc::channel();
        if tx.send(Event::Request { msg, reply: reply_tx }).is_err() {
            break;
        }
        let Ok(reply) = reply_rx.recv() else { break };
        write_message(&mut writer, &reply)?;
    }
    Ok(())
}
