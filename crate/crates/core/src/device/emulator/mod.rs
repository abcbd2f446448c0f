//! A software device that runs compute shaders on the CPU.
//!
//! Submitted work executes asynchronously on a dedicated worker thread in
//! submission order, and readback completion is reported through callbacks,
//! so the host-side synchronization path is exercised exactly as it is with a
//! hardware adapter.

mod exec;
mod shader;
mod value;

use std::collections::{HashMap, VecDeque};
use std::panic::AssertUnwindSafe;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::backend::{Backend, BindingEntry, BufferKind, Command, Limits, MapCallback, PipelineId, RawBuffer};
use crate::error::{Error, Result};

pub(crate) const MAX_WORKGROUPS_PER_DIM: u32 = 65535;
/// Command lists that may wait in the queue before `submit` blocks.
const MAX_QUEUED_BATCHES: usize = 8;

enum Queued {
    Write {
        buffer: RawBuffer,
        offset: u64,
        data: Vec<u8>,
    },
    Commands(Vec<Command>),
    Map {
        buffer: RawBuffer,
        len: u64,
        done: MapCallback,
    },
    Destroy(RawBuffer),
}

struct Pipeline {
    program: shader::Program,
    layout: Vec<BindingEntry>,
}

#[derive(Default)]
struct State {
    buffers: HashMap<RawBuffer, Vec<u32>>,
    allocated: u64,
    pipelines: HashMap<PipelineId, Arc<Pipeline>>,
    queue: VecDeque<Queued>,
    busy: bool,
    /// Command lists waiting in `queue`.
    batches: usize,
    mapped: HashMap<RawBuffer, Vec<u8>>,
    shutdown: bool,
    lost_reason: Option<String>,
}

struct Shared {
    state: Mutex<State>,
    wake: Condvar,
    idle: Condvar,
    lost: AtomicBool,
    next_id: AtomicU64,
    budget: u64,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn check(&self) -> Result<()> {
        if self.lost.load(Ordering::Acquire) {
            let reason = self.lock().lost_reason.clone().unwrap_or_else(|| "device lost".into());
            return Err(Error::DeviceLost(reason));
        }
        Ok(())
    }

    fn mark_lost(&self, reason: String) {
        let mut st = self.lock();
        if st.lost_reason.is_none() {
            st.lost_reason = Some(reason);
        }
        self.lost.store(true, Ordering::Release);
        drop(st);
        self.wake.notify_all();
        self.idle.notify_all();
    }

    fn enqueue(&self, item: Queued) -> Result<()> {
        self.check()?;
        self.lock().queue.push_back(item);
        self.wake.notify_one();
        Ok(())
    }
}

pub(crate) struct EmulatedDevice {
    shared: Arc<Shared>,
    worker: Mutex<Option<JoinHandle<()>>>,
}

impl EmulatedDevice {
    /// A device whose buffers may hold at most `budget` bytes in total.
    pub fn new(budget: u64) -> Result<Self> {
        let shared = Arc::new(Shared {
            state: Mutex::new(State::default()),
            wake: Condvar::new(),
            idle: Condvar::new(),
            lost: AtomicBool::new(false),
            next_id: AtomicU64::new(1),
            budget,
        });
        let worker_shared = Arc::clone(&shared);
        let worker = std::thread::Builder::new()
            .name("emulated-device".into())
            .spawn(move || worker_loop(&worker_shared))
            .map_err(|e| Error::NoAdapter(format!("cannot start device thread: {e}")))?;
        Ok(EmulatedDevice {
            shared,
            worker: Mutex::new(Some(worker)),
        })
    }
}

impl Drop for EmulatedDevice {
    fn drop(&mut self) {
        self.shared.lock().shutdown = true;
        self.shared.wake.notify_all();
        if let Some(w) = self.worker.lock().unwrap_or_else(|e| e.into_inner()).take() {
            let _ = w.join();
        }
    }
}

fn worker_loop(sh: &Shared) {
    loop {
        let item = {
            let mut st = sh.lock();
            loop {
                if let Some(item) = st.queue.pop_front() {
                    st.busy = true;
                    if matches!(item, Queued::Commands(_)) {
                        st.batches -= 1;
                        sh.idle.notify_all();
                    }
                    break item;
                }
                st.busy = false;
                sh.idle.notify_all();
                if st.shutdown {
                    return;
                }
                st = sh.wake.wait(st).unwrap_or_else(|e| e.into_inner());
            }
        };
        if sh.lost.load(Ordering::Acquire) {
            if let Queued::Map { done, .. } = item {
                done(Err(Error::DeviceLost("device lost before readback completed".into())));
            }
            continue;
        }
        let outcome = std::panic::catch_unwind(AssertUnwindSafe(|| execute(sh, item)));
        match outcome {
            Ok(Ok(())) => {}
            Ok(Err(e)) => sh.mark_lost(e.to_string()),
            Err(panic) => {
                let msg = panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "shader execution panicked".into());
                sh.mark_lost(msg);
            }
        }
    }
}

fn execute(sh: &Shared, item: Queued) -> Result<()> {
    match item {
        Queued::Write { buffer, offset, data } => {
            let mut st = sh.lock();
            let buf = st
                .buffers
                .get_mut(&buffer)
                .ok_or_else(|| Error::DeviceLost(format!("write to unknown buffer {buffer}")))?;
            let bytes: &mut [u8] = bytemuck::cast_slice_mut(buf.as_mut_slice());
            let start = offset as usize;
            bytes
                .get_mut(start..start + data.len())
                .ok_or_else(|| Error::DeviceLost("write out of bounds".into()))?
                .copy_from_slice(&data);
        }
        Queued::Commands(cmds) => {
            for cmd in cmds {
                run_command(sh, cmd)?;
            }
        }
        Queued::Map { buffer, len, done } => {
            let result = {
                let mut st = sh.lock();
                match st.buffers.get(&buffer) {
                    Some(words) => {
                        let bytes: &[u8] = bytemuck::cast_slice(words);
                        match bytes.get(..len as usize) {
                            Some(b) => {
                                let copy = b.to_vec();
                                st.mapped.insert(buffer, copy);
                                Ok(())
                            }
                            None => Err(Error::DeviceLost("map range out of bounds".into())),
                        }
                    }
                    None => Err(Error::DeviceLost(format!("map of unknown buffer {buffer}"))),
                }
            };
            done(result);
        }
        Queued::Destroy(buffer) => {
            let mut st = sh.lock();
            if let Some(b) = st.buffers.remove(&buffer) {
                st.allocated -= (b.len() * 4) as u64;
            }
            st.mapped.remove(&buffer);
        }
    }
    Ok(())
}

fn run_command(sh: &Shared, cmd: Command) -> Result<()> {
    match cmd {
        Command::Copy {
            src,
            src_offset,
            dst,
            dst_offset,
            size,
        } => {
            let mut st = sh.lock();
            let (s, d, n) = (
                (src_offset / 4) as usize,
                (dst_offset / 4) as usize,
                (size / 4) as usize,
            );
            let data = st
                .buffers
                .get(&src)
                .and_then(|b| b.get(s..s + n))
                .ok_or_else(|| Error::DeviceLost("copy source out of bounds".into()))?
                .to_vec();
            st.buffers
                .get_mut(&dst)
                .and_then(|b| b.get_mut(d..d + n))
                .ok_or_else(|| Error::DeviceLost("copy destination out of bounds".into()))?
                .copy_from_slice(&data);
            Ok(())
        }
        Command::Dispatch {
            pipeline,
            buffers,
            uniform,
            workgroups,
        } => {
            // take the bound buffers out so the shader runs without the lock
            let (pipe, mut mem, ids) = {
                let mut st = sh.lock();
                let pipe = st
                    .pipelines
                    .get(&pipeline)
                    .cloned()
                    .ok_or_else(|| Error::DeviceLost(format!("unknown pipeline {pipeline}")))?;
                let mut ids: Vec<RawBuffer> = Vec::new();
                let mut mem = Vec::new();
                for id in &buffers {
                    if !ids.contains(id) {
                        let words = st
                            .buffers
                            .get_mut(id)
                            .map(std::mem::take)
                            .ok_or_else(|| Error::DeviceLost(format!("dispatch uses unknown buffer {id}")))?;
                        ids.push(*id);
                        mem.push(words);
                    }
                }
                (pipe, mem, ids)
            };
            let mut binding_mem = Vec::with_capacity(pipe.layout.len());
            let mut storage = buffers.iter();
            for entry in &pipe.layout {
                match entry {
                    BindingEntry::Uniform => {
                        let mut words = vec![0u32; uniform.len().div_ceil(4)];
                        bytemuck::cast_slice_mut::<u32, u8>(&mut words)[..uniform.len()].copy_from_slice(&uniform);
                        mem.push(words);
                        binding_mem.push(mem.len() - 1);
                    }
                    _ => {
                        let id = storage
                            .next()
                            .ok_or_else(|| Error::DeviceLost("missing buffer binding".into()))?;
                        binding_mem.push(ids.iter().position(|x| x == id).unwrap_or(0));
                    }
                }
            }
            let slot_map: Vec<usize> = pipe
                .program
                .bindings
                .iter()
                .map(|&(b, _)| binding_mem[b as usize])
                .collect();
            let result = std::panic::catch_unwind(AssertUnwindSafe(|| {
                exec::run(&pipe.program, &mut mem, &slot_map, workgroups)
            }));
            let mut st = sh.lock();
            for (id, words) in ids.into_iter().zip(mem) {
                if let Some(slot) = st.buffers.get_mut(&id) {
                    *slot = words;
                }
            }
            drop(st);
            match result {
                Ok(r) => r,
                Err(p) => std::panic::resume_unwind(p),
            }
        }
    }
}

impl Backend for EmulatedDevice {
    fn name(&self) -> String {
        "emulated (CPU shader interpreter)".into()
    }

    fn limits(&self) -> Limits {
        Limits {
            max_workgroups_per_dim: MAX_WORKGROUPS_PER_DIM,
            max_buffer_size: self.shared.budget,
        }
    }

    fn create_buffer(&self, bytes: u64, _kind: BufferKind) -> Result<RawBuffer> {
        self.shared.check()?;
        let bytes = bytes.div_ceil(4) * 4;
        let mut st = self.shared.lock();
        if st.allocated + bytes > self.shared.budget {
            return Err(Error::OutOfMemory { requested: bytes });
        }
        let mut words = Vec::new();
        words
            .try_reserve_exact((bytes / 4) as usize)
            .map_err(|_| Error::OutOfMemory { requested: bytes })?;
        words.resize((bytes / 4) as usize, 0);
        let id = self.shared.next_id.fetch_add(1, Ordering::Relaxed);
        st.allocated += bytes;
        st.buffers.insert(id, words);
        Ok(id)
    }

    fn destroy_buffer(&self, buffer: RawBuffer) {
        if self.shared.lost.load(Ordering::Acquire) {
            let mut st = self.shared.lock();
            if let Some(b) = st.buffers.remove(&buffer) {
                st.allocated -= (b.len() * 4) as u64;
            }
            return;
        }
        let _ = self.shared.enqueue(Queued::Destroy(buffer));
    }

    fn write_buffer(&self, buffer: RawBuffer, offset: u64, data: &[u8]) -> Result<()> {
        self.shared.enqueue(Queued::Write {
            buffer,
            offset,
            data: data.to_vec(),
        })
    }

    fn compile(&self, _label: &str, source: &str, layout: &[BindingEntry]) -> Result<PipelineId> {
        self.shared.check()?;
        let program = shader::compile(source)?;
        for &(b, read_only) in &program.bindings {
            match layout.get(b as usize) {
                None => {
                    return Err(Error::ShaderCompile(format!(
                        "shader binding {b} is not part of the pipeline layout"
                    )))
                }
                Some(BindingEntry::StorageRead) if !read_only => {
                    return Err(Error::ShaderCompile(format!(
                        "binding {b} is writable in the shader but read-only in the layout"
                    )))
                }
                _ => {}
            }
        }
        let id = self.shared.next_id.fetch_add(1, Ordering::Relaxed);
        self.shared.lock().pipelines.insert(
            id,
            Arc::new(Pipeline {
                program,
                layout: layout.to_vec(),
            }),
        );
        Ok(id)
    }

    fn submit(&self, commands: Vec<Command>) -> Result<()> {
        if commands.is_empty() {
            return self.shared.check();
        }
        // Keep the host from racing arbitrarily far ahead of execution;
        // deferred buffer destroys would otherwise pile up behind the queue.
        let mut st = self.shared.lock();
        while st.batches >= MAX_QUEUED_BATCHES && !self.shared.lost.load(Ordering::Acquire) {
            st = self.shared.idle.wait(st).unwrap_or_else(|e| e.into_inner());
        }
        st.batches += 1;
        drop(st);
        self.shared
            .enqueue(Queued::Commands(commands))
            .inspect_err(|_| self.shared.lock().batches -= 1)
    }

    fn map_read(&self, buffer: RawBuffer, len: u64, done: MapCallback) -> Result<()> {
        self.shared.enqueue(Queued::Map { buffer, len, done })
    }

    fn poll(&self, wait: bool) -> Result<()> {
        self.shared.check()?;
        if wait {
            let st = self.shared.lock();
            if st.busy || !st.queue.is_empty() {
                let _ = self
                    .shared
                    .idle
                    .wait_timeout(st, Duration::from_millis(10))
                    .unwrap_or_else(|e| e.into_inner());
            }
        }
        self.shared.check()
    }

    fn wait_idle(&self, timeout: Duration) -> Result<()> {
        let deadline = Instant::now() + timeout;
        let mut st = self.shared.lock();
        while (st.busy || !st.queue.is_empty()) && !self.shared.lost.load(Ordering::Acquire) {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                break;
            }
            st = self
                .shared
                .idle
                .wait_timeout(st, left)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
        drop(st);
        self.shared.check()
    }

    fn read_mapped(&self, buffer: RawBuffer, len: u64) -> Result<Vec<u8>> {
        self.shared.check()?;
        let mut data = self
            .shared
            .lock()
            .mapped
            .remove(&buffer)
            .ok_or_else(|| Error::DeviceLost(format!("buffer {buffer} is not mapped")))?;
        data.truncate(len as usize);
        Ok(data)
    }

    fn lose(&self) {
        self.shared.mark_lost("device lost".into());
    }
}
