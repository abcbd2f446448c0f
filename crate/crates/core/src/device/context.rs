use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard, Weak};
use std::time::{Duration, Instant};

use serde::Serialize;

use super::backend::{Backend, BindingEntry, BufferKind, Command, RawBuffer};
use super::emulator::EmulatedDevice;
use super::pool::{size_class, Pool, PoolStats};
use crate::array::{broadcast_shapes_all, ArrayDescriptor, DType, HostArray, Shape};
use crate::error::{Error, Result};
use crate::kernel::{
    generate_source_with, CodegenOptions, CompiledKernel, Constants, KernelKey, KernelSpec, LaunchMeta,
};

const MIB: u64 = 1 << 20;

/// Recorded commands are flushed automatically past this count.
const AUTO_SUBMIT: usize = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendChoice {
    /// A hardware adapter if one exists, otherwise the emulated device.
    #[default]
    Auto,
    /// Hardware only; fails with `NoAdapter` when none is present.
    Gpu,
    /// The CPU shader interpreter.
    Emulated,
}

impl std::str::FromStr for BackendChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "auto" => Ok(BackendChoice::Auto),
            "gpu" => Ok(BackendChoice::Gpu),
            "emulated" | "emu" => Ok(BackendChoice::Emulated),
            other => Err(Error::InvalidConfig(format!("unknown backend `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DeviceConfig {
    pub backend: BackendChoice,
    /// Maximum bytes kept by idle pooled buffers; 0 disables pooling.
    pub pool_cap: u64,
    /// Largest single allocation.
    pub max_alloc: u64,
    pub workgroup_size: u32,
    /// Total buffer memory of the emulated device.
    pub emulated_memory: u64,
    /// How long a readback may wait before the device is declared lost.
    pub readback_timeout: Duration,
    /// Directory receiving one `.wgsl` file per compiled kernel.
    pub dump_shaders: Option<PathBuf>,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        DeviceConfig {
            backend: BackendChoice::Auto,
            pool_cap: 256 * MIB,
            max_alloc: 256 * MIB,
            workgroup_size: crate::kernel::DEFAULT_WORKGROUP_SIZE,
            emulated_memory: 2048 * MIB,
            readback_timeout: Duration::from_secs(120),
            dump_shaders: None,
        }
    }
}

impl DeviceConfig {
    /// Defaults overridden by `GPUARRAY_BACKEND`, `GPUARRAY_POOL_DISABLE` and
    /// `GPUARRAY_DUMP_SHADERS`.
    pub fn from_env() -> Result<Self> {
        Self::default().with_env()
    }

    pub fn with_env(mut self) -> Result<Self> {
        if let Ok(b) = std::env::var("GPUARRAY_BACKEND") {
            if !b.is_empty() {
                self.backend = b.parse()?;
            }
        }
        if std::env::var("GPUARRAY_POOL_DISABLE").is_ok_and(|v| !v.is_empty() && v != "0") {
            self.pool_cap = 0;
        }
        if let Some(dir) = std::env::var_os("GPUARRAY_DUMP_SHADERS") {
            if !dir.is_empty() {
                self.dump_shaders = Some(dir.into());
            }
        }
        Ok(self)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub allocations: u64,
    pub pool_hits: u64,
    pub compilations: u64,
    pub submissions: u64,
}

#[derive(Default)]
struct AtomicCounters {
    allocations: AtomicU64,
    pool_hits: AtomicU64,
    compilations: AtomicU64,
    submissions: AtomicU64,
}

struct Recorded {
    command: Command,
    /// Keeps buffers from being recycled before the command is submitted.
    keep: Vec<BufferHandle>,
}

struct Shared {
    backend: Box<dyn Backend>,
    config: DeviceConfig,
    pool: Mutex<Pool>,
    cache: Mutex<HashMap<KernelKey, Arc<CompiledKernel>>>,
    counters: AtomicCounters,
    recording: Mutex<Vec<Recorded>>,
    scalars: Mutex<HashMap<(DType, u32), BufferHandle>>,
    next_handle: AtomicU64,
    emulated: bool,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl Shared {
    fn release(&self, raw: RawBuffer, capacity: u64, kind: BufferKind) {
        let rejected = lock(&self.pool).put(kind, capacity, raw);
        if let Some(raw) = rejected {
            self.backend.destroy_buffer(raw);
        }
    }
}

impl Drop for Shared {
    fn drop(&mut self) {
        let idle = lock(&self.pool).drain();
        for raw in idle {
            self.backend.destroy_buffer(raw);
        }
    }
}

struct BufferInner {
    id: u64,
    raw: RawBuffer,
    capacity: u64,
    kind: BufferKind,
    live: AtomicBool,
    home: Weak<Shared>,
}

impl Drop for BufferInner {
    fn drop(&mut self) {
        if self.live.swap(false, Ordering::AcqRel) {
            if let Some(sh) = self.home.upgrade() {
                sh.release(self.raw, self.capacity, self.kind);
            }
        }
    }
}

/// A device allocation. Clones share the allocation; it returns to the pool
/// when the last clone is dropped or when [`DeviceContext::free`] is called.
#[derive(Clone)]
pub struct BufferHandle(Arc<BufferInner>);

impl std::fmt::Debug for BufferHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BufferHandle")
            .field("id", &self.0.id)
            .field("capacity", &self.0.capacity)
            .field("live", &self.is_live())
            .finish()
    }
}

impl PartialEq for BufferHandle {
    fn eq(&self, other: &Self) -> bool {
        self.0.id == other.0.id
    }
}

impl BufferHandle {
    pub fn id(&self) -> u64 {
        self.0.id
    }

    /// Usable size in bytes, always a multiple of 4.
    pub fn capacity(&self) -> u64 {
        self.0.capacity
    }

    pub fn is_live(&self) -> bool {
        self.0.live.load(Ordering::Acquire)
    }

    pub(crate) fn raw(&self) -> RawBuffer {
        self.0.raw
    }

    fn check_live(&self) -> Result<()> {
        if self.is_live() {
            Ok(())
        } else {
            Err(Error::UseAfterFree(self.0.id))
        }
    }
}

/// Device, queue, buffer pool and kernel cache.
///
/// Cheap to clone; clones share one device. Allocation and cache lookups are
/// internally synchronized, but recording and readback are meant to be driven
/// from one thread at a time.
#[derive(Clone)]
pub struct DeviceContext {
    shared: Arc<Shared>,
}

impl std::fmt::Debug for DeviceContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DeviceContext")
            .field("backend", &self.backend_name())
            .field("config", &self.shared.config)
            .finish()
    }
}

/// Opens a device according to `config`.
pub fn create_context(config: DeviceConfig) -> Result<DeviceContext> {
    DeviceContext::new(config)
}

impl DeviceContext {
    pub fn new(config: DeviceConfig) -> Result<Self> {
        if config.workgroup_size == 0 || config.workgroup_size > 256 {
            return Err(Error::InvalidConfig(format!(
                "workgroup size {} is outside 1..=256",
                config.workgroup_size
            )));
        }
        if config.max_alloc < 4 {
            return Err(Error::InvalidConfig(
                "per-allocation cap must be at least 4 bytes".into(),
            ));
        }
        let (backend, emulated): (Box<dyn Backend>, bool) = match config.backend {
            BackendChoice::Emulated => (Box::new(EmulatedDevice::new(config.emulated_memory)?), true),
            BackendChoice::Gpu => (Self::hardware()?, false),
            BackendChoice::Auto => match Self::hardware() {
                Ok(b) => (b, false),
                Err(e) => {
                    log::info!("{e}; falling back to the emulated device");
                    (Box::new(EmulatedDevice::new(config.emulated_memory)?), true)
                }
            },
        };
        Ok(DeviceContext {
            shared: Arc::new(Shared {
                backend,
                pool: Mutex::new(Pool::new(config.pool_cap)),
                config,
                cache: Mutex::new(HashMap::new()),
                counters: AtomicCounters::default(),
                recording: Mutex::new(Vec::new()),
                scalars: Mutex::new(HashMap::new()),
                next_handle: AtomicU64::new(1),
                emulated,
            }),
        })
    }

    #[cfg(feature = "wgpu")]
    fn hardware() -> Result<Box<dyn Backend>> {
        Ok(Box::new(super::hardware::WgpuDevice::new()?))
    }

    #[cfg(not(feature = "wgpu"))]
    fn hardware() -> Result<Box<dyn Backend>> {
        Err(Error::NoAdapter("built without hardware backend support".into()))
    }

    pub fn config(&self) -> &DeviceConfig {
        &self.shared.config
    }

    pub fn backend_name(&self) -> String {
        self.shared.backend.name()
    }

    /// True when running on the CPU shader interpreter.
    pub fn is_emulated(&self) -> bool {
        self.shared.emulated
    }

    pub fn max_workgroups_per_dim(&self) -> u32 {
        self.shared.backend.limits().max_workgroups_per_dim
    }

    pub fn counters(&self) -> Counters {
        let c = &self.shared.counters;
        Counters {
            allocations: c.allocations.load(Ordering::Relaxed),
            pool_hits: c.pool_hits.load(Ordering::Relaxed),
            compilations: c.compilations.load(Ordering::Relaxed),
            submissions: c.submissions.load(Ordering::Relaxed),
        }
    }

    pub fn pool_stats(&self) -> PoolStats {
        lock(&self.shared.pool).stats()
    }

    pub fn same_device(&self, other: &DeviceContext) -> bool {
        Arc::ptr_eq(&self.shared, &other.shared)
    }

    /// Allocates at least `bytes` bytes of storage.
    pub fn alloc(&self, bytes: u64) -> Result<BufferHandle> {
        self.alloc_kind(bytes, BufferKind::Storage)
    }

    fn alloc_kind(&self, bytes: u64, kind: BufferKind) -> Result<BufferHandle> {
        if bytes == 0 {
            return Err(Error::ZeroSizedAllocation);
        }
        let cap = self.shared.config.max_alloc;
        if bytes > cap {
            return Err(Error::AllocTooLarge { requested: bytes, cap });
        }
        let limit = self.shared.backend.limits().max_buffer_size;
        if bytes > limit {
            return Err(Error::AllocTooLarge {
                requested: bytes,
                cap: limit,
            });
        }
        let mut capacity = size_class(bytes);
        if capacity > cap.min(limit) {
            capacity = bytes.div_ceil(4) * 4;
        }
        let pooled = lock(&self.shared.pool).take(kind, capacity);
        let raw = match pooled {
            Some(raw) => {
                self.shared.counters.pool_hits.fetch_add(1, Ordering::Relaxed);
                raw
            }
            None => match self.shared.backend.create_buffer(capacity, kind) {
                Err(Error::OutOfMemory { .. }) => {
                    // give idle pooled memory back and retry once
                    let idle = lock(&self.shared.pool).drain();
                    for raw in idle {
                        self.shared.backend.destroy_buffer(raw);
                    }
                    self.flush_and_wait()?;
                    self.shared.backend.create_buffer(capacity, kind)?
                }
                other => other?,
            },
        };
        self.shared.counters.allocations.fetch_add(1, Ordering::Relaxed);
        Ok(BufferHandle(Arc::new(BufferInner {
            id: self.shared.next_handle.fetch_add(1, Ordering::Relaxed),
            raw,
            capacity,
            kind,
            live: AtomicBool::new(true),
            home: Arc::downgrade(&self.shared),
        })))
    }

    /// Returns a buffer to the pool (or destroys it when the pool is full).
    /// Every clone of the handle becomes unusable.
    pub fn free(&self, handle: &BufferHandle) -> Result<()> {
        if !handle.0.live.swap(false, Ordering::AcqRel) {
            return Err(Error::DoubleFree(handle.id()));
        }
        self.shared.release(handle.0.raw, handle.0.capacity, handle.0.kind);
        Ok(())
    }

    fn flush_and_wait(&self) -> Result<()> {
        self.submit()?;
        self.shared.backend.wait_idle(self.shared.config.readback_timeout)
    }

    /// Copies a host array to the device. Non-contiguous views are packed.
    pub fn upload(&self, host: &HostArray) -> Result<DeviceArray> {
        let words = host.words();
        let buffer = self.alloc(((words.len().max(1)) * 4) as u64)?;
        if !words.is_empty() {
            // queued writes land before the next submission, so earlier
            // recorded work must go first
            self.submit()?;
            self.shared
                .backend
                .write_buffer(buffer.raw(), 0, bytemuck::cast_slice(&words))?;
        }
        Ok(DeviceArray {
            desc: ArrayDescriptor::contiguous(host.dtype(), host.shape().clone()),
            buffer,
            ctx: self.clone(),
        })
    }

    /// An array with unspecified contents.
    pub fn empty(&self, dtype: DType, dims: &[usize]) -> Result<DeviceArray> {
        let shape = Shape::new(dims.to_vec())?;
        let buffer = self.alloc((shape.element_count().max(1) * 4) as u64)?;
        Ok(DeviceArray {
            desc: ArrayDescriptor::contiguous(dtype, shape),
            buffer,
            ctx: self.clone(),
        })
    }

    pub fn full(&self, dtype: DType, dims: &[usize], value: f64) -> Result<DeviceArray> {
        self.upload(&HostArray::full(dtype, dims, value)?)
    }

    pub fn zeros(&self, dtype: DType, dims: &[usize]) -> Result<DeviceArray> {
        self.full(dtype, dims, 0.0)
    }

    /// A rank-0 array holding `value`, shared per (dtype, bit pattern).
    pub fn scalar(&self, dtype: DType, value: f64) -> Result<DeviceArray> {
        let bits = dtype.encode_f64(value);
        let cached = lock(&self.shared.scalars).get(&(dtype, bits)).cloned();
        let buffer = match cached {
            Some(b) if b.is_live() => b,
            _ => {
                let arr = self.upload(&HostArray::scalar(dtype, value))?;
                lock(&self.shared.scalars).insert((dtype, bits), arr.buffer.clone());
                arr.buffer
            }
        };
        Ok(DeviceArray {
            desc: ArrayDescriptor::contiguous(dtype, Shape::scalar()),
            buffer,
            ctx: self.clone(),
        })
    }

    fn record(&self, command: Command, keep: Vec<BufferHandle>) -> Result<()> {
        let full = {
            let mut rec = lock(&self.shared.recording);
            rec.push(Recorded { command, keep });
            rec.len() >= AUTO_SUBMIT
        };
        if full {
            self.submit()?;
        }
        Ok(())
    }

    /// Hands all recorded work to the device queue without waiting for it.
    pub fn submit(&self) -> Result<()> {
        let recorded = std::mem::take(&mut *lock(&self.shared.recording));
        if recorded.is_empty() {
            return self.shared.backend.submit(Vec::new());
        }
        for r in &recorded {
            for b in &r.keep {
                b.check_live()?;
            }
        }
        let (commands, keep): (Vec<_>, Vec<_>) = recorded.into_iter().map(|r| (r.command, r.keep)).unzip();
        self.shared.backend.submit(commands)?;
        self.shared.counters.submissions.fetch_add(1, Ordering::Relaxed);
        drop(keep);
        Ok(())
    }

    /// Number of commands recorded but not yet submitted.
    pub fn pending_commands(&self) -> usize {
        lock(&self.shared.recording).len()
    }

    /// Marks the device as lost; later operations fail with `DeviceLost`.
    pub fn lose_device(&self) {
        self.shared.backend.lose();
    }

    /// Copies an array back to the host, blocking until every previously
    /// recorded operation has finished.
    ///
    /// The device reports map completion asynchronously. This call submits
    /// pending work, requests the mapping and then alternates between driving
    /// the device and sleeping on the completion signal until the data has
    /// landed or the configured timeout elapses.
    pub fn readback_blocking(&self, arr: &DeviceArray) -> Result<HostArray> {
        self.check_context(arr)?;
        arr.buffer.check_live()?;
        let n = arr.len();
        if n == 0 {
            self.submit()?;
            return HostArray::from_words(
                ArrayDescriptor::contiguous(arr.dtype(), arr.shape().clone()),
                Vec::new(),
            );
        }
        let packed;
        let source = if arr.desc.is_c_contiguous() {
            arr
        } else {
            packed = crate::ops::copy(arr)?;
            &packed
        };
        let bytes = (n * 4) as u64;
        let staging = self.alloc_kind(bytes, BufferKind::Staging)?;
        self.record(
            Command::Copy {
                src: source.buffer.raw(),
                src_offset: (source.desc.offset * 4) as u64,
                dst: staging.raw(),
                dst_offset: 0,
                size: bytes,
            },
            vec![source.buffer.clone(), staging.clone()],
        )?;
        self.submit()?;

        let signal = Arc::new((Mutex::new(None::<Result<()>>), Condvar::new()));
        let notify = Arc::clone(&signal);
        self.shared.backend.map_read(
            staging.raw(),
            bytes,
            Box::new(move |r| {
                *lock(&notify.0) = Some(r);
                notify.1.notify_all();
            }),
        )?;
        let deadline = Instant::now() + self.shared.config.readback_timeout;
        loop {
            if let Some(r) = lock(&signal.0).take() {
                r?;
                break;
            }
            self.shared.backend.poll(true)?;
            let guard = lock(&signal.0);
            if guard.is_none() {
                let _ = signal.1.wait_timeout(guard, Duration::from_millis(1));
            }
            if Instant::now() > deadline {
                // a mapping may still be pending on this buffer; never reuse it
                staging.0.live.store(false, Ordering::Release);
                self.shared.backend.destroy_buffer(staging.raw());
                self.shared.backend.lose();
                return Err(Error::DeviceLost(format!(
                    "readback did not complete within {:?}",
                    self.shared.config.readback_timeout
                )));
            }
        }
        let data = self.shared.backend.read_mapped(staging.raw(), bytes)?;
        let words: Vec<u32> = data
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        HostArray::from_words(ArrayDescriptor::contiguous(arr.dtype(), arr.shape().clone()), words)
    }

    fn check_context(&self, arr: &DeviceArray) -> Result<()> {
        if self.same_device(&arr.ctx) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(
                "array belongs to a different device context".into(),
            ))
        }
    }

    fn dump(&self, name: &str, hash: u64, source: &str) {
        if let Some(dir) = &self.shared.config.dump_shaders {
            let path = dir.join(format!("{name}_{hash:016x}.wgsl"));
            if let Err(e) = std::fs::create_dir_all(dir).and_then(|_| std::fs::write(&path, source)) {
                log::warn!("cannot dump shader to {}: {e}", path.display());
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn compile_keyed(
        &self,
        key: KernelKey,
        name: &str,
        rank: Option<usize>,
        spec: Option<&KernelSpec>,
        source: impl FnOnce() -> Result<String>,
        layout: Vec<BindingEntry>,
        workgroup_size: [u32; 3],
    ) -> Result<Arc<CompiledKernel>> {
        if let Some(k) = lock(&self.shared.cache).get(&key) {
            return Ok(Arc::clone(k));
        }
        let source = source()?;
        let key_hash = key.digest();
        self.dump(name, key_hash, &source);
        let pipeline = self.shared.backend.compile(name, &source, &layout)?;
        self.shared.counters.compilations.fetch_add(1, Ordering::Relaxed);
        let kernel = Arc::new(CompiledKernel {
            name: name.to_string(),
            key_hash,
            rank,
            workgroup_size,
            source: source.into(),
            spec: spec.cloned(),
            pipeline,
            layout,
        });
        Ok(Arc::clone(lock(&self.shared.cache).entry(key).or_insert(kernel)))
    }

    /// Returns the cached pipeline for an elementwise kernel, compiling it on
    /// first use.
    pub fn compile_or_get(&self, spec: &KernelSpec, rank: usize, constants: &Constants) -> Result<Arc<CompiledKernel>> {
        let ws = self.shared.config.workgroup_size;
        let key = KernelKey::elementwise(spec, rank, constants, ws);
        let mut layout = Vec::with_capacity(spec.arity() + 1);
        layout.extend(spec.in_params.iter().map(|_| BindingEntry::StorageRead));
        layout.extend(spec.out_params.iter().map(|_| BindingEntry::StorageReadWrite));
        layout.push(BindingEntry::Uniform);
        let opts = CodegenOptions {
            workgroup_size: ws,
            constants: constants.clone(),
        };
        self.compile_keyed(
            key,
            &spec.name,
            Some(rank),
            Some(spec),
            || generate_source_with(spec, rank, &opts),
            layout,
            [ws, 1, 1],
        )
    }

    /// Compiles hand-written shader source. Storage bindings come first in
    /// `layout` order; a trailing `Uniform` entry receives the dispatch's
    /// uniform bytes.
    pub(crate) fn compile_source(
        &self,
        label: &str,
        source: String,
        layout: Vec<BindingEntry>,
        workgroup_size: [u32; 3],
    ) -> Result<Arc<CompiledKernel>> {
        let key = KernelKey::Source {
            label: label.to_string(),
            source: source.clone(),
        };
        self.compile_keyed(key, label, None, None, || Ok(source), layout, workgroup_size)
    }

    /// Records one dispatch of a hand-written kernel.
    pub(crate) fn dispatch(
        &self,
        kernel: &CompiledKernel,
        buffers: &[&BufferHandle],
        uniform: Vec<u8>,
        workgroups: [u32; 3],
    ) -> Result<()> {
        let storage = kernel.layout.iter().filter(|e| **e != BindingEntry::Uniform).count();
        if buffers.len() != storage {
            return Err(Error::ArityMismatch {
                expected: storage,
                found: buffers.len(),
            });
        }
        for b in buffers {
            b.check_live()?;
        }
        let limit = self.max_workgroups_per_dim();
        if workgroups.iter().any(|&w| w > limit) {
            return Err(Error::InvalidConfig(format!(
                "dispatch {workgroups:?} exceeds {limit} workgroups per dimension"
            )));
        }
        if workgroups.contains(&0) {
            return Ok(());
        }
        self.record(
            Command::Dispatch {
                pipeline: kernel.pipeline,
                buffers: buffers.iter().map(|b| b.raw()).collect(),
                uniform,
                workgroups,
            },
            buffers.iter().map(|&b| b.clone()).collect(),
        )
    }

    /// Records a launch of an elementwise kernel over `outputs`' shape,
    /// broadcasting `inputs` against it.
    pub fn launch(&self, kernel: &CompiledKernel, inputs: &[&DeviceArray], outputs: &[&DeviceArray]) -> Result<()> {
        let spec = kernel
            .spec
            .as_ref()
            .ok_or_else(|| Error::InvalidKernel(format!("`{}` is not an elementwise kernel", kernel.name)))?;
        if inputs.len() != spec.in_params.len() || outputs.len() != spec.out_params.len() {
            return Err(Error::ArityMismatch {
                expected: spec.arity(),
                found: inputs.len() + outputs.len(),
            });
        }
        let out = outputs
            .first()
            .ok_or_else(|| Error::InvalidKernel("kernel has no outputs".into()))?;
        let shape = out.shape().clone();
        for (arr, p) in inputs
            .iter()
            .zip(&spec.in_params)
            .chain(outputs.iter().zip(&spec.out_params))
        {
            self.check_context(arr)?;
            if arr.dtype() != p.dtype {
                return Err(Error::DTypeMismatch {
                    expected: p.dtype,
                    found: arr.dtype(),
                });
            }
        }
        if Some(shape.rank()) != kernel.rank {
            return Err(Error::ShapeMismatch(format!(
                "kernel `{}` was generated for rank {:?}, output has rank {}",
                kernel.name,
                kernel.rank,
                shape.rank()
            )));
        }
        let meta = LaunchMeta::new(
            &shape,
            &inputs.iter().map(|a| &a.desc).collect::<Vec<_>>(),
            &outputs.iter().map(|a| &a.desc).collect::<Vec<_>>(),
        )
        .map_err(|e| match e {
            Error::IncompatibleShapes(a, b) => {
                Error::ShapeMismatch(format!("input shape {a:?} does not broadcast to output shape {b:?}"))
            }
            e => e,
        })?;
        self.launch_with_meta(kernel, inputs, outputs, &meta)
    }

    /// Records a launch with explicitly built metadata.
    pub fn launch_with_meta(
        &self,
        kernel: &CompiledKernel,
        inputs: &[&DeviceArray],
        outputs: &[&DeviceArray],
        meta: &LaunchMeta,
    ) -> Result<()> {
        if meta.arrays.len() != inputs.len() + outputs.len() {
            return Err(Error::ArityMismatch {
                expected: meta.arrays.len(),
                found: inputs.len() + outputs.len(),
            });
        }
        for o in outputs {
            let aliased = inputs
                .iter()
                .chain(outputs.iter())
                .filter(|a| a.buffer == o.buffer)
                .count()
                > 1;
            if aliased {
                return Err(Error::InvalidKernel(
                    "an output buffer is also bound as another parameter".into(),
                ));
            }
        }
        for a in inputs.iter().chain(outputs) {
            a.buffer.check_live()?;
        }
        if meta.total_size == 0 {
            return Ok(());
        }
        let per_group = kernel.invocations();
        let groups = meta
            .total_size
            .div_ceil(per_group)
            .clamp(1, self.max_workgroups_per_dim());
        let buffers: Vec<&BufferHandle> = inputs.iter().chain(outputs).map(|a| &a.buffer).collect();
        self.dispatch(kernel, &buffers, meta.to_bytes(), [groups, 1, 1])
    }

    /// Compiles (or reuses) `spec`, allocates outputs with the broadcast
    /// shape of `inputs` and launches it.
    pub fn elementwise(
        &self,
        spec: &KernelSpec,
        constants: &Constants,
        inputs: &[&DeviceArray],
    ) -> Result<Vec<DeviceArray>> {
        let shape = broadcast_shapes_all(inputs.iter().map(|a| a.shape()))?;
        let kernel = self.compile_or_get(spec, shape.rank(), constants)?;
        let outputs = spec
            .out_params
            .iter()
            .map(|p| self.empty(p.dtype, shape.dims()))
            .collect::<Result<Vec<_>>>()?;
        self.launch(&kernel, inputs, &outputs.iter().collect::<Vec<_>>())?;
        Ok(outputs)
    }
}

/// An array resident on a device: a descriptor over a buffer.
#[derive(Clone)]
pub struct DeviceArray {
    desc: ArrayDescriptor,
    buffer: BufferHandle,
    ctx: DeviceContext,
}

impl std::fmt::Debug for DeviceArray {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DeviceArray")
            .field("desc", &self.desc)
            .field("buffer", &self.buffer)
            .finish()
    }
}

impl DeviceArray {
    /// Re-views the same buffer. The descriptor must stay inside it.
    pub fn view(&self, desc: ArrayDescriptor) -> Result<DeviceArray> {
        let needed = desc.required_span() as u64 * 4;
        if needed > self.buffer.capacity() {
            return Err(Error::StorageTooSmall {
                needed: desc.required_span(),
                available: (self.buffer.capacity() / 4) as usize,
            });
        }
        Ok(DeviceArray {
            desc,
            buffer: self.buffer.clone(),
            ctx: self.ctx.clone(),
        })
    }

    pub fn descriptor(&self) -> &ArrayDescriptor {
        &self.desc
    }

    pub fn dtype(&self) -> DType {
        self.desc.dtype
    }

    pub fn shape(&self) -> &Shape {
        &self.desc.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.desc.shape.dims()
    }

    pub fn rank(&self) -> usize {
        self.desc.rank()
    }

    pub fn len(&self) -> usize {
        self.desc.element_count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn buffer(&self) -> &BufferHandle {
        &self.buffer
    }

    pub fn context(&self) -> &DeviceContext {
        &self.ctx
    }

    pub fn reshape(&self, dims: &[usize]) -> Result<DeviceArray> {
        self.view(crate::array::reshape(&self.desc, &Shape::new(dims.to_vec())?)?)
    }

    pub fn transpose(&self, axes: &[usize]) -> Result<DeviceArray> {
        self.view(crate::array::transpose(&self.desc, axes)?)
    }

    pub fn broadcast_to(&self, dims: &[usize]) -> Result<DeviceArray> {
        self.view(crate::array::broadcast_descriptor(
            &self.desc,
            &Shape::new(dims.to_vec())?,
        )?)
    }

    /// Blocking copy to the host.
    pub fn to_host(&self) -> Result<HostArray> {
        self.ctx.readback_blocking(self)
    }
}
