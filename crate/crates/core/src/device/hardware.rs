//! Hardware adapters through wgpu.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use wgpu::util::DeviceExt;

use super::backend::{Backend, BindingEntry, BufferKind, Command, Limits, MapCallback, PipelineId, RawBuffer};
use crate::error::{Error, Result};

struct Pipeline {
    pipeline: wgpu::ComputePipeline,
    layout: Arc<wgpu::BindGroupLayout>,
    entries: Vec<BindingEntry>,
}

#[derive(Default)]
struct Tables {
    buffers: HashMap<RawBuffer, wgpu::Buffer>,
    pipelines: HashMap<PipelineId, Arc<Pipeline>>,
}

pub(crate) struct WgpuDevice {
    device: wgpu::Device,
    queue: wgpu::Queue,
    info: wgpu::AdapterInfo,
    limits: wgpu::Limits,
    tables: Mutex<Tables>,
    next_id: AtomicU64,
    lost: Arc<AtomicBool>,
}

impl WgpuDevice {
    /// Opens the default compute-capable adapter.
    pub fn new() -> Result<Self> {
        let instance = wgpu::Instance::new(wgpu::InstanceDescriptor::new_without_display_handle_from_env());
        let adapter = pollster::block_on(instance.request_adapter(&wgpu::RequestAdapterOptions {
            power_preference: wgpu::PowerPreference::HighPerformance,
            force_fallback_adapter: false,
            compatible_surface: None,
            ..Default::default()
        }))
        .map_err(|e| Error::NoAdapter(e.to_string()))?;
        let info = adapter.get_info();
        if info.device_type == wgpu::DeviceType::Cpu {
            log::info!("using software adapter {}", info.name);
        }
        let limits = adapter.limits();
        let (device, queue) = pollster::block_on(adapter.request_device(&wgpu::DeviceDescriptor {
            label: Some("gpuarray"),
            required_limits: limits.clone(),
            ..Default::default()
        }))
        .map_err(|e| Error::NoAdapter(e.to_string()))?;
        let lost = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&lost);
        device.set_device_lost_callback(move |_reason, msg| {
            log::error!("device lost: {msg}");
            flag.store(true, Ordering::Release);
        });
        Ok(WgpuDevice {
            device,
            queue,
            info,
            limits,
            tables: Mutex::new(Tables::default()),
            next_id: AtomicU64::new(1),
            lost,
        })
    }

    fn tables(&self) -> MutexGuard<'_, Tables> {
        self.tables.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn check(&self) -> Result<()> {
        if self.lost.load(Ordering::Acquire) {
            return Err(Error::DeviceLost(format!("{} stopped responding", self.info.name)));
        }
        Ok(())
    }

    fn buffer(&self, id: RawBuffer) -> Result<wgpu::Buffer> {
        self.tables()
            .buffers
            .get(&id)
            .cloned()
            .ok_or_else(|| Error::DeviceLost(format!("unknown buffer {id}")))
    }
}

impl Backend for WgpuDevice {
    fn name(&self) -> String {
        format!(
            "{} ({:?}, {:?})",
            self.info.name, self.info.backend, self.info.device_type
        )
    }

    fn limits(&self) -> Limits {
        Limits {
            max_workgroups_per_dim: self.limits.max_compute_workgroups_per_dimension,
            max_buffer_size: self
                .limits
                .max_buffer_size
                .min(self.limits.max_storage_buffer_binding_size),
        }
    }

    fn create_buffer(&self, bytes: u64, kind: BufferKind) -> Result<RawBuffer> {
        self.check()?;
        let usage = match kind {
            BufferKind::Storage => {
                wgpu::BufferUsages::STORAGE | wgpu::BufferUsages::COPY_SRC | wgpu::BufferUsages::COPY_DST
            }
            BufferKind::Staging => wgpu::BufferUsages::MAP_READ | wgpu::BufferUsages::COPY_DST,
        };
        let scope = self.device.push_error_scope(wgpu::ErrorFilter::OutOfMemory);
        let buffer = self.device.create_buffer(&wgpu::BufferDescriptor {
            label: None,
            size: bytes,
            usage,
            mapped_at_creation: false,
        });
        if pollster::block_on(scope.pop()).is_some() {
            return Err(Error::OutOfMemory { requested: bytes });
        }
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        self.tables().buffers.insert(id, buffer);
        Ok(id)
    }

    fn destroy_buffer(&self, buffer: RawBuffer) {
        // wgpu keeps the allocation alive until in-flight work releases it
        self.tables().buffers.remove(&buffer);
    }

    fn write_buffer(&self, buffer: RawBuffer, offset: u64, data: &[u8]) -> Result<()> {
        self.check()?;
        let b = self.buffer(buffer)?;
        self.queue.write_buffer(&b, offset, data);
        Ok(())
    }

    fn compile(&self, label: &str, source: &str, layout: &[BindingEntry]) -> Result<PipelineId> {
        self.check()?;
        let scope = self.device.push_error_scope(wgpu::ErrorFilter::Validation);
        let module = self.device.create_shader_module(wgpu::ShaderModuleDescriptor {
            label: Some(label),
            source: wgpu::ShaderSource::Wgsl(source.into()),
        });
        let entries: Vec<wgpu::BindGroupLayoutEntry> = layout
            .iter()
            .enumerate()
            .map(|(i, e)| wgpu::BindGroupLayoutEntry {
                binding: i as u32,
                visibility: wgpu::ShaderStages::COMPUTE,
                ty: wgpu::BindingType::Buffer {
                    ty: match e {
                        BindingEntry::StorageRead => wgpu::BufferBindingType::Storage { read_only: true },
                        BindingEntry::StorageReadWrite => wgpu::BufferBindingType::Storage { read_only: false },
                        BindingEntry::Uniform => wgpu::BufferBindingType::Uniform,
                    },
                    has_dynamic_offset: false,
                    min_binding_size: None,
                },
                count: None,
            })
            .collect();
        let bgl = self.device.create_bind_group_layout(&wgpu::BindGroupLayoutDescriptor {
            label: Some(label),
            entries: &entries,
        });
        let pl = self.device.create_pipeline_layout(&wgpu::PipelineLayoutDescriptor {
            label: Some(label),
            bind_group_layouts: &[Some(&bgl)],
            ..Default::default()
        });
        let pipeline = self.device.create_compute_pipeline(&wgpu::ComputePipelineDescriptor {
            label: Some(label),
            layout: Some(&pl),
            module: &module,
            entry_point: Some("main"),
            compilation_options: Default::default(),
            cache: None,
        });
        if let Some(err) = pollster::block_on(scope.pop()) {
            return Err(Error::ShaderCompile(err.to_string()));
        }
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        self.tables().pipelines.insert(
            id,
            Arc::new(Pipeline {
                pipeline,
                layout: Arc::new(bgl),
                entries: layout.to_vec(),
            }),
        );
        Ok(id)
    }

    fn submit(&self, commands: Vec<Command>) -> Result<()> {
        self.check()?;
        if commands.is_empty() {
            return Ok(());
        }
        let mut encoder = self
            .device
            .create_command_encoder(&wgpu::CommandEncoderDescriptor { label: None });
        // keeps per-dispatch uniform buffers alive until the encoder is finished
        let mut uniforms = Vec::new();
        for cmd in commands {
            match cmd {
                Command::Copy {
                    src,
                    src_offset,
                    dst,
                    dst_offset,
                    size,
                } => {
                    let (s, d) = (self.buffer(src)?, self.buffer(dst)?);
                    encoder.copy_buffer_to_buffer(&s, src_offset, &d, dst_offset, size);
                }
                Command::Dispatch {
                    pipeline,
                    buffers,
                    uniform,
                    workgroups,
                } => {
                    let pipe = self
                        .tables()
                        .pipelines
                        .get(&pipeline)
                        .cloned()
                        .ok_or_else(|| Error::DeviceLost(format!("unknown pipeline {pipeline}")))?;
                    let mut bound: Vec<wgpu::Buffer> = Vec::with_capacity(pipe.entries.len());
                    let mut storage = buffers.iter();
                    for e in &pipe.entries {
                        match e {
                            BindingEntry::Uniform => {
                                let mut padded = uniform.clone();
                                padded.resize(uniform.len().div_ceil(16).max(1) * 16, 0);
                                let ub = self.device.create_buffer_init(&wgpu::util::BufferInitDescriptor {
                                    label: None,
                                    contents: &padded,
                                    usage: wgpu::BufferUsages::UNIFORM,
                                });
                                bound.push(ub);
                            }
                            _ => {
                                let id = storage
                                    .next()
                                    .ok_or_else(|| Error::DeviceLost("missing buffer binding".into()))?;
                                bound.push(self.buffer(*id)?);
                            }
                        }
                    }
                    let entries: Vec<wgpu::BindGroupEntry> = bound
                        .iter()
                        .enumerate()
                        .map(|(i, b)| wgpu::BindGroupEntry {
                            binding: i as u32,
                            resource: b.as_entire_binding(),
                        })
                        .collect();
                    let bind_group = self.device.create_bind_group(&wgpu::BindGroupDescriptor {
                        label: None,
                        layout: &pipe.layout,
                        entries: &entries,
                    });
                    {
                        let mut pass = encoder.begin_compute_pass(&wgpu::ComputePassDescriptor::default());
                        pass.set_pipeline(&pipe.pipeline);
                        pass.set_bind_group(0, &bind_group, &[]);
                        pass.dispatch_workgroups(workgroups[0], workgroups[1], workgroups[2]);
                    }
                    uniforms.push(bound);
                }
            }
        }
        self.queue.submit([encoder.finish()]);
        drop(uniforms);
        Ok(())
    }

    fn map_read(&self, buffer: RawBuffer, len: u64, done: MapCallback) -> Result<()> {
        self.check()?;
        let b = self.buffer(buffer)?;
        b.map_async(wgpu::MapMode::Read, 0..len, move |r| {
            done(r.map_err(|e| Error::DeviceLost(e.to_string())))
        });
        Ok(())
    }

    fn poll(&self, wait: bool) -> Result<()> {
        self.check()?;
        let poll = if wait {
            wgpu::PollType::Wait {
                submission_index: None,
                timeout: Some(Duration::from_millis(100)),
            }
        } else {
            wgpu::PollType::Poll
        };
        match self.device.poll(poll) {
            Ok(_) | Err(wgpu::PollError::Timeout) => Ok(()),
            Err(e) => Err(Error::DeviceLost(e.to_string())),
        }
    }

    fn wait_idle(&self, timeout: Duration) -> Result<()> {
        self.check()?;
        let poll = wgpu::PollType::Wait {
            submission_index: None,
            timeout: Some(timeout),
        };
        match self.device.poll(poll) {
            Ok(_) | Err(wgpu::PollError::Timeout) => Ok(()),
            Err(e) => Err(Error::DeviceLost(e.to_string())),
        }
    }

    fn read_mapped(&self, buffer: RawBuffer, len: u64) -> Result<Vec<u8>> {
        let b = self.buffer(buffer)?;
        let data = b
            .slice(0..len)
            .get_mapped_range()
            .map_err(|e| Error::DeviceLost(e.to_string()))?
            .to_vec();
        b.unmap();
        Ok(data)
    }

    fn lose(&self) {
        self.lost.store(true, Ordering::Release);
    }
}
