//! The interface a device implementation provides to [`DeviceContext`].
//!
//! [`DeviceContext`]: super::DeviceContext

use std::time::Duration;

use crate::error::Result;

pub(crate) type RawBuffer = u64;
pub(crate) type PipelineId = u64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub(crate) enum BufferKind {
    /// Shader-visible storage; copy source and destination.
    Storage,
    /// Host-mappable readback target.
    Staging,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub(crate) enum BindingEntry {
    StorageRead,
    StorageReadWrite,
    Uniform,
}

#[derive(Debug)]
pub(crate) enum Command {
    Dispatch {
        pipeline: PipelineId,
        /// One buffer per storage binding, in binding order.
        buffers: Vec<RawBuffer>,
        /// Contents of the trailing uniform binding, if the layout has one.
        uniform: Vec<u8>,
        workgroups: [u32; 3],
    },
    Copy {
        src: RawBuffer,
        src_offset: u64,
        dst: RawBuffer,
        dst_offset: u64,
        size: u64,
    },
}

pub(crate) type MapCallback = Box<dyn FnOnce(Result<()>) + Send>;

#[derive(Clone, Copy, Debug)]
pub(crate) struct Limits {
    pub max_workgroups_per_dim: u32,
    pub max_buffer_size: u64,
}

pub(crate) trait Backend: Send + Sync {
    fn name(&self) -> String;
    fn limits(&self) -> Limits;
    fn create_buffer(&self, bytes: u64, kind: BufferKind) -> Result<RawBuffer>;
    /// Releases the buffer once previously submitted work no longer needs it.
    fn destroy_buffer(&self, buffer: RawBuffer);
    /// Ordered after all previously submitted work.
    fn write_buffer(&self, buffer: RawBuffer, offset: u64, data: &[u8]) -> Result<()>;
    fn compile(&self, label: &str, source: &str, layout: &[BindingEntry]) -> Result<PipelineId>;
    /// Hands commands to the device queue without waiting for them.
    fn submit(&self, commands: Vec<Command>) -> Result<()>;
    /// Requests host access to the first `len` bytes of a staging buffer once
    /// all prior work completes. `done` runs on whatever thread observes
    /// completion.
    fn map_read(&self, buffer: RawBuffer, len: u64, done: MapCallback) -> Result<()>;
    /// Drives completion processing. With `wait`, blocks until queued work
    /// finishes or a short timeout elapses.
    fn poll(&self, wait: bool) -> Result<()>;
    /// Blocks until every queued item has executed, the device is lost or
    /// `timeout` elapses.
    fn wait_idle(&self, timeout: Duration) -> Result<()>;
    /// Copies out the mapped range and unmaps the buffer.
    fn read_mapped(&self, buffer: RawBuffer, len: u64) -> Result<Vec<u8>>;
    /// Simulates device loss (fault injection for tests).
    fn lose(&self);
}
