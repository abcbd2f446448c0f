//! Device contexts, buffers and device-resident arrays.

pub(crate) mod backend;
mod context;
mod emulator;
#[cfg(feature = "wgpu")]
mod hardware;
mod pool;

pub use context::{create_context, BackendChoice, BufferHandle, Counters, DeviceArray, DeviceConfig, DeviceContext};
pub use pool::{size_class, PoolStats, MIN_SIZE_CLASS};
