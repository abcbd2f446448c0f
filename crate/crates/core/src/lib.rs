pub mod array;
pub mod device;
mod error;
pub mod gridsearch;
pub mod kernel;
pub mod ops;
pub mod workloads;

pub use array::{ArrayDescriptor, DType, HostArray, Shape};
pub use device::{create_context, BackendChoice, DeviceArray, DeviceConfig, DeviceContext};
pub use error::{Error, ParseError, Result};
pub use kernel::{ConstValue, Constants, KernelSpec};
