//! Elementwise kernels: the parameter DSL, shader generation, compilation
//! cache and launch.

mod cache;
mod codegen;
mod params;
mod spec;

pub use cache::CompiledKernel;
pub(crate) use cache::KernelKey;
pub use codegen::{
    generate_source, generate_source_with, AddressMode, ArrayMeta, CodegenOptions, LaunchMeta, DEFAULT_WORKGROUP_SIZE,
};
pub use params::{parse_params, ParamDecl};
pub use spec::{ConstValue, Constants, KernelSpec};
