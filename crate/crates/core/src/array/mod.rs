//! Host-side array metadata: dtypes, shapes, strides, broadcasting and
//! host-resident arrays.
//!
//! Everything here is a plain value type. Strides are measured in elements,
//! never bytes, and every dtype occupies one 4-byte word, so a descriptor maps
//! directly onto the index arithmetic emitted into shaders.

mod dtype;
mod host;
mod layout;

pub use dtype::DType;
pub use host::{host_eval_elementwise, HostArray};
pub use layout::{
    broadcast_descriptor, broadcast_shapes, broadcast_shapes_all, contiguous_strides, for_each_index, reshape,
    transpose, ArrayDescriptor, Shape, Strides, MAX_ELEMENTS, MAX_RANK,
};
