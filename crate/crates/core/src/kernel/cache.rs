use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use super::spec::{Constants, KernelSpec};
use crate::device::backend::{BindingEntry, PipelineId};

/// Everything that determines a compiled pipeline.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub(crate) enum KernelKey {
    Elementwise {
        spec: KernelSpec,
        rank: usize,
        constants: Vec<(String, u8, u32)>,
        workgroup_size: u32,
    },
    Source {
        label: String,
        source: String,
    },
}

impl KernelKey {
    pub fn elementwise(spec: &KernelSpec, rank: usize, constants: &Constants, workgroup_size: u32) -> Self {
        KernelKey::Elementwise {
            spec: spec.clone(),
            rank,
            constants: constants.key(),
            workgroup_size,
        }
    }

    pub fn digest(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.hash(&mut h);
        h.finish()
    }
}

/// A compiled, cached compute pipeline.
#[derive(Debug)]
pub struct CompiledKernel {
    pub name: String,
    /// Hash of the cache key.
    pub key_hash: u64,
    /// Output rank the kernel was generated for (elementwise kernels only).
    pub rank: Option<usize>,
    pub workgroup_size: [u32; 3],
    pub source: Arc<str>,
    pub spec: Option<KernelSpec>,
    pub(crate) pipeline: PipelineId,
    pub(crate) layout: Vec<BindingEntry>,
}

impl CompiledKernel {
    /// Invocations per workgroup.
    pub fn invocations(&self) -> u32 {
        self.workgroup_size.iter().product()
    }
}
