//! Shader source generation for elementwise kernels.
//!
//! Every kernel shares one layout: one storage binding per parameter (inputs
//! first, then outputs), followed by a uniform block holding [`LaunchMeta`].
//! Invocations walk the output in a grid-stride loop, so any element count
//! fits inside a clamped dispatch.

use std::fmt::Write;

use super::params::INDEX_NAME;
use super::spec::{substitute_constants, Constants, KernelSpec};
use crate::array::{broadcast_descriptor, ArrayDescriptor, DType, Shape, MAX_RANK};
use crate::error::{Error, Result};

pub const DEFAULT_WORKGROUP_SIZE: u32 = 64;

const COMPONENTS: [&str; 4] = ["x", "y", "z", "w"];

#[derive(Clone, Debug, PartialEq)]
pub struct CodegenOptions {
    pub workgroup_size: u32,
    pub constants: Constants,
}

impl Default for CodegenOptions {
    fn default() -> Self {
        CodegenOptions {
            workgroup_size: DEFAULT_WORKGROUP_SIZE,
            constants: Constants::new(),
        }
    }
}

/// Generates the compute shader for `spec` at output rank `rank` with the
/// default workgroup size and no constants.
pub fn generate_source(spec: &KernelSpec, rank: usize) -> Result<String> {
    generate_source_with(spec, rank, &CodegenOptions::default())
}

pub fn generate_source_with(spec: &KernelSpec, rank: usize, opts: &CodegenOptions) -> Result<String> {
    if rank > MAX_RANK {
        return Err(Error::UnsupportedRank(rank));
    }
    if opts.workgroup_size == 0 {
        return Err(Error::InvalidConfig("workgroup size must be positive".into()));
    }
    opts.constants.check_against(spec)?;
    let operation = substitute_constants(spec.operation.trim(), &opts.constants)?;
    let n = spec.arity();
    let ws = opts.workgroup_size;
    let params: Vec<_> = spec.in_params.iter().chain(&spec.out_params).collect();

    let mut s = String::new();
    let _ = writeln!(s, "// elementwise kernel `{}` (rank {rank})", spec.name);
    let _ = writeln!(s, "struct LaunchMeta {{");
    let _ = writeln!(s, "    info: vec4<u32>,");
    let _ = writeln!(s, "    out_shape: vec4<u32>,");
    let _ = writeln!(s, "    shapes: array<vec4<u32>, {n}>,");
    let _ = writeln!(s, "    strides: array<vec4<i32>, {n}>,");
    let _ = writeln!(s, "    offsets: array<vec4<u32>, {n}>,");
    let _ = writeln!(s, "}}\n");
    for (k, p) in params.iter().enumerate() {
        let access = if k < spec.in_params.len() { "read" } else { "read_write" };
        let _ = writeln!(
            s,
            "@group(0) @binding({k}) var<storage, {access}> ek_buf_{}: array<{}>;",
            p.name,
            p.dtype.shader_type()
        );
    }
    let _ = writeln!(s, "@group(0) @binding({n}) var<uniform> ek_meta: LaunchMeta;\n");

    let _ = writeln!(s, "@compute @workgroup_size({ws})");
    let _ = writeln!(
        s,
        "fn main(@builtin(global_invocation_id) ek_gid: vec3<u32>, @builtin(num_workgroups) ek_groups: vec3<u32>) {{"
    );
    let _ = writeln!(s, "    let ek_total = ek_meta.info.x;");
    let _ = writeln!(s, "    let ek_strided = ek_meta.info.y != 0u;");
    let _ = writeln!(s, "    let ek_step = ek_groups.x * {ws}u;");
    let _ = writeln!(
        s,
        "    for (var {INDEX_NAME}: u32 = ek_gid.x; {INDEX_NAME} < ek_total; {INDEX_NAME} = {INDEX_NAME} + ek_step) {{"
    );
    for d in 0..rank {
        let _ = writeln!(s, "        var ek_c{d}: u32 = 0u;");
    }
    if rank > 0 {
        let _ = writeln!(s, "        if (ek_strided) {{");
        let _ = writeln!(s, "            var ek_rem: u32 = {INDEX_NAME};");
        for d in (1..rank).rev() {
            let c = COMPONENTS[d];
            let _ = writeln!(s, "            ek_c{d} = ek_rem % ek_meta.out_shape.{c};");
            let _ = writeln!(s, "            ek_rem = ek_rem / ek_meta.out_shape.{c};");
        }
        let _ = writeln!(s, "            ek_c0 = ek_rem;");
        let _ = writeln!(s, "        }}");
    }
    for k in 0..n {
        let _ = writeln!(s, "        var ek_at{k}: u32 = ek_meta.offsets[{k}].x;");
        let _ = writeln!(s, "        if (ek_meta.offsets[{k}].y == 1u) {{");
        let _ = writeln!(s, "            ek_at{k} = ek_at{k} + {INDEX_NAME};");
        if rank > 0 {
            let terms: Vec<String> = (0..rank)
                .map(|d| format!("i32(ek_c{d}) * ek_meta.strides[{k}].{}", COMPONENTS[d]))
                .collect();
            let _ = writeln!(s, "        }} else if (ek_meta.offsets[{k}].y == 0u) {{");
            let _ = writeln!(s, "            ek_at{k} = u32(i32(ek_at{k}) + {});", terms.join(" + "));
        }
        let _ = writeln!(s, "        }}");
    }
    for (k, p) in spec.in_params.iter().enumerate() {
        let _ = writeln!(
            s,
            "        let {}: {} = ek_buf_{}[ek_at{k}];",
            p.name,
            p.dtype.shader_type(),
            p.name
        );
    }
    let first_out = spec.in_params.len();
    for (j, p) in spec.out_params.iter().enumerate() {
        let k = first_out + j;
        let _ = writeln!(
            s,
            "        var {}: {} = ek_buf_{}[ek_at{k}];",
            p.name,
            p.dtype.shader_type(),
            p.name
        );
    }
    let _ = writeln!(s, "        {{");
    let terminator = if operation.ends_with(';') || operation.ends_with('}') {
        ""
    } else {
        ";"
    };
    for line in operation.lines() {
        let _ = writeln!(s, "            {line}");
    }
    if !terminator.is_empty() {
        // re-attach the terminator to the last line rather than emitting a lone `;`
        s.pop();
        let _ = writeln!(s, "{terminator}");
    }
    let _ = writeln!(s, "        }}");
    for (j, p) in spec.out_params.iter().enumerate() {
        let k = first_out + j;
        if p.dtype == DType::Bool {
            let _ = writeln!(
                s,
                "        ek_buf_{}[ek_at{k}] = select(0u, 1u, {} != 0u);",
                p.name, p.name
            );
        } else {
            let _ = writeln!(s, "        ek_buf_{}[ek_at{k}] = {};", p.name, p.name);
        }
    }
    let _ = writeln!(s, "    }}");
    let _ = writeln!(s, "}}");
    Ok(s)
}

/// How a kernel locates an array's element for linear output index `i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u32)]
pub enum AddressMode {
    /// `offset + Σ coord_d · stride_d`
    Strided = 0,
    /// `offset + i`: row-major with the output's shape.
    Contiguous = 1,
    /// `offset`: every element reads the same word.
    Uniform = 2,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArrayMeta {
    pub shape: [u32; 4],
    pub strides: [i32; 4],
    pub offset: u32,
    pub mode: AddressMode,
}

/// Per-dispatch metadata uploaded as the kernel's uniform block.
///
/// All arrays are padded to rank 4 so every kernel shares one layout.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LaunchMeta {
    pub total_size: u32,
    pub out_shape: Shape,
    pub arrays: Vec<ArrayMeta>,
}

impl LaunchMeta {
    /// Builds metadata for `inputs` broadcast against `out_shape` and
    /// `outputs` that must already have that shape.
    pub fn new(out_shape: &Shape, inputs: &[&ArrayDescriptor], outputs: &[&ArrayDescriptor]) -> Result<Self> {
        if out_shape.rank() > MAX_RANK {
            return Err(Error::UnsupportedRank(out_shape.rank()));
        }
        let mut arrays = Vec::with_capacity(inputs.len() + outputs.len());
        for d in inputs {
            let b = broadcast_descriptor(d, out_shape)?;
            arrays.push(Self::array_meta(&b, false)?);
        }
        for d in outputs {
            if &d.shape != out_shape {
                return Err(Error::ShapeMismatch(format!(
                    "output shape {:?} differs from launch shape {:?}",
                    d.shape.dims(),
                    out_shape.dims()
                )));
            }
            if d.has_broadcast() {
                return Err(Error::ShapeMismatch("output view repeats elements".into()));
            }
            arrays.push(Self::array_meta(d, true)?);
        }
        Ok(LaunchMeta {
            total_size: out_shape.element_count() as u32,
            out_shape: out_shape.clone(),
            arrays,
        })
    }

    fn array_meta(d: &ArrayDescriptor, is_output: bool) -> Result<ArrayMeta> {
        let mut shape = [0u32; 4];
        let mut strides = [0i32; 4];
        for (k, (&dim, &step)) in d.shape.dims().iter().zip(d.strides.steps()).enumerate() {
            shape[k] = dim as u32;
            strides[k] = i32::try_from(step).map_err(|_| Error::TooManyElements)?;
        }
        let offset = u32::try_from(d.offset).map_err(|_| Error::TooManyElements)?;
        let mode = if d.is_c_contiguous() {
            AddressMode::Contiguous
        } else if !is_output && d.strides.steps().iter().all(|&s| s == 0) {
            AddressMode::Uniform
        } else {
            AddressMode::Strided
        };
        Ok(ArrayMeta {
            shape,
            strides,
            offset,
            mode,
        })
    }

    /// True if some array needs the decomposed multi-index.
    pub fn needs_coordinates(&self) -> bool {
        self.arrays.iter().any(|a| a.mode == AddressMode::Strided)
    }

    /// Uniform-block bytes in the layout declared by the generated shader.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.arrays.len();
        let mut words: Vec<u32> = Vec::with_capacity(8 + 12 * n);
        words.extend([
            self.total_size,
            u32::from(self.needs_coordinates()),
            self.out_shape.rank() as u32,
            0,
        ]);
        let mut out_shape = [0u32; 4];
        for (k, &d) in self.out_shape.dims().iter().enumerate() {
            out_shape[k] = d as u32;
        }
        words.extend(out_shape);
        for a in &self.arrays {
            words.extend(a.shape);
        }
        for a in &self.arrays {
            words.extend(a.strides.map(|s| s as u32));
        }
        for a in &self.arrays {
            words.extend([a.offset, a.mode as u32, 0, 0]);
        }
        bytemuck::cast_slice(&words).to_vec()
    }
}
