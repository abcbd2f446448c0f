use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::array::{DType, Shape};
use crate::device::backend::BindingEntry;
use crate::device::DeviceArray;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReduceOp {
    Sum,
    Max,
}

const GROUP: u32 = 256;
/// Elements folded by one workgroup per pass.
const CHUNK: u32 = GROUP * 8;

fn source(op: ReduceOp, dtype: DType) -> String {
    let t = dtype.shader_type();
    let combine = |a: &str, b: &str| match op {
        ReduceOp::Sum => format!("{a} + {b}"),
        ReduceOp::Max => format!("max({a}, {b})"),
    };
    let init = match op {
        ReduceOp::Sum => format!("{t}(0)"),
        ReduceOp::Max => "src[(base + start) * inner + ii]".to_string(),
    };
    let mut s = String::new();
    let _ = write!(
        s,
        r#"struct Params {{
    dims: vec4<u32>,
}}

@group(0) @binding(0) var<storage, read> src: array<{t}>;
@group(0) @binding(1) var<storage, read_write> dst: array<{t}>;
@group(0) @binding(2) var<uniform> p: Params;

var<workgroup> part: array<{t}, {GROUP}>;

@compute @workgroup_size({GROUP})
fn main(@builtin(local_invocation_index) t: u32, @builtin(workgroup_id) wid: vec3<u32>, @builtin(num_workgroups) ng: vec3<u32>) {{
    let len = p.dims.x;
    let inner = p.dims.y;
    let nblocks = p.dims.z;
    let g = wid.x + wid.y * ng.x;
    let valid = g < p.dims.w;
    let ii = g % inner;
    let rest = g / inner;
    let blk = rest % nblocks;
    let base = (rest / nblocks) * len;
    let start = blk * {CHUNK}u;
    let stop = min(start + {CHUNK}u, len);
    var acc: {t} = {t}(0);
    if (valid) {{
        acc = {init};
        for (var j = start + t; j < stop; j = j + {GROUP}u) {{
            acc = {step};
        }}
    }}
    part[t] = acc;
    workgroupBarrier();
    for (var w = {half}u; w > 0u; w = w >> 1u) {{
        if (t < w) {{
            part[t] = {fold};
        }}
        workgroupBarrier();
    }}
    if (valid && t == 0u) {{
        dst[g] = part[0];
    }}
}}
"#,
        step = combine("acc", "src[(base + j) * inner + ii]"),
        fold = combine("part[t]", "part[t + w]"),
        half = GROUP / 2,
    );
    s
}

/// Sum or max over `axis`, or over every element when `axis` is `None`.
/// The reduced axis is removed from the shape.
///
/// Each pass folds blocks of up to 2048 elements per workgroup with a
/// shared-memory tree, so a full reduction of n elements takes
/// `ceil(log_2048(n))` passes.
pub fn reduce(a: &DeviceArray, op: ReduceOp, axis: Option<usize>) -> Result<DeviceArray> {
    let dtype = a.dtype();
    if dtype == DType::Bool {
        return Err(Error::UnsupportedDType { op: "reduce", dtype });
    }
    let dims = a.dims().to_vec();
    let (outer, len, inner, out_dims) = match axis {
        None => (1, a.len(), 1, Vec::new()),
        Some(ax) if ax >= dims.len() => {
            return Err(Error::AxisOutOfRange {
                axis: ax,
                rank: dims.len(),
            })
        }
        Some(ax) => {
            let mut out = dims.clone();
            out.remove(ax);
            (
                dims[..ax].iter().product(),
                dims[ax],
                dims[ax + 1..].iter().product(),
                out,
            )
        }
    };
    let ctx = a.context();
    if len == 0 {
        return match op {
            ReduceOp::Sum => ctx.zeros(dtype, &out_dims),
            ReduceOp::Max => Err(Error::EmptyReduction),
        };
    }
    let out_shape = Shape::new(out_dims.clone())?;
    if out_shape.element_count() == 0 {
        return ctx.empty(dtype, &out_dims);
    }
    let mut cur = if a.descriptor().is_c_contiguous() && a.descriptor().offset == 0 {
        a.clone()
    } else {
        super::copy(a)?
    };
    let mut len = len as u32;
    if len == 1 {
        return super::copy(&cur.reshape(&out_dims)?);
    }
    let kernel = ctx.compile_source(
        &format!(
            "reduce_{}_{}",
            if op == ReduceOp::Sum { "sum" } else { "max" },
            dtype.name()
        ),
        source(op, dtype),
        vec![
            BindingEntry::StorageRead,
            BindingEntry::StorageReadWrite,
            BindingEntry::Uniform,
        ],
        [GROUP, 1, 1],
    )?;
    let limit = ctx.max_workgroups_per_dim();
    while len > 1 {
        let nblocks = len.div_ceil(CHUNK);
        let count = outer as u64 * nblocks as u64 * inner as u64;
        let next = ctx.empty(dtype, &[outer, nblocks as usize, inner])?;
        let x = count.min(limit as u64) as u32;
        let y = count.div_ceil(x as u64) as u32;
        let params = [len, inner as u32, nblocks, count as u32];
        ctx.dispatch(
            &kernel,
            &[cur.buffer(), next.buffer()],
            bytemuck::cast_slice(&params).to_vec(),
            [x, y, 1],
        )?;
        cur = next;
        len = nblocks;
    }
    cur.reshape(&out_dims)
}
