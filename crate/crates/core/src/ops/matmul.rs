use serde::{Deserialize, Serialize};

use crate::array::DType;
use crate::device::backend::BindingEntry;
use crate::device::DeviceArray;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatmulVariant {
    /// One inner-product loop per output element.
    Naive,
    /// Shared-memory tiles of `T×T`.
    Tiled,
}

impl std::str::FromStr for MatmulVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(MatmulVariant::Naive),
            "tiled" => Ok(MatmulVariant::Tiled),
            other => Err(Error::InvalidConfig(format!("unknown matmul variant `{other}`"))),
        }
    }
}

pub const DEFAULT_TILE: u32 = 16;

const HEADER: &str = r#"struct Params {
    dims: vec4<u32>,
    offs: vec4<u32>,
}

@group(0) @binding(0) var<storage, read> a: array<f32>;
@group(0) @binding(1) var<storage, read> b: array<f32>;
@group(0) @binding(2) var<storage, read_write> c: array<f32>;
@group(0) @binding(3) var<uniform> p: Params;
"#;

fn naive_source() -> String {
    format!(
        r#"{HEADER}
@compute @workgroup_size(16, 16)
fn main(@builtin(global_invocation_id) gid: vec3<u32>) {{
    let m = p.dims.x;
    let k = p.dims.y;
    let n = p.dims.z;
    let row = gid.y;
    let col = gid.x;
    if (row >= m || col >= n) {{
        return;
    }}
    var acc = 0.0;
    for (var q = 0u; q < k; q = q + 1u) {{
        acc = acc + a[p.offs.x + row * k + q] * b[p.offs.y + q * n + col];
    }}
    c[row * n + col] = acc;
}}
"#
    )
}

fn tiled_source(t: u32) -> String {
    let tt = t * t;
    format!(
        r#"{HEADER}
var<workgroup> ta: array<f32, {tt}>;
var<workgroup> tb: array<f32, {tt}>;

@compute @workgroup_size({t}, {t})
fn main(@builtin(local_invocation_id) lid: vec3<u32>, @builtin(workgroup_id) wid: vec3<u32>) {{
    let m = p.dims.x;
    let k = p.dims.y;
    let n = p.dims.z;
    let row = wid.y * {t}u + lid.y;
    let col = wid.x * {t}u + lid.x;
    let slot = lid.y * {t}u + lid.x;
    var acc = 0.0;
    let tiles = (k + {t}u - 1u) / {t}u;
    for (var s = 0u; s < tiles; s = s + 1u) {{
        let ka = s * {t}u + lid.x;
        if (row < m && ka < k) {{
            ta[slot] = a[p.offs.x + row * k + ka];
        }} else {{
            ta[slot] = 0.0;
        }}
        let kb = s * {t}u + lid.y;
        if (col < n && kb < k) {{
            tb[slot] = b[p.offs.y + kb * n + col];
        }} else {{
            tb[slot] = 0.0;
        }}
        workgroupBarrier();
        for (var q = 0u; q < {t}u; q = q + 1u) {{
            acc = acc + ta[lid.y * {t}u + q] * tb[q * {t}u + lid.x];
        }}
        workgroupBarrier();
    }}
    if (row < m && col < n) {{
        c[row * n + col] = acc;
    }}
}}
"#
    )
}

/// `[m,k]·[k,n] → [m,n]` for `F32` matrices. Non-contiguous views are
/// materialized first.
pub fn matmul(a: &DeviceArray, b: &DeviceArray, variant: MatmulVariant) -> Result<DeviceArray> {
    matmul_with_tile(a, b, variant, DEFAULT_TILE)
}

/// As [`matmul`], with an explicit tile edge for the tiled variant
/// (`tile²` may not exceed 256).
pub fn matmul_with_tile(a: &DeviceArray, b: &DeviceArray, variant: MatmulVariant, tile: u32) -> Result<DeviceArray> {
    for x in [a, b] {
        if x.dtype() != DType::F32 {
            return Err(Error::DTypeMismatch {
                expected: DType::F32,
                found: x.dtype(),
            });
        }
        if x.rank() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "matmul needs rank-2 operands, got {:?}",
                x.dims()
            )));
        }
    }
    let (m, k, n) = (a.dims()[0], a.dims()[1], b.dims()[1]);
    if b.dims()[0] != k {
        return Err(Error::ShapeMismatch(format!(
            "inner dimensions differ: {:?} · {:?}",
            a.dims(),
            b.dims()
        )));
    }
    if tile == 0 || tile * tile > 256 {
        return Err(Error::InvalidConfig(format!("tile edge {tile} is outside 1..=16")));
    }
    let ctx = a.context();
    if k == 0 {
        return ctx.zeros(DType::F32, &[m, n]);
    }
    let c = ctx.empty(DType::F32, &[m, n])?;
    if m == 0 || n == 0 {
        return Ok(c);
    }
    let packed = |x: &DeviceArray| -> Result<DeviceArray> {
        if x.descriptor().is_c_contiguous() {
            Ok(x.clone())
        } else {
            super::copy(x)
        }
    };
    let (a, b) = (packed(a)?, packed(b)?);
    let layout = vec![
        BindingEntry::StorageRead,
        BindingEntry::StorageRead,
        BindingEntry::StorageReadWrite,
        BindingEntry::Uniform,
    ];
    let (kernel, edge) = match variant {
        MatmulVariant::Naive => (
            ctx.compile_source("matmul_naive", naive_source(), layout, [16, 16, 1])?,
            16,
        ),
        MatmulVariant::Tiled => (
            ctx.compile_source(
                &format!("matmul_tiled_{tile}"),
                tiled_source(tile),
                layout,
                [tile, tile, 1],
            )?,
            tile as usize,
        ),
    };
    let groups = [n.div_ceil(edge) as u32, m.div_ceil(edge) as u32, 1];
    let params = [
        m as u32,
        k as u32,
        n as u32,
        0,
        a.descriptor().offset as u32,
        b.descriptor().offset as u32,
        0,
        0,
    ];
    ctx.dispatch(
        &kernel,
        &[a.buffer(), b.buffer(), c.buffer()],
        bytemuck::cast_slice(&params).to_vec(),
        groups,
    )?;
    Ok(c)
}
