use super::BinaryOpKind;
use crate::array::DType;
use crate::device::DeviceArray;
use crate::error::{Error, Result};
use crate::kernel::{Constants, KernelSpec};

fn run1(spec: &KernelSpec, inputs: &[&DeviceArray]) -> Result<DeviceArray> {
    let ctx = inputs[0].context();
    Ok(ctx.elementwise(spec, &Constants::new(), inputs)?.remove(0))
}

/// Contiguous copy of any view, in a fresh buffer.
pub fn copy(a: &DeviceArray) -> Result<DeviceArray> {
    let t = a.dtype().name();
    let spec = KernelSpec::new(&format!("copy_{t}"), &format!("{t} x"), &format!("{t} y"), "y = x")?;
    run1(&spec, &[a])
}

fn binary_spec(kind: BinaryOpKind, dtype: DType) -> Result<KernelSpec> {
    if kind == BinaryOpKind::Div && dtype != DType::F32 {
        return Err(Error::IntegerDivisionUnsupported);
    }
    if dtype == DType::Bool && matches!(kind, BinaryOpKind::Add | BinaryOpKind::Sub | BinaryOpKind::Mul) {
        return Err(Error::UnsupportedDType { op: kind.name(), dtype });
    }
    let op = match kind {
        BinaryOpKind::Add => "z = x + y",
        BinaryOpKind::Sub => "z = x - y",
        BinaryOpKind::Mul => "z = x * y",
        BinaryOpKind::Div => "z = x / y",
        BinaryOpKind::Maximum => "z = max(x, y)",
        BinaryOpKind::Greater => "z = select(0u, 1u, x > y)",
        BinaryOpKind::Less => "z = select(0u, 1u, x < y)",
        BinaryOpKind::Equal => "z = select(0u, 1u, x == y)",
    };
    let t = dtype.name();
    let out = if kind.is_comparison() { "bool" } else { t };
    KernelSpec::new(
        &format!("{}_{t}", kind.name()),
        &format!("{t} x, {t} y"),
        &format!("{out} z"),
        op,
    )
}

/// `a <kind> b` with broadcasting. Both operands must share a dtype;
/// comparisons produce `Bool`.
///
/// Bool operands support `Maximum` (logical or) and the comparisons only.
pub fn binary(kind: BinaryOpKind, a: &DeviceArray, b: &DeviceArray) -> Result<DeviceArray> {
    if a.dtype() != b.dtype() {
        return Err(Error::DTypeMismatch {
            expected: a.dtype(),
            found: b.dtype(),
        });
    }
    run1(&binary_spec(kind, a.dtype())?, &[a, b])
}

/// `a <kind> value`, with `value` converted to `a`'s dtype.
pub fn binary_scalar(kind: BinaryOpKind, a: &DeviceArray, value: f64) -> Result<DeviceArray> {
    let s = a.context().scalar(a.dtype(), value)?;
    binary(kind, a, &s)
}

/// Per element, `cond != 0 ? a : b`.
pub fn where_(cond: &DeviceArray, a: &DeviceArray, b: &DeviceArray) -> Result<DeviceArray> {
    if cond.dtype() != DType::Bool {
        return Err(Error::DTypeMismatch {
            expected: DType::Bool,
            found: cond.dtype(),
        });
    }
    if a.dtype() != b.dtype() {
        return Err(Error::DTypeMismatch {
            expected: a.dtype(),
            found: b.dtype(),
        });
    }
    let t = a.dtype().name();
    let spec = KernelSpec::new(
        &format!("where_{t}"),
        &format!("bool c, {t} x, {t} y"),
        &format!("{t} z"),
        "z = select(y, x, c != 0u)",
    )?;
    run1(&spec, &[cond, a, b])
}

/// Converts element type. Floats truncate toward zero (saturating at the
/// integer range); anything non-zero becomes `true`.
pub fn astype(a: &DeviceArray, to: DType) -> Result<DeviceArray> {
    let from = a.dtype();
    if from == to {
        return copy(a);
    }
    let op = match (from, to) {
        (_, DType::Bool) => {
            let zero = if from == DType::F32 { "0.0" } else { "0" };
            format!("y = select(0u, 1u, x != {zero})")
        }
        // bool words are already 0 or 1
        (DType::Bool, DType::U32) => "y = x".to_string(),
        (_, t) => format!("y = {}(x)", t.shader_type()),
    };
    let spec = KernelSpec::new(
        &format!("astype_{}_{}", from.name(), to.name()),
        &format!("{} x", from.name()),
        &format!("{} y", to.name()),
        &op,
    )?;
    run1(&spec, &[a])
}

/// The ReLU backward kernel: passes `gy` where `y > 0`, zero elsewhere.
pub fn relu_bwd_spec() -> KernelSpec {
    KernelSpec::new(
        "relu_bwd",
        "f32 y, f32 gy",
        "f32 gx",
        "if (y > 0.0) { gx = gy; } else { gx = 0.0; }",
    )
    .expect("static kernel spec")
}
