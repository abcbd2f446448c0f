//! Built-in array operations: arithmetic, comparisons, selection, casts,
//! reductions and matrix multiplication.

mod elementwise;
mod matmul;
mod reduce;

pub use elementwise::{astype, binary, binary_scalar, copy, relu_bwd_spec, where_};
pub use matmul::{matmul, matmul_with_tile, MatmulVariant, DEFAULT_TILE};
pub use reduce::{reduce, ReduceOp};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinaryOpKind {
    Add,
    Sub,
    Mul,
    Div,
    Maximum,
    Greater,
    Less,
    Equal,
}

impl BinaryOpKind {
    pub const ALL: [BinaryOpKind; 8] = [
        BinaryOpKind::Add,
        BinaryOpKind::Sub,
        BinaryOpKind::Mul,
        BinaryOpKind::Div,
        BinaryOpKind::Maximum,
        BinaryOpKind::Greater,
        BinaryOpKind::Less,
        BinaryOpKind::Equal,
    ];

    pub fn is_comparison(self) -> bool {
        matches!(self, BinaryOpKind::Greater | BinaryOpKind::Less | BinaryOpKind::Equal)
    }

    pub fn name(self) -> &'static str {
        match self {
            BinaryOpKind::Add => "add",
            BinaryOpKind::Sub => "sub",
            BinaryOpKind::Mul => "mul",
            BinaryOpKind::Div => "div",
            BinaryOpKind::Maximum => "maximum",
            BinaryOpKind::Greater => "greater",
            BinaryOpKind::Less => "less",
            BinaryOpKind::Equal => "equal",
        }
    }

    /// Double-precision reference for one element pair.
    pub fn eval_f64(self, x: f64, y: f64) -> f64 {
        let b = |c: bool| if c { 1.0 } else { 0.0 };
        match self {
            BinaryOpKind::Add => x + y,
            BinaryOpKind::Sub => x - y,
            BinaryOpKind::Mul => x * y,
            BinaryOpKind::Div => x / y,
            BinaryOpKind::Maximum => x.max(y),
            BinaryOpKind::Greater => b(x > y),
            BinaryOpKind::Less => b(x < y),
            BinaryOpKind::Equal => b(x == y),
        }
    }
}
