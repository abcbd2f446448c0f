use std::collections::BTreeMap;
use std::fmt;

use super::params::{parse_params, ParamDecl};
use crate::array::DType;
use crate::error::{Error, Result};

/// A user elementwise kernel: typed inputs and outputs plus a per-element
/// operation written in the shader language.
///
/// ```
/// use gpuarray_core::kernel::KernelSpec;
/// let k = KernelSpec::new(
///     "squared_diff",
///     "float32 x, float32 y",
///     "float32 z",
///     "z = (x - y) * (x - y)",
/// ).unwrap();
/// assert_eq!(k.in_params.len(), 2);
/// ```
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct KernelSpec {
    pub name: String,
    pub in_params: Vec<ParamDecl>,
    pub out_params: Vec<ParamDecl>,
    pub operation: String,
    /// Scalars whose values are substituted into the operation text before
    /// compilation.
    pub constants: Vec<ParamDecl>,
}

impl KernelSpec {
    pub fn new(name: &str, in_params: &str, out_params: &str, operation: &str) -> Result<Self> {
        let spec = KernelSpec {
            name: name.to_string(),
            in_params: parse_params(in_params)?,
            out_params: parse_params(out_params)?,
            operation: operation.to_string(),
            constants: Vec::new(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Declares compile-time constants, e.g. `"u32 max_iter"`.
    pub fn with_constants(mut self, decl: &str) -> Result<Self> {
        self.constants = parse_params(decl)?;
        self.validate()?;
        Ok(self)
    }

    pub fn arity(&self) -> usize {
        self.in_params.len() + self.out_params.len()
    }

    fn validate(&self) -> Result<()> {
        // the name only labels the generated source and cache entries
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(Error::InvalidKernel(format!(
                "`{}` is not a valid kernel name",
                self.name
            )));
        }
        if self.out_params.is_empty() {
            return Err(Error::InvalidKernel("kernel needs at least one output".into()));
        }
        if self.operation.trim().is_empty() {
            return Err(Error::InvalidKernel("operation is empty".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for p in self.in_params.iter().chain(&self.out_params).chain(&self.constants) {
            if !seen.insert(p.name.as_str()) {
                return Err(Error::InvalidKernel(format!("parameter `{}` declared twice", p.name)));
            }
        }
        Ok(())
    }
}

/// A typed value for a declared kernel constant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ConstValue {
    F32(f32),
    I32(i32),
    U32(u32),
    Bool(bool),
}

impl ConstValue {
    pub fn dtype(self) -> DType {
        match self {
            ConstValue::F32(_) => DType::F32,
            ConstValue::I32(_) => DType::I32,
            ConstValue::U32(_) => DType::U32,
            ConstValue::Bool(_) => DType::Bool,
        }
    }

    /// Shader literal for the value. Bools become `0u`/`1u`, like bool arrays.
    pub fn literal(self) -> Result<String> {
        Ok(match self {
            ConstValue::F32(v) if !v.is_finite() => {
                return Err(Error::InvalidKernel(format!("constant {v} has no shader literal")))
            }
            ConstValue::F32(v) if v < 0.0 => format!("({v:?}f)"),
            ConstValue::F32(v) => format!("{v:?}f"),
            ConstValue::I32(v) if v < 0 => format!("({v}i)"),
            ConstValue::I32(v) => format!("{v}i"),
            ConstValue::U32(v) => format!("{v}u"),
            ConstValue::Bool(v) => format!("{}u", u32::from(v)),
        })
    }

    fn key_bits(self) -> (u8, u32) {
        match self {
            ConstValue::F32(v) => (0, v.to_bits()),
            ConstValue::I32(v) => (1, v as u32),
            ConstValue::U32(v) => (2, v),
            ConstValue::Bool(v) => (3, u32::from(v)),
        }
    }
}

impl fmt::Display for ConstValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstValue::F32(v) => write!(f, "{v}"),
            ConstValue::I32(v) => write!(f, "{v}"),
            ConstValue::U32(v) => write!(f, "{v}"),
            ConstValue::Bool(v) => write!(f, "{v}"),
        }
    }
}

/// Values bound to a kernel's declared constants.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Constants(BTreeMap<String, ConstValue>);

impl Constants {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: ConstValue) -> Self {
        self.0.insert(name.to_string(), value);
        self
    }

    pub fn get(&self, name: &str) -> Option<ConstValue> {
        self.0.get(name).copied()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Exact bit patterns, usable as part of a cache key.
    pub(crate) fn key(&self) -> Vec<(String, u8, u32)> {
        self.0
            .iter()
            .map(|(k, v)| {
                let (t, b) = v.key_bits();
                (k.clone(), t, b)
            })
            .collect()
    }

    /// Checks that exactly the declared constants are bound, with matching dtypes.
    pub(crate) fn check_against(&self, spec: &KernelSpec) -> Result<()> {
        for decl in &spec.constants {
            match self.get(&decl.name) {
                None => return Err(Error::InvalidKernel(format!("constant `{}` has no value", decl.name))),
                Some(v) if v.dtype() != decl.dtype => {
                    return Err(Error::DTypeMismatch {
                        expected: decl.dtype,
                        found: v.dtype(),
                    })
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = self.0.keys().find(|k| !spec.constants.iter().any(|c| &c.name == *k)) {
            return Err(Error::InvalidKernel(format!("`{extra}` is not a declared constant")));
        }
        Ok(())
    }
}

/// Replaces whole-identifier occurrences of each constant in `text` with its
/// literal.
pub(crate) fn substitute_constants(text: &str, constants: &Constants) -> Result<String> {
    if constants.is_empty() {
        return Ok(text.to_string());
    }
    let mut out = String::with_capacity(text.len());
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_alphabetic() || c == b'_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            let ident = &text[start..i];
            match constants.get(ident) {
                Some(v) => out.push_str(&v.literal()?),
                None => out.push_str(ident),
            }
        } else if c.is_ascii_digit() {
            // numeric literals such as `1e5f` must not be split into identifiers
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'.' || bytes[i] == b'_') {
                i += 1;
            }
            out.push_str(&text[start..i]);
        } else {
            let ch = text[i..].chars().next().unwrap();
            out.push(ch);
            i += ch.len_utf8();
        }
    }
    Ok(out)
}
