use serde::{Deserialize, Serialize};

/// Element type of an array. Every variant is stored as one 4-byte word;
/// `Bool` holds 0 or 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    I32,
    U32,
    Bool,
}

impl DType {
    pub const ALL: [DType; 4] = [DType::F32, DType::I32, DType::U32, DType::Bool];

    pub const fn size_bytes(self) -> usize {
        4
    }

    /// Canonical short name, also accepted by the kernel parameter parser.
    pub const fn name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::I32 => "i32",
            DType::U32 => "u32",
            DType::Bool => "bool",
        }
    }

    /// Accepts both the long (`float32`) and short (`f32`) spellings.
    pub fn from_token(token: &str) -> Option<DType> {
        match token {
            "float32" | "f32" => Some(DType::F32),
            "int32" | "i32" => Some(DType::I32),
            "uint32" | "u32" => Some(DType::U32),
            "bool" => Some(DType::Bool),
            _ => None,
        }
    }

    /// Scalar type used for this dtype in shader storage and locals.
    pub const fn shader_type(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::I32 => "i32",
            DType::U32 | DType::Bool => "u32",
        }
    }

    pub const fn is_integer(self) -> bool {
        matches!(self, DType::I32 | DType::U32)
    }

    /// Rounds a double-precision value to this dtype and returns the stored word.
    ///
    /// Integers wrap modulo 2^32 (truncating any fraction toward zero), matching
    /// the wrapping arithmetic of shader integers.
    pub fn encode_f64(self, v: f64) -> u32 {
        match self {
            DType::F32 => (v as f32).to_bits(),
            DType::I32 => (v as i64) as i32 as u32,
            DType::U32 => (v as i64) as u32,
            DType::Bool => u32::from(v != 0.0),
        }
    }

    /// Widens a stored word to double precision.
    pub fn decode_f64(self, word: u32) -> f64 {
        match self {
            DType::F32 => f32::from_bits(word) as f64,
            DType::I32 => word as i32 as f64,
            DType::U32 => word as f64,
            DType::Bool => f64::from(u8::from(word != 0)),
        }
    }
}

impl std::fmt::Display for DType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
