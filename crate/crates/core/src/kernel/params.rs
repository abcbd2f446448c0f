use crate::array::DType;
use crate::error::ParseError;

/// One `<dtype> <name>` entry of a kernel parameter declaration.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ParamDecl {
    pub dtype: DType,
    pub name: String,
}

impl ParamDecl {
    pub fn new(dtype: DType, name: impl Into<String>) -> Self {
        ParamDecl {
            dtype,
            name: name.into(),
        }
    }
}

/// Prefix reserved for identifiers emitted by the code generator.
pub(crate) const INTERNAL_PREFIX: &str = "ek_";
/// The linear output index visible to operation snippets.
pub(crate) const INDEX_NAME: &str = "i";

/// Parses a comma-separated list of `<dtype> <name>` pairs.
///
/// Both long and short dtype spellings are accepted (`float32`/`f32`,
/// `int32`/`i32`, `uint32`/`u32`, `bool`). An empty or all-whitespace string
/// yields an empty list.
pub fn parse_params(decl: &str) -> Result<Vec<ParamDecl>, ParseError> {
    let mut out: Vec<ParamDecl> = Vec::new();
    if decl.trim().is_empty() {
        return Ok(out);
    }
    let mut start = 0;
    for piece in decl.split(',') {
        let piece_start = start;
        start += piece.len() + 1;
        let err = |offset: usize, message: String| ParseError {
            position: piece_start + offset,
            message,
        };
        let mut tokens = token_spans(piece);
        let Some((dt_off, dtype_tok)) = tokens.next() else {
            return Err(err(0, "empty parameter".into()));
        };
        let dtype =
            DType::from_token(dtype_tok).ok_or_else(|| err(dt_off, format!("unsupported dtype `{dtype_tok}`")))?;
        let Some((name_off, name)) = tokens.next() else {
            return Err(err(piece.len(), format!("missing name after `{dtype_tok}`")));
        };
        if let Some((extra_off, extra)) = tokens.next() {
            return Err(err(extra_off, format!("unexpected token `{extra}`")));
        }
        check_identifier(name).map_err(|m| err(name_off, m))?;
        if out.iter().any(|p| p.name == name) {
            return Err(err(name_off, format!("duplicate parameter `{name}`")));
        }
        out.push(ParamDecl::new(dtype, name));
    }
    Ok(out)
}

fn token_spans(s: &str) -> impl Iterator<Item = (usize, &str)> {
    s.split_whitespace()
        .map(move |t| (t.as_ptr() as usize - s.as_ptr() as usize, t))
}

/// Checks that `name` can be bound as a shader local without colliding with
/// the shader language or the generated code.
pub(crate) fn check_identifier(name: &str) -> Result<(), String> {
    let mut chars = name.chars();
    let valid = match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => chars.all(|c| c.is_ascii_alphanumeric() || c == '_'),
        _ => false,
    };
    if !valid || name == "_" {
        return Err(format!("`{name}` is not a valid identifier"));
    }
    if name.starts_with("__") || name.starts_with(INTERNAL_PREFIX) || name == INDEX_NAME {
        return Err(format!("`{name}` is reserved by the kernel generator"));
    }
    if naga::keywords::wgsl::RESERVED.contains(&name)
        || naga::keywords::wgsl::BUILTIN_IDENTIFIERS.contains(&name)
        || name == "main"
    {
        return Err(format!("`{name}` is a reserved shader identifier"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn long_spellings() {
        assert_eq!(
            parse_params("float32 x, float32 y").unwrap(),
            vec![ParamDecl::new(DType::F32, "x"), ParamDecl::new(DType::F32, "y")]
        );
    }

    #[test]
    fn short_spellings() {
        assert_eq!(
            parse_params("f32 y, f32 gy").unwrap(),
            vec![ParamDecl::new(DType::F32, "y"), ParamDecl::new(DType::F32, "gy")]
        );
    }

    #[test]
    fn all_dtypes_and_whitespace() {
        let p = parse_params("  int32 a ,uint32\tb, bool c ,i32 d,u32 e ").unwrap();
        let dtypes: Vec<DType> = p.iter().map(|p| p.dtype).collect();
        assert_eq!(
            dtypes,
            vec![DType::I32, DType::U32, DType::Bool, DType::I32, DType::U32]
        );
        assert_eq!(p[2].name, "c");
    }

    #[test]
    fn empty_declaration() {
        assert!(parse_params("").unwrap().is_empty());
        assert!(parse_params("   ").unwrap().is_empty());
    }

    #[test]
    fn rejects_f64() {
        let e = parse_params("f64 x").unwrap_err();
        assert_eq!(e.position, 0);
        assert!(e.message.contains("f64"));
        let e = parse_params("f32 a, float64 x").unwrap_err();
        assert_eq!(e.position, 7);
    }

    #[test]
    fn rejects_missing_name() {
        let e = parse_params("f32 x, f32").unwrap_err();
        assert!(e.message.contains("missing name"), "{e}");
    }

    #[test]
    fn rejects_duplicates() {
        let e = parse_params("f32 x, i32 x").unwrap_err();
        assert!(e.message.contains("duplicate"));
        assert_eq!(e.position, 11);
    }

    #[test]
    fn rejects_reserved_and_malformed() {
        for bad in [
            "f32 loop",
            "f32 var",
            "f32 vec4",
            "f32 ek_tmp",
            "f32 i",
            "f32 __x",
            "f32 9x",
            "f32 a-b",
            "f32 main",
        ] {
            assert!(parse_params(bad).is_err(), "{bad} should be rejected");
        }
        assert!(parse_params("f32 x y").is_err());
        assert!(parse_params("f32 x,,f32 y").is_err());
    }
}
