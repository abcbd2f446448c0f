//! Lowering of a validated shader module into the form the interpreter runs.

use std::collections::HashMap;

use naga::{
    AddressSpace, ArraySize, BinaryOperator, Binding, BuiltIn, Expression, Handle, MathFunction, RelationalFunction,
    ScalarKind, Statement, SwizzleComponent, Type, TypeInner, UnaryOperator,
};

use super::value::Comp;
use crate::error::{Error, Result};

/// Where a pointer points.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(super) enum Root {
    /// Index into the dispatch's bound buffer table.
    Buffer(usize),
    Workgroup(usize),
    Private(usize),
    Local(usize),
}

#[derive(Clone, Copy, Debug)]
pub(super) enum Builtin {
    GlobalId,
    LocalId,
    LocalIndex,
    WorkgroupId,
    NumWorkgroups,
}

#[derive(Clone, Debug)]
pub(super) enum Op {
    /// Produced by a statement rather than evaluated.
    Deferred,
    Const(Vec<u32>),
    Arg(usize),
    Pointer(Root),
    PtrOffset {
        base: usize,
        words: u32,
    },
    PtrIndex {
        base: usize,
        index: usize,
        stride: u32,
    },
    Slice {
        base: usize,
        start: usize,
        len: usize,
    },
    Pick {
        base: usize,
        index: usize,
        elem: usize,
    },
    Load {
        ptr: usize,
        flat: Vec<u32>,
    },
    Compose(Vec<usize>),
    Splat {
        value: usize,
        n: usize,
    },
    Swizzle {
        vector: usize,
        pattern: Vec<usize>,
    },
    Unary {
        op: UnaryOperator,
        kind: ScalarKind,
        expr: usize,
    },
    Binary {
        op: BinaryOperator,
        kind: ScalarKind,
        left: usize,
        right: usize,
    },
    Select {
        cond: usize,
        accept: usize,
        reject: usize,
    },
    Relational {
        fun: RelationalFunction,
        arg: usize,
    },
    Math {
        fun: MathFunction,
        kind: ScalarKind,
        args: Vec<usize>,
    },
    Cast {
        expr: usize,
        from: ScalarKind,
        to: ScalarKind,
        convert: bool,
    },
    ArrayLength {
        ptr: usize,
        stride: u32,
    },
}

#[derive(Clone, Debug)]
pub(super) struct VarLayout {
    pub words: usize,
    pub init: Option<(Vec<u32>, Vec<u32>)>,
}

pub(super) struct Program {
    pub module: naga::Module,
    pub entry: usize,
    pub workgroup_size: [u32; 3],
    pub ops: Vec<Op>,
    /// Expressions not covered by any `Emit`; evaluated once per batch.
    pub pre_evaluated: Vec<usize>,
    pub args: Vec<Builtin>,
    pub locals: Vec<VarLayout>,
    pub privates: Vec<VarLayout>,
    pub workgroup_vars: Vec<usize>,
    /// (binding number, read-only) per buffer slot, in slot order.
    pub bindings: Vec<(u32, bool)>,
    /// Word offsets of each component of a Store target, keyed by pointer expression.
    pub store_flat: HashMap<usize, Vec<u32>>,
}

impl Program {
    pub fn function(&self) -> &naga::Function {
        &self.module.entry_points[self.entry].function
    }
}

fn unsupported(what: impl std::fmt::Display) -> Error {
    Error::ShaderCompile(format!("unsupported by the emulated device: {what}"))
}

/// Parses, validates and lowers `source`.
pub(super) fn compile(source: &str) -> Result<Program> {
    let module = naga::front::wgsl::parse_str(source).map_err(|e| Error::ShaderCompile(e.emit_to_string(source)))?;
    let info = naga::valid::Validator::new(
        naga::valid::ValidationFlags::all(),
        naga::valid::Capabilities::default(),
    )
    .validate(&module)
    .map_err(|e| Error::ShaderCompile(e.emit_to_string(source)))?;
    let entry = module
        .entry_points
        .iter()
        .position(|e| e.stage == naga::ShaderStage::Compute && e.name == "main")
        .or_else(|| {
            module
                .entry_points
                .iter()
                .position(|e| e.stage == naga::ShaderStage::Compute)
        })
        .ok_or_else(|| Error::ShaderCompile("no compute entry point".into()))?;
    let mut layouter = naga::proc::Layouter::default();
    layouter
        .update(module.to_ctx())
        .map_err(|e| Error::ShaderCompile(e.to_string()))?;

    let mut lower = Lowering {
        module: &module,
        layouter: &layouter,
        fun_info: info.get_entry_point(entry),
        global_slots: HashMap::new(),
    };

    let mut bindings = Vec::new();
    let mut privates = Vec::new();
    let mut workgroup_vars = Vec::new();
    for (h, var) in module.global_variables.iter() {
        let root = match var.space {
            AddressSpace::Storage { access } => {
                let b = var
                    .binding
                    .as_ref()
                    .ok_or_else(|| unsupported("unbound storage variable"))?;
                if b.group != 0 {
                    return Err(unsupported("bind groups other than 0"));
                }
                bindings.push((b.binding, !access.contains(naga::StorageAccess::STORE)));
                Root::Buffer(bindings.len() - 1)
            }
            AddressSpace::Uniform => {
                let b = var
                    .binding
                    .as_ref()
                    .ok_or_else(|| unsupported("unbound uniform variable"))?;
                if b.group != 0 {
                    return Err(unsupported("bind groups other than 0"));
                }
                bindings.push((b.binding, true));
                Root::Buffer(bindings.len() - 1)
            }
            AddressSpace::WorkGroup => {
                workgroup_vars.push(lower.words(var.ty));
                Root::Workgroup(workgroup_vars.len() - 1)
            }
            AddressSpace::Private => {
                let init = match var.init {
                    Some(e) => Some((lower.flat_of(var.ty)?, lower.const_eval(e)?)),
                    None => None,
                };
                privates.push(VarLayout {
                    words: lower.words(var.ty),
                    init,
                });
                Root::Private(privates.len() - 1)
            }
            ref other => return Err(unsupported(format!("address space {other:?}"))),
        };
        lower.global_slots.insert(h, root);
    }

    let ep = &module.entry_points[entry];
    let fun = &ep.function;
    let mut args = Vec::new();
    for a in &fun.arguments {
        let b = match &a.binding {
            Some(Binding::BuiltIn(b)) => b,
            _ => return Err(unsupported("entry point arguments without a builtin binding")),
        };
        args.push(match b {
            BuiltIn::GlobalInvocationId => Builtin::GlobalId,
            BuiltIn::LocalInvocationId => Builtin::LocalId,
            BuiltIn::LocalInvocationIndex => Builtin::LocalIndex,
            BuiltIn::WorkGroupId => Builtin::WorkgroupId,
            BuiltIn::NumWorkGroups => Builtin::NumWorkgroups,
            other => return Err(unsupported(format!("builtin {other:?}"))),
        });
    }

    let mut locals = Vec::new();
    for (_, var) in fun.local_variables.iter() {
        let init = match var.init {
            Some(e) => Some((lower.flat_of(var.ty)?, lower.local_const(fun, e)?)),
            None => None,
        };
        locals.push(VarLayout {
            words: lower.words(var.ty),
            init,
        });
    }

    let mut ops = Vec::with_capacity(fun.expressions.len());
    for (h, e) in fun.expressions.iter() {
        ops.push(lower.expression(fun, h, e)?);
    }

    let mut emitted = vec![false; fun.expressions.len()];
    let mut store_flat = HashMap::new();
    lower.scan_block(&fun.body, &mut emitted, &mut store_flat)?;
    let pre_evaluated = (0..ops.len())
        .filter(|&i| !emitted[i] && !matches!(ops[i], Op::Deferred))
        .collect();

    let workgroup_size = ep.workgroup_size;
    Ok(Program {
        entry,
        workgroup_size,
        ops,
        pre_evaluated,
        args,
        locals,
        privates,
        workgroup_vars,
        bindings,
        store_flat,
        module,
    })
}

struct Lowering<'a> {
    module: &'a naga::Module,
    layouter: &'a naga::proc::Layouter,
    fun_info: &'a naga::valid::FunctionInfo,
    global_slots: HashMap<Handle<naga::GlobalVariable>, Root>,
}

fn check_scalar(s: naga::Scalar) -> Result<()> {
    if s.width != 4 && s.kind != ScalarKind::Bool {
        return Err(unsupported(format!("{}-byte scalars", s.width)));
    }
    Ok(())
}

fn swizzle_index(c: SwizzleComponent) -> usize {
    match c {
        SwizzleComponent::X => 0,
        SwizzleComponent::Y => 1,
        SwizzleComponent::Z => 2,
        SwizzleComponent::W => 3,
    }
}

impl Lowering<'_> {
    fn words(&self, ty: Handle<Type>) -> usize {
        (self.layouter[ty].size as usize).div_ceil(4)
    }

    fn inner(&self, ty: Handle<Type>) -> &TypeInner {
        &self.module.types[ty].inner
    }

    /// Word offset of every scalar component of a value of `ty`.
    fn flat_of(&self, ty: Handle<Type>) -> Result<Vec<u32>> {
        self.flat_inner(self.inner(ty))
    }

    fn flat_inner(&self, inner: &TypeInner) -> Result<Vec<u32>> {
        Ok(match *inner {
            TypeInner::Scalar(s) => {
                check_scalar(s)?;
                vec![0]
            }
            TypeInner::Vector { size, scalar } => {
                check_scalar(scalar)?;
                (0..size as u32).collect()
            }
            TypeInner::Array {
                base,
                size: ArraySize::Constant(n),
                stride,
            } => {
                let elem = self.flat_of(base)?;
                let mut out = Vec::with_capacity(elem.len() * n.get() as usize);
                for i in 0..n.get() {
                    out.extend(elem.iter().map(|&w| w + i * stride / 4));
                }
                out
            }
            TypeInner::Struct { ref members, .. } => {
                let mut out = Vec::new();
                for m in members {
                    out.extend(self.flat_of(m.ty)?.into_iter().map(|w| w + m.offset / 4));
                }
                out
            }
            ref other => return Err(unsupported(format!("values of type {other:?}"))),
        })
    }

    fn expr_inner(&self, h: Handle<Expression>) -> &TypeInner {
        self.fun_info[h].ty.inner_with(&self.module.types)
    }

    fn scalar_kind(&self, h: Handle<Expression>) -> Result<ScalarKind> {
        match *self.expr_inner(h) {
            TypeInner::Scalar(s) | TypeInner::Vector { scalar: s, .. } => {
                check_scalar(s)?;
                Ok(s.kind)
            }
            ref other => Err(unsupported(format!("operands of type {other:?}"))),
        }
    }

    /// The type a pointer expression points at.
    fn pointee(&self, h: Handle<Expression>) -> Result<TypeInner> {
        match *self.expr_inner(h) {
            TypeInner::Pointer { base, .. } => Ok(self.inner(base).clone()),
            TypeInner::ValuePointer { size: None, scalar, .. } => Ok(TypeInner::Scalar(scalar)),
            TypeInner::ValuePointer {
                size: Some(size),
                scalar,
                ..
            } => Ok(TypeInner::Vector { size, scalar }),
            ref other => Err(unsupported(format!("pointer of type {other:?}"))),
        }
    }

    fn is_pointer(&self, h: Handle<Expression>) -> bool {
        matches!(
            self.expr_inner(h),
            TypeInner::Pointer { .. } | TypeInner::ValuePointer { .. }
        )
    }

    fn literal(lit: &naga::Literal) -> Result<u32> {
        Ok(match *lit {
            naga::Literal::F32(v) => v.to_bits(),
            naga::Literal::U32(v) => v,
            naga::Literal::I32(v) => v as u32,
            naga::Literal::Bool(v) => u32::from(v),
            naga::Literal::AbstractInt(v) => v as i32 as u32,
            naga::Literal::AbstractFloat(v) => (v as f32).to_bits(),
            ref other => return Err(unsupported(format!("literal {other:?}"))),
        })
    }

    fn zero(&self, ty: Handle<Type>) -> Result<Vec<u32>> {
        Ok(vec![0; self.flat_of(ty)?.len()])
    }

    /// Evaluates a constant expression from the module's global arena.
    fn const_eval(&self, h: Handle<Expression>) -> Result<Vec<u32>> {
        match &self.module.global_expressions[h] {
            Expression::Literal(l) => Ok(vec![Self::literal(l)?]),
            Expression::Constant(c) => self.const_eval(self.module.constants[*c].init),
            Expression::ZeroValue(ty) => self.zero(*ty),
            Expression::Compose { components, .. } => {
                let mut out = Vec::new();
                for &c in components {
                    out.extend(self.const_eval(c)?);
                }
                Ok(out)
            }
            Expression::Splat { size, value } => Ok(self.const_eval(*value)?.repeat(*size as usize)),
            other => Err(unsupported(format!("constant expression {other:?}"))),
        }
    }

    /// Evaluates a constant expression from the function's arena.
    fn local_const(&self, fun: &naga::Function, h: Handle<Expression>) -> Result<Vec<u32>> {
        match &fun.expressions[h] {
            Expression::Literal(l) => Ok(vec![Self::literal(l)?]),
            Expression::Constant(c) => self.const_eval(self.module.constants[*c].init),
            Expression::ZeroValue(ty) => self.zero(*ty),
            Expression::Compose { components, .. } => {
                let mut out = Vec::new();
                for &c in components {
                    out.extend(self.local_const(fun, c)?);
                }
                Ok(out)
            }
            Expression::Splat { size, value } => Ok(self.local_const(fun, *value)?.repeat(*size as usize)),
            other => Err(unsupported(format!("initializer {other:?}"))),
        }
    }

    fn expression(&self, fun: &naga::Function, h: Handle<Expression>, e: &Expression) -> Result<Op> {
        let ix = |h: Handle<Expression>| h.index();
        Ok(match *e {
            Expression::Literal(ref l) => Op::Const(vec![Self::literal(l)?]),
            Expression::Constant(c) => Op::Const(self.const_eval(self.module.constants[c].init)?),
            Expression::ZeroValue(ty) => Op::Const(self.zero(ty)?),
            Expression::Compose { ref components, .. } => Op::Compose(components.iter().map(|&c| ix(c)).collect()),
            Expression::Access { base, index } => {
                if self.is_pointer(base) {
                    let stride = match self.pointee(base)? {
                        TypeInner::Array { stride, .. } => stride / 4,
                        TypeInner::Vector { .. } => 1,
                        other => return Err(unsupported(format!("dynamic indexing into {other:?}"))),
                    };
                    Op::PtrIndex {
                        base: ix(base),
                        index: ix(index),
                        stride,
                    }
                } else {
                    let elem = match *self.expr_inner(base) {
                        TypeInner::Vector { .. } => 1,
                        TypeInner::Array { base: eb, .. } => self.flat_of(eb)?.len(),
                        ref other => return Err(unsupported(format!("dynamic indexing into {other:?}"))),
                    };
                    Op::Pick {
                        base: ix(base),
                        index: ix(index),
                        elem,
                    }
                }
            }
            Expression::AccessIndex { base, index } => {
                if self.is_pointer(base) {
                    let words = match self.pointee(base)? {
                        TypeInner::Array { stride, .. } => index * stride / 4,
                        TypeInner::Vector { .. } => index,
                        TypeInner::Struct { members, .. } => members[index as usize].offset / 4,
                        other => return Err(unsupported(format!("indexing into {other:?}"))),
                    };
                    Op::PtrOffset { base: ix(base), words }
                } else {
                    let (start, len) = match *self.expr_inner(base) {
                        TypeInner::Vector { .. } => (index as usize, 1),
                        TypeInner::Array { base: eb, .. } => {
                            let n = self.flat_of(eb)?.len();
                            (index as usize * n, n)
                        }
                        TypeInner::Struct { ref members, .. } => {
                            let mut start = 0;
                            for m in &members[..index as usize] {
                                start += self.flat_of(m.ty)?.len();
                            }
                            (start, self.flat_of(members[index as usize].ty)?.len())
                        }
                        ref other => return Err(unsupported(format!("indexing into {other:?}"))),
                    };
                    Op::Slice {
                        base: ix(base),
                        start,
                        len,
                    }
                }
            }
            Expression::Splat { size, value } => Op::Splat {
                value: ix(value),
                n: size as usize,
            },
            Expression::Swizzle { size, vector, pattern } => Op::Swizzle {
                vector: ix(vector),
                pattern: pattern[..size as usize].iter().map(|&c| swizzle_index(c)).collect(),
            },
            Expression::FunctionArgument(i) => Op::Arg(i as usize),
            Expression::GlobalVariable(g) => match self.module.global_variables[g].space {
                AddressSpace::Handle => return Err(unsupported("texture and sampler bindings")),
                _ => Op::Pointer(self.global_slots[&g]),
            },
            Expression::LocalVariable(l) => Op::Pointer(Root::Local(l.index())),
            Expression::Load { pointer } => Op::Load {
                ptr: ix(pointer),
                flat: self.flat_inner(&self.pointee(pointer)?)?,
            },
            Expression::Unary { op, expr } => Op::Unary {
                op,
                kind: self.scalar_kind(expr)?,
                expr: ix(expr),
            },
            Expression::Binary { op, left, right } => {
                if matches!(self.expr_inner(left), TypeInner::Matrix { .. })
                    || matches!(self.expr_inner(right), TypeInner::Matrix { .. })
                {
                    return Err(unsupported("matrix arithmetic"));
                }
                Op::Binary {
                    op,
                    kind: self.scalar_kind(left)?,
                    left: ix(left),
                    right: ix(right),
                }
            }
            Expression::Select {
                condition,
                accept,
                reject,
            } => Op::Select {
                cond: ix(condition),
                accept: ix(accept),
                reject: ix(reject),
            },
            Expression::Relational { fun, argument } => Op::Relational { fun, arg: ix(argument) },
            Expression::Math {
                fun: mf,
                arg,
                arg1,
                arg2,
                arg3,
            } => {
                if !super::exec::math_supported(mf) {
                    return Err(unsupported(format!("builtin function {mf:?}")));
                }
                let mut args = vec![ix(arg)];
                args.extend([arg1, arg2, arg3].into_iter().flatten().map(ix));
                Op::Math {
                    fun: mf,
                    kind: self.scalar_kind(arg)?,
                    args,
                }
            }
            Expression::As { expr, kind, convert } => {
                if let Some(w) = convert {
                    if w != 4 && kind != ScalarKind::Bool {
                        return Err(unsupported(format!("{w}-byte conversions")));
                    }
                }
                Op::Cast {
                    expr: ix(expr),
                    from: self.scalar_kind(expr)?,
                    to: kind,
                    convert: convert.is_some(),
                }
            }
            Expression::WorkGroupUniformLoadResult { .. } => Op::Deferred,
            Expression::ArrayLength(ptr) => {
                let stride = match self.pointee(ptr)? {
                    TypeInner::Array { stride, .. } => stride / 4,
                    other => return Err(unsupported(format!("arrayLength of {other:?}"))),
                };
                Op::ArrayLength { ptr: ix(ptr), stride }
            }
            ref other => {
                let _ = fun;
                let _ = h;
                return Err(unsupported(format!("expression {other:?}")));
            }
        })
    }

    fn scan_block(
        &self,
        block: &naga::Block,
        emitted: &mut [bool],
        store_flat: &mut HashMap<usize, Vec<u32>>,
    ) -> Result<()> {
        for st in block.iter() {
            match st {
                Statement::Emit(range) => {
                    for h in range.clone() {
                        emitted[h.index()] = true;
                    }
                }
                Statement::Block(b) => self.scan_block(b, emitted, store_flat)?,
                Statement::If { accept, reject, .. } => {
                    self.scan_block(accept, emitted, store_flat)?;
                    self.scan_block(reject, emitted, store_flat)?;
                }
                Statement::Switch { cases, .. } => {
                    for c in cases {
                        self.scan_block(&c.body, emitted, store_flat)?;
                    }
                }
                Statement::Loop { body, continuing, .. } => {
                    self.scan_block(body, emitted, store_flat)?;
                    self.scan_block(continuing, emitted, store_flat)?;
                }
                Statement::Store { pointer, .. } => {
                    let flat = self.flat_inner(&self.pointee(*pointer)?)?;
                    store_flat.insert(pointer.index(), flat);
                }
                Statement::WorkGroupUniformLoad { pointer, .. } => {
                    let flat = self.flat_inner(&self.pointee(*pointer)?)?;
                    store_flat.insert(pointer.index(), flat);
                }
                Statement::Break
                | Statement::Continue
                | Statement::Return { value: None }
                | Statement::ControlBarrier(_)
                | Statement::MemoryBarrier(_) => {}
                other => return Err(unsupported(format!("statement {other:?}"))),
            }
        }
        Ok(())
    }
}

/// Component values of a constant op, for the interpreter.
pub(super) fn const_comps(words: &[u32]) -> Vec<Comp> {
    words.iter().map(|&w| Comp::U(w)).collect()
}
