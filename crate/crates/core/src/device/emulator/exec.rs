//! Lockstep interpreter.
//!
//! A dispatch is executed in batches of whole workgroups. Every expression is
//! evaluated for all lanes of a batch at once; control flow is handled with
//! per-lane masks that only gate stores. Because all lanes of a workgroup
//! advance statement by statement together, barriers need no action.

use naga::{BinaryOperator as B, MathFunction as M, RelationalFunction, ScalarKind as K, UnaryOperator};

use super::shader::{const_comps, Builtin, Op, Program, Root};
use super::value::{map1, map2, map3, Comp, Mask};
use crate::error::{Error, Result};

/// Lanes per batch, rounded down to whole workgroups.
const BATCH_LANES: usize = 4096;

pub(super) fn math_supported(f: M) -> bool {
    matches!(
        f,
        M::Abs
            | M::Min
            | M::Max
            | M::Clamp
            | M::Saturate
            | M::Cos
            | M::Sin
            | M::Tan
            | M::Cosh
            | M::Sinh
            | M::Tanh
            | M::Acos
            | M::Asin
            | M::Atan
            | M::Atan2
            | M::Radians
            | M::Degrees
            | M::Ceil
            | M::Floor
            | M::Round
            | M::Fract
            | M::Trunc
            | M::Exp
            | M::Exp2
            | M::Log
            | M::Log2
            | M::Pow
            | M::Dot
            | M::Length
            | M::Distance
            | M::Normalize
            | M::Sign
            | M::Fma
            | M::Mix
            | M::Step
            | M::SmoothStep
            | M::Sqrt
            | M::InverseSqrt
            | M::CountOneBits
            | M::ReverseBits
            | M::CountLeadingZeros
            | M::CountTrailingZeros
    )
}

#[derive(Clone, Debug)]
enum Slot {
    Empty,
    Val(Vec<Comp>),
    Ptr(Root, Comp),
}

enum Frame {
    Loop { broke: Mask, cont: Mask },
    Switch { broke: Mask },
}

/// Runs one dispatch. `mem[slot_map[s]]` backs the program's binding slot `s`.
pub(super) fn run(p: &Program, mem: &mut [Vec<u32>], slot_map: &[usize], groups: [u32; 3]) -> Result<()> {
    let [wx, wy, wz] = p.workgroup_size.map(|v| v as usize);
    let wg_lanes = wx * wy * wz;
    let total_groups = groups.iter().map(|&g| g as usize).product::<usize>();
    if total_groups == 0 || wg_lanes == 0 {
        return Ok(());
    }
    let per_batch = (BATCH_LANES / wg_lanes).max(1).min(total_groups);
    let mut start = 0;
    while start < total_groups {
        let nb = per_batch.min(total_groups - start);
        let mut batch = Batch::new(p, mem, slot_map, start, nb, groups);
        batch.run()?;
        start += nb;
    }
    Ok(())
}

struct Batch<'a> {
    p: &'a Program,
    mem: &'a mut [Vec<u32>],
    slot_map: &'a [usize],
    lanes: usize,
    /// Workgroups in this batch.
    nb: usize,
    lane_wg: Vec<u32>,
    args: Vec<Vec<Comp>>,
    slots: Vec<Slot>,
    locals: Vec<Vec<Comp>>,
    privates: Vec<Vec<Comp>>,
    workgroup: Vec<Vec<u32>>,
    frames: Vec<Frame>,
}

fn var_init(words: usize, init: &Option<(Vec<u32>, Vec<u32>)>) -> Vec<Comp> {
    let mut v = vec![Comp::U(0); words];
    if let Some((flat, vals)) = init {
        for (&w, &x) in flat.iter().zip(vals) {
            v[w as usize] = Comp::U(x);
        }
    }
    v
}

fn vec3(parts: [Vec<u32>; 3]) -> Vec<Comp> {
    parts.into_iter().map(|v| Comp::V(v).compact()).collect()
}

impl<'a> Batch<'a> {
    fn new(
        p: &'a Program,
        mem: &'a mut [Vec<u32>],
        slot_map: &'a [usize],
        first_group: usize,
        nb: usize,
        groups: [u32; 3],
    ) -> Self {
        let [wx, wy, wz] = p.workgroup_size;
        let wg_lanes = (wx * wy * wz) as usize;
        let lanes = nb * wg_lanes;
        let [gx, gy, _] = groups;
        let mut lane_wg = Vec::with_capacity(lanes);
        let mut gid = [
            Vec::with_capacity(lanes),
            Vec::with_capacity(lanes),
            Vec::with_capacity(lanes),
        ];
        let mut lid = [
            Vec::with_capacity(lanes),
            Vec::with_capacity(lanes),
            Vec::with_capacity(lanes),
        ];
        let mut wid = [
            Vec::with_capacity(lanes),
            Vec::with_capacity(lanes),
            Vec::with_capacity(lanes),
        ];
        let mut lindex = Vec::with_capacity(lanes);
        for b in 0..nb {
            let g = (first_group + b) as u32;
            let w = [g % gx, (g / gx) % gy, g / (gx * gy)];
            for li in 0..wg_lanes as u32 {
                let l = [li % wx, (li / wx) % wy, li / (wx * wy)];
                lane_wg.push(b as u32);
                lindex.push(li);
                for d in 0..3 {
                    lid[d].push(l[d]);
                    wid[d].push(w[d]);
                    gid[d].push(w[d] * p.workgroup_size[d] + l[d]);
                }
            }
        }
        let gid = vec3(gid);
        let lid = vec3(lid);
        let wid = vec3(wid);
        let lindex = vec![Comp::V(lindex).compact()];
        let nwg = groups.iter().map(|&g| Comp::U(g)).collect::<Vec<_>>();
        let args = p
            .args
            .iter()
            .map(|b| match b {
                Builtin::GlobalId => gid.clone(),
                Builtin::LocalId => lid.clone(),
                Builtin::LocalIndex => lindex.clone(),
                Builtin::WorkgroupId => wid.clone(),
                Builtin::NumWorkgroups => nwg.clone(),
            })
            .collect();
        Batch {
            p,
            mem,
            slot_map,
            lanes,
            nb,
            lane_wg,
            args,
            slots: vec![Slot::Empty; p.ops.len()],
            locals: p.locals.iter().map(|v| var_init(v.words, &v.init)).collect(),
            privates: p.privates.iter().map(|v| var_init(v.words, &v.init)).collect(),
            workgroup: p.workgroup_vars.iter().map(|&w| vec![0; w * nb]).collect(),
            frames: Vec::new(),
        }
    }

    fn run(&mut self) -> Result<()> {
        for &h in &self.p.pre_evaluated {
            self.eval(h)?;
        }
        let p = self.p;
        self.block(&p.function().body, Mask::full(self.lanes))?;
        Ok(())
    }

    fn val(&self, h: usize) -> &[Comp] {
        match &self.slots[h] {
            Slot::Val(v) => v,
            other => panic!("expression {h} is not a value: {other:?}"),
        }
    }

    fn scalar(&self, h: usize) -> &Comp {
        &self.val(h)[0]
    }

    fn ptr(&self, h: usize) -> (Root, &Comp) {
        match &self.slots[h] {
            Slot::Ptr(r, off) => (*r, off),
            other => panic!("expression {h} is not a pointer: {other:?}"),
        }
    }

    fn block(&mut self, block: &naga::Block, mut m: Mask) -> Result<Mask> {
        for st in block.iter() {
            if !m.any() {
                break;
            }
            m = self.stmt(st, m)?;
        }
        Ok(m)
    }

    fn stmt(&mut self, st: &naga::Statement, m: Mask) -> Result<Mask> {
        use naga::Statement as S;
        Ok(match st {
            S::Emit(range) => {
                for h in range.clone() {
                    self.eval(h.index())?;
                }
                m
            }
            S::Block(b) => self.block(b, m)?,
            S::If {
                condition,
                accept,
                reject,
            } => match self.scalar(condition.index()).clone() {
                Comp::U(c) => {
                    if c != 0 {
                        self.block(accept, m)?
                    } else {
                        self.block(reject, m)?
                    }
                }
                Comp::V(c) => {
                    let mt = m.and_cond(&c, false);
                    let me = m.and_cond(&c, true);
                    let rt = if mt.any() { self.block(accept, mt)? } else { mt };
                    let re = if me.any() { self.block(reject, me)? } else { me };
                    rt.or(&re)
                }
            },
            S::Switch { selector, cases } => self.switch(selector.index(), cases, m)?,
            S::Loop {
                body,
                continuing,
                break_if,
            } => self.looped(body, continuing, *break_if, m)?,
            S::Break => {
                match self.frames.last_mut() {
                    Some(Frame::Loop { broke, .. }) | Some(Frame::Switch { broke }) => broke.or_assign(&m),
                    None => return Err(Error::DeviceLost("break outside of a loop".into())),
                }
                Mask::empty(self.lanes)
            }
            S::Continue => {
                let frame = self.frames.iter_mut().rev().find_map(|f| match f {
                    Frame::Loop { cont, .. } => Some(cont),
                    Frame::Switch { .. } => None,
                });
                match frame {
                    Some(cont) => cont.or_assign(&m),
                    None => return Err(Error::DeviceLost("continue outside of a loop".into())),
                }
                Mask::empty(self.lanes)
            }
            S::Return { .. } => Mask::empty(self.lanes),
            S::ControlBarrier(_) | S::MemoryBarrier(_) => m,
            S::Store { pointer, value } => {
                let value = self.val(value.index()).to_vec();
                self.store(pointer.index(), &value, &m);
                m
            }
            S::WorkGroupUniformLoad { pointer, result } => {
                let flat = &self.p.store_flat[&pointer.index()];
                let v = self.load(pointer.index(), flat);
                self.slots[result.index()] = Slot::Val(v);
                m
            }
            other => return Err(Error::DeviceLost(format!("unexpected statement {other:?}"))),
        })
    }

    fn switch(&mut self, selector: usize, cases: &[naga::SwitchCase], m: Mask) -> Result<Mask> {
        use naga::SwitchValue;
        let sel = self.scalar(selector).clone();
        let matches = |v: &SwitchValue, lane_val: u32| match *v {
            SwitchValue::I32(x) => x as u32 == lane_val,
            SwitchValue::U32(x) => x == lane_val,
            SwitchValue::Default => false,
        };
        let lanes = self.lanes;
        let case_mask = |v: &SwitchValue| -> Mask {
            let hit: Vec<u32> = (0..lanes)
                .map(|l| {
                    let s = sel.get(l);
                    let hit = match v {
                        SwitchValue::Default => !cases.iter().any(|c| matches(&c.value, s)),
                        v => matches(v, s),
                    };
                    u32::from(hit)
                })
                .collect();
            m.and_cond(&hit, false)
        };
        self.frames.push(Frame::Switch {
            broke: Mask::empty(self.lanes),
        });
        let mut exited = Mask::empty(self.lanes);
        let mut carry = Mask::empty(self.lanes);
        let hits: Vec<Mask> = cases.iter().map(|c| case_mask(&c.value)).collect();
        for (case, hit) in cases.iter().zip(&hits) {
            let enter = carry.or(hit);
            let after = if enter.any() {
                self.block(&case.body, enter)?
            } else {
                enter
            };
            if case.fall_through {
                carry = after;
            } else {
                exited.or_assign(&after);
                carry = Mask::empty(self.lanes);
            }
        }
        exited.or_assign(&carry);
        if let Some(Frame::Switch { broke }) = self.frames.pop() {
            exited.or_assign(&broke);
        }
        Ok(exited)
    }

    fn looped(
        &mut self,
        body: &naga::Block,
        continuing: &naga::Block,
        break_if: Option<naga::Handle<naga::Expression>>,
        m: Mask,
    ) -> Result<Mask> {
        self.frames.push(Frame::Loop {
            broke: Mask::empty(self.lanes),
            cont: Mask::empty(self.lanes),
        });
        let mut exited = Mask::empty(self.lanes);
        let mut active = m;
        while active.any() {
            let after = self.block(body, active)?;
            let cont = match self.frames.last_mut() {
                Some(Frame::Loop { cont, .. }) => std::mem::replace(cont, Mask::empty(self.lanes)),
                _ => unreachable!(),
            };
            let mut next = after.or(&cont);
            if next.any() {
                next = self.block(continuing, next)?;
                if let Some(bi) = break_if {
                    match self.scalar(bi.index()).clone() {
                        Comp::U(0) => {}
                        Comp::U(_) => {
                            exited.or_assign(&next);
                            next = Mask::empty(self.lanes);
                        }
                        Comp::V(c) => {
                            exited.or_assign(&next.and_cond(&c, false));
                            next = next.and_cond(&c, true);
                        }
                    }
                }
            }
            active = next;
        }
        if let Some(Frame::Loop { broke, .. }) = self.frames.pop() {
            exited.or_assign(&broke);
        }
        Ok(exited)
    }

    fn workgroup_addr(&self, var: usize, lane: usize, off: u32) -> usize {
        self.lane_wg[lane] as usize * self.p.workgroup_vars[var] + off as usize
    }

    fn load(&self, ptr: usize, flat: &[u32]) -> Vec<Comp> {
        let (root, off) = self.ptr(ptr);
        let lanes = self.lanes;
        flat.iter()
            .map(|&f| match (root, off) {
                (Root::Buffer(s), Comp::U(o)) => {
                    let buf = &self.mem[self.slot_map[s]];
                    Comp::U(buf.get((o + f) as usize).copied().unwrap_or(0))
                }
                (Root::Buffer(s), Comp::V(os)) => {
                    let buf = &self.mem[self.slot_map[s]];
                    Comp::V(
                        os.iter()
                            .map(|&o| buf.get(o.wrapping_add(f) as usize).copied().unwrap_or(0))
                            .collect(),
                    )
                }
                (Root::Workgroup(v), off) => {
                    let mem = &self.workgroup[v];
                    let words = self.p.workgroup_vars[v] as u32;
                    if self.nb == 1 {
                        if let Comp::U(o) = off {
                            return Comp::U(if o + f < words { mem[(o + f) as usize] } else { 0 });
                        }
                    }
                    Comp::V(
                        (0..lanes)
                            .map(|l| {
                                let o = off.get(l).wrapping_add(f);
                                if o < words {
                                    mem[self.workgroup_addr(v, l, o)]
                                } else {
                                    0
                                }
                            })
                            .collect(),
                    )
                }
                (Root::Local(v), off) | (Root::Private(v), off) => {
                    let words = match root {
                        Root::Local(_) => &self.locals[v],
                        _ => &self.privates[v],
                    };
                    match off {
                        Comp::U(o) => words.get((o + f) as usize).cloned().unwrap_or(Comp::U(0)),
                        Comp::V(os) => Comp::V(
                            os.iter()
                                .enumerate()
                                .map(|(l, &o)| words.get(o.wrapping_add(f) as usize).map_or(0, |c| c.get(l)))
                                .collect(),
                        ),
                    }
                }
            })
            .collect()
    }

    fn store(&mut self, ptr: usize, value: &[Comp], m: &Mask) {
        let flat = &self.p.store_flat[&ptr];
        let (root, off) = self.ptr(ptr);
        let off = off.clone();
        let lanes = self.lanes;
        for (&f, src) in flat.iter().zip(value) {
            match root {
                Root::Buffer(s) => {
                    let buf = &mut self.mem[self.slot_map[s]];
                    match (&off, src) {
                        (Comp::U(o), Comp::U(v)) => {
                            if let Some(d) = buf.get_mut((o + f) as usize) {
                                *d = *v;
                            }
                        }
                        (Comp::V(os), src) if m.all() => {
                            for (l, &o) in os.iter().enumerate() {
                                if let Some(d) = buf.get_mut(o.wrapping_add(f) as usize) {
                                    *d = src.get(l);
                                }
                            }
                        }
                        _ => {
                            for l in m.iter_active() {
                                if let Some(d) = buf.get_mut(off.get(l).wrapping_add(f) as usize) {
                                    *d = src.get(l);
                                }
                            }
                        }
                    }
                }
                Root::Workgroup(v) => {
                    let words = self.p.workgroup_vars[v];
                    let per = words as u32;
                    for l in m.iter_active() {
                        let o = off.get(l).wrapping_add(f);
                        if o < per {
                            let a = self.lane_wg[l] as usize * words + o as usize;
                            self.workgroup[v][a] = src.get(l);
                        }
                    }
                }
                Root::Local(v) | Root::Private(v) => {
                    let words = match root {
                        Root::Local(_) => &mut self.locals[v],
                        _ => &mut self.privates[v],
                    };
                    match &off {
                        Comp::U(o) => {
                            if let Some(dst) = words.get_mut((o + f) as usize) {
                                blend(dst, src, m, lanes);
                            }
                        }
                        Comp::V(os) => {
                            for l in m.iter_active() {
                                let o = os[l].wrapping_add(f) as usize;
                                if let Some(dst) = words.get_mut(o) {
                                    dst.make_varying(lanes)[l] = src.get(l);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn eval(&mut self, h: usize) -> Result<()> {
        let p = self.p;
        let slot = match &p.ops[h] {
            Op::Deferred => return Ok(()),
            Op::Const(words) => Slot::Val(const_comps(words)),
            Op::Arg(i) => Slot::Val(self.args[*i].clone()),
            Op::Pointer(root) => Slot::Ptr(*root, Comp::U(0)),
            Op::PtrOffset { base, words } => {
                let (root, off) = self.ptr(*base);
                Slot::Ptr(root, map1(off, |o| o.wrapping_add(*words)))
            }
            Op::PtrIndex { base, index, stride } => {
                let (root, off) = self.ptr(*base);
                let idx = self.scalar(*index);
                Slot::Ptr(root, map2(off, idx, |o, i| o.wrapping_add(i.wrapping_mul(*stride))))
            }
            Op::Slice { base, start, len } => Slot::Val(self.val(*base)[*start..start + len].to_vec()),
            Op::Pick { base, index, elem } => {
                let v = self.val(*base);
                let n = v.len() / elem;
                let out = match self.scalar(*index) {
                    Comp::U(i) => {
                        let i = *i as usize;
                        if i < n {
                            v[i * elem..(i + 1) * elem].to_vec()
                        } else {
                            vec![Comp::U(0); *elem]
                        }
                    }
                    Comp::V(is) => (0..*elem)
                        .map(|j| {
                            Comp::V(
                                is.iter()
                                    .enumerate()
                                    .map(|(l, &i)| {
                                        let i = i as usize;
                                        if i < n {
                                            v[i * elem + j].get(l)
                                        } else {
                                            0
                                        }
                                    })
                                    .collect(),
                            )
                        })
                        .collect(),
                };
                Slot::Val(out)
            }
            Op::Load { ptr, flat } => Slot::Val(self.load(*ptr, flat)),
            Op::Compose(parts) => Slot::Val(parts.iter().flat_map(|&c| self.val(c).iter().cloned()).collect()),
            Op::Splat { value, n } => Slot::Val(vec![self.scalar(*value).clone(); *n]),
            Op::Swizzle { vector, pattern } => {
                let v = self.val(*vector);
                Slot::Val(pattern.iter().map(|&i| v[i].clone()).collect())
            }
            Op::Unary { op, kind, expr } => Slot::Val(self.val(*expr).iter().map(|c| unary(*op, *kind, c)).collect()),
            Op::Binary { op, kind, left, right } => {
                let (a, b) = (self.val(*left), self.val(*right));
                let n = a.len().max(b.len());
                Slot::Val(
                    (0..n)
                        .map(|i| binary(*op, *kind, &a[i.min(a.len() - 1)], &b[i.min(b.len() - 1)]))
                        .collect(),
                )
            }
            Op::Select { cond, accept, reject } => {
                let (c, a, r) = (self.val(*cond), self.val(*accept), self.val(*reject));
                Slot::Val(
                    (0..a.len())
                        .map(|i| {
                            map3(
                                &c[i.min(c.len() - 1)],
                                &a[i],
                                &r[i],
                                |c, a, r| if c != 0 { a } else { r },
                            )
                        })
                        .collect(),
                )
            }
            Op::Relational { fun, arg } => {
                let v = self.val(*arg);
                Slot::Val(match fun {
                    RelationalFunction::All => {
                        vec![v[1..].iter().fold(v[0].clone(), |acc, c| map2(&acc, c, |a, b| a & b))]
                    }
                    RelationalFunction::Any => {
                        vec![v[1..].iter().fold(v[0].clone(), |acc, c| map2(&acc, c, |a, b| a | b))]
                    }
                    RelationalFunction::IsNan => v.iter().map(|c| map1(c, |x| u32::from(fl(x).is_nan()))).collect(),
                    RelationalFunction::IsInf => {
                        v.iter().map(|c| map1(c, |x| u32::from(fl(x).is_infinite()))).collect()
                    }
                })
            }
            Op::Math { fun, kind, args } => {
                let args: Vec<&[Comp]> = args.iter().map(|&a| self.val(a)).collect();
                Slot::Val(math(*fun, *kind, &args))
            }
            Op::Cast {
                expr,
                from,
                to,
                convert,
            } => {
                let v = self.val(*expr);
                Slot::Val(v.iter().map(|c| cast(c, *from, *to, *convert)).collect())
            }
            Op::ArrayLength { ptr, stride } => {
                let (root, off) = self.ptr(*ptr);
                let len = match (root, off) {
                    (Root::Buffer(s), Comp::U(o)) => {
                        let words = self.mem[self.slot_map[s]].len() as u32;
                        words.saturating_sub(*o) / (*stride).max(1)
                    }
                    _ => 0,
                };
                Slot::Val(vec![Comp::U(len)])
            }
        };
        self.slots[h] = slot;
        Ok(())
    }
}

fn blend(dst: &mut Comp, src: &Comp, m: &Mask, lanes: usize) {
    if m.all() {
        *dst = src.clone();
        return;
    }
    if let (Comp::U(d), Comp::U(s)) = (&*dst, src) {
        if d == s {
            return;
        }
    }
    let d = dst.make_varying(lanes);
    match src {
        Comp::U(s) => {
            for l in m.iter_active() {
                d[l] = *s;
            }
        }
        Comp::V(s) => {
            for l in m.iter_active() {
                d[l] = s[l];
            }
        }
    }
}

#[inline]
fn fl(x: u32) -> f32 {
    f32::from_bits(x)
}

#[inline]
fn bits(x: f32) -> u32 {
    x.to_bits()
}

fn unary(op: UnaryOperator, kind: K, c: &Comp) -> Comp {
    match (op, kind) {
        (UnaryOperator::Negate, K::Float) => map1(c, |x| x ^ 0x8000_0000),
        (UnaryOperator::Negate, _) => map1(c, |x| (x as i32).wrapping_neg() as u32),
        (UnaryOperator::LogicalNot, _) => map1(c, |x| u32::from(x == 0)),
        (UnaryOperator::BitwiseNot, _) => map1(c, |x| !x),
    }
}

fn binary(op: B, kind: K, a: &Comp, b: &Comp) -> Comp {
    macro_rules! f {
        ($e:expr) => {
            map2(a, b, $e)
        };
    }
    match (kind, op) {
        (K::Float, B::Add) => f!(|x, y| bits(fl(x) + fl(y))),
        (K::Float, B::Subtract) => f!(|x, y| bits(fl(x) - fl(y))),
        (K::Float, B::Multiply) => f!(|x, y| bits(fl(x) * fl(y))),
        (K::Float, B::Divide) => f!(|x, y| bits(fl(x) / fl(y))),
        (K::Float, B::Modulo) => f!(|x, y| bits(fl(x) % fl(y))),
        (K::Float, B::Less) => f!(|x, y| u32::from(fl(x) < fl(y))),
        (K::Float, B::LessEqual) => f!(|x, y| u32::from(fl(x) <= fl(y))),
        (K::Float, B::Greater) => f!(|x, y| u32::from(fl(x) > fl(y))),
        (K::Float, B::GreaterEqual) => f!(|x, y| u32::from(fl(x) >= fl(y))),
        (K::Float, B::Equal) => f!(|x, y| u32::from(fl(x) == fl(y))),
        (K::Float, B::NotEqual) => f!(|x, y| u32::from(fl(x) != fl(y))),

        (_, B::Add) => f!(|x, y| x.wrapping_add(y)),
        (_, B::Subtract) => f!(|x, y| x.wrapping_sub(y)),
        (_, B::Multiply) => f!(|x, y| x.wrapping_mul(y)),
        (K::Sint, B::Divide) => f!(|x, y| {
            let (x, y) = (x as i32, y as i32);
            if y == 0 || (x == i32::MIN && y == -1) {
                x as u32
            } else {
                (x / y) as u32
            }
        }),
        (_, B::Divide) => f!(|x, y| x.checked_div(y).unwrap_or(x)),
        (K::Sint, B::Modulo) => f!(|x, y| {
            let (x, y) = (x as i32, y as i32);
            if y == 0 || (x == i32::MIN && y == -1) {
                0
            } else {
                (x % y) as u32
            }
        }),
        (_, B::Modulo) => f!(|x, y| x.checked_rem(y).unwrap_or(0)),
        (K::Sint, B::Less) => f!(|x, y| u32::from((x as i32) < (y as i32))),
        (K::Sint, B::LessEqual) => f!(|x, y| u32::from((x as i32) <= (y as i32))),
        (K::Sint, B::Greater) => f!(|x, y| u32::from((x as i32) > (y as i32))),
        (K::Sint, B::GreaterEqual) => f!(|x, y| u32::from((x as i32) >= (y as i32))),
        (_, B::Less) => f!(|x, y| u32::from(x < y)),
        (_, B::LessEqual) => f!(|x, y| u32::from(x <= y)),
        (_, B::Greater) => f!(|x, y| u32::from(x > y)),
        (_, B::GreaterEqual) => f!(|x, y| u32::from(x >= y)),
        (_, B::Equal) => f!(|x, y| u32::from(x == y)),
        (_, B::NotEqual) => f!(|x, y| u32::from(x != y)),
        (_, B::And) | (_, B::LogicalAnd) => f!(|x, y| x & y),
        (_, B::InclusiveOr) | (_, B::LogicalOr) => f!(|x, y| x | y),
        (_, B::ExclusiveOr) => f!(|x, y| x ^ y),
        (_, B::ShiftLeft) => f!(|x, y| x << (y & 31)),
        (K::Sint, B::ShiftRight) => f!(|x, y| ((x as i32) >> (y & 31)) as u32),
        (_, B::ShiftRight) => f!(|x, y| x >> (y & 31)),
    }
}

fn cast(c: &Comp, from: K, to: K, convert: bool) -> Comp {
    if !convert {
        return c.clone();
    }
    match (from, to) {
        (a, b) if a == b => c.clone(),
        (K::Float, K::Sint) => map1(c, |x| fl(x) as i32 as u32),
        (K::Float, K::Uint) => map1(c, |x| fl(x) as u32),
        (K::Float, K::Bool) => map1(c, |x| u32::from(fl(x) != 0.0)),
        (K::Sint, K::Float) => map1(c, |x| bits(x as i32 as f32)),
        (K::Uint, K::Float) => map1(c, |x| bits(x as f32)),
        (K::Bool, K::Float) => map1(c, |x| bits(if x != 0 { 1.0 } else { 0.0 })),
        (_, K::Bool) => map1(c, |x| u32::from(x != 0)),
        _ => c.clone(),
    }
}

fn fmap1(c: &Comp, f: impl Fn(f32) -> f32) -> Comp {
    map1(c, |x| bits(f(fl(x))))
}

fn fmap2(a: &Comp, b: &Comp, f: impl Fn(f32, f32) -> f32) -> Comp {
    map2(a, b, |x, y| bits(f(fl(x), fl(y))))
}

fn fmap3(a: &Comp, b: &Comp, c: &Comp, f: impl Fn(f32, f32, f32) -> f32) -> Comp {
    map3(a, b, c, |x, y, z| bits(f(fl(x), fl(y), fl(z))))
}

fn dot(kind: K, a: &[Comp], b: &[Comp]) -> Comp {
    let mul = |x: &Comp, y: &Comp| binary(B::Multiply, kind, x, y);
    let mut acc = mul(&a[0], &b[0]);
    for i in 1..a.len() {
        acc = binary(B::Add, kind, &acc, &mul(&a[i], &b[i]));
    }
    acc
}

fn math(fun: M, kind: K, args: &[&[Comp]]) -> Vec<Comp> {
    let n = args.iter().map(|a| a.len()).max().unwrap_or(1);
    let at = |a: usize, i: usize| &args[a][i.min(args[a].len() - 1)];
    let each = |f: &dyn Fn(usize) -> Comp| (0..n).map(f).collect::<Vec<_>>();
    let float = kind == K::Float;
    let sint = kind == K::Sint;
    match fun {
        M::Dot => vec![dot(kind, args[0], args[1])],
        M::Length => {
            let d = dot(K::Float, args[0], args[0]);
            vec![fmap1(&d, f32::sqrt)]
        }
        M::Distance => {
            let diff: Vec<Comp> = (0..args[0].len())
                .map(|i| binary(B::Subtract, K::Float, &args[0][i], &args[1][i]))
                .collect();
            vec![fmap1(&dot(K::Float, &diff, &diff), f32::sqrt)]
        }
        M::Normalize => {
            let len = fmap1(&dot(K::Float, args[0], args[0]), f32::sqrt);
            args[0].iter().map(|c| binary(B::Divide, K::Float, c, &len)).collect()
        }
        M::Abs if float => each(&|i| map1(at(0, i), |x| x & 0x7fff_ffff)),
        M::Abs if sint => each(&|i| map1(at(0, i), |x| (x as i32).wrapping_abs() as u32)),
        M::Abs => each(&|i| at(0, i).clone()),
        M::Min if float => each(&|i| fmap2(at(0, i), at(1, i), f32::min)),
        M::Min if sint => each(&|i| map2(at(0, i), at(1, i), |x, y| (x as i32).min(y as i32) as u32)),
        M::Min => each(&|i| map2(at(0, i), at(1, i), u32::min)),
        M::Max if float => each(&|i| fmap2(at(0, i), at(1, i), f32::max)),
        M::Max if sint => each(&|i| map2(at(0, i), at(1, i), |x, y| (x as i32).max(y as i32) as u32)),
        M::Max => each(&|i| map2(at(0, i), at(1, i), u32::max)),
        M::Clamp if float => each(&|i| fmap3(at(0, i), at(1, i), at(2, i), |x, lo, hi| x.max(lo).min(hi))),
        M::Clamp if sint => each(&|i| {
            map3(at(0, i), at(1, i), at(2, i), |x, lo, hi| {
                (x as i32).max(lo as i32).min(hi as i32) as u32
            })
        }),
        M::Clamp => each(&|i| map3(at(0, i), at(1, i), at(2, i), |x, lo, hi| x.max(lo).min(hi))),
        M::Saturate => each(&|i| fmap1(at(0, i), |x| x.clamp(0.0, 1.0))),
        M::Cos => each(&|i| fmap1(at(0, i), f32::cos)),
        M::Sin => each(&|i| fmap1(at(0, i), f32::sin)),
        M::Tan => each(&|i| fmap1(at(0, i), f32::tan)),
        M::Cosh => each(&|i| fmap1(at(0, i), f32::cosh)),
        M::Sinh => each(&|i| fmap1(at(0, i), f32::sinh)),
        M::Tanh => each(&|i| fmap1(at(0, i), f32::tanh)),
        M::Acos => each(&|i| fmap1(at(0, i), f32::acos)),
        M::Asin => each(&|i| fmap1(at(0, i), f32::asin)),
        M::Atan => each(&|i| fmap1(at(0, i), f32::atan)),
        M::Atan2 => each(&|i| fmap2(at(0, i), at(1, i), f32::atan2)),
        M::Radians => each(&|i| fmap1(at(0, i), f32::to_radians)),
        M::Degrees => each(&|i| fmap1(at(0, i), f32::to_degrees)),
        M::Ceil => each(&|i| fmap1(at(0, i), f32::ceil)),
        M::Floor => each(&|i| fmap1(at(0, i), f32::floor)),
        M::Round => each(&|i| fmap1(at(0, i), f32::round_ties_even)),
        M::Fract => each(&|i| fmap1(at(0, i), |x| x - x.floor())),
        M::Trunc => each(&|i| fmap1(at(0, i), f32::trunc)),
        M::Exp => each(&|i| fmap1(at(0, i), f32::exp)),
        M::Exp2 => each(&|i| fmap1(at(0, i), f32::exp2)),
        M::Log => each(&|i| fmap1(at(0, i), f32::ln)),
        M::Log2 => each(&|i| fmap1(at(0, i), f32::log2)),
        M::Pow => each(&|i| fmap2(at(0, i), at(1, i), f32::powf)),
        M::Sign if float => each(&|i| {
            fmap1(at(0, i), |x| {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            })
        }),
        M::Sign => each(&|i| map1(at(0, i), |x| (x as i32).signum() as u32)),
        M::Fma => each(&|i| fmap3(at(0, i), at(1, i), at(2, i), f32::mul_add)),
        M::Mix => each(&|i| fmap3(at(0, i), at(1, i), at(2, i), |a, b, t| a * (1.0 - t) + b * t)),
        M::Step => each(&|i| fmap2(at(0, i), at(1, i), |edge, x| if edge <= x { 1.0 } else { 0.0 })),
        M::SmoothStep => each(&|i| {
            fmap3(at(0, i), at(1, i), at(2, i), |lo, hi, x| {
                let t = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
                t * t * (3.0 - 2.0 * t)
            })
        }),
        M::Sqrt => each(&|i| fmap1(at(0, i), f32::sqrt)),
        M::InverseSqrt => each(&|i| fmap1(at(0, i), |x| 1.0 / x.sqrt())),
        M::CountOneBits => each(&|i| map1(at(0, i), u32::count_ones)),
        M::ReverseBits => each(&|i| map1(at(0, i), u32::reverse_bits)),
        M::CountLeadingZeros => each(&|i| map1(at(0, i), u32::leading_zeros)),
        M::CountTrailingZeros => each(&|i| map1(at(0, i), u32::trailing_zeros)),
        other => unreachable!("{other:?} is rejected at compile time"),
    }
}

#[cfg(test)]
mod tests {
    use super::super::shader::compile;
    use super::*;

    fn run_src(src: &str, mut mem: Vec<Vec<u32>>, groups: [u32; 3]) -> Vec<Vec<u32>> {
        let p = compile(src).unwrap();
        let map: Vec<usize> = p.bindings.iter().map(|&(b, _)| b as usize).collect();
        run(&p, &mut mem, &map, groups).unwrap();
        mem
    }

    #[test]
    fn doubles_in_place() {
        let src = r#"
@group(0) @binding(0) var<storage, read_write> a: array<f32>;
@compute @workgroup_size(4)
fn main(@builtin(global_invocation_id) gid: vec3<u32>) {
    if (gid.x < arrayLength(&a)) {
        a[gid.x] = a[gid.x] * 2.0;
    }
}"#;
        let data: Vec<u32> = (0..10).map(|i| (i as f32).to_bits()).collect();
        let out = run_src(src, vec![data], [3, 1, 1]);
        let got: Vec<f32> = out[0].iter().map(|&w| f32::from_bits(w)).collect();
        assert_eq!(got, (0..10).map(|i| 2.0 * i as f32).collect::<Vec<_>>());
    }

    #[test]
    fn divergent_loops_break_and_continue() {
        // out[i] = sum of odd k < i, stopping once the sum exceeds 20
        let src = r#"
@group(0) @binding(0) var<storage, read_write> out: array<u32>;
@compute @workgroup_size(8)
fn main(@builtin(global_invocation_id) gid: vec3<u32>) {
    var s: u32 = 0u;
    for (var k: u32 = 0u; k < gid.x; k = k + 1u) {
        if (k % 2u == 0u) { continue; }
        s = s + k;
        if (s > 20u) { break; }
    }
    switch (gid.x) {
        case 0u, 1u: { s = 100u; }
        case 3u: { s = s + 1000u; }
        default: {}
    }
    out[gid.x] = s;
}"#;
        let out = run_src(src, vec![vec![0; 16]], [2, 1, 1]);
        let mut expected = Vec::new();
        for i in 0..16u32 {
            let mut s = 0;
            for k in 0..i {
                if k % 2 == 0 {
                    continue;
                }
                s += k;
                if s > 20 {
                    break;
                }
            }
            match i {
                0 | 1 => s = 100,
                3 => s += 1000,
                _ => {}
            }
            expected.push(s);
        }
        assert_eq!(out[0], expected);
    }

    #[test]
    fn workgroup_memory_and_barriers() {
        // reverse each workgroup's slice through shared memory
        let src = r#"
var<workgroup> tile: array<u32, 8>;
@group(0) @binding(0) var<storage, read_write> a: array<u32>;
@compute @workgroup_size(8)
fn main(@builtin(global_invocation_id) gid: vec3<u32>, @builtin(local_invocation_index) li: u32) {
    tile[li] = a[gid.x];
    workgroupBarrier();
    a[gid.x] = tile[7u - li];
}"#;
        let out = run_src(src, vec![(0..24).collect()], [3, 1, 1]);
        let expected: Vec<u32> = (0..3).flat_map(|g| (0..8).rev().map(move |i| g * 8 + i)).collect();
        assert_eq!(out[0], expected);
    }

    #[test]
    fn integer_semantics() {
        let src = r#"
@group(0) @binding(0) var<storage, read_write> a: array<i32>;
@compute @workgroup_size(1)
fn main() {
    let z = a[0];
    a[1] = 7 / z;
    a[2] = 7 % z;
    a[3] = i32(-2.7);
    a[4] = (z - 2147483647) - 1 - 1;
    a[5] = select(1, 2, z == 0);
}"#;
        let out = run_src(src, vec![vec![0; 6]], [1, 1, 1]);
        let got: Vec<i32> = out[0].iter().map(|&w| w as i32).collect();
        assert_eq!(got, vec![0, 7, 0, -2, i32::MAX, 2]);
    }

    #[test]
    fn unsupported_features_fail_compilation() {
        let src = r#"
@group(0) @binding(0) var<storage, read_write> a: array<atomic<u32>>;
@compute @workgroup_size(1)
fn main() { atomicAdd(&a[0], 1u); }"#;
        assert!(matches!(compile(src), Err(Error::ShaderCompile(_))));
    }
}
