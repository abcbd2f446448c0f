//! Lane vectors for lockstep execution.

/// One scalar component across all lanes of a batch.
#[derive(Clone, Debug, PartialEq)]
pub(super) enum Comp {
    /// Same word in every lane.
    U(u32),
    /// One word per lane.
    V(Vec<u32>),
}

impl Comp {
    #[inline]
    pub fn get(&self, lane: usize) -> u32 {
        match self {
            Comp::U(v) => *v,
            Comp::V(v) => v[lane],
        }
    }

    pub fn make_varying(&mut self, lanes: usize) -> &mut Vec<u32> {
        if let Comp::U(v) = *self {
            *self = Comp::V(vec![v; lanes]);
        }
        match self {
            Comp::V(v) => v,
            Comp::U(_) => unreachable!(),
        }
    }

    /// Collapses a varying component whose lanes all agree.
    pub fn compact(self) -> Comp {
        match self {
            Comp::V(v) if !v.is_empty() && v.iter().all(|&x| x == v[0]) => Comp::U(v[0]),
            c => c,
        }
    }
}

#[inline]
pub(super) fn map1(a: &Comp, f: impl Fn(u32) -> u32) -> Comp {
    match a {
        Comp::U(x) => Comp::U(f(*x)),
        Comp::V(x) => Comp::V(x.iter().map(|&x| f(x)).collect()),
    }
}

#[inline]
pub(super) fn map2(a: &Comp, b: &Comp, f: impl Fn(u32, u32) -> u32) -> Comp {
    match (a, b) {
        (Comp::U(x), Comp::U(y)) => Comp::U(f(*x, *y)),
        (Comp::U(x), Comp::V(y)) => Comp::V(y.iter().map(|&y| f(*x, y)).collect()),
        (Comp::V(x), Comp::U(y)) => Comp::V(x.iter().map(|&x| f(x, *y)).collect()),
        (Comp::V(x), Comp::V(y)) => Comp::V(x.iter().zip(y).map(|(&x, &y)| f(x, y)).collect()),
    }
}

#[inline]
pub(super) fn map3(a: &Comp, b: &Comp, c: &Comp, f: impl Fn(u32, u32, u32) -> u32) -> Comp {
    if let (Comp::U(x), Comp::U(y), Comp::U(z)) = (a, b, c) {
        return Comp::U(f(*x, *y, *z));
    }
    let n = [a, b, c]
        .iter()
        .find_map(|c| match c {
            Comp::V(v) => Some(v.len()),
            Comp::U(_) => None,
        })
        .unwrap_or(0);
    Comp::V((0..n).map(|l| f(a.get(l), b.get(l), c.get(l))).collect())
}

/// Active lanes.
#[derive(Clone, Debug)]
pub(super) struct Mask {
    bits: Vec<bool>,
    count: usize,
}

impl Mask {
    pub fn full(lanes: usize) -> Self {
        Mask {
            bits: vec![true; lanes],
            count: lanes,
        }
    }

    pub fn empty(lanes: usize) -> Self {
        Mask {
            bits: vec![false; lanes],
            count: 0,
        }
    }

    #[inline]
    pub fn any(&self) -> bool {
        self.count > 0
    }

    #[inline]
    pub fn all(&self) -> bool {
        self.count == self.bits.len()
    }

    fn from_bits(bits: Vec<bool>) -> Self {
        let count = bits.iter().filter(|&&b| b).count();
        Mask { bits, count }
    }

    /// Lanes of `self` where `cond` is non-zero (or zero, if `negate`).
    pub fn and_cond(&self, cond: &[u32], negate: bool) -> Mask {
        Mask::from_bits(
            self.bits
                .iter()
                .zip(cond)
                .map(|(&m, &c)| m && ((c != 0) != negate))
                .collect(),
        )
    }

    pub fn or(&self, other: &Mask) -> Mask {
        if !other.any() {
            return self.clone();
        }
        if !self.any() {
            return other.clone();
        }
        Mask::from_bits(self.bits.iter().zip(&other.bits).map(|(&a, &b)| a || b).collect())
    }

    pub fn or_assign(&mut self, other: &Mask) {
        if other.any() {
            *self = self.or(other);
        }
    }

    pub fn iter_active(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }
}
