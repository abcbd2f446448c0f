use serde::{Deserialize, Serialize};

use super::DType;
use crate::error::{Error, Result};

/// Highest rank a device array or kernel may have.
pub const MAX_RANK: usize = 4;
/// Largest element count any shape may describe.
pub const MAX_ELEMENTS: usize = i32::MAX as usize;

/// Ordered dimension extents. An empty list is a scalar.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Shape> {
        let dims = dims.into();
        let mut count: usize = 1;
        for &d in &dims {
            count = count.checked_mul(d).ok_or(Error::TooManyElements)?;
        }
        if count > MAX_ELEMENTS {
            return Err(Error::TooManyElements);
        }
        Ok(Shape(dims))
    }

    pub fn scalar() -> Shape {
        Shape(Vec::new())
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn element_count(&self) -> usize {
        self.0.iter().product()
    }
}

impl std::ops::Index<usize> for Shape {
    type Output = usize;

    fn index(&self, i: usize) -> &usize {
        &self.0[i]
    }
}

/// Per-dimension steps in elements. A broadcast dimension has step 0.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Strides(Vec<isize>);

impl Strides {
    pub fn new(steps: impl Into<Vec<isize>>) -> Strides {
        Strides(steps.into())
    }

    pub fn steps(&self) -> &[isize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Row-major strides for `shape`: the last dimension has step 1.
pub fn contiguous_strides(shape: &Shape) -> Strides {
    let mut steps = vec![0isize; shape.rank()];
    let mut acc = 1isize;
    for (step, &dim) in steps.iter_mut().zip(shape.dims()).rev() {
        *step = acc;
        acc *= dim as isize;
    }
    Strides(steps)
}

/// Right-aligned broadcasting of two shapes.
pub fn broadcast_shapes(a: &Shape, b: &Shape) -> Result<Shape> {
    let rank = a.rank().max(b.rank());
    let mut out = vec![0usize; rank];
    for (i, o) in out.iter_mut().enumerate() {
        let da = dim_from_right(a, rank, i);
        let db = dim_from_right(b, rank, i);
        *o = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(Error::IncompatibleShapes(a.0.clone(), b.0.clone())),
        };
    }
    Shape::new(out)
}

/// Broadcasts any number of shapes together.
pub fn broadcast_shapes_all<'a>(shapes: impl IntoIterator<Item = &'a Shape>) -> Result<Shape> {
    shapes
        .into_iter()
        .try_fold(Shape::scalar(), |acc, s| broadcast_shapes(&acc, s))
}

fn dim_from_right(s: &Shape, rank: usize, i: usize) -> usize {
    let lead = rank - s.rank();
    if i < lead {
        1
    } else {
        s.0[i - lead]
    }
}

/// The logical view of an array: element type, extents, element strides and
/// the element offset of index zero.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArrayDescriptor {
    pub dtype: DType,
    pub shape: Shape,
    pub strides: Strides,
    pub offset: usize,
}

impl ArrayDescriptor {
    pub fn new(dtype: DType, shape: Shape, strides: Strides, offset: usize) -> Result<Self> {
        if strides.len() != shape.rank() {
            return Err(Error::ShapeMismatch(format!(
                "{} strides for rank {}",
                strides.len(),
                shape.rank()
            )));
        }
        if strides.0.iter().any(|&s| s < 0) {
            return Err(Error::NegativeStride);
        }
        Ok(ArrayDescriptor {
            dtype,
            shape,
            strides,
            offset,
        })
    }

    pub fn contiguous(dtype: DType, shape: Shape) -> Self {
        let strides = contiguous_strides(&shape);
        ArrayDescriptor {
            dtype,
            shape,
            strides,
            offset: 0,
        }
    }

    pub fn rank(&self) -> usize {
        self.shape.rank()
    }

    pub fn element_count(&self) -> usize {
        self.shape.element_count()
    }

    /// Row-major layout, ignoring the steps of unit-extent dimensions.
    pub fn is_c_contiguous(&self) -> bool {
        if self.element_count() == 0 {
            return true;
        }
        let expected = contiguous_strides(&self.shape);
        self.shape
            .dims()
            .iter()
            .zip(self.strides.steps().iter().zip(expected.steps()))
            .all(|(&d, (&s, &e))| d == 1 || s == e)
    }

    /// True if some dimension longer than one has step 0.
    pub fn has_broadcast(&self) -> bool {
        self.shape
            .dims()
            .iter()
            .zip(self.strides.steps())
            .any(|(&d, &s)| d > 1 && s == 0)
    }

    /// Number of storage elements the view touches, counted from element 0 of
    /// the buffer: one past the largest address.
    pub fn required_span(&self) -> usize {
        if self.element_count() == 0 {
            return self.offset;
        }
        let last: isize = self
            .shape
            .dims()
            .iter()
            .zip(self.strides.steps())
            .map(|(&d, &s)| (d as isize - 1) * s)
            .sum();
        self.offset + last as usize + 1
    }

    /// Storage address of a multi-index.
    pub fn address(&self, index: &[usize]) -> usize {
        let rel: isize = index
            .iter()
            .zip(self.strides.steps())
            .map(|(&i, &s)| i as isize * s)
            .sum();
        (self.offset as isize + rel) as usize
    }

    pub fn with_dtype(&self, dtype: DType) -> Self {
        ArrayDescriptor { dtype, ..self.clone() }
    }
}

/// Stretches `d` to `target` by giving broadcast dimensions step 0.
pub fn broadcast_descriptor(d: &ArrayDescriptor, target: &Shape) -> Result<ArrayDescriptor> {
    let incompatible = || Error::IncompatibleShapes(d.shape.0.clone(), target.0.clone());
    if d.rank() > target.rank() {
        return Err(incompatible());
    }
    let lead = target.rank() - d.rank();
    let mut steps = vec![0isize; target.rank()];
    for (i, step) in steps.iter_mut().enumerate().skip(lead) {
        let src = d.shape[i - lead];
        let dst = target[i];
        if src == dst {
            *step = d.strides.0[i - lead];
        } else if src == 1 {
            *step = 0;
        } else {
            return Err(incompatible());
        }
    }
    Ok(ArrayDescriptor {
        dtype: d.dtype,
        shape: target.clone(),
        strides: Strides(steps),
        offset: d.offset,
    })
}

/// Reinterprets a C-contiguous view under a new shape with the same count.
pub fn reshape(d: &ArrayDescriptor, new_shape: &Shape) -> Result<ArrayDescriptor> {
    if !d.is_c_contiguous() {
        return Err(Error::NotContiguous);
    }
    if d.element_count() != new_shape.element_count() {
        return Err(Error::CountMismatch {
            from: d.element_count(),
            to: new_shape.element_count(),
        });
    }
    Ok(ArrayDescriptor {
        dtype: d.dtype,
        shape: new_shape.clone(),
        strides: contiguous_strides(new_shape),
        offset: d.offset,
    })
}

/// Permutes dimensions: output dimension `i` is input dimension `axes[i]`.
pub fn transpose(d: &ArrayDescriptor, axes: &[usize]) -> Result<ArrayDescriptor> {
    let rank = d.rank();
    let mut seen = vec![false; rank];
    if axes.len() != rank {
        return Err(Error::BadPermutation(axes.to_vec()));
    }
    for &a in axes {
        if a >= rank || std::mem::replace(&mut seen[a], true) {
            return Err(Error::BadPermutation(axes.to_vec()));
        }
    }
    let dims: Vec<usize> = axes.iter().map(|&a| d.shape[a]).collect();
    let steps: Vec<isize> = axes.iter().map(|&a| d.strides.0[a]).collect();
    Ok(ArrayDescriptor {
        dtype: d.dtype,
        shape: Shape(dims),
        strides: Strides(steps),
        offset: d.offset,
    })
}

/// Visits every multi-index of `shape` in row-major order.
pub fn for_each_index(shape: &Shape, mut f: impl FnMut(&[usize])) {
    if shape.element_count() == 0 {
        return;
    }
    let rank = shape.rank();
    let mut idx = vec![0usize; rank];
    loop {
        f(&idx);
        let mut d = rank;
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}
