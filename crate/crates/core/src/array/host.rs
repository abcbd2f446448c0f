use super::layout::{broadcast_descriptor, broadcast_shapes_all, for_each_index};
use super::{ArrayDescriptor, DType, Shape};
use crate::error::{Error, Result};

/// A host-resident array: a descriptor over a word buffer.
///
/// Elements are kept as raw 4-byte words so that device transfers are plain
/// copies and round trips can be compared bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct HostArray {
    desc: ArrayDescriptor,
    data: Vec<u32>,
}

impl HostArray {
    pub fn from_words(desc: ArrayDescriptor, data: Vec<u32>) -> Result<Self> {
        if data.len() < desc.required_span() {
            return Err(Error::StorageTooSmall {
                needed: desc.required_span(),
                available: data.len(),
            });
        }
        Ok(HostArray { desc, data })
    }

    fn contiguous_words(dtype: DType, dims: &[usize], data: Vec<u32>) -> Result<Self> {
        let shape = Shape::new(dims.to_vec())?;
        if shape.element_count() != data.len() {
            return Err(Error::CountMismatch {
                from: data.len(),
                to: shape.element_count(),
            });
        }
        Ok(HostArray {
            desc: ArrayDescriptor::contiguous(dtype, shape),
            data,
        })
    }

    pub fn from_f32(dims: &[usize], values: Vec<f32>) -> Result<Self> {
        Self::contiguous_words(DType::F32, dims, values.into_iter().map(f32::to_bits).collect())
    }

    pub fn from_i32(dims: &[usize], values: Vec<i32>) -> Result<Self> {
        Self::contiguous_words(DType::I32, dims, values.into_iter().map(|v| v as u32).collect())
    }

    pub fn from_u32(dims: &[usize], values: Vec<u32>) -> Result<Self> {
        Self::contiguous_words(DType::U32, dims, values)
    }

    pub fn from_bool(dims: &[usize], values: Vec<bool>) -> Result<Self> {
        Self::contiguous_words(DType::Bool, dims, values.into_iter().map(u32::from).collect())
    }

    /// Builds an array of `dtype` by rounding double-precision values.
    pub fn from_f64(dtype: DType, dims: &[usize], values: &[f64]) -> Result<Self> {
        Self::contiguous_words(dtype, dims, values.iter().map(|&v| dtype.encode_f64(v)).collect())
    }

    pub fn zeros(dtype: DType, dims: &[usize]) -> Result<Self> {
        let shape = Shape::new(dims.to_vec())?;
        let n = shape.element_count();
        Ok(HostArray {
            desc: ArrayDescriptor::contiguous(dtype, shape),
            data: vec![0; n],
        })
    }

    pub fn full(dtype: DType, dims: &[usize], value: f64) -> Result<Self> {
        let shape = Shape::new(dims.to_vec())?;
        let n = shape.element_count();
        Ok(HostArray {
            desc: ArrayDescriptor::contiguous(dtype, shape),
            data: vec![dtype.encode_f64(value); n],
        })
    }

    pub fn scalar(dtype: DType, value: f64) -> Self {
        HostArray {
            desc: ArrayDescriptor::contiguous(dtype, Shape::scalar()),
            data: vec![dtype.encode_f64(value)],
        }
    }

    pub fn descriptor(&self) -> &ArrayDescriptor {
        &self.desc
    }

    pub fn dtype(&self) -> DType {
        self.desc.dtype
    }

    pub fn shape(&self) -> &Shape {
        &self.desc.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.desc.shape.dims()
    }

    pub fn len(&self) -> usize {
        self.desc.element_count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Backing storage, including any words outside the view.
    pub fn storage(&self) -> &[u32] {
        &self.data
    }

    /// Re-views the same storage through another descriptor.
    pub fn with_descriptor(&self, desc: ArrayDescriptor) -> Result<Self> {
        Self::from_words(desc, self.data.clone())
    }

    /// Words in logical row-major order.
    pub fn words(&self) -> Vec<u32> {
        if self.desc.is_c_contiguous() {
            let start = self.desc.offset;
            return self.data[start..start + self.len()].to_vec();
        }
        let mut out = Vec::with_capacity(self.len());
        for_each_index(&self.desc.shape, |i| out.push(self.data[self.desc.address(i)]));
        out
    }

    /// Materializes the view into a fresh C-contiguous array.
    pub fn to_contiguous(&self) -> HostArray {
        HostArray {
            desc: ArrayDescriptor::contiguous(self.dtype(), self.shape().clone()),
            data: self.words(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        let dtype = self.dtype();
        self.words().into_iter().map(|w| dtype.decode_f64(w)).collect()
    }

    pub fn to_f32_vec(&self) -> Result<Vec<f32>> {
        self.expect_dtype(DType::F32)?;
        Ok(self.words().into_iter().map(f32::from_bits).collect())
    }

    pub fn to_i32_vec(&self) -> Result<Vec<i32>> {
        self.expect_dtype(DType::I32)?;
        Ok(self.words().into_iter().map(|w| w as i32).collect())
    }

    pub fn to_u32_vec(&self) -> Result<Vec<u32>> {
        self.expect_dtype(DType::U32)?;
        Ok(self.words())
    }

    pub fn to_bool_vec(&self) -> Result<Vec<bool>> {
        self.expect_dtype(DType::Bool)?;
        Ok(self.words().into_iter().map(|w| w != 0).collect())
    }

    /// Element at a multi-index, widened to double precision.
    pub fn get_f64(&self, index: &[usize]) -> f64 {
        self.dtype().decode_f64(self.data[self.desc.address(index)])
    }

    fn expect_dtype(&self, expected: DType) -> Result<()> {
        if self.dtype() == expected {
            Ok(())
        } else {
            Err(Error::DTypeMismatch {
                expected,
                found: self.dtype(),
            })
        }
    }
}

/// Reference evaluation of an elementwise function over broadcast inputs.
///
/// Each output element is `op` applied to the corresponding (broadcast) input
/// elements widened to `f64`; the result is rounded to `out_dtype` with
/// [`DType::encode_f64`]. This is the ground truth the device kernels are
/// checked against.
pub fn host_eval_elementwise(out_dtype: DType, inputs: &[&HostArray], op: impl Fn(&[f64]) -> f64) -> Result<HostArray> {
    let shape = broadcast_shapes_all(inputs.iter().map(|a| a.shape()))?;
    let views = inputs
        .iter()
        .map(|a| broadcast_descriptor(a.descriptor(), &shape))
        .collect::<Result<Vec<_>>>()?;
    let mut args = vec![0.0f64; inputs.len()];
    let mut out = Vec::with_capacity(shape.element_count());
    for_each_index(&shape, |idx| {
        for ((arg, view), src) in args.iter_mut().zip(&views).zip(inputs) {
            *arg = view.dtype.decode_f64(src.data[view.address(idx)]);
        }
        out.push(out_dtype.encode_f64(op(&args)));
    });
    Ok(HostArray {
        desc: ArrayDescriptor::contiguous(out_dtype, shape),
        data: out,
    })
}
