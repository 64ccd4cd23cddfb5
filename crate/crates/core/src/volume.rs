//! Dense 3D scalar grid with voxel spacing.
//!
//! Storage is axis-0-major: axis 0 is the slowest-varying index and is the
//! slice axis everywhere in this crate, so `slice(z)` is a contiguous plane.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Volume3D {
    data: Vec<f32>,
    dims: [usize; 3],
    spacing: [f64; 3],
}

impl Volume3D {
    pub fn new(data: Vec<f32>, dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::DimMismatch(format!("dims must be positive, got {dims:?}")));
        }
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(Error::DimMismatch(format!(
                "data length {} does not match dims {dims:?} ({n} voxels)",
                data.len()
            )));
        }
        if let Some(axis) = spacing.iter().position(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::config(
                "spacing",
                format!("axis {axis} spacing must be positive and finite, got {}", spacing[axis]),
            ));
        }
        Ok(Self {
            data,
            dims,
            spacing,
        })
    }

    pub fn filled(dims: [usize; 3], spacing: [f64; 3], value: f32) -> Result<Self> {
        Self::new(vec![value; dims.iter().product()], dims, spacing)
    }

    pub fn zeros(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        Self::filled(dims, spacing, 0.0)
    }

    /// Builds a volume by evaluating `f(i0, i1, i2)` at every voxel.
    pub fn from_fn(
        dims: [usize; 3],
        spacing: [f64; 3],
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.iter().product());
        for i0 in 0..dims[0] {
            for i1 in 0..dims[1] {
                for i2 in 0..dims[2] {
                    data.push(f(i0, i1, i2));
                }
            }
        }
        Self::new(data, dims, spacing)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, i0: usize, i1: usize, i2: usize) -> usize {
        (i0 * self.dims[1] + i1) * self.dims[2] + i2
    }

    #[inline]
    pub fn get(&self, i0: usize, i1: usize, i2: usize) -> f32 {
        self.data[self.index(i0, i1, i2)]
    }

    #[inline]
    pub fn set(&mut self, i0: usize, i1: usize, i2: usize, value: f32) {
        let idx = self.index(i0, i1, i2);
        self.data[idx] = value;
    }

    pub fn slice_len(&self) -> usize {
        self.dims[1] * self.dims[2]
    }

    /// Plane at index `z` along axis 0.
    pub fn slice(&self, z: usize) -> &[f32] {
        let n = self.slice_len();
        &self.data[z * n..(z + 1) * n]
    }

    pub fn with_spacing(mut self, spacing: [f64; 3]) -> Result<Self> {
        let dims = self.dims;
        self = Self::new(std::mem::take(&mut self.data), dims, spacing)?;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            dims: self.dims,
            spacing: self.spacing,
        }
    }

    pub fn ensure_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFinite { index }),
            None => Ok(()),
        }
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Number of voxels treated as "on" in a binary volume (value > 0.5).
    pub fn count_on(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.5).count()
    }

    pub fn same_dims(&self, other: &Volume3D, what: &str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimMismatch(format!(
                "{what}: {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }
}
