//! The in-memory volume: a `Z x Y x X` float32 grid with physical spacing.
//!
//! Axis 0 is always the through-plane (slice) axis.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f64; 3],
    data: Vec<f32>,
    /// Original `(lo, hi)` intensity range; after [`Volume::normalize`] this
    /// is the range that [`Volume::denormalize`] maps back to.
    pub intensity_range: (f64, f64),
    pub id: String,
}

impl Volume {
    /// Validates dims, spacing and finiteness; records the data range.
    pub fn new(id: impl Into<String>, dims: [usize; 3], spacing: [f64; 3], data: Vec<f32>) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            bail!(Dimension, "all dimensions must be >= 1, got {dims:?}");
        }
        if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            bail!(Data, "spacing must be finite and positive, got {spacing:?}");
        }
        if data.len() != dims.iter().product::<usize>() {
            bail!(Shape, "{} voxels do not match dims {dims:?}", data.len());
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            bail!(Data, "non-finite voxel value at flat index {i}");
        }
        let (lo, hi) = min_max(&data);
        Ok(Volume { dims, spacing, data, intensity_range: (lo as f64, hi as f64), id: id.into() })
    }

    pub fn from_fn(id: impl Into<String>, dims: [usize; 3], spacing: [f64; 3], f: impl Fn(usize, usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.iter().product());
        for z in 0..dims[0] {
            for y in 0..dims[1] {
                for x in 0..dims[2] {
                    data.push(f(z, y, x));
                }
            }
        }
        Self::new(id, dims, spacing, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// `(dz, dy, dx)` in millimetres.
    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[2] + x
    }

    #[inline]
    pub fn at(&self, z: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(z, y, x)]
    }

    pub fn slice_len(&self) -> usize {
        self.dims[1] * self.dims[2]
    }

    /// Current `(min, max)` of the data.
    pub fn min_max(&self) -> (f32, f32) {
        min_max(&self.data)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Replace data and spacing, keeping id and recorded intensity range.
    pub fn with_data(&self, dims: [usize; 3], spacing: [f64; 3], data: Vec<f32>) -> Result<Self> {
        let mut v = Volume::new(self.id.clone(), dims, spacing, data)?;
        v.intensity_range = self.intensity_range;
        Ok(v)
    }

    /// Min-max rescale to `[0, 1]`. A constant volume maps to zeros with
    /// recorded range `(c, c + 1)`.
    pub fn normalize(&self) -> Volume {
        let (lo, hi) = min_max(&self.data);
        let (lo, hi) = (lo as f64, hi as f64);
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo, lo + 1.0) };
        let span = hi - lo;
        let data = self.data.iter().map(|&v| (((v as f64 - lo) / span) as f32).clamp(0.0, 1.0)).collect();
        Volume { dims: self.dims, spacing: self.spacing, data, intensity_range: (lo, hi), id: self.id.clone() }
    }

    /// Map `[0, 1]` data back through the recorded intensity range.
    pub fn denormalize(&self) -> Volume {
        let (lo, hi) = self.intensity_range;
        let data = self.data.iter().map(|&v| (lo + v as f64 * (hi - lo)) as f32).collect();
        let mut out = Volume::new(self.id.clone(), self.dims, self.spacing, data).expect("finite by construction");
        out.intensity_range = (lo, hi);
        out
    }

    /// Sub-block starting at `offset` with extent `size`.
    pub fn crop(&self, offset: [usize; 3], size: [usize; 3]) -> Result<Volume> {
        for a in 0..3 {
            if offset[a] + size[a] > self.dims[a] || size[a] == 0 {
                bail!(Range, "crop {offset:?}+{size:?} exceeds dims {:?}", self.dims);
            }
        }
        let mut data = Vec::with_capacity(size.iter().product());
        for z in 0..size[0] {
            for y in 0..size[1] {
                let start = self.index(offset[0] + z, offset[1] + y, offset[2]);
                data.extend_from_slice(&self.data[start..start + size[2]]);
            }
        }
        self.with_data(size, self.spacing, data)
    }

    /// Centre crop to `size` (floor offsets).
    pub fn center_crop(&self, size: [usize; 3]) -> Result<Volume> {
        let mut off = [0; 3];
        for a in 0..3 {
            if size[a] > self.dims[a] {
                bail!(Range, "centre crop {size:?} larger than {:?}", self.dims);
            }
            off[a] = (self.dims[a] - size[a]) / 2;
        }
        if size == self.dims {
            return Ok(self.clone());
        }
        self.crop(off, size)
    }

    /// `1 x 1 x Z x Y x X` tensor view of the data.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let [d, h, w] = self.dims;
        let data = self.data.iter().map(|&v| T::from_f64c(v as f64)).collect();
        Tensor::from_vec(Shape::new(1, 1, d, h, w), data).unwrap()
    }

    /// Rebuild a volume from a single-item, single-channel tensor.
    pub fn from_tensor<T: Scalar>(&self, t: &Tensor<T>, spacing: [f64; 3]) -> Result<Volume> {
        let s = t.shape();
        if s.n() != 1 || s.c() != 1 {
            bail!(Shape, "expected one single-channel item, got {s}");
        }
        let data = t.data().iter().map(|v| v.as_f64() as f32).collect();
        self.with_data([s.d(), s.h(), s.w()], spacing, data)
    }
}

pub(crate) fn min_max(data: &[f32]) -> (f32, f32) {
    data.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn vol(data: Vec<f32>) -> Volume {
        let n = data.len();
        Volume::new("t", [n, 1, 1], [1.0; 3], data).unwrap()
    }

    #[test]
    fn normalize_endpoints_and_linearity() {
        assert_eq!(vol(vec![0.0, 100.0]).normalize().data(), &[0.0, 1.0]);
        assert_eq!(vol(vec![-1.0, 0.0, 1.0]).normalize().data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn constant_volume_normalizes_to_zero_with_unit_range() {
        let n = vol(vec![7.0; 5]).normalize();
        assert!(n.data().iter().all(|&v| v == 0.0));
        assert_eq!(n.intensity_range, (7.0, 8.0));
    }

    #[test]
    fn denormalize_inverts_normalize() {
        let v = vol(vec![-3.5, 2.0, 11.25, 400.0, 0.001]);
        let back = v.normalize().denormalize();
        for (a, b) in v.data().iter().zip(back.data()) {
            assert!(((a - b) / a.abs().max(1.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_invalid_inputs() {
        assert!(matches!(Volume::new("x", [1, 1, 2], [1.0; 3], vec![0.0, f32::NAN]), Err(crate::Error::Data(_))));
        assert!(Volume::new("x", [0, 1, 1], [1.0; 3], vec![]).is_err());
        assert!(Volume::new("x", [1, 1, 1], [1.0, -1.0, 1.0], vec![0.0]).is_err());
    }

    #[test]
    fn center_crop_takes_middle() {
        let v = Volume::from_fn("r", [5, 2, 2], [1.0; 3], |z, _, _| z as f32).unwrap();
        let c = v.center_crop([3, 2, 2]).unwrap();
        assert_eq!(c.at(0, 0, 0), 1.0);
        assert_eq!(c.at(2, 1, 1), 3.0);
    }
}
