//! Physical-space 3D volumes.
//!
//! Every volume lives on an axis-aligned grid in canonical orientation:
//! voxel `(i, j, k)` sits at world position `origin + (i, j, k) * spacing`
//! (millimetres, voxel centres). Values are stored x-fastest, so the linear
//! index of `(i, j, k)` is `i + nx * (j + ny * k)`.

mod nifti;
mod resample;

pub use nifti::{read_labels, read_nifti, read_scalar, write_nifti, NiftiImage, Orientation, VolumeData};
pub use resample::{crop, resample_linear, resample_nearest};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid description shared by all volume kinds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageGeometry {
    pub size: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl ImageGeometry {
    pub fn new(size: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if size.iter().any(|&n| n == 0) {
            return Err(Error::Argument(format!("geometry size must be positive, got {size:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Argument(format!(
                "geometry spacing must be positive, got {spacing:?}"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Argument(format!("geometry origin must be finite, got {origin:?}")));
        }
        Ok(Self {
            size,
            spacing,
            origin,
        })
    }

    pub fn num_voxels(&self) -> usize {
        self.size.iter().product()
    }

    #[inline]
    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.size[0] * (j + self.size[1] * k)
    }

    /// Inverse of [`linear_index`](Self::linear_index).
    #[inline]
    pub fn voxel_index(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.size[0];
        let j = (idx / self.size[0]) % self.size[1];
        let k = idx / (self.size[0] * self.size[1]);
        [i, j, k]
    }

    /// World position of a (possibly fractional or out-of-range) voxel index.
    pub fn world(&self, index: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| self.origin[a] + index[a] * self.spacing[a])
    }

    pub fn world_of_voxel(&self, index: [i64; 3]) -> [f64; 3] {
        self.world(index.map(|v| v as f64))
    }

    /// Continuous voxel index of a world position.
    pub fn continuous_index(&self, world: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| (world[a] - self.origin[a]) / self.spacing[a])
    }

    /// Physical extent covered by the voxels, edge to edge.
    pub fn extent_mm(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.size[a] as f64 * self.spacing[a])
    }

    /// A grid with the requested spacing covering the same physical region,
    /// edge-aligned with this one.
    pub fn with_spacing(&self, spacing: [f64; 3]) -> Result<Self> {
        let extent = self.extent_mm();
        let size = std::array::from_fn(|a| ((extent[a] / spacing[a]).round() as usize).max(1));
        let origin =
            std::array::from_fn(|a| self.origin[a] - 0.5 * self.spacing[a] + 0.5 * spacing[a]);
        Self::new(size, spacing, origin)
    }

    /// Geometry equality up to a small tolerance in mm, for grids that went
    /// through float32 serialization.
    pub fn approx_eq(&self, other: &Self, tol: f64) -> bool {
        self.size == other.size
            && (0..3).all(|a| {
                (self.spacing[a] - other.spacing[a]).abs() <= tol
                    && (self.origin[a] - other.origin[a]).abs() <= tol
            })
    }
}

/// Voxel payloads a [`Volume`] can carry.
pub trait Voxel: Copy + Send + Sync + PartialEq + std::fmt::Debug + 'static {}
impl Voxel for f32 {}
impl Voxel for u8 {}

/// A 3D grid of values with physical geometry. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<V: Voxel> {
    geometry: ImageGeometry,
    data: Vec<V>,
}

pub type ScalarVolume = Volume<f32>;
pub type LabelVolume = Volume<u8>;

impl<V: Voxel> Volume<V> {
    pub fn geometry(&self) -> &ImageGeometry {
        &self.geometry
    }

    pub fn data(&self) -> &[V] {
        &self.data
    }

    pub fn into_data(self) -> Vec<V> {
        self.data
    }

    pub fn size(&self) -> [usize; 3] {
        self.geometry.size
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> V {
        self.data[self.geometry.linear_index(i, j, k)]
    }

    fn check_len(geometry: &ImageGeometry, len: usize) -> Result<()> {
        if len != geometry.num_voxels() {
            return Err(Error::Argument(format!(
                "volume has {len} values but geometry {:?} needs {}",
                geometry.size,
                geometry.num_voxels()
            )));
        }
        Ok(())
    }

    pub(crate) fn from_parts_unchecked(geometry: ImageGeometry, data: Vec<V>) -> Self {
        debug_assert_eq!(data.len(), geometry.num_voxels());
        Self { geometry, data }
    }

    pub fn filled(geometry: ImageGeometry, value: V) -> Self {
        Self {
            data: vec![value; geometry.num_voxels()],
            geometry,
        }
    }

    /// Same values on a different grid of identical size.
    pub fn with_geometry(&self, geometry: ImageGeometry) -> Result<Self> {
        Self::check_len(&geometry, self.data.len())?;
        Ok(Self {
            geometry,
            data: self.data.clone(),
        })
    }
}

impl ScalarVolume {
    pub fn new(geometry: ImageGeometry, data: Vec<f32>) -> Result<Self> {
        Self::check_len(&geometry, data.len())?;
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("non-finite value at voxel {pos}")));
        }
        Ok(Self { geometry, data })
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> ScalarVolume {
        Self {
            geometry: self.geometry,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl LabelVolume {
    pub fn new(geometry: ImageGeometry, labels: Vec<u8>) -> Result<Self> {
        Self::check_len(&geometry, labels.len())?;
        if let Some(bad) = labels.iter().find(|&&l| l > 2) {
            return Err(Error::Argument(format!("label value {bad} outside {{0,1,2}}")));
        }
        Ok(Self {
            geometry,
            data: labels,
        })
    }

    pub fn count(&self, label: u8) -> usize {
        self.data.iter().filter(|&&l| l == label).count()
    }
}

/// Half-open voxel index box. Bounds may lie outside the grid they refer
/// to; [`crop`] fills the outside part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoxelBox {
    pub lo: [i64; 3],
    pub hi: [i64; 3],
}

impl VoxelBox {
    pub fn new(lo: [i64; 3], hi: [i64; 3]) -> Result<Self> {
        if (0..3).any(|a| lo[a] > hi[a]) {
            return Err(Error::Argument(format!("box lo {lo:?} exceeds hi {hi:?}")));
        }
        Ok(Self { lo, hi })
    }

    pub fn full(geometry: &ImageGeometry) -> Self {
        Self {
            lo: [0; 3],
            hi: geometry.size.map(|n| n as i64),
        }
    }

    pub fn size(&self) -> [usize; 3] {
        std::array::from_fn(|a| (self.hi[a] - self.lo[a]).max(0) as usize)
    }

    pub fn is_empty(&self) -> bool {
        (0..3).any(|a| self.hi[a] <= self.lo[a])
    }

    /// Intersection with the grid of `geometry`.
    pub fn clamped(&self, geometry: &ImageGeometry) -> Self {
        let lo = std::array::from_fn(|a| self.lo[a].clamp(0, geometry.size[a] as i64));
        let hi = std::array::from_fn(|a| self.hi[a].clamp(0, geometry.size[a] as i64));
        Self { lo, hi }
    }

    pub fn contains(&self, index: [i64; 3]) -> bool {
        (0..3).all(|a| index[a] >= self.lo[a] && index[a] < self.hi[a])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_rejects_bad_spacing() {
        assert!(ImageGeometry::new([2, 2, 2], [1.0, 0.0, 1.0], [0.0; 3]).is_err());
        assert!(ImageGeometry::new([2, 0, 2], [1.0; 3], [0.0; 3]).is_err());
    }

    #[test]
    fn linear_index_round_trips() {
        let g = ImageGeometry::new([3, 4, 5], [1.0; 3], [0.0; 3]).unwrap();
        for idx in 0..g.num_voxels() {
            let [i, j, k] = g.voxel_index(idx);
            assert_eq!(g.linear_index(i, j, k), idx);
        }
    }

    #[test]
    fn with_spacing_keeps_edges() {
        let g = ImageGeometry::new([10, 10, 10], [2.0, 2.0, 3.0], [1.0, 1.0, 1.5]).unwrap();
        let iso = g.with_spacing([1.0; 3]).unwrap();
        assert_eq!(iso.size, [20, 20, 30]);
        assert_eq!(iso.origin, [0.5, 0.5, 0.5]);
    }

    #[test]
    fn label_volume_rejects_unknown_labels() {
        let g = ImageGeometry::new([2, 1, 1], [1.0; 3], [0.0; 3]).unwrap();
        assert!(LabelVolume::new(g, vec![0, 3]).is_err());
        assert!(LabelVolume::new(g, vec![0, 2]).is_ok());
    }
}
