//! Dense voxel fields on a regular grid.
//!
//! [`Volume`] holds `f32` intensities, [`Mask`] holds binary labels; both are
//! the same generic [`Field`] stored x-fastest (`index = x + nx*(y + ny*z)`).

mod io;
mod ops;
mod resample;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    decode_mask, decode_volume, encode_mask, encode_volume, read_mask, read_volume, write_mask, write_volume,
};
pub use ops::{crop, paste, standardize_intensities, Standardization};
pub use resample::{resample_isotropic, resample_mask, sample_nearest, sample_trilinear};

/// Grid shape and physical voxel size in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!("dims must be >= 1, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "spacing must be finite and > 0, got {spacing:?}"
            )));
        }
        Ok(Grid { dims, spacing })
    }

    pub fn isotropic(dims: [usize; 3], spacing: f64) -> Result<Self> {
        Self::new(dims, [spacing; 3])
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, p: [usize; 3]) -> usize {
        p[0] + self.dims[0] * (p[1] + self.dims[1] * p[2])
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let x = index % self.dims[0];
        let yz = index / self.dims[0];
        [x, yz % self.dims[1], yz / self.dims[1]]
    }

    /// Linear index of a signed position, or `None` outside the grid.
    #[inline]
    pub fn checked_index(&self, p: [i64; 3]) -> Option<usize> {
        if self.contains(p) {
            Some(self.index([p[0] as usize, p[1] as usize, p[2] as usize]))
        } else {
            None
        }
    }

    #[inline]
    pub fn contains(&self, p: [i64; 3]) -> bool {
        (0..3).all(|k| p[k] >= 0 && (p[k] as usize) < self.dims[k])
    }

    /// Volume of one voxel in mm³.
    pub fn voxel_volume(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    /// Length of the physical box diagonal in mm.
    pub fn diagonal_mm(&self) -> f64 {
        (0..3)
            .map(|k| {
                let e = self.dims[k] as f64 * self.spacing[k];
                e * e
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn with_dims(&self, dims: [usize; 3]) -> Result<Self> {
        Self::new(dims, self.spacing)
    }

    pub fn full_box(&self) -> BoundingBox {
        BoundingBox {
            lo: [0; 3],
            hi: [self.dims[0] - 1, self.dims[1] - 1, self.dims[2] - 1],
        }
    }

    /// The six face neighbours of `p` that lie inside the grid.
    pub fn neighbors6(&self, p: [usize; 3]) -> impl Iterator<Item = [usize; 3]> + '_ {
        NEIGHBOR_OFFSETS.iter().filter_map(move |d| {
            let q = [p[0] as i64 + d[0], p[1] as i64 + d[1], p[2] as i64 + d[2]];
            self.contains(q).then(|| [q[0] as usize, q[1] as usize, q[2] as usize])
        })
    }
}

pub(crate) const NEIGHBOR_OFFSETS: [[i64; 3]; 6] =
    [[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]];

/// Element types a [`Field`] can carry.
pub trait Voxel: Copy + Default + PartialEq + std::fmt::Debug + Send + Sync + 'static {
    /// Name stored in the `.vvol` header.
    const DTYPE: &'static str;
    const WIDTH: usize;
    fn is_valid(self) -> bool;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Voxel for f32 {
    const DTYPE: &'static str = "f32";
    const WIDTH: usize = 4;

    fn is_valid(self) -> bool {
        self.is_finite()
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
}

impl Voxel for u8 {
    const DTYPE: &'static str = "u8";
    const WIDTH: usize = 1;

    fn is_valid(self) -> bool {
        self <= 1
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.push(self);
    }

    fn read_le(bytes: &[u8]) -> Self {
        bytes[0]
    }
}

/// A dense field of voxels on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field<T: Voxel> {
    grid: Grid,
    data: Vec<T>,
}

/// Intensity volume.
pub type Volume = Field<f32>;
/// Binary label field (0 background, 1 foreground).
pub type Mask = Field<u8>;

impl<T: Voxel> Field<T> {
    pub fn from_vec(grid: Grid, data: Vec<T>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "payload has {} elements, grid {:?} needs {}",
                data.len(),
                grid.dims,
                grid.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_valid()) {
            return Err(Error::InvalidArgument(format!(
                "invalid {} value {:?} at index {i}",
                T::DTYPE,
                data[i]
            )));
        }
        Ok(Field { grid, data })
    }

    pub fn filled(grid: Grid, value: T) -> Self {
        assert!(value.is_valid(), "invalid fill value {value:?}");
        Field {
            grid,
            data: vec![value; grid.len()],
        }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::filled(grid, T::default())
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut([usize; 3]) -> T) -> Result<Self> {
        let data = (0..grid.len()).map(|i| f(grid.coords(i))).collect();
        Self::from_vec(grid, data)
    }

    /// Constructor for callers that already guarantee the element invariant.
    pub(crate) fn from_raw(grid: Grid, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), grid.len());
        debug_assert!(data.iter().all(|v| v.is_valid()));
        Field { grid, data }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.grid.spacing
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, p: [usize; 3]) -> T {
        self.data[self.grid.index(p)]
    }

    pub fn set(&mut self, p: [usize; 3], value: T) {
        assert!(value.is_valid(), "invalid value {value:?}");
        let i = self.grid.index(p);
        self.data[i] = value;
    }

    pub fn same_grid<U: Voxel>(&self, other: &Field<U>) -> bool {
        self.grid == other.grid
    }

    pub(crate) fn require_same_grid<U: Voxel>(&self, other: &Field<U>, what: &str) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{what}: {:?}@{:?} vs {:?}@{:?}",
                self.grid.dims, self.grid.spacing, other.grid.dims, other.grid.spacing
            )))
        }
    }

    /// Same data on a grid with different spacing; dims must match.
    pub fn with_spacing(&self, spacing: [f64; 3]) -> Result<Self> {
        let grid = Grid::new(self.grid.dims, spacing)?;
        Ok(Field {
            grid,
            data: self.data.clone(),
        })
    }
}

impl Volume {
    /// Mean of all voxels (f64 accumulation, linear order).
    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }
}

impl Mask {
    pub fn from_predicate(grid: Grid, mut f: impl FnMut([usize; 3]) -> bool) -> Self {
        let data = (0..grid.len()).map(|i| f(grid.coords(i)) as u8).collect();
        Field { grid, data }
    }

    /// Mask with the given voxels set.
    pub fn from_voxels(grid: Grid, voxels: &[[usize; 3]]) -> Result<Self> {
        let mut m = Mask::zeros(grid);
        for &p in voxels {
            if !grid.contains([p[0] as i64, p[1] as i64, p[2] as i64]) {
                return Err(Error::OutOfBounds(format!("voxel {p:?} outside {:?}", grid.dims)));
            }
            m.set(p, 1);
        }
        Ok(m)
    }

    #[inline]
    pub fn is_set(&self, p: [usize; 3]) -> bool {
        self.get(p) != 0
    }

    #[inline]
    pub fn is_set_index(&self, i: usize) -> bool {
        self.data[i] != 0
    }

    /// Number of foreground voxels.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_blank(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    /// Foreground volume in mm³.
    pub fn volume_mm3(&self) -> f64 {
        self.count() as f64 * self.grid.voxel_volume()
    }

    /// Linear indices of foreground voxels, ascending.
    pub fn foreground_indices(&self) -> Vec<usize> {
        self.data
            .iter()
            .enumerate()
            .filter_map(|(i, &v)| (v != 0).then_some(i))
            .collect()
    }

    pub fn foreground_coords(&self) -> Vec<[usize; 3]> {
        self.foreground_indices()
            .into_iter()
            .map(|i| self.grid.coords(i))
            .collect()
    }

    /// Tight box around the foreground, `None` when the mask is blank.
    pub fn bounding_box(&self) -> Option<BoundingBox> {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        for i in 0..self.data.len() {
            if self.data[i] != 0 {
                any = true;
                let p = self.grid.coords(i);
                for k in 0..3 {
                    lo[k] = lo[k].min(p[k]);
                    hi[k] = hi[k].max(p[k]);
                }
            }
        }
        any.then_some(BoundingBox { lo, hi })
    }

    /// Foreground centroid in voxel coordinates.
    pub fn centroid(&self) -> Option<[f64; 3]> {
        let mut sum = [0.0f64; 3];
        let mut n = 0usize;
        for i in self.foreground_indices() {
            let p = self.grid.coords(i);
            for k in 0..3 {
                sum[k] += p[k] as f64;
            }
            n += 1;
        }
        (n > 0).then(|| [sum[0] / n as f64, sum[1] / n as f64, sum[2] / n as f64])
    }

    pub fn union(&self, other: &Mask) -> Result<Mask> {
        self.require_same_grid(other, "union")?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a | b).collect();
        Ok(Field::from_raw(self.grid, data))
    }

    pub fn intersection(&self, other: &Mask) -> Result<Mask> {
        self.require_same_grid(other, "intersection")?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a & b).collect();
        Ok(Field::from_raw(self.grid, data))
    }

    /// Voxels set in `self` but not in `other`.
    pub fn difference(&self, other: &Mask) -> Result<Mask> {
        self.require_same_grid(other, "difference")?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a & (1 - b)).collect();
        Ok(Field::from_raw(self.grid, data))
    }

    /// True when every foreground voxel of `self` is foreground in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.same_grid(other) && self.data.iter().zip(&other.data).all(|(&a, &b)| a == 0 || b != 0)
    }
}

/// Inclusive voxel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl BoundingBox {
    pub fn new(lo: [usize; 3], hi: [usize; 3]) -> Result<Self> {
        if (0..3).any(|k| lo[k] > hi[k]) {
            return Err(Error::InvalidArgument(format!("box lo {lo:?} > hi {hi:?}")));
        }
        Ok(BoundingBox { lo, hi })
    }

    pub fn dims(&self) -> [usize; 3] {
        [
            self.hi[0] - self.lo[0] + 1,
            self.hi[1] - self.lo[1] + 1,
            self.hi[2] - self.lo[2] + 1,
        ]
    }

    pub fn fits(&self, grid: &Grid) -> bool {
        (0..3).all(|k| self.lo[k] <= self.hi[k] && self.hi[k] < grid.dims[k])
    }

    /// Grown by `margin` voxels on every side, clamped to `grid`.
    pub fn expanded(&self, margin: usize, grid: &Grid) -> BoundingBox {
        let mut lo = self.lo;
        let mut hi = self.hi;
        for k in 0..3 {
            lo[k] = lo[k].saturating_sub(margin);
            hi[k] = (hi[k] + margin).min(grid.dims[k] - 1);
        }
        BoundingBox { lo, hi }
    }
}
