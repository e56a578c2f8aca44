use serde::{Deserialize, Serialize};

use super::{BoundingBox, Field, Volume, Voxel};
use crate::error::{Error, Result};

/// Copy of the voxels inside `b`, on a grid with the same spacing.
pub fn crop<T: Voxel>(f: &Field<T>, b: &BoundingBox) -> Result<Field<T>> {
    if !b.fits(f.grid()) {
        return Err(Error::OutOfBounds(format!(
            "box {:?}..={:?} outside grid {:?}",
            b.lo,
            b.hi,
            f.dims()
        )));
    }
    let grid = f.grid().with_dims(b.dims())?;
    let [nx, ny, nz] = b.dims();
    let mut data = Vec::with_capacity(grid.len());
    for z in 0..nz {
        for y in 0..ny {
            let start = f.grid().index([b.lo[0], b.lo[1] + y, b.lo[2] + z]);
            data.extend_from_slice(&f.data()[start..start + nx]);
        }
    }
    Ok(Field::from_raw(grid, data))
}

/// `dst` with `src` written over the region starting at voxel `at`.
pub fn paste<T: Voxel>(dst: &Field<T>, src: &Field<T>, at: [usize; 3]) -> Result<Field<T>> {
    let sd = src.dims();
    if (0..3).any(|k| at[k] + sd[k] > dst.dims()[k]) {
        return Err(Error::OutOfBounds(format!(
            "{:?} at {at:?} does not fit in {:?}",
            sd,
            dst.dims()
        )));
    }
    let mut out = dst.clone();
    let g = *dst.grid();
    let data = out.data_mut();
    for z in 0..sd[2] {
        for y in 0..sd[1] {
            let d = g.index([at[0], at[1] + y, at[2] + z]);
            let s = src.grid().index([0, y, z]);
            data[d..d + sd[0]].copy_from_slice(&src.data()[s..s + sd[0]]);
        }
    }
    Ok(out)
}

/// Affine map applied by [`standardize_intensities`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub std: f64,
}

impl Standardization {
    pub fn apply(&self, v: &Volume) -> Volume {
        map(v, |x| (x - self.mean) / self.std)
    }

    pub fn invert(&self, v: &Volume) -> Volume {
        map(v, |x| x * self.std + self.mean)
    }
}

fn map(v: &Volume, f: impl Fn(f64) -> f64) -> Volume {
    let data = v.data().iter().map(|&x| f(x as f64) as f32).collect();
    Field::from_raw(*v.grid(), data)
}

/// Per-volume z-score with the population standard deviation.
pub fn standardize_intensities(v: &Volume) -> Result<(Volume, Standardization)> {
    let n = v.len() as f64;
    let mean = v.mean();
    let var = v
        .data()
        .iter()
        .map(|&x| {
            let d = x as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    if v.len() < 2 || !(std > 0.0) {
        return Err(Error::InvalidArgument(
            "cannot standardize a volume with zero variance".into(),
        ));
    }
    let params = Standardization { mean, std };
    Ok((params.apply(v), params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::volume::{Grid, Mask};

    fn ramp4() -> Volume {
        let g = Grid::isotropic([4, 4, 4], 1.0).unwrap();
        Volume::from_fn(g, |p| (p[0] + 4 * p[1] + 16 * p[2]) as f32).unwrap()
    }

    #[test]
    fn crop_full_extent_is_identity() {
        let v = ramp4();
        assert_eq!(crop(&v, &v.grid().full_box()).unwrap(), v);
    }

    #[test]
    fn crop_inner_cube() {
        let v = ramp4();
        let b = BoundingBox::new([1, 1, 1], [2, 2, 2]).unwrap();
        let c = crop(&v, &b).unwrap();
        assert_eq!(c.dims(), [2, 2, 2]);
        for z in 0..2 {
            for y in 0..2 {
                for x in 0..2 {
                    let expected = (x + 1) + 4 * (y + 1) + 16 * (z + 1);
                    assert_eq!(c.get([x, y, z]), expected as f32);
                }
            }
        }
    }

    #[test]
    fn paste_then_crop() {
        let v = ramp4();
        let g = Grid::isotropic([2, 3, 1], 1.0).unwrap();
        let src = Volume::filled(g, -5.0);
        let at = [2, 1, 3];
        let out = paste(&v, &src, at).unwrap();
        let b = BoundingBox::new(at, [3, 3, 3]).unwrap();
        assert_eq!(crop(&out, &b).unwrap(), src);
        assert_eq!(out.get([0, 0, 0]), 0.0);
        assert!(paste(&v, &src, [3, 0, 0]).is_err());
        let bad = BoundingBox::new([0, 0, 0], [4, 0, 0]).unwrap();
        assert!(crop(&v, &bad).is_err());
    }

    #[test]
    fn crop_mask() {
        let g = Grid::isotropic([4, 4, 4], 1.0).unwrap();
        let m = Mask::from_voxels(g, &[[2, 2, 2]]).unwrap();
        let c = crop(&m, &BoundingBox::new([2, 2, 2], [3, 3, 3]).unwrap()).unwrap();
        assert_eq!(c.count(), 1);
        assert!(c.is_set([0, 0, 0]));
    }

    #[test]
    fn standardize_two_values() {
        let g = Grid::isotropic([2, 1, 1], 1.0).unwrap();
        let v = Volume::from_vec(g, vec![0.0, 2.0]).unwrap();
        let (s, p) = standardize_intensities(&v).unwrap();
        assert_eq!(s.data(), &[-1.0, 1.0]);
        assert_eq!(p, Standardization { mean: 1.0, std: 1.0 });
    }

    #[test]
    fn standardize_random_moments_and_idempotence() {
        let g = Grid::isotropic([8, 8, 8], 1.0).unwrap();
        let mut r = rng::seeded(5);
        let v = Volume::from_fn(g, |_| (rng::standard_normal(&mut r) * 250.0 + 300.0) as f32).unwrap();
        let (s, p) = standardize_intensities(&v).unwrap();
        let n = s.len() as f64;
        let mean = s.mean();
        let var = s.data().iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-6);
        assert!((var.sqrt() - 1.0).abs() < 1e-6);

        let (again, _) = standardize_intensities(&s).unwrap();
        for (a, b) in again.data().iter().zip(s.data()) {
            assert!((a - b).abs() < 1e-6);
        }
        let back = p.invert(&s);
        for (a, b) in back.data().iter().zip(v.data()) {
            assert!((a - b).abs() <= 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_variance_rejected() {
        let g = Grid::isotropic([3, 3, 3], 1.0).unwrap();
        assert!(standardize_intensities(&Volume::filled(g, 4.0)).is_err());
    }
}
