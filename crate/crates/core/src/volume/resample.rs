//! Isotropic resampling.
//!
//! Voxel centres are aligned on the physical box: output voxel `i` along an
//! axis sits at `(i + 0.5) * t` mm, which is continuous source index
//! `(i + 0.5) * t / s - 0.5`. Samples outside the source clamp to the edge.

use super::{Field, Grid, Mask, Volume};
use crate::error::{Error, Result};

fn output_grid(grid: &Grid, target: f64) -> Result<Grid> {
    if !(target.is_finite() && target > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "target spacing must be > 0, got {target}"
        )));
    }
    let mut dims = [0usize; 3];
    for k in 0..3 {
        let extent = grid.dims[k] as f64 * grid.spacing[k] / target;
        // round half up, at least one voxel
        dims[k] = ((extent + 0.5).floor() as usize).max(1);
    }
    Grid::isotropic(dims, target)
}

/// Trilinear interpolation at a continuous voxel position, edge-clamped.
pub fn sample_trilinear(v: &Volume, p: [f64; 3]) -> f64 {
    let dims = v.dims();
    let mut i0 = [0usize; 3];
    let mut i1 = [0usize; 3];
    let mut w = [0.0f64; 3];
    for k in 0..3 {
        let max = (dims[k] - 1) as f64;
        let c = p[k].clamp(0.0, max);
        let f = c.floor();
        i0[k] = f as usize;
        i1[k] = (i0[k] + 1).min(dims[k] - 1);
        w[k] = c - f;
    }
    let g = v.grid();
    let d = v.data();
    let at = |x: usize, y: usize, z: usize| d[g.index([x, y, z])] as f64;
    let c00 = at(i0[0], i0[1], i0[2]) * (1.0 - w[0]) + at(i1[0], i0[1], i0[2]) * w[0];
    let c10 = at(i0[0], i1[1], i0[2]) * (1.0 - w[0]) + at(i1[0], i1[1], i0[2]) * w[0];
    let c01 = at(i0[0], i0[1], i1[2]) * (1.0 - w[0]) + at(i1[0], i0[1], i1[2]) * w[0];
    let c11 = at(i0[0], i1[1], i1[2]) * (1.0 - w[0]) + at(i1[0], i1[1], i1[2]) * w[0];
    let c0 = c00 * (1.0 - w[1]) + c10 * w[1];
    let c1 = c01 * (1.0 - w[1]) + c11 * w[1];
    c0 * (1.0 - w[2]) + c1 * w[2]
}

/// Nearest voxel value (round half up), or `None` outside the grid.
pub fn sample_nearest<T: super::Voxel>(f: &Field<T>, p: [f64; 3]) -> Option<T> {
    let q = [
        (p[0] + 0.5).floor() as i64,
        (p[1] + 0.5).floor() as i64,
        (p[2] + 0.5).floor() as i64,
    ];
    f.grid().checked_index(q).map(|i| f.data()[i])
}

/// Trilinear resampling to isotropic `target_spacing` mm.
pub fn resample_isotropic(v: &Volume, target_spacing: f64) -> Result<Volume> {
    let out = output_grid(v.grid(), target_spacing)?;
    let ratio: Vec<f64> = (0..3).map(|k| target_spacing / v.spacing()[k]).collect();
    let data = (0..out.len())
        .map(|i| {
            let q = out.coords(i);
            let p = [
                (q[0] as f64 + 0.5) * ratio[0] - 0.5,
                (q[1] as f64 + 0.5) * ratio[1] - 0.5,
                (q[2] as f64 + 0.5) * ratio[2] - 0.5,
            ];
            sample_trilinear(v, p) as f32
        })
        .collect();
    Ok(Field::from_raw(out, data))
}

/// Nearest-neighbour resampling: each output voxel takes the source voxel
/// containing its centre.
pub fn resample_mask(m: &Mask, target_spacing: f64) -> Result<Mask> {
    let out = output_grid(m.grid(), target_spacing)?;
    let src = m.dims();
    let ratio: Vec<f64> = (0..3).map(|k| target_spacing / m.spacing()[k]).collect();
    let data = (0..out.len())
        .map(|i| {
            let q = out.coords(i);
            let mut p = [0usize; 3];
            for k in 0..3 {
                let s = ((q[k] as f64 + 0.5) * ratio[k]).floor().max(0.0) as usize;
                p[k] = s.min(src[k] - 1);
            }
            m.get(p)
        })
        .collect();
    Ok(Field::from_raw(out, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn identity_resampling() {
        let g = Grid::isotropic([5, 6, 7], 0.85).unwrap();
        let mut r = rng::seeded(3);
        let v = Volume::from_fn(g, |_| rng::standard_normal(&mut r) as f32).unwrap();
        let out = resample_isotropic(&v, 0.85).unwrap();
        assert_eq!(out.dims(), v.dims());
        for (a, b) in out.data().iter().zip(v.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
        let m = Mask::from_predicate(g, |p| (p[0] + p[1] + p[2]) % 3 == 0);
        assert_eq!(resample_mask(&m, 0.85).unwrap(), m);
    }

    #[test]
    fn constant_stays_constant() {
        let g = Grid::new([4, 5, 3], [0.7, 1.3, 2.0]).unwrap();
        let v = Volume::filled(g, 42.5);
        for t in [0.3, 0.85, 1.9] {
            let out = resample_isotropic(&v, t).unwrap();
            assert!(out.data().iter().all(|&x| x == 42.5));
        }
        let m = Mask::filled(g, 1);
        let out = resample_mask(&m, 0.5).unwrap();
        assert_eq!(out.count(), out.len());
    }

    #[test]
    fn output_dims_round_half_up() {
        let g = Grid::new([5, 3, 1], [1.0, 1.0, 1.0]).unwrap();
        let v = Volume::zeros(g);
        // 5 / 2 = 2.5 -> 3, 3 / 2 = 1.5 -> 2, 1 / 2 = 0.5 -> 1
        assert_eq!(resample_isotropic(&v, 2.0).unwrap().dims(), [3, 2, 1]);
        // 1 / 4 rounds to 0, clamped to 1
        assert_eq!(resample_isotropic(&v, 4.0).unwrap().dims()[2], 1);
        assert!(resample_isotropic(&v, 0.0).is_err());
    }

    #[test]
    fn linear_ramp_matches_analytic() {
        let g = Grid::isotropic([10, 2, 2], 1.0).unwrap();
        let v = Volume::from_fn(g, |p| p[0] as f32).unwrap();
        let out = resample_isotropic(&v, 0.5).unwrap();
        assert_eq!(out.dims(), [20, 4, 4]);
        for i in 1..19 {
            // output centre in source index space
            let expected = (i as f64 + 0.5) * 0.5 - 0.5;
            let got = out.get([i, 1, 1]) as f64;
            assert!((got - expected).abs() < 1e-6, "i={i}: {got} vs {expected}");
        }
    }

    #[test]
    fn mask_upsample_block() {
        let g = Grid::isotropic([3, 3, 3], 1.0).unwrap();
        let m = Mask::from_voxels(g, &[[1, 1, 1]]).unwrap();
        let out = resample_mask(&m, 0.5).unwrap();
        assert_eq!(out.dims(), [6, 6, 6]);
        // direct evaluation: output centre (i + 0.5) * 0.5 falls in [1, 2)
        let expected = Mask::from_predicate(*out.grid(), |q| {
            q.iter().all(|&i| {
                let c = (i as f64 + 0.5) * 0.5;
                (1.0..2.0).contains(&c)
            })
        });
        assert_eq!(out, expected);
        assert_eq!(out.count(), 8);
    }
}
