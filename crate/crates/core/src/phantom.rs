//! Procedural femur-like volumes with known ground truth: a curved shaft
//! capped by a spherical head, a bright cortical shell, darker osteolytic
//! lesions, and simulated human annotations of those lesions.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{dilate, erode, shell};
use crate::rng::{self, SeededRng};
use crate::volume::{Field, Grid, Mask, Volume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub shaft_radius_mm: f64,
    pub cortical_thickness_mm: f64,
    pub head_radius_mm: f64,
    /// Lateral offset of the shaft axis at the bottom slice relative to the
    /// top; the axis bends quadratically and is vertical at the head.
    pub bend_mm: f64,
    /// Background, trabecular and cortical intensity.
    pub levels: [f64; 3],
    pub lesion_level: f64,
    /// Range of lesion semi-axes.
    pub lesion_axis_mm: [f64; 2],
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            dims: [32, 32, 40],
            spacing: [0.85; 3],
            shaft_radius_mm: 6.0,
            cortical_thickness_mm: 1.5,
            head_radius_mm: 9.0,
            bend_mm: 3.0,
            levels: [-100.0, 300.0, 1200.0],
            lesion_level: 50.0,
            lesion_axis_mm: [3.0, 4.5],
            noise_sigma: 20.0,
            seed: 0,
        }
    }
}

/// Axis-aligned ellipsoid in physical coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center_mm: [f64; 3],
    pub semi_axes_mm: [f64; 3],
}

impl Ellipsoid {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3)
            .map(|k| ((p[k] - self.center_mm[k]) / self.semi_axes_mm[k]).powi(2))
            .sum::<f64>()
            <= 1.0
    }

    pub fn volume_mm3(&self) -> f64 {
        4.0 / 3.0 * PI * self.semi_axes_mm.iter().product::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LesionedFemur {
    pub image: Volume,
    pub femur: Mask,
    pub lesions: Mask,
    pub ellipsoids: Vec<Ellipsoid>,
}

struct Geometry {
    extent: [f64; 3],
    z_top: f64,
    spacing: [f64; 3],
    r: f64,
    head: f64,
    bend: f64,
}

impl Geometry {
    /// Physical position of a voxel centre.
    fn position(&self, p: [usize; 3]) -> [f64; 3] {
        [0, 1, 2].map(|k| (p[k] as f64 + 0.5) * self.spacing[k])
    }

    fn axis(&self, z: f64) -> [f64; 2] {
        let f = ((self.z_top - z) / self.z_top).max(0.0);
        [self.extent[0] / 2.0 + self.bend * f * f, self.extent[1] / 2.0]
    }

    /// Inside the shaft or head shrunk by `inset` mm.
    fn inside(&self, q: [f64; 3], inset: f64) -> bool {
        let a = self.axis(q[2]);
        let d2 = (q[0] - a[0]).powi(2) + (q[1] - a[1]).powi(2);
        let r = self.r - inset;
        let in_shaft = q[2] <= self.z_top && d2 <= r * r;
        let top = self.axis(self.z_top);
        let h2 = (q[0] - top[0]).powi(2) + (q[1] - top[1]).powi(2) + (q[2] - self.z_top).powi(2);
        let rh = self.head - inset;
        in_shaft || h2 <= rh * rh
    }
}

impl PhantomSpec {
    fn grid(&self) -> Result<Grid> {
        Grid::new(self.dims, self.spacing)
    }

    fn geometry(&self) -> Result<Geometry> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let grid = self.grid()?;
        let (r, t, head) = (self.shaft_radius_mm, self.cortical_thickness_mm, self.head_radius_mm);
        if !(t > 0.0 && t < r) {
            return bad(format!("cortical thickness {t} must be in (0, shaft radius {r})"));
        }
        if head < r {
            return bad(format!("head radius {head} must be at least the shaft radius {r}"));
        }
        let [bg, trab, cort] = self.levels;
        if !(bg < trab && trab < cort) {
            return bad(format!("levels {:?} must increase", self.levels));
        }
        if !(self.noise_sigma >= 0.0 && self.bend_mm >= 0.0) {
            return bad("noise sigma and bend must be >= 0".into());
        }
        let [alo, ahi] = self.lesion_axis_mm;
        if !(alo > 0.0 && alo <= ahi) {
            return bad(format!(
                "lesion axis range {:?} must satisfy 0 < lo <= hi",
                self.lesion_axis_mm
            ));
        }
        let extent = [0, 1, 2].map(|k| grid.dims[k] as f64 * grid.spacing[k]);
        let z_top = extent[2] - head - self.spacing[2];
        let half_x = extent[0] / 2.0;
        let half_y = extent[1] / 2.0;
        if head > half_x.min(half_y) || r + self.bend_mm > half_x || z_top < head {
            return Err(Error::InvalidArgument(format!(
                "grid extent {extent:?} mm cannot hold the femur geometry"
            )));
        }
        Ok(Geometry {
            extent,
            z_top,
            spacing: grid.spacing,
            r,
            head,
            bend: self.bend_mm,
        })
    }

    /// Exact solid volume of the femur in mm³: the head sphere plus the part
    /// of the shaft outside it. The shaft's horizontal sections are discs of
    /// the shaft radius regardless of the bend.
    pub fn analytic_femur_mm3(&self) -> Result<f64> {
        let g = self.geometry()?;
        let (r, big) = (g.r, g.head);
        let a = (big * big - r * r).sqrt();
        Ok(2.0 / 3.0 * PI * big.powi(3) + PI * (big * big * a - a.powi(3) / 3.0) + PI * r * r * (g.z_top - a))
    }
}

/// Base intensities, femur mask and trabecular (inner) mask.
fn anatomy(spec: &PhantomSpec) -> Result<(Vec<f64>, Mask, Mask, Geometry)> {
    let geo = spec.geometry()?;
    let grid = spec.grid()?;
    let femur = Mask::from_predicate(grid, |p| geo.inside(geo.position(p), 0.0));
    let inner = Mask::from_predicate(grid, |p| geo.inside(geo.position(p), spec.cortical_thickness_mm));
    let [bg, trab, cort] = spec.levels;
    let base = (0..grid.len())
        .map(|i| {
            if inner.is_set_index(i) {
                trab
            } else if femur.is_set_index(i) {
                cort
            } else {
                bg
            }
        })
        .collect();
    Ok((base, femur, inner, geo))
}

/// Texture noise: one normal per voxel in linear order from stream 0 of
/// `spec.seed`, skipped entirely when `noise_sigma` is 0.
fn finish(spec: &PhantomSpec, grid: Grid, mut values: Vec<f64>) -> Result<Volume> {
    if spec.noise_sigma > 0.0 {
        let mut r = rng::stream(spec.seed, 0);
        for v in &mut values {
            *v += spec.noise_sigma * rng::standard_normal(&mut r);
        }
    }
    Field::from_vec(grid, values.into_iter().map(|v| v as f32).collect())
}

/// Healthy femur image and its mask.
pub fn make_healthy_femur(spec: &PhantomSpec) -> Result<(Volume, Mask)> {
    let (base, femur, _, _) = anatomy(spec)?;
    Ok((finish(spec, *femur.grid(), base)?, femur))
}

/// Maximum candidate draws per lesion.
pub const LESION_ATTEMPTS: usize = 1000;

/// Femur with `lesion_count` disjoint ellipsoidal lesions inside its
/// trabecular region.
///
/// Each candidate draws, in order: a uniform index into the trabecular
/// voxels (linear order) for the centre, then the x, y and z semi-axes. A
/// candidate is kept when all voxels it covers are trabecular, untouched by
/// earlier lesions, and amount to more than 16 mm³. The texture noise equals
/// that of the healthy femur with the same spec.
pub fn make_lesioned_femur(spec: &PhantomSpec, lesion_count: usize, rng: &mut SeededRng) -> Result<LesionedFemur> {
    if lesion_count == 0 {
        return Err(Error::InvalidArgument("lesion count must be >= 1".into()));
    }
    let (mut base, femur, inner, geo) = anatomy(spec)?;
    let grid = *femur.grid();
    let candidates = inner.foreground_coords();
    if candidates.is_empty() {
        return Err(Error::EmptyMask("femur has no trabecular region".into()));
    }
    let mut lesions = Mask::zeros(grid);
    let mut ellipsoids = Vec::with_capacity(lesion_count);
    let [alo, ahi] = spec.lesion_axis_mm;
    let mut attempts = 0;
    while ellipsoids.len() < lesion_count {
        if attempts == LESION_ATTEMPTS * lesion_count {
            return Err(Error::Exhausted {
                stage: "make_lesioned_femur",
                attempts,
            });
        }
        attempts += 1;
        let c = candidates[rng::index(rng, candidates.len())];
        let mut semi = [0.0; 3];
        for s in &mut semi {
            *s = rng::uniform(rng, alo, ahi);
        }
        let e = Ellipsoid {
            center_mm: geo.position(c),
            semi_axes_mm: semi,
        };
        let lo = [0, 1, 2].map(|k| ((e.center_mm[k] - semi[k]) / grid.spacing[k] - 0.5).floor().max(0.0) as usize);
        let hi = [0, 1, 2].map(|k| {
            (((e.center_mm[k] + semi[k]) / grid.spacing[k] - 0.5).ceil().max(0.0) as usize).min(grid.dims[k] - 1)
        });
        let mut covered = Vec::new();
        let mut ok = true;
        'scan: for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    let p = [x, y, z];
                    if !e.contains(geo.position(p)) {
                        continue;
                    }
                    let i = grid.index(p);
                    if !inner.is_set_index(i) || lesions.is_set_index(i) {
                        ok = false;
                        break 'scan;
                    }
                    covered.push(i);
                }
            }
        }
        // the lesion must not touch the grid border either
        let touches_border = (0..3).any(|k| {
            e.center_mm[k] - semi[k] < 0.5 * grid.spacing[k]
                || e.center_mm[k] + semi[k] > (grid.dims[k] as f64 - 0.5) * grid.spacing[k]
        });
        if !ok || touches_border || covered.len() as f64 * grid.voxel_volume() <= crate::metrics::DEFAULT_MIN_LESION_MM3
        {
            continue;
        }
        for &i in &covered {
            lesions.data_mut()[i] = 1;
            base[i] = spec.lesion_level;
        }
        ellipsoids.push(e);
    }
    Ok(LesionedFemur {
        image: finish(spec, grid, base)?,
        femur,
        lesions,
        ellipsoids,
    })
}

/// Boundary layers perturbed at the lowest skill.
pub const OPERATOR_MAX_LAYERS: f64 = 3.0;
/// Boundary flip probability at the lowest skill.
pub const OPERATOR_MAX_FLIP: f64 = 0.4;

/// A simulated annotation of `reference` by an operator of the given skill.
///
/// With `k = (1 - skill) * 3`, draws in order: one coin choosing erosion or
/// dilation; `floor(k)` full layers are applied, then one partial layer
/// where each affected voxel (linear order) changes with probability
/// `frac(k)`; finally each voxel of the result's boundary shell (linear
/// order) flips with probability `(1 - skill) * 0.4`. `skill = 1` returns
/// the reference unchanged without drawing.
pub fn simulate_operator(reference: &Mask, skill: f64, rng: &mut SeededRng) -> Result<Mask> {
    if !(skill > 0.0 && skill <= 1.0) {
        return Err(Error::InvalidArgument(format!("skill {skill} must be in (0, 1]")));
    }
    if reference.is_blank() {
        return Err(Error::EmptyMask("reference annotation".into()));
    }
    if skill == 1.0 {
        return Ok(reference.clone());
    }
    let k = (1.0 - skill) * OPERATOR_MAX_LAYERS;
    let grow = rng::uniform(rng, 0.0, 1.0) < 0.5;
    let step = |m: &Mask| if grow { dilate(m) } else { erode(m) };
    let mut m = reference.clone();
    for _ in 0..k.floor() as usize {
        m = step(&m);
    }
    let frac = k - k.floor();
    let next = step(&m);
    let mut partial = m.data().to_vec();
    for (i, (a, b)) in m.data().iter().zip(next.data()).enumerate() {
        if a != b && rng::uniform(rng, 0.0, 1.0) < frac {
            partial[i] = next.data()[i];
        }
    }
    let m = Field::from_raw(*m.grid(), partial);
    let p_flip = (1.0 - skill) * OPERATOR_MAX_FLIP;
    let band = shell(&m);
    let mut out = m.data().to_vec();
    for i in band.foreground_indices() {
        if rng::uniform(rng, 0.0, 1.0) < p_flip {
            out[i] ^= 1;
        }
    }
    Ok(Field::from_raw(*m.grid(), out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::dice;
    use std::collections::BTreeSet;

    #[test]
    fn noiseless_has_three_levels() {
        let spec = PhantomSpec {
            noise_sigma: 0.0,
            ..Default::default()
        };
        let (v, femur) = make_healthy_femur(&spec).unwrap();
        let levels: BTreeSet<u32> = v.data().iter().map(|x| x.to_bits()).collect();
        assert_eq!(levels.len(), 3);
        assert!(!femur.is_blank());
    }

    #[test]
    fn femur_volume_near_analytic() {
        let spec = PhantomSpec::default();
        let (_, femur) = make_healthy_femur(&spec).unwrap();
        let want = spec.analytic_femur_mm3().unwrap();
        let got = femur.volume_mm3();
        assert!((got / want - 1.0).abs() < 0.1, "{got} vs {want}");
    }

    #[test]
    fn deterministic() {
        let spec = PhantomSpec {
            seed: 5,
            ..Default::default()
        };
        assert_eq!(make_healthy_femur(&spec).unwrap(), make_healthy_femur(&spec).unwrap());
    }

    #[test]
    fn rejects_bad_geometry() {
        let thick = PhantomSpec {
            cortical_thickness_mm: 7.0,
            ..Default::default()
        };
        assert!(make_healthy_femur(&thick).is_err());
        let small = PhantomSpec {
            dims: [8, 8, 8],
            ..Default::default()
        };
        assert!(make_healthy_femur(&small).is_err());
    }

    #[test]
    fn lesions_are_dark_inside_and_sized() {
        let spec = PhantomSpec::default();
        let out = make_lesioned_femur(&spec, 2, &mut rng::seeded(3)).unwrap();
        assert!(out.lesions.is_subset_of(&out.femur));
        assert_eq!(out.ellipsoids.len(), 2);
        let vox = out.femur.grid().voxel_volume();
        for e in &out.ellipsoids {
            let m = Mask::from_predicate(*out.femur.grid(), |p| {
                e.contains([0, 1, 2].map(|k| (p[k] as f64 + 0.5) * spec.spacing[k]))
            });
            assert!(m.is_subset_of(&out.lesions));
            let got = m.count() as f64 * vox;
            assert!(got > 16.0);
            assert!((got / e.volume_mm3() - 1.0).abs() < 0.15, "{got} vs {}", e.volume_mm3());
            let mean: f64 = m
                .foreground_indices()
                .iter()
                .map(|&i| out.image.data()[i] as f64)
                .sum::<f64>()
                / m.count() as f64;
            assert!(mean < spec.levels[1]);
        }
        assert!(make_lesioned_femur(&spec, 0, &mut rng::seeded(3)).is_err());
    }

    #[test]
    fn operator_skill() {
        let spec = PhantomSpec::default();
        let out = make_lesioned_femur(&spec, 1, &mut rng::seeded(1)).unwrap();
        let r = &out.lesions;
        assert_eq!(&simulate_operator(r, 1.0, &mut rng::seeded(0)).unwrap(), r);
        let a = simulate_operator(r, 0.5, &mut rng::seeded(2)).unwrap();
        assert_eq!(a, simulate_operator(r, 0.5, &mut rng::seeded(2)).unwrap());
        let mean = |skill: f64| {
            (0..30)
                .map(|s| dice(&simulate_operator(r, skill, &mut rng::seeded(s)).unwrap(), r).unwrap())
                .sum::<f64>()
                / 30.0
        };
        let (lo, mid, hi) = (mean(0.3), mean(0.6), mean(0.9));
        assert!(lo < mid && mid < hi, "{lo} {mid} {hi}");
    }
}
