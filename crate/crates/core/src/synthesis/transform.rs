use serde::{Deserialize, Serialize};

use super::{check_size, LesionFragment, SynthesisConfig};
use crate::error::{Error, Result};
use crate::metrics::largest_component;
use crate::rng::{self, SeededRng};
use crate::volume::{crop, sample_nearest, sample_trilinear, Field, Grid, Mask};

/// Rotation angles in degrees about x, y and z, and an isotropic scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub rot_deg: [f64; 3],
    pub scale: f64,
}

impl TransformParams {
    pub const IDENTITY: TransformParams = TransformParams {
        rot_deg: [0.0; 3],
        scale: 1.0,
    };

    /// `Rz * Ry * Rx`: the x rotation is applied first.
    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let [ax, ay, az] = self.rot_deg.map(f64::to_radians);
        let (sx, cx) = ax.sin_cos();
        let (sy, cy) = ay.sin_cos();
        let (sz, cz) = az.sin_cos();
        let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
        let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
        let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
        matmul(&rz, &matmul(&ry, &rx))
    }
}

fn matmul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn apply(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2])
}

fn apply_transposed(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| m[0][i] * v[0] + m[1][i] * v[1] + m[2][i] * v[2])
}

/// Rotate and scale the fragment about its mask centroid in physical
/// coordinates.
///
/// The output grid keeps the input spacing and is sized to hold the image
/// of the whole input grid. Intensities are resampled trilinearly, the mask
/// by nearest neighbour; the largest mask component is kept and the result
/// is cropped to it with a one-voxel margin.
pub fn apply_transform(f: &LesionFragment, params: TransformParams, min_mm3: f64) -> Result<LesionFragment> {
    if !(params.scale > 0.0 && params.scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("scale {} must be > 0", params.scale)));
    }
    let grid = *f.mask.grid();
    let s = grid.spacing;
    let centroid = f
        .mask
        .centroid()
        .ok_or_else(|| Error::EmptyMask(format!("fragment {}", f.source_id)))?;
    let c = [0, 1, 2].map(|k| centroid[k] * s[k]);
    let r = params.rotation();

    let forward = |p: [f64; 3]| {
        let d = apply(&r, [p[0] - c[0], p[1] - c[1], p[2] - c[2]]);
        [0, 1, 2].map(|k| c[k] + params.scale * d[k])
    };
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for corner in 0..8 {
        let p = [0, 1, 2].map(|k| {
            let far = corner >> k & 1 == 1;
            if far {
                (grid.dims[k] - 1) as f64 * s[k]
            } else {
                0.0
            }
        });
        let q = forward(p);
        for k in 0..3 {
            lo[k] = lo[k].min(q[k]);
            hi[k] = hi[k].max(q[k]);
        }
    }
    // tolerance keeps an identity transform on the input grid size
    let dims = [0, 1, 2].map(|k| ((hi[k] - lo[k]) / s[k] - 1e-9).ceil().max(0.0) as usize + 1);
    let out_grid = Grid::new(dims, s)?;

    let source_index = |q: [usize; 3]| {
        let phys = [0, 1, 2].map(|k| lo[k] + q[k] as f64 * s[k] - c[k]);
        let d = apply_transposed(&r, phys);
        [0, 1, 2].map(|k| (c[k] + d[k] / params.scale) / s[k])
    };
    let n = out_grid.len();
    let mut intensities = Vec::with_capacity(n);
    let mut mask = Vec::with_capacity(n);
    for i in 0..n {
        let p = source_index(out_grid.coords(i));
        intensities.push(sample_trilinear(&f.intensities, p) as f32);
        mask.push(sample_nearest(&f.mask, p).unwrap_or(0));
    }
    let intensities = Field::from_vec(out_grid, intensities)?;
    let mask = largest_component(&Mask::from_vec(out_grid, mask)?);
    check_size(&mask, min_mm3)?;
    let bbox = mask.bounding_box().expect("nonempty").expanded(1, &out_grid);
    let mask = crop(&mask, &bbox)?;
    Ok(LesionFragment {
        intensities: crop(&intensities, &bbox)?,
        volume_mm3: mask.volume_mm3(),
        mask,
        source_id: f.source_id.clone(),
        transform: Some(params),
    })
}

/// Random rotation and scale. Each attempt draws, in order: the x, y and z
/// angles uniformly in `±rotation_range_deg`, then the scale.
pub fn transform_lesion(f: &LesionFragment, cfg: &SynthesisConfig, rng: &mut SeededRng) -> Result<LesionFragment> {
    let range = cfg.rotation_range_deg;
    for _ in 0..cfg.max_placement_attempts {
        let mut rot_deg = [0.0; 3];
        for a in &mut rot_deg {
            *a = rng::uniform(rng, -range, range);
        }
        let scale = rng::uniform(rng, cfg.scale_range[0], cfg.scale_range[1]);
        match apply_transform(f, TransformParams { rot_deg, scale }, cfg.min_lesion_mm3) {
            Err(Error::Undersized { .. }) => continue,
            other => return other,
        }
    }
    Err(Error::Exhausted {
        stage: "transform_lesion",
        attempts: cfg.max_placement_attempts,
    })
}
