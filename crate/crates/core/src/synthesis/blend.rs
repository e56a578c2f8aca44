use super::{check_size, LesionFragment, Provenance, Subject, SynthesisConfig, SyntheticSample};
use crate::error::{Error, Result};
use crate::metrics::{dilate, shell};
use crate::rng::{self, SeededRng};
use crate::volume::Field;

/// Host indices covered by the fragment mask when its grid origin sits at
/// `at`, or `None` if any of them falls outside the host grid.
fn placed_indices(host: &Subject, f: &LesionFragment, at: [i64; 3]) -> Option<Vec<usize>> {
    let g = host.image.grid();
    f.mask
        .foreground_coords()
        .into_iter()
        .map(|p| g.checked_index([p[0] as i64 + at[0], p[1] as i64 + at[1], p[2] as i64 + at[2]]))
        .collect()
}

/// Composite the fragment into the host with its grid origin at host voxel
/// `at`.
///
/// Host voxels under the mask are replaced by fragment intensities. Every
/// voxel of the boundary shell (one-step dilation minus one-step erosion) is
/// then set to the mean of the composited image over the `smooth_kernel`
/// cube around it, clipped to the grid. Finally, when `noise_sigma > 0`, one
/// normal draw per voxel of mask ∪ shell is added in linear index order.
pub fn blend_lesion(
    host: &Subject,
    f: &LesionFragment,
    at: [i64; 3],
    cfg: &SynthesisConfig,
    rng: &mut SeededRng,
) -> Result<SyntheticSample> {
    let g = *host.image.grid();
    if f.mask.spacing() != g.spacing {
        return Err(Error::GridMismatch(format!(
            "fragment spacing {:?} differs from host spacing {:?}",
            f.mask.spacing(),
            g.spacing
        )));
    }
    let placed = placed_indices(host, f, at)
        .ok_or_else(|| Error::OutOfBounds(format!("fragment {} at {at:?} leaves the host grid", f.source_id)))?;

    let mut composite = host.image.data().to_vec();
    let mut label = vec![0u8; g.len()];
    for (p, &i) in f.mask.foreground_coords().into_iter().zip(&placed) {
        composite[i] = f.intensities.get(p);
        label[i] = 1;
    }
    let label = Field::from_raw(g, label);

    let band = shell(&label);
    let mut out = composite.clone();
    let r = (cfg.smooth_kernel / 2) as i64;
    if r > 0 {
        for i in band.foreground_indices() {
            let p = g.coords(i);
            let (mut sum, mut n) = (0.0f64, 0usize);
            for dz in -r..=r {
                for dy in -r..=r {
                    for dx in -r..=r {
                        let q = [p[0] as i64 + dx, p[1] as i64 + dy, p[2] as i64 + dz];
                        if let Some(j) = g.checked_index(q) {
                            sum += composite[j] as f64;
                            n += 1;
                        }
                    }
                }
            }
            out[i] = (sum / n as f64) as f32;
        }
    }
    if cfg.noise_sigma > 0.0 {
        for i in dilate(&label).foreground_indices() {
            out[i] = (out[i] as f64 + cfg.noise_sigma * rng::standard_normal(rng)) as f32;
        }
    }
    Ok(SyntheticSample {
        image: Field::from_vec(g, out)?,
        label,
        provenance: Provenance {
            donor_id: f.source_id.clone(),
            host_id: host.id.clone(),
            repetition: 0,
            seed: cfg.seed,
            transform: f.transform,
            offset: at,
            placement_attempts: 0,
            refinement: None,
        },
    })
}

/// Place the fragment at a random position fully inside the host femur.
///
/// Each attempt draws one uniform index into the femur voxels (linear
/// order); the fragment's rounded mask centroid is put on that voxel. The
/// first placement whose every lesion voxel lies in the femur is blended.
pub fn place_lesion(
    host: &Subject,
    f: &LesionFragment,
    cfg: &SynthesisConfig,
    rng: &mut SeededRng,
) -> Result<SyntheticSample> {
    let femur: Vec<[usize; 3]> = host.mask.foreground_coords();
    if femur.is_empty() {
        return Err(Error::EmptyMask(format!("host {} has no femur", host.id)));
    }
    check_size(&f.mask, cfg.min_lesion_mm3)?;
    let c = f
        .mask
        .centroid()
        .ok_or_else(|| Error::EmptyMask(format!("fragment {}", f.source_id)))?
        .map(|v| (v + 0.5).floor() as i64);
    for attempt in 1..=cfg.max_placement_attempts {
        let v = femur[rng::index(rng, femur.len())];
        let at = [0, 1, 2].map(|k| v[k] as i64 - c[k]);
        let Some(idx) = placed_indices(host, f, at) else {
            continue;
        };
        if idx.iter().all(|&i| host.mask.is_set_index(i)) {
            let mut sample = blend_lesion(host, f, at, cfg, rng)?;
            check_size(&sample.label, cfg.min_lesion_mm3)?;
            sample.provenance.placement_attempts = attempt;
            return Ok(sample);
        }
    }
    Err(Error::Exhausted {
        stage: "place_lesion",
        attempts: cfg.max_placement_attempts,
    })
}
