//! Lesion transplantation: extract a lesion from a donor volume, crop it
//! with a random ellipsoid, rotate and scale it, then composite it into a
//! healthy host femur.

mod blend;
mod dataset;
mod transform;

use serde::{Deserialize, Serialize};

use crate::diffusion::Refinement;
use crate::error::{Error, Result};
use crate::metrics::{connected_components, largest_component, DEFAULT_MIN_LESION_MM3};
use crate::rng::{self, SeededRng};
use crate::volume::{crop, Mask, Volume};

pub use blend::{blend_lesion, place_lesion};
pub use dataset::{exclude_donor, generate_dataset, read_sample, write_sample, Dataset, YieldSummary};
pub use transform::{apply_transform, transform_lesion, TransformParams};

/// A named volume with its companion mask: the lesion mask for donors, the
/// femur mask for hosts.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub id: String,
    pub image: Volume,
    pub mask: Mask,
}

impl Subject {
    pub fn new(id: impl Into<String>, image: Volume, mask: Mask) -> Result<Self> {
        image.require_same_grid(&mask, "subject mask")?;
        Ok(Subject {
            id: id.into(),
            image,
            mask,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    /// Ellipsoid semi-axes as fractions of the lesion half-extent.
    pub ellipsoid_axis_fraction_range: [f64; 2],
    /// Rotation about each axis is drawn from `±rotation_range_deg`.
    pub rotation_range_deg: f64,
    pub scale_range: [f64; 2],
    /// Side of the box filter applied to the lesion boundary, odd.
    pub smooth_kernel: usize,
    /// Std of the noise added over the lesion and its boundary.
    pub noise_sigma: f64,
    pub max_placement_attempts: usize,
    pub min_lesion_mm3: f64,
    pub seed: u64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            ellipsoid_axis_fraction_range: [0.5, 1.0],
            rotation_range_deg: 180.0,
            scale_range: [0.8, 1.2],
            smooth_kernel: 3,
            noise_sigma: 0.05,
            max_placement_attempts: 100,
            min_lesion_mm3: DEFAULT_MIN_LESION_MM3,
            seed: 0,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        let [flo, fhi] = self.ellipsoid_axis_fraction_range;
        if !(flo > 0.0 && flo <= fhi && fhi.is_finite()) {
            return bad(format!("axis fraction range [{flo}, {fhi}] must satisfy 0 < lo <= hi"));
        }
        if !(self.rotation_range_deg >= 0.0 && self.rotation_range_deg.is_finite()) {
            return bad(format!("rotation range {} must be >= 0", self.rotation_range_deg));
        }
        let [slo, shi] = self.scale_range;
        if !(slo > 0.0 && slo <= shi && shi.is_finite()) {
            return bad(format!("scale range [{slo}, {shi}] must satisfy 0 < lo <= hi"));
        }
        if self.smooth_kernel % 2 == 0 {
            return bad(format!("smooth kernel {} must be odd", self.smooth_kernel));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise sigma {} must be >= 0", self.noise_sigma));
        }
        if self.max_placement_attempts == 0 {
            return bad("max_placement_attempts must be >= 1".into());
        }
        if !(self.min_lesion_mm3 >= 0.0 && self.min_lesion_mm3.is_finite()) {
            return bad(format!("min lesion volume {} must be >= 0", self.min_lesion_mm3));
        }
        Ok(())
    }
}

/// A lesion cut out of its donor: intensities and mask on a tight grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LesionFragment {
    pub intensities: Volume,
    pub mask: Mask,
    pub source_id: String,
    pub volume_mm3: f64,
    /// Set once the fragment has gone through [`transform_lesion`].
    pub transform: Option<TransformParams>,
}

impl LesionFragment {
    fn with_mask(&self, mask: Mask) -> LesionFragment {
        LesionFragment {
            intensities: self.intensities.clone(),
            volume_mm3: mask.volume_mm3(),
            mask,
            source_id: self.source_id.clone(),
            transform: self.transform,
        }
    }
}

/// Where a synthetic sample came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub donor_id: String,
    pub host_id: String,
    pub repetition: usize,
    pub seed: u64,
    pub transform: Option<TransformParams>,
    /// Host voxel that received the fragment's grid origin.
    pub offset: [i64; 3],
    /// Candidate centres drawn before one was accepted, including it.
    pub placement_attempts: usize,
    pub refinement: Option<Refinement>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub image: Volume,
    pub label: Mask,
    pub provenance: Provenance,
}

impl SyntheticSample {
    /// File stem used when the sample is written to disk.
    pub fn name(&self) -> String {
        let p = &self.provenance;
        format!("{}__{}__{:03}", p.donor_id, p.host_id, p.repetition)
    }
}

fn check_size(mask: &Mask, min_mm3: f64) -> Result<()> {
    let volume_mm3 = mask.volume_mm3();
    if volume_mm3 <= min_mm3 {
        return Err(Error::Undersized { volume_mm3, min_mm3 });
    }
    Ok(())
}

/// Largest component of the lesion mask, cropped with a one-voxel margin.
pub fn extract_lesion(image: &Volume, lesion_mask: &Mask, source_id: &str, min_mm3: f64) -> Result<LesionFragment> {
    image.require_same_grid(lesion_mask, "lesion mask")?;
    if lesion_mask.is_blank() {
        return Err(Error::EmptyMask(format!("donor {source_id} has no lesion")));
    }
    let lesion = largest_component(lesion_mask);
    check_size(&lesion, min_mm3)?;
    let bbox = lesion.bounding_box().expect("nonempty mask").expanded(1, image.grid());
    let mask = crop(&lesion, &bbox)?;
    Ok(LesionFragment {
        intensities: crop(image, &bbox)?,
        volume_mm3: mask.volume_mm3(),
        mask,
        source_id: source_id.to_string(),
        transform: None,
    })
}

/// Intersect the fragment with an axis-aligned ellipsoid given in voxel
/// coordinates, then keep the largest component.
pub fn ellipsoid_crop_with(
    f: &LesionFragment,
    center: [f64; 3],
    semi_axes: [f64; 3],
    min_mm3: f64,
) -> Result<LesionFragment> {
    let inside = |p: [usize; 3]| {
        let r: f64 = (0..3).map(|k| ((p[k] as f64 - center[k]) / semi_axes[k]).powi(2)).sum();
        r <= 1.0
    };
    let cut = Mask::from_predicate(*f.mask.grid(), |p| f.mask.is_set(p) && inside(p));
    let kept = largest_component(&cut);
    check_size(&kept, min_mm3)?;
    Ok(f.with_mask(kept))
}

/// Random ellipsoid crop.
///
/// Each attempt draws, in order: the centre as a uniform index into the
/// foreground voxels (linear order), then one axis fraction per axis x, y, z.
/// Semi-axes are the fractions times half the foreground bounding-box extent.
pub fn ellipsoid_crop(f: &LesionFragment, cfg: &SynthesisConfig, rng: &mut SeededRng) -> Result<LesionFragment> {
    let voxels = f.mask.foreground_coords();
    let bbox = f
        .mask
        .bounding_box()
        .ok_or_else(|| Error::EmptyMask(format!("fragment {}", f.source_id)))?;
    let half = bbox.dims().map(|d| d as f64 / 2.0);
    let [lo, hi] = cfg.ellipsoid_axis_fraction_range;
    for _ in 0..cfg.max_placement_attempts {
        let c = voxels[rng::index(rng, voxels.len())];
        let mut semi = [0.0; 3];
        for k in 0..3 {
            semi[k] = rng::uniform(rng, lo, hi) * half[k];
        }
        let center = c.map(|v| v as f64);
        match ellipsoid_crop_with(f, center, semi, cfg.min_lesion_mm3) {
            Err(Error::Undersized { .. }) => continue,
            other => return other,
        }
    }
    Err(Error::Exhausted {
        stage: "ellipsoid_crop",
        attempts: cfg.max_placement_attempts,
    })
}

/// Number of 6-connected components in the fragment mask.
pub fn fragment_components(f: &LesionFragment) -> usize {
    connected_components(&f.mask).len()
}
