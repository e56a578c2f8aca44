use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    ellipsoid_crop, extract_lesion, place_lesion, transform_lesion, LesionFragment, Provenance, Subject,
    SynthesisConfig, SyntheticSample,
};
use crate::error::{Error, Result};
use crate::rng;
use crate::volume::{read_mask, read_volume, write_mask, write_volume};

/// Attempt and failure counts of one dataset generation run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct YieldSummary {
    pub attempted: usize,
    pub accepted: usize,
    /// Donors whose lesion could not be extracted; none of their attempts run.
    pub unusable_donors: usize,
    pub crop_failures: usize,
    pub transform_failures: usize,
    pub placement_failures: usize,
    pub undersized: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<SyntheticSample>,
    pub summary: YieldSummary,
}

enum Failure {
    Crop,
    Transform,
    Placement,
    Undersized,
}

fn attempt(
    fragment: &LesionFragment,
    host: &Subject,
    cfg: &SynthesisConfig,
    (d, h, r): (usize, usize, usize),
) -> std::result::Result<SyntheticSample, Failure> {
    let mut rng = rng::triple_stream(cfg.seed, d, h, r);
    let cropped = ellipsoid_crop(fragment, cfg, &mut rng).map_err(|_| Failure::Crop)?;
    let moved = transform_lesion(&cropped, cfg, &mut rng).map_err(|_| Failure::Transform)?;
    let mut sample = place_lesion(host, &moved, cfg, &mut rng).map_err(|e| match e {
        Error::Undersized { .. } => Failure::Undersized,
        _ => Failure::Placement,
    })?;
    sample.provenance.repetition = r;
    Ok(sample)
}

/// Run `per_pair` synthesis attempts for every (donor, host) pair.
///
/// The lesion of each donor is extracted once. Attempt `(d, h, r)` draws
/// from its own stream `rng::triple_stream(cfg.seed, d, h, r)`, so the
/// output does not depend on scheduling. Samples are ordered by donor, then
/// host, then repetition; failed attempts are counted, not returned.
pub fn generate_dataset(
    donors: &[Subject],
    hosts: &[Subject],
    per_pair: usize,
    cfg: &SynthesisConfig,
) -> Result<Dataset> {
    cfg.validate()?;
    let mut summary = YieldSummary::default();
    let fragments: Vec<Option<LesionFragment>> = donors
        .iter()
        .map(|d| extract_lesion(&d.image, &d.mask, &d.id, cfg.min_lesion_mm3).ok())
        .collect();
    summary.unusable_donors = fragments.iter().filter(|f| f.is_none()).count();

    let mut jobs = Vec::new();
    for (d, fragment) in fragments.iter().enumerate() {
        let Some(fragment) = fragment else { continue };
        for h in 0..hosts.len() {
            for r in 0..per_pair {
                jobs.push((fragment, d, h, r));
            }
        }
    }
    summary.attempted = jobs.len();
    let results: Vec<_> = jobs
        .par_iter()
        .map(|&(f, d, h, r)| attempt(f, &hosts[h], cfg, (d, h, r)))
        .collect();

    let mut samples = Vec::new();
    for result in results {
        match result {
            Ok(s) => samples.push(s),
            Err(Failure::Crop) => summary.crop_failures += 1,
            Err(Failure::Transform) => summary.transform_failures += 1,
            Err(Failure::Placement) => summary.placement_failures += 1,
            Err(Failure::Undersized) => summary.undersized += 1,
        }
    }
    summary.accepted = samples.len();
    Ok(Dataset { samples, summary })
}

/// Drop every sample whose donor is in `donor_ids`.
pub fn exclude_donor(samples: Vec<SyntheticSample>, donor_ids: &HashSet<String>) -> Vec<SyntheticSample> {
    samples
        .into_iter()
        .filter(|s| !donor_ids.contains(&s.provenance.donor_id))
        .collect()
}

/// Write `<name>_img.vvol`, `<name>_lbl.vvol` and `<name>_meta.json`.
pub fn write_sample(dir: &Path, name: &str, sample: &SyntheticSample) -> Result<()> {
    write_volume(&sample.image, dir.join(format!("{name}_img.vvol")))?;
    write_mask(&sample.label, dir.join(format!("{name}_lbl.vvol")))?;
    let meta = dir.join(format!("{name}_meta.json"));
    let json = serde_json::to_string_pretty(&sample.provenance).expect("provenance serializes");
    fs::write(&meta, json + "\n").map_err(|e| Error::io(&meta, e))
}

pub fn read_sample(dir: &Path, name: &str) -> Result<SyntheticSample> {
    let image = read_volume(dir.join(format!("{name}_img.vvol")))?;
    let label = read_mask(dir.join(format!("{name}_lbl.vvol")))?;
    image.require_same_grid(&label, "sample label")?;
    let meta = dir.join(format!("{name}_meta.json"));
    let text = fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
    let provenance: Provenance = serde_json::from_str(&text).map_err(|e| Error::format(&meta, e.to_string()))?;
    Ok(SyntheticSample {
        image,
        label,
        provenance,
    })
}
