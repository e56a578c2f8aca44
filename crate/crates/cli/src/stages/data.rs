use std::collections::BTreeMap;

use metsynth::experiment::{case_id, healthy_phantom, lesioned_phantom};
use metsynth::phantom::{Ellipsoid, PhantomSpec};
use metsynth::volume::{
    read_mask, read_volume, resample_isotropic, resample_mask, standardize_intensities, write_mask, write_volume,
    Standardization,
};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::{
    create_dir, details, femur_path, image_path, lesion_path, to_json, write_json, Group, GroupIds, Run, PHANTOMS,
    PREPROCESSED,
};
use crate::error::Result;
use crate::manifest::{Manifest, StageRun};

#[derive(Serialize)]
struct PhantomRecord<'a> {
    spec: &'a PhantomSpec,
    ellipsoids: &'a [Ellipsoid],
}

/// Raw phantom cohorts: image, femur mask, lesion mask and spec per case.
pub fn phantom(run: &Run) -> Result<Manifest> {
    let cfg = &run.cfg;
    let config = json!({ "cohort": cfg.cohort, "data": cfg.data });
    let stage = StageRun::new("phantom", run.path(PHANTOMS), cfg.seed, &config, json!({}));
    if stage.up_to_date() {
        return Manifest::read(&stage.dir);
    }
    stage.prepare()?;
    let mut ids = GroupIds::default();
    for group in Group::ALL {
        let dir = stage.dir.join(group.dir());
        create_dir(&dir)?;
        let seed = cfg.stage_seed(group.tag());
        let names: Vec<String> = (0..group.count(cfg))
            .into_par_iter()
            .map(|i| {
                let id = case_id(group.prefix(), i);
                let spec_path = dir.join(format!("{id}_spec.json"));
                if group.lesioned() {
                    let (spec, f) = lesioned_phantom(&cfg.cohort, seed, i)?;
                    write_volume(&f.image, image_path(&dir, &id))?;
                    write_mask(&f.femur, femur_path(&dir, &id))?;
                    write_mask(&f.lesions, lesion_path(&dir, &id))?;
                    write_json(
                        &spec_path,
                        &PhantomRecord {
                            spec: &spec,
                            ellipsoids: &f.ellipsoids,
                        },
                    )?;
                } else {
                    let (spec, image, femur) = healthy_phantom(&cfg.cohort, seed, i)?;
                    write_volume(&image, image_path(&dir, &id))?;
                    write_mask(&femur, femur_path(&dir, &id))?;
                    write_json(
                        &spec_path,
                        &PhantomRecord {
                            spec: &spec,
                            ellipsoids: &[],
                        },
                    )?;
                }
                Ok(id)
            })
            .collect::<Result<_>>()?;
        *ids.get_mut(group) = names;
    }
    stage.finish(json!({ "groups": ids }))
}

/// Optional isotropic resampling, then per-volume intensity standardization.
pub fn preprocess(run: &Run) -> Result<Manifest> {
    let cfg = &run.cfg;
    let mut stage = StageRun::new(
        "preprocess",
        run.path(PREPROCESSED),
        cfg.seed,
        &cfg.preprocess,
        json!({}),
    );
    let upstream = stage.input(&run.root, PHANTOMS)?;
    let ids: GroupIds = details(&upstream, "groups")?;
    if stage.up_to_date() {
        return Manifest::read(&stage.dir);
    }
    stage.prepare()?;
    let target = cfg.preprocess.target_spacing_mm;
    let mut params: BTreeMap<String, Standardization> = BTreeMap::new();
    for group in Group::ALL {
        let src = run.path(PHANTOMS).join(group.dir());
        let dst = stage.dir.join(group.dir());
        create_dir(&dst)?;
        let done: Vec<(String, Standardization)> = ids
            .get(group)
            .par_iter()
            .map(|id| {
                let mut image = read_volume(image_path(&src, id))?;
                let mut femur = read_mask(femur_path(&src, id))?;
                let mut lesions = if group.lesioned() {
                    Some(read_mask(lesion_path(&src, id))?)
                } else {
                    None
                };
                if let Some(s) = target {
                    image = resample_isotropic(&image, s)?;
                    femur = resample_mask(&femur, s)?;
                    lesions = lesions.map(|m| resample_mask(&m, s)).transpose()?;
                }
                let (image, st) = standardize_intensities(&image)?;
                write_volume(&image, image_path(&dst, id))?;
                write_mask(&femur, femur_path(&dst, id))?;
                if let Some(m) = &lesions {
                    write_mask(m, lesion_path(&dst, id))?;
                }
                Ok((id.clone(), st))
            })
            .collect::<Result<_>>()?;
        params.extend(done);
    }
    stage.finish(json!({ "groups": ids, "standardization": to_json(&params) }))
}
