use std::collections::HashSet;

use metsynth::experiment::refine_samples;
use metsynth::synthesis::{exclude_donor, generate_dataset, Subject};
use metsynth::tinynet::{read_checkpoint, NetDenoiser};
use serde_json::json;

use super::{
    details, load_cases, load_hosts, load_samples, parse_ids, refined_dir, write_samples, Group, GroupIds, Run,
    DENOISER, PREPROCESSED, SYNTHETIC,
};
use crate::config::SeedTag;
use crate::error::{CliError, Result};
use crate::manifest::{Manifest, StageRun};

/// Transplant every real case's lesions into every host, `per_pair` times,
/// then drop samples from excluded donors.
pub fn synthesize(run: &Run, exclude_donors: &[String]) -> Result<Manifest> {
    let cfg = &run.cfg;
    let synthesis = cfg.synthesis();
    let excluded = parse_ids(exclude_donors);
    let config = json!({ "synthesis": synthesis, "per_pair": cfg.data.per_pair });
    let mut stage = StageRun::new(
        "synthesize",
        run.path(SYNTHETIC),
        synthesis.seed,
        &config,
        json!({ "exclude_donors": excluded }),
    );
    let upstream = stage.input(&run.root, PREPROCESSED)?;
    let ids: GroupIds = details(&upstream, "groups")?;
    if stage.up_to_date() {
        return Manifest::read(&stage.dir);
    }
    let donors: Vec<Subject> = load_cases(run, &ids, Group::Real)?.iter().map(|c| c.donor()).collect();
    let hosts = load_hosts(run, &ids)?;
    let dataset = generate_dataset(&donors, &hosts, cfg.data.per_pair, &synthesis)?;
    let generated = dataset.samples.len();
    let samples = exclude_donor(dataset.samples, &excluded.iter().cloned().collect::<HashSet<_>>());
    stage.prepare()?;
    let names = write_samples(&stage.dir, &samples)?;
    stage.finish(json!({
        "samples": names,
        "summary": dataset.summary,
        "excluded_samples": generated - samples.len(),
    }))
}

/// Noise every synthetic sample to `lambda` and denoise it back with the
/// trained denoiser.
pub fn refine(run: &Run, lambda: Option<usize>) -> Result<Manifest> {
    let cfg = &run.cfg;
    let lambda = lambda.unwrap_or(cfg.refine.lambda);
    let schedule = &cfg.denoiser.schedule;
    if lambda == 0 || lambda > schedule.steps {
        return Err(CliError::Config(format!(
            "lambda {lambda} must be in 1..={}",
            schedule.steps
        )));
    }
    let seed = cfg.stage_seed(SeedTag::Refine);
    let config = json!({ "schedule": schedule, "n_ddim": cfg.refine.n_ddim });
    let mut stage = StageRun::new(
        "refine",
        run.path(&refined_dir(lambda)),
        seed,
        &config,
        json!({ "lambda": lambda }),
    );
    let synthetic = stage.input(&run.root, SYNTHETIC)?;
    stage.input(&run.root, DENOISER)?;
    let names: Vec<String> = details(&synthetic, "samples")?;
    if stage.up_to_date() {
        return Manifest::read(&stage.dir);
    }
    let samples = load_samples(&run.path(SYNTHETIC), &names)?;
    let (net, _) = read_checkpoint(run.path(DENOISER).join("denoiser.ckpt"))?;
    let denoiser = NetDenoiser::new(net, schedule.steps)?;
    let refined = refine_samples(&samples, lambda, &denoiser, schedule, cfg.refine.n_ddim, seed)?;
    stage.prepare()?;
    let names = write_samples(&stage.dir, &refined)?;
    stage.finish(json!({ "samples": names }))
}
