use std::collections::BTreeSet;

use metsynth::experiment::{self, train_mode, Case, Mode, Stage};
use metsynth::rng;
use metsynth::synthesis::SyntheticSample;
use metsynth::tinynet::{write_checkpoint, TrainOutcome};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    details, load_cases, load_hosts, load_samples, model_dir, refined_dir, to_json, write_csv, write_json, Group,
    GroupIds, Run, DENOISER, PREPROCESSED, SYNTHETIC,
};
use crate::config::SeedTag;
use crate::error::{CliError, Result};
use crate::manifest::{Manifest, StageRun};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct HistoryRow {
    stage: String,
    epoch: usize,
    train_loss: f64,
    val_loss: f64,
    lr: f64,
}

fn history_rows(stage: &str, outcome: &TrainOutcome) -> Vec<HistoryRow> {
    outcome
        .history
        .iter()
        .map(|r| HistoryRow {
            stage: stage.to_string(),
            epoch: r.epoch,
            train_loss: r.train_loss,
            val_loss: r.val_loss,
            lr: r.lr,
        })
        .collect()
}

fn outcome_summary(outcome: &TrainOutcome) -> serde_json::Value {
    json!({
        "epochs_run": outcome.history.len(),
        "initial_val_loss": outcome.initial_val_loss,
        "best_val_loss": outcome.best_val_loss,
        "best_epoch": outcome.best_epoch,
        "stopped_early": outcome.stopped_early,
    })
}

/// Noise predictor trained on femur-centred patches of the preprocessed
/// hosts and real cases.
pub fn train_denoiser(run: &Run) -> Result<Manifest> {
    let cfg = run.cfg.denoiser();
    let mut stage = StageRun::new("train_denoiser", run.path(DENOISER), cfg.seed, &cfg, json!({}));
    let upstream = stage.input(&run.root, PREPROCESSED)?;
    let ids: GroupIds = details(&upstream, "groups")?;
    if stage.up_to_date() {
        return Manifest::read(&stage.dir);
    }
    let hosts = load_hosts(run, &ids)?;
    let real = load_cases(run, &ids, Group::Real)?;
    let sources: Vec<_> = hosts
        .iter()
        .map(|h| (&h.image, &h.mask))
        .chain(real.iter().map(|c| (&c.image, &c.femur)))
        .collect();
    let (denoiser, outcome) = experiment::train_denoiser(&sources, &cfg)?;
    stage.prepare()?;
    write_checkpoint(
        &denoiser.net,
        cfg.seed,
        outcome.best_epoch,
        stage.dir.join("denoiser.ckpt"),
    )?;
    write_csv(&stage.dir.join("history.csv"), &history_rows("denoiser", &outcome))?;
    stage.finish(outcome_summary(&outcome))
}

/// What a segmenter was trained on, written next to its checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub mode: Mode,
    pub train_size: Option<usize>,
    pub lambda: Option<usize>,
    pub samples: Vec<String>,
    /// Lesion donors of the synthetic samples.
    pub donors: Vec<String>,
    pub hosts: Vec<String>,
    /// Real cases used for training or fine-tuning.
    pub real_cases: Vec<String>,
}

impl TrainingRecord {
    /// Every subject id whose data reached the model.
    pub fn subjects(&self) -> BTreeSet<&str> {
        self.donors
            .iter()
            .chain(&self.hosts)
            .chain(&self.real_cases)
            .map(String::as_str)
            .collect()
    }
}

/// Sorted indices of a seeded subset of size `n`; subsets of one seed are
/// nested as `n` grows.
fn subset(len: usize, n: usize, seed: u64) -> Result<Vec<usize>> {
    if n == 0 || n > len {
        return Err(CliError::Config(format!("train size {n} must be in 1..={len}")));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng::stream(seed, 0));
    order.truncate(n);
    order.sort_unstable();
    Ok(order)
}

fn pick<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

/// Train the segmenter of one mode, optionally on a seeded subset of
/// `train_size` training samples (real cases for the real mode).
pub fn train_seg(run: &Run, mode: Mode, train_size: Option<usize>, lambda: Option<usize>) -> Result<Manifest> {
    let cfg = run.cfg.segmenter();
    let lambda = mode.uses_refined().then(|| lambda.unwrap_or(run.cfg.refine.lambda));
    let args = json!({ "mode": mode, "train_size": train_size, "lambda": lambda });
    let mut stage = StageRun::new(
        "train_seg",
        run.path(&model_dir(mode, train_size)),
        cfg.seed,
        &cfg,
        args,
    );
    let upstream = stage.input(&run.root, PREPROCESSED)?;
    let ids: GroupIds = details(&upstream, "groups")?;
    let sample_stage = match (mode, lambda) {
        (Mode::Real, _) => None,
        (_, Some(l)) => Some(refined_dir(l)),
        (_, None) => Some(SYNTHETIC.to_string()),
    };
    let sample_names: Vec<String> = match &sample_stage {
        Some(s) => details(&stage.input(&run.root, s)?, "samples")?,
        None => Vec::new(),
    };
    if stage.up_to_date() {
        return Manifest::read(&stage.dir);
    }

    let mut real: Vec<Case> = Vec::new();
    if mode == Mode::Real || mode.fine_tunes() {
        real = load_cases(run, &ids, Group::Real)?;
        if mode == Mode::Real {
            if let Some(n) = train_size {
                if n == 0 || n > real.len() {
                    return Err(CliError::Config(format!(
                        "train size {n} must be in 1..={}",
                        real.len()
                    )));
                }
                real.truncate(n);
            }
        }
    }
    let mut samples: Vec<SyntheticSample> = Vec::new();
    if let Some(s) = &sample_stage {
        let mut names = sample_names;
        if let Some(n) = train_size {
            names = pick(&names, &subset(names.len(), n, run.cfg.stage_seed(SeedTag::Subset))?);
        }
        samples = load_samples(&run.path(s), &names)?;
    }
    let (synthetic, refined) = if lambda.is_some() {
        (&[][..], &samples[..])
    } else {
        (&samples[..], &[][..])
    };
    let result = train_mode(mode, &real, synthetic, refined, &cfg)?;

    let uniq = |f: fn(&SyntheticSample) -> &String| -> Vec<String> {
        samples
            .iter()
            .map(f)
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    };
    let record = TrainingRecord {
        mode,
        train_size,
        lambda,
        samples: samples.iter().map(|s| s.name()).collect(),
        donors: uniq(|s| &s.provenance.donor_id),
        hosts: uniq(|s| &s.provenance.host_id),
        real_cases: real.iter().map(|c| c.id.clone()).collect(),
    };
    stage.prepare()?;
    let best_epoch = result.stages.last().and_then(|(_, o)| o.best_epoch);
    write_checkpoint(&result.net, cfg.seed, best_epoch, stage.dir.join("segmenter.ckpt"))?;
    let history: Vec<HistoryRow> = result
        .stages
        .iter()
        .flat_map(|(s, o)| history_rows(stage_name(*s), o))
        .collect();
    write_csv(&stage.dir.join("history.csv"), &history)?;
    write_json(&stage.dir.join("training.json"), &record)?;
    let stages: serde_json::Map<String, serde_json::Value> = result
        .stages
        .iter()
        .map(|(s, o)| {
            let mut v = outcome_summary(o);
            v["lr"] = json!(cfg.train_config(*s).optimizer.lr());
            (stage_name(*s).to_string(), v)
        })
        .collect();
    stage.finish(json!({ "training": to_json(&record), "stages": stages }))
}

fn stage_name(s: Stage) -> &'static str {
    match s {
        Stage::Real => "real",
        Stage::Synthetic => "synthetic",
        Stage::FineTune => "finetune",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsets_are_nested_sorted_and_bounded() {
        let a = subset(50, 10, 3).unwrap();
        let b = subset(50, 30, 3).unwrap();
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(a.iter().all(|i| b.contains(i)));
        assert_eq!(subset(50, 50, 3).unwrap(), (0..50).collect::<Vec<_>>());
        assert!(subset(50, 51, 3).is_err());
        assert!(subset(50, 0, 3).is_err());
    }
}
