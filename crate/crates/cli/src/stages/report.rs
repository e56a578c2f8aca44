use std::fs;

use metsynth::experiment::{evaluate_cases, Mode};
use metsynth::metrics::{postprocess, summarize, EvaluateOptions};
use metsynth::phantom::simulate_operator;
use metsynth::rng;
use metsynth::stats::{compare_groups, render_comparison, render_variability, variability_table, Annotator, Sample};
use metsynth::tinynet::{read_checkpoint, segment};
use metsynth::volume::Mask;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    details, load_cases, model_dir, parse_ids, read_csv, read_json, to_json, write_csv, write_json, write_text, Group,
    GroupIds, Run, TrainingRecord, EVALUATION, MODELS, PREPROCESSED, STATS, VARIABILITY,
};
use crate::config::SeedTag;
use crate::error::{CliError, Result};
use crate::manifest::{Manifest, StageRun};

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub model: String,
    pub case: String,
    pub dice: f64,
    pub hd_mm: f64,
    pub hd95_mm: f64,
    pub assd_mm: f64,
    pub empty: bool,
}

impl MetricsRow {
    fn metric(&self, name: &str) -> f64 {
        match name {
            "dice" => self.dice,
            "hd_mm" => self.hd_mm,
            "hd95_mm" => self.hd95_mm,
            "assd_mm" => self.assd_mm,
            _ => unreachable!("metric names are validated with the config"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SummaryRow {
    model: String,
    n: usize,
    dice_mean: f64,
    dice_std: f64,
    hd_mm_mean: f64,
    hd_mm_std: f64,
    hd95_mm_mean: f64,
    hd95_mm_std: f64,
    assd_mm_mean: f64,
    assd_mm_std: f64,
}

/// Trained model directory names, in mode order then training size.
fn trained_models(run: &Run) -> Result<Vec<String>> {
    let dir = run.path(MODELS);
    let entries = fs::read_dir(&dir).map_err(|e| CliError::io(&dir, e))?;
    let mut keyed = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::io(&dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let (mode, size) = match name.split_once("__n") {
            Some((m, n)) => (m, n.parse::<usize>().ok()),
            None => (name.as_str(), None),
        };
        let Ok(mode) = mode.parse::<Mode>() else { continue };
        let rank = Mode::ALL.iter().position(|&m| m == mode).expect("mode listed");
        keyed.push(((rank, size), format!("{MODELS}/{name}")));
    }
    keyed.sort();
    if keyed.is_empty() {
        return Err(CliError::MissingInput(format!(
            "no trained models in {}",
            dir.display()
        )));
    }
    Ok(keyed.into_iter().map(|(_, n)| n).collect())
}

fn model_label(stage_dir: &str) -> &str {
    stage_dir.strip_prefix(&format!("{MODELS}/")[..]).unwrap_or(stage_dir)
}

fn evaluate_options(run: &Run) -> EvaluateOptions {
    EvaluateOptions {
        postprocess_min_mm3: run.cfg.metrics.postprocess_min_mm3,
    }
}

/// Score every trained model on the held-out test cases. Fails before
/// scoring if any model saw data of an excluded subject.
pub fn evaluate(run: &Run, exclude_donors: &[String]) -> Result<Manifest> {
    let excluded = parse_ids(exclude_donors);
    let models = trained_models(run)?;
    let mut stage = StageRun::new(
        "evaluate",
        run.path(EVALUATION),
        run.cfg.seed,
        &run.cfg.metrics,
        json!({ "exclude_donors": excluded }),
    );
    let upstream = stage.input(&run.root, PREPROCESSED)?;
    let ids: GroupIds = details(&upstream, "groups")?;
    for m in &models {
        stage.input(&run.root, m)?;
        let record: TrainingRecord = read_json(&run.path(m).join("training.json"))?;
        let subjects = record.subjects();
        let leaked: Vec<&String> = excluded.iter().filter(|id| subjects.contains(id.as_str())).collect();
        if !leaked.is_empty() {
            return Err(CliError::InputCheck(format!(
                "model {} was trained on excluded subjects {leaked:?}",
                model_label(m)
            )));
        }
    }
    if stage.up_to_date() {
        return Manifest::read(&stage.dir);
    }
    let test = load_cases(run, &ids, Group::Test)?;
    let opts = evaluate_options(run);
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for m in &models {
        let (net, _) = read_checkpoint(run.path(m).join("segmenter.ckpt"))?;
        let reports = evaluate_cases(&net, &test, &opts)?;
        let label = model_label(m).to_string();
        let s = summarize(&reports);
        summary.push(SummaryRow {
            model: label.clone(),
            n: s.n,
            dice_mean: s.dice.0,
            dice_std: s.dice.1,
            hd_mm_mean: s.hd_mm.0,
            hd_mm_std: s.hd_mm.1,
            hd95_mm_mean: s.hd95_mm.0,
            hd95_mm_std: s.hd95_mm.1,
            assd_mm_mean: s.assd_mm.0,
            assd_mm_std: s.assd_mm.1,
        });
        rows.extend(test.iter().zip(&reports).map(|(c, r)| MetricsRow {
            model: label.clone(),
            case: c.id.clone(),
            dice: r.dice,
            hd_mm: r.hd_mm,
            hd95_mm: r.hd95_mm,
            assd_mm: r.assd_mm,
            empty: r.empty,
        }));
    }
    stage.prepare()?;
    write_csv(&stage.dir.join("metrics.csv"), &rows)?;
    write_csv(&stage.dir.join("summary.csv"), &summary)?;
    stage.finish(json!({ "summary": to_json(&summary) }))
}

/// Simulated operators annotate the test cases; agreement between them and
/// with the automatic model is tabulated by pairing category.
pub fn variability(run: &Run) -> Result<Manifest> {
    let cfg = &run.cfg;
    let seed = cfg.stage_seed(SeedTag::Operators);
    let config = json!({ "variability": cfg.variability, "metrics": cfg.metrics });
    let mut stage = StageRun::new("variability", run.path(VARIABILITY), seed, &config, json!({}));
    let upstream = stage.input(&run.root, PREPROCESSED)?;
    let ids: GroupIds = details(&upstream, "groups")?;
    let auto_dir = cfg.variability.auto_mode.map(|m| model_dir(m, None));
    if let Some(d) = &auto_dir {
        stage.input(&run.root, d)?;
    }
    if stage.up_to_date() {
        return Manifest::read(&stage.dir);
    }
    let test = load_cases(run, &ids, Group::Test)?;
    let annotate = |k: usize, skill: f64, r: usize| -> Result<Vec<Mask>> {
        test.par_iter()
            .enumerate()
            .map(|(i, c)| {
                Ok(simulate_operator(
                    &c.lesions,
                    skill,
                    &mut rng::triple_stream(seed, k, i, r),
                )?)
            })
            .collect()
    };
    let annotators = cfg
        .variability
        .operators
        .iter()
        .enumerate()
        .map(|(k, op)| {
            Ok(Annotator {
                name: op.name.clone(),
                role: op.role,
                masks: annotate(k, op.skill, 0)?,
                repeat: if op.repeat {
                    Some(annotate(k, op.skill, 1)?)
                } else {
                    None
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let auto: Vec<Mask> = match &auto_dir {
        Some(d) => {
            let (net, _) = read_checkpoint(run.path(d).join("segmenter.ckpt"))?;
            let min = cfg.metrics.postprocess_min_mm3;
            test.par_iter()
                .map(|c| {
                    let m = segment(&net, &c.image)?;
                    Ok(match min {
                        Some(min) => postprocess(&m, min),
                        None => m,
                    })
                })
                .collect::<Result<_>>()?
        }
        None => Vec::new(),
    };
    let table = variability_table(&annotators, &auto)?;
    stage.prepare()?;
    write_csv(&stage.dir.join("variability.csv"), &table)?;
    write_text(&stage.dir.join("variability.txt"), &render_variability(&table))?;
    stage.finish(json!({ "cases": test.len() }))
}

/// Kruskal-Wallis and pairwise tests between models for each metric.
pub fn stats(run: &Run) -> Result<Manifest> {
    let cfg = &run.cfg;
    let mut stage = StageRun::new("stats", run.path(STATS), cfg.seed, &cfg.stats, json!({}));
    stage.input(&run.root, EVALUATION)?;
    if stage.up_to_date() {
        return Manifest::read(&stage.dir);
    }
    let rows: Vec<MetricsRow> = read_csv(&run.path(EVALUATION).join("metrics.csv"))?;
    let mut models: Vec<&str> = Vec::new();
    for r in &rows {
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
    }
    if models.len() < 2 {
        return Err(CliError::MissingInput(format!(
            "comparisons need at least two evaluated models, found {}",
            models.len()
        )));
    }
    let comparisons = cfg
        .stats
        .metrics
        .iter()
        .map(|metric| {
            let groups: Vec<Sample> = models
                .iter()
                .map(|&m| {
                    let values = rows.iter().filter(|r| r.model == m).map(|r| r.metric(metric)).collect();
                    Sample::new(m, values)
                })
                .collect();
            Ok(compare_groups(metric, &groups, cfg.stats.test)?)
        })
        .collect::<Result<Vec<_>>>()?;
    stage.prepare()?;
    write_json(&stage.dir.join("stats.json"), &comparisons)?;
    let text: Vec<String> = comparisons.iter().map(render_comparison).collect();
    write_text(&stage.dir.join("stats.txt"), &text.join("\n"))?;
    stage.finish(json!({ "models": models, "test": cfg.stats.test.name() }))
}
