mod data;
mod report;
mod synth;
mod train;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use metsynth::experiment::{Case, Mode};
use metsynth::synthesis::{read_sample, write_sample, Subject, SyntheticSample};
use metsynth::volume::{read_mask, read_volume};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SeedTag};
use crate::error::{CliError, Result};
use crate::manifest::Manifest;

pub use data::{phantom, preprocess};
pub use report::{evaluate, stats, variability, MetricsRow};
pub use synth::{refine, synthesize};
pub use train::{train_denoiser, train_seg, TrainingRecord};

pub const PHANTOMS: &str = "phantoms";
pub const PREPROCESSED: &str = "preprocessed";
pub const SYNTHETIC: &str = "synthetic";
pub const DENOISER: &str = "denoiser";
pub const MODELS: &str = "models";
pub const EVALUATION: &str = "evaluation";
pub const VARIABILITY: &str = "variability";
pub const STATS: &str = "stats";

pub fn refined_dir(lambda: usize) -> String {
    format!("refined/lambda_{lambda}")
}

pub fn model_dir(mode: Mode, train_size: Option<usize>) -> String {
    match train_size {
        Some(n) => format!("{MODELS}/{}__n{n}", mode.name()),
        None => format!("{MODELS}/{}", mode.name()),
    }
}

/// A pipeline run: the validated configuration and the output root that
/// every stage reads from and writes below.
#[derive(Debug, Clone)]
pub struct Run {
    pub root: PathBuf,
    pub cfg: RunConfig,
}

impl Run {
    pub fn new(root: impl Into<PathBuf>, cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Run { root: root.into(), cfg })
    }

    pub fn path(&self, stage: &str) -> PathBuf {
        self.root.join(stage)
    }
}

/// The three phantom cohorts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    /// Lesioned cases for real-data training; also the lesion donors.
    Real,
    /// Lesioned cases held out for evaluation.
    Test,
    /// Healthy volumes receiving transplanted lesions.
    Hosts,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Real, Group::Test, Group::Hosts];

    pub fn dir(self) -> &'static str {
        match self {
            Group::Real => "real",
            Group::Test => "test",
            Group::Hosts => "hosts",
        }
    }

    pub fn prefix(self) -> &'static str {
        match self {
            Group::Real => "real",
            Group::Test => "test",
            Group::Hosts => "host",
        }
    }

    fn tag(self) -> SeedTag {
        match self {
            Group::Real => SeedTag::Real,
            Group::Test => SeedTag::Test,
            Group::Hosts => SeedTag::Hosts,
        }
    }

    fn count(self, cfg: &RunConfig) -> usize {
        match self {
            Group::Real => cfg.data.real_cases,
            Group::Test => cfg.data.test_cases,
            Group::Hosts => cfg.data.hosts,
        }
    }

    fn lesioned(self) -> bool {
        self != Group::Hosts
    }
}

/// Case ids per cohort, stored in the phantom and preprocess manifests.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroupIds {
    pub real: Vec<String>,
    pub test: Vec<String>,
    pub hosts: Vec<String>,
}

impl GroupIds {
    pub fn get(&self, g: Group) -> &[String] {
        match g {
            Group::Real => &self.real,
            Group::Test => &self.test,
            Group::Hosts => &self.hosts,
        }
    }

    fn get_mut(&mut self, g: Group) -> &mut Vec<String> {
        match g {
            Group::Real => &mut self.real,
            Group::Test => &mut self.test,
            Group::Hosts => &mut self.hosts,
        }
    }

    pub fn all(&self) -> impl Iterator<Item = &String> {
        self.real.iter().chain(&self.test).chain(&self.hosts)
    }
}

fn details<T: for<'de> Deserialize<'de>>(m: &Manifest, field: &str) -> Result<T> {
    let value = m.details.get(field).cloned().unwrap_or_default();
    serde_json::from_value(value)
        .map_err(|e| CliError::InputCheck(format!("{} manifest field {field:?}: {e}", m.stage)))
}

fn to_json(value: &impl Serialize) -> serde_json::Value {
    serde_json::to_value(value).expect("value serializes")
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_text(
        path,
        &(serde_json::to_string_pretty(value).expect("value serializes") + "\n"),
    )
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::InputCheck(format!("{}: {e}", path.display())))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        other => CliError::InputCheck(format!("{}: {other:?}", path.display())),
    }
}

fn parse_ids(ids: &[String]) -> BTreeSet<String> {
    ids.iter()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

fn image_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}_img.vvol"))
}

fn femur_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}_femur.vvol"))
}

fn lesion_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}_lesion.vvol"))
}

/// Preprocessed lesioned cases of one cohort.
fn load_cases(run: &Run, ids: &GroupIds, group: Group) -> Result<Vec<Case>> {
    let dir = run.path(PREPROCESSED).join(group.dir());
    ids.get(group)
        .iter()
        .map(|id| {
            Ok(Case {
                id: id.clone(),
                image: read_volume(image_path(&dir, id))?,
                femur: read_mask(femur_path(&dir, id))?,
                lesions: read_mask(lesion_path(&dir, id))?,
            })
        })
        .collect()
}

/// Preprocessed healthy hosts with their femur masks.
fn load_hosts(run: &Run, ids: &GroupIds) -> Result<Vec<Subject>> {
    let dir = run.path(PREPROCESSED).join(Group::Hosts.dir());
    ids.hosts
        .iter()
        .map(|id| {
            Ok(Subject::new(
                id.clone(),
                read_volume(image_path(&dir, id))?,
                read_mask(femur_path(&dir, id))?,
            )?)
        })
        .collect()
}

fn load_samples(dir: &Path, names: &[String]) -> Result<Vec<SyntheticSample>> {
    names.iter().map(|n| Ok(read_sample(dir, n)?)).collect()
}

fn write_samples(dir: &Path, samples: &[SyntheticSample]) -> Result<Vec<String>> {
    samples
        .iter()
        .map(|s| {
            let name = s.name();
            write_sample(dir, &name, s)?;
            Ok(name)
        })
        .collect()
}

/// Every stage in order, training all five modes on the full data.
pub fn run_all(run: &Run) -> Result<()> {
    phantom(run)?;
    preprocess(run)?;
    synthesize(run, &[])?;
    train_denoiser(run)?;
    refine(run, None)?;
    for mode in Mode::ALL {
        train_seg(run, mode, None, None)?;
    }
    evaluate(run, &[])?;
    variability(run)?;
    stats(run)?;
    Ok(())
}
