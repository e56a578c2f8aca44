//! Desk-scale segmentation study on phantom cohorts: cohort generation,
//! patch examples, denoiser and segmenter training for each of the five
//! training modes, and evaluation on held-out cases.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{forward_diffuse, refine, ScheduleParams};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvaluateOptions, MetricsReport};
use crate::phantom::{make_healthy_femur, make_lesioned_femur, LesionedFemur, PhantomSpec};
use crate::rng::{self, SeededRng};
use crate::synthesis::{Subject, SyntheticSample};
use crate::tinynet::{
    denoiser_input, segment, train, Example, Loss, NetDenoiser, Optimizer, Tensor, TinyNet, TrainConfig, TrainOutcome,
    DENOISER_PLAN,
};
use crate::volume::{crop, standardize_intensities, BoundingBox, Mask, Volume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    pub phantom: PhantomSpec,
    pub lesions_per_case: usize,
    /// Relative per-case variation of the radii, bend and intensity levels.
    pub jitter: f64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            phantom: PhantomSpec::default(),
            lesions_per_case: 2,
            jitter: 0.1,
        }
    }
}

/// A lesioned phantom with standardized intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub id: String,
    pub image: Volume,
    pub femur: Mask,
    pub lesions: Mask,
}

impl Case {
    /// The case as a lesion donor.
    pub fn donor(&self) -> Subject {
        Subject {
            id: self.id.clone(),
            image: self.image.clone(),
            mask: self.lesions.clone(),
        }
    }
}

/// Per-case phantom spec. Draws, in order: shaft radius, head radius, bend,
/// the three tissue levels and the lesion level as factors in
/// `1 ± jitter`, then the texture seed.
pub fn case_spec(cfg: &CohortConfig, rng: &mut SeededRng) -> PhantomSpec {
    let j = cfg.jitter;
    let mut factor = || rng::uniform(rng, 1.0 - j, 1.0 + j);
    let mut spec = cfg.phantom.clone();
    spec.shaft_radius_mm *= factor();
    spec.head_radius_mm *= factor();
    spec.bend_mm *= factor();
    for level in &mut spec.levels {
        *level *= factor();
    }
    spec.lesion_level *= factor();
    spec.seed = rng.next_u64();
    spec
}

fn cohort_rng(seed: u64, i: usize) -> SeededRng {
    rng::stream(seed, i as u64 + 1)
}

/// Raw phantom `i` of a lesioned cohort, drawn from stream `i + 1` of
/// `seed`, with the spec it was generated from.
pub fn lesioned_phantom(cfg: &CohortConfig, seed: u64, i: usize) -> Result<(PhantomSpec, LesionedFemur)> {
    let mut r = cohort_rng(seed, i);
    let spec = case_spec(cfg, &mut r);
    let f = make_lesioned_femur(&spec, cfg.lesions_per_case, &mut r)?;
    Ok((spec, f))
}

/// Raw phantom `i` of a healthy cohort: spec, image and femur mask.
pub fn healthy_phantom(cfg: &CohortConfig, seed: u64, i: usize) -> Result<(PhantomSpec, Volume, Mask)> {
    let spec = case_spec(cfg, &mut cohort_rng(seed, i));
    let (image, femur) = make_healthy_femur(&spec)?;
    Ok((spec, image, femur))
}

/// `count` lesioned cases named `{prefix}{i:03}` with standardized images.
pub fn lesioned_cohort(cfg: &CohortConfig, prefix: &str, count: usize, seed: u64) -> Result<Vec<Case>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let (_, f) = lesioned_phantom(cfg, seed, i)?;
            let (image, _) = standardize_intensities(&f.image)?;
            Ok(Case {
                id: case_id(prefix, i),
                image,
                femur: f.femur,
                lesions: f.lesions,
            })
        })
        .collect()
}

/// `count` healthy hosts with standardized images and femur masks.
pub fn healthy_cohort(cfg: &CohortConfig, prefix: &str, count: usize, seed: u64) -> Result<Vec<Subject>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let (_, image, femur) = healthy_phantom(cfg, seed, i)?;
            let (image, _) = standardize_intensities(&image)?;
            Subject::new(case_id(prefix, i), image, femur)
        })
        .collect()
}

pub fn case_id(prefix: &str, i: usize) -> String {
    format!("{prefix}{i:03}")
}

/// Cube of side `size` around voxel `c`, shifted by up to `size / 4` per
/// axis (one index draw per axis, x first) and clamped to the grid.
pub fn patch_box(dims: [usize; 3], c: [usize; 3], size: usize, rng: &mut SeededRng) -> Result<BoundingBox> {
    if dims.iter().any(|&d| d < size) || size == 0 {
        return Err(Error::InvalidArgument(format!(
            "patch of side {size} does not fit grid {dims:?}"
        )));
    }
    let jitter = size / 4;
    let mut lo = [0; 3];
    for k in 0..3 {
        let shift = rng::index(rng, 2 * jitter + 1) as i64 - jitter as i64;
        let start = c[k] as i64 - (size / 2) as i64 + shift;
        lo[k] = start.clamp(0, (dims[k] - size) as i64) as usize;
    }
    BoundingBox::new(lo, lo.map(|v| v + size - 1))
}

/// Segmentation patches centred near a uniformly drawn foreground voxel of
/// each label; volumes smaller than a patch are used whole. Pair `k` draws
/// from stream `k + 1` of `seed`.
pub fn segmentation_examples(
    pairs: &[(&Volume, &Mask)],
    patch: usize,
    per_pair: usize,
    seed: u64,
) -> Result<Vec<Example>> {
    let nested: Vec<Vec<Example>> = pairs
        .par_iter()
        .enumerate()
        .map(|(k, (image, label))| {
            let mut r = rng::stream(seed, k as u64 + 1);
            let fg = label.foreground_coords();
            if fg.is_empty() {
                return Err(Error::EmptyMask(format!("label {k} is empty")));
            }
            (0..per_pair)
                .map(|_| {
                    if image.dims().iter().all(|&d| d <= patch) {
                        return example_of(image, label);
                    }
                    let c = fg[rng::index(&mut r, fg.len())];
                    let b = patch_box(image.dims(), c, patch, &mut r)?;
                    example_of(&crop(image, &b)?, &crop(label, &b)?)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(nested.into_iter().flatten().collect())
}

fn example_of(image: &Volume, label: &Mask) -> Result<Example> {
    Ok(Example {
        input: Tensor::from_volumes(&[image])?,
        target: Tensor::from_mask(label),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserConfig {
    pub plan: Vec<usize>,
    pub patch: usize,
    pub examples: usize,
    pub schedule: ScheduleParams,
    pub optimizer: Optimizer,
    pub epochs: usize,
    pub patience: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            plan: DENOISER_PLAN.to_vec(),
            patch: 16,
            examples: 200,
            schedule: ScheduleParams::default(),
            optimizer: Optimizer::Adam { lr: 3e-3, decay: 0.99 },
            epochs: 30,
            patience: 10,
            batch: 4,
            seed: 0,
        }
    }
}

/// Noised patches for the noise predictor. Example `i` draws from stream
/// `i + 1` of `seed`, in order: the source volume, a voxel of its mask, the
/// patch shift, the timestep uniform in `1..=T`, then the noise.
pub fn denoiser_examples(
    sources: &[(&Volume, &Mask)],
    count: usize,
    patch: usize,
    schedule: &ScheduleParams,
    seed: u64,
) -> Result<Vec<Example>> {
    if sources.is_empty() {
        return Err(Error::InvalidArgument("no denoiser training volumes".into()));
    }
    let s = schedule.build()?;
    let foreground: Vec<Vec<[usize; 3]>> = sources.iter().map(|(_, m)| m.foreground_coords()).collect();
    if foreground.iter().any(|f| f.is_empty()) {
        return Err(Error::EmptyMask("denoiser source mask is empty".into()));
    }
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, i as u64 + 1);
            let k = rng::index(&mut r, sources.len());
            let image = sources[k].0;
            let c = foreground[k][rng::index(&mut r, foreground[k].len())];
            let b = patch_box(image.dims(), c, patch, &mut r)?;
            let x0 = crop(image, &b)?;
            let t = 1 + rng::index(&mut r, s.steps());
            let noised = forward_diffuse(&x0, t, &s, &mut r)?;
            Ok(Example {
                input: denoiser_input(&noised.data, t, s.steps()),
                target: Tensor::from_volumes(&[&noised.eps])?,
            })
        })
        .collect()
}

/// Train the noise predictor with the ε-MSE loss.
pub fn train_denoiser(sources: &[(&Volume, &Mask)], cfg: &DenoiserConfig) -> Result<(NetDenoiser, TrainOutcome)> {
    let data = denoiser_examples(sources, cfg.examples, cfg.patch, &cfg.schedule, cfg.seed)?;
    let net = TinyNet::init(&cfg.plan, &mut rng::stream(cfg.seed, 0))?;
    let tc = TrainConfig {
        optimizer: cfg.optimizer,
        loss: Loss::MseEps,
        epochs: cfg.epochs,
        patience: cfg.patience,
        batch: cfg.batch,
        seed: cfg.seed,
    };
    let outcome = train(&net, &data, &tc)?;
    let denoiser = NetDenoiser::new(outcome.net.clone(), cfg.schedule.steps)?;
    Ok((denoiser, outcome))
}

/// Refine every sample at `lambda`; sample `i` uses the seed drawn first
/// from stream `i + 1` of `seed`.
pub fn refine_samples(
    samples: &[SyntheticSample],
    lambda: usize,
    denoiser: &NetDenoiser,
    schedule: &ScheduleParams,
    n_ddim: Option<usize>,
    seed: u64,
) -> Result<Vec<SyntheticSample>> {
    samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let sample_seed = rng::stream(seed, i as u64 + 1).next_u64();
            refine(s, lambda, denoiser, schedule, n_ddim, sample_seed)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "real")]
    Real,
    #[serde(rename = "synthetic")]
    Synthetic,
    #[serde(rename = "synthetic+ft")]
    SyntheticFt,
    #[serde(rename = "diffusion")]
    Diffusion,
    #[serde(rename = "diffusion+ft")]
    DiffusionFt,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::Real,
        Mode::Synthetic,
        Mode::SyntheticFt,
        Mode::Diffusion,
        Mode::DiffusionFt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Real => "real",
            Mode::Synthetic => "synthetic",
            Mode::SyntheticFt => "synthetic+ft",
            Mode::Diffusion => "diffusion",
            Mode::DiffusionFt => "diffusion+ft",
        }
    }

    pub fn uses_refined(self) -> bool {
        matches!(self, Mode::Diffusion | Mode::DiffusionFt)
    }

    pub fn fine_tunes(self) -> bool {
        matches!(self, Mode::SyntheticFt | Mode::DiffusionFt)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown training mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmenterConfig {
    pub plan: Vec<usize>,
    /// Initial foreground probability; the output bias starts at its logit.
    pub foreground_prior: f64,
    pub patch: usize,
    pub patches_per_sample: usize,
    pub lr: f64,
    pub momentum: f64,
    pub real_decay: f64,
    pub synthetic_decay: f64,
    pub finetune_lr: f64,
    pub finetune_patience: usize,
    pub epochs: usize,
    pub patience: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        SegmenterConfig {
            plan: vec![1, 4, 8, 4, 1],
            foreground_prior: 0.05,
            patch: 16,
            patches_per_sample: 1,
            lr: 0.025,
            momentum: 0.9,
            real_decay: 0.999,
            synthetic_decay: 0.99,
            finetune_lr: 0.001,
            finetune_patience: 25,
            epochs: 30,
            patience: 10,
            batch: 4,
            seed: 0,
        }
    }
}

/// Which data a training stage runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Real,
    Synthetic,
    FineTune,
}

impl SegmenterConfig {
    /// He-normal weights from stream 0 of the seed, output bias at the
    /// logit of the foreground prior.
    pub fn initial_net(&self) -> Result<TinyNet> {
        let p = self.foreground_prior;
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidArgument(format!("foreground prior {p} outside (0, 1)")));
        }
        let mut net = TinyNet::init(&self.plan, &mut rng::stream(self.seed, 0))?;
        let (_, bias) = net.layer_offsets(self.plan.len() - 2);
        net.params_mut()[bias] = (p / (1.0 - p)).ln();
        Ok(net)
    }

    /// SGD with momentum and the DICE loss, with the rate schedule and
    /// patience of the given stage.
    pub fn train_config(&self, stage: Stage) -> TrainConfig {
        let (lr, decay, patience) = match stage {
            Stage::Real => (self.lr, self.real_decay, self.patience),
            Stage::Synthetic => (self.lr, self.synthetic_decay, self.patience),
            Stage::FineTune => (self.finetune_lr, 1.0, self.finetune_patience),
        };
        TrainConfig {
            optimizer: Optimizer::SgdMomentum {
                lr,
                momentum: self.momentum,
                decay,
            },
            loss: Loss::DiceLoss,
            epochs: self.epochs,
            patience,
            batch: self.batch,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeRun {
    pub mode: Mode,
    pub net: TinyNet,
    pub stages: Vec<(Stage, TrainOutcome)>,
}

fn real_pairs(cases: &[Case]) -> Vec<(&Volume, &Mask)> {
    cases.iter().map(|c| (&c.image, &c.lesions)).collect()
}

fn sample_pairs(samples: &[SyntheticSample]) -> Vec<(&Volume, &Mask)> {
    samples.iter().map(|s| (&s.image, &s.label)).collect()
}

/// Train a segmenter from the seeded initialization for one mode.
///
/// `real` trains on the real cases; `synthetic` and `diffusion` on the
/// transplanted or refined samples; the `+ft` modes continue the synthetic
/// model on the real cases with the fine-tuning schedule.
pub fn train_mode(
    mode: Mode,
    real: &[Case],
    synthetic: &[SyntheticSample],
    refined: &[SyntheticSample],
    cfg: &SegmenterConfig,
) -> Result<ModeRun> {
    let net = cfg.initial_net()?;
    let mut stages = Vec::new();
    let real_examples = || segmentation_examples(&real_pairs(real), cfg.patch, cfg.patches_per_sample, cfg.seed);
    let net = if mode == Mode::Real {
        let outcome = train(&net, &real_examples()?, &cfg.train_config(Stage::Real))?;
        let net = outcome.net.clone();
        stages.push((Stage::Real, outcome));
        net
    } else {
        let samples = if mode.uses_refined() { refined } else { synthetic };
        let data = segmentation_examples(&sample_pairs(samples), cfg.patch, cfg.patches_per_sample, cfg.seed)?;
        let outcome = train(&net, &data, &cfg.train_config(Stage::Synthetic))?;
        let mut net = outcome.net.clone();
        stages.push((Stage::Synthetic, outcome));
        if mode.fine_tunes() {
            let outcome = train(&net, &real_examples()?, &cfg.train_config(Stage::FineTune))?;
            net = outcome.net.clone();
            stages.push((Stage::FineTune, outcome));
        }
        net
    };
    Ok(ModeRun { mode, net, stages })
}

/// Segment every case with `net` and score it against its lesion mask.
pub fn evaluate_cases(net: &TinyNet, cases: &[Case], opts: &EvaluateOptions) -> Result<Vec<MetricsReport>> {
    cases
        .par_iter()
        .map(|c| evaluate(&segment(net, &c.image)?, &c.lesions, opts))
        .collect()
}
