//! Forward noising, deterministic DDIM sampling, and partial-noising
//! refinement of synthetic samples.

mod schedule;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, SeededRng};
use crate::synthesis::SyntheticSample;
use crate::volume::{Field, Volume};

pub use schedule::{ddim_steps, linear_schedule, DiffusionSchedule, ScheduleParams};

/// Strength of the refinement noise used unless configured otherwise.
pub const DEFAULT_LAMBDA: usize = 10;

/// A noised volume together with the noise draw that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisedVolume {
    pub data: Volume,
    pub t: usize,
    pub eps: Volume,
}

/// Predicts the noise component of `x_t` at timestep `t`.
///
/// Implementations must be callable concurrently and return a finite volume
/// on the grid of `x_t`.
pub trait Denoiser: Sync {
    fn predict_noise(&self, x_t: &Volume, t: usize) -> Result<Volume>;
}

impl<F> Denoiser for F
where
    F: Fn(&Volume, usize) -> Result<Volume> + Sync,
{
    fn predict_noise(&self, x_t: &Volume, t: usize) -> Result<Volume> {
        self(x_t, t)
    }
}

fn to_volume(like: &Volume, data: Vec<f64>) -> Result<Volume> {
    Field::from_vec(*like.grid(), data.into_iter().map(|v| v as f32).collect())
        .map_err(|e| Error::Numeric(e.to_string()))
}

/// `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps` with a given `eps`.
pub fn forward_diffuse_with_noise(x0: &Volume, t: usize, s: &DiffusionSchedule, eps: &Volume) -> Result<NoisedVolume> {
    s.check_t(t)?;
    x0.require_same_grid(eps, "noise")?;
    if t == 0 {
        return Ok(NoisedVolume {
            data: x0.clone(),
            t,
            eps: eps.clone(),
        });
    }
    let ab = s.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = x0
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&x, &e)| a * x as f64 + b * e as f64)
        .collect();
    Ok(NoisedVolume {
        data: to_volume(x0, data)?,
        t,
        eps: eps.clone(),
    })
}

/// Closed-form noising to timestep `t`. Draws one standard normal per voxel
/// in linear index order, also when `t = 0`.
pub fn forward_diffuse(x0: &Volume, t: usize, s: &DiffusionSchedule, rng: &mut SeededRng) -> Result<NoisedVolume> {
    s.check_t(t)?;
    let eps = Field::from_vec(
        *x0.grid(),
        (0..x0.len()).map(|_| rng::standard_normal(rng) as f32).collect(),
    )?;
    forward_diffuse_with_noise(x0, t, s, &eps)
}

/// One step of the Markov chain, `x_t = sqrt(alpha_t) x_{t-1} + sqrt(beta_t) eps`,
/// for `t` in `1..=T`. Draws in linear index order.
pub fn forward_step(x_prev: &Volume, t: usize, s: &DiffusionSchedule, rng: &mut SeededRng) -> Result<Volume> {
    if t == 0 {
        return Err(Error::InvalidArgument("forward step needs t >= 1".into()));
    }
    s.check_t(t)?;
    let (a, b) = (s.alpha(t).sqrt(), s.beta(t).sqrt());
    let data = x_prev
        .data()
        .iter()
        .map(|&x| a * x as f64 + b * rng::standard_normal(rng))
        .collect();
    to_volume(x_prev, data)
}

/// Deterministic DDIM (eta = 0) from `x_t` at `t_seq[0]` through the
/// remaining timesteps and finally to `t = 0`.
///
/// The running state is kept in `f64`; the denoiser sees it rounded to the
/// volume's scalar type.
pub fn ddim_sample(x_t: &Volume, t_seq: &[usize], d: &dyn Denoiser, s: &DiffusionSchedule) -> Result<Volume> {
    if t_seq.is_empty() {
        return Ok(x_t.clone());
    }
    for &t in t_seq {
        if t == 0 {
            return Err(Error::InvalidArgument("timestep sequence contains 0".into()));
        }
        s.check_t(t)?;
    }
    if t_seq.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::InvalidArgument(format!(
            "timestep sequence must strictly decrease: {t_seq:?}"
        )));
    }
    let mut state: Vec<f64> = x_t.data().iter().map(|&v| v as f64).collect();
    let mut current = x_t.clone();
    for (k, &t) in t_seq.iter().enumerate() {
        let next = t_seq.get(k + 1).copied().unwrap_or(0);
        let eps = d.predict_noise(&current, t)?;
        if !eps.same_grid(&current) {
            return Err(Error::GridMismatch(format!("denoiser output at t = {t}")));
        }
        let (ab, ab_next) = (s.alpha_bar(t), s.alpha_bar(next));
        let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
        let (na, nb) = (ab_next.sqrt(), (1.0 - ab_next).sqrt());
        for (x, &e) in state.iter_mut().zip(eps.data()) {
            let e = e as f64;
            let x0 = (*x - sb * e) / sa;
            *x = na * x0 + nb * e;
        }
        current = to_volume(x_t, state.clone())?;
    }
    Ok(current)
}

/// Timesteps used when refining from `lambda`: every step `lambda..=1`, or
/// `n` evenly strided steps when `n_ddim` is given.
pub fn refine_steps(lambda: usize, n_ddim: Option<usize>) -> Result<Vec<usize>> {
    match n_ddim {
        None => Ok((1..=lambda).rev().collect()),
        Some(n) => ddim_steps(lambda, n),
    }
}

/// Noise `image` to `lambda` and denoise it back to `t = 0`.
pub fn refine_volume(
    image: &Volume,
    lambda: usize,
    d: &dyn Denoiser,
    s: &DiffusionSchedule,
    n_ddim: Option<usize>,
    rng: &mut SeededRng,
) -> Result<Volume> {
    if lambda == 0 {
        return Err(Error::InvalidArgument("lambda must be at least 1".into()));
    }
    s.check_t(lambda)?;
    let steps = refine_steps(lambda, n_ddim)?;
    let noised = forward_diffuse(image, lambda, s, rng)?;
    ddim_sample(&noised.data, &steps, d, s)
}

/// Record of a refinement pass attached to a sample's provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub lambda: usize,
    pub n_ddim: usize,
    pub schedule: ScheduleParams,
    pub seed: u64,
}

/// Refine the image of a synthetic sample; the label is carried over
/// untouched. The noise stream is `rng::seeded(seed)`.
pub fn refine(
    sample: &SyntheticSample,
    lambda: usize,
    d: &dyn Denoiser,
    params: &ScheduleParams,
    n_ddim: Option<usize>,
    seed: u64,
) -> Result<SyntheticSample> {
    let s = params.build()?;
    let mut rng = rng::seeded(seed);
    let image = refine_volume(&sample.image, lambda, d, &s, n_ddim, &mut rng)?;
    let mut provenance = sample.provenance.clone();
    provenance.refinement = Some(Refinement {
        lambda,
        n_ddim: n_ddim.unwrap_or(lambda),
        schedule: *params,
        seed,
    });
    Ok(SyntheticSample {
        image,
        label: sample.label.clone(),
        provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;

    fn ramp(n: usize) -> Volume {
        let g = Grid::isotropic([n, n, n], 1.0).unwrap();
        Volume::from_fn(g, |p| (p[0] as f32 - 1.5) * 0.5 + p[1] as f32 * 0.25 - p[2] as f32).unwrap()
    }

    #[test]
    fn t_zero_is_identity() {
        let s = linear_schedule(200, 1e-4, 2e-3).unwrap();
        let x = ramp(4);
        let n = forward_diffuse(&x, 0, &s, &mut rng::seeded(1)).unwrap();
        assert_eq!(n.data, x);
        assert!(forward_diffuse(&x, 201, &s, &mut rng::seeded(1)).is_err());
    }

    #[test]
    fn zero_noise_scales_signal() {
        let s = linear_schedule(200, 1e-4, 2e-3).unwrap();
        let x = ramp(4);
        let zero = Volume::zeros(*x.grid());
        let n = forward_diffuse_with_noise(&x, 37, &s, &zero).unwrap();
        let a = s.alpha_bar(37).sqrt();
        for (got, &v) in n.data.data().iter().zip(x.data()) {
            assert_eq!(*got, (a * v as f64) as f32);
        }
    }

    #[test]
    fn zero_denoiser_rescales() {
        let s = linear_schedule(200, 1e-4, 2e-3).unwrap();
        let x = ramp(3);
        let zero = |v: &Volume, _t: usize| Ok(Volume::zeros(*v.grid()));
        let out = ddim_sample(&x, &[25], &zero, &s).unwrap();
        let a = s.alpha_bar(25).sqrt();
        for (o, &v) in out.data().iter().zip(x.data()) {
            assert!((*o as f64 - v as f64 / a).abs() < 1e-6);
        }
    }

    #[test]
    fn oracle_denoiser_inverts() {
        let s = linear_schedule(200, 1e-4, 2e-3).unwrap();
        let x = ramp(4);
        let noised = forward_diffuse(&x, 50, &s, &mut rng::seeded(3)).unwrap();
        let eps = noised.eps.clone();
        let oracle = move |_: &Volume, _t: usize| Ok(eps.clone());
        for seq in [vec![50], ddim_steps(50, 7).unwrap(), (1..=50).rev().collect()] {
            let out = ddim_sample(&noised.data, &seq, &oracle, &s).unwrap();
            for (o, &v) in out.data().iter().zip(x.data()) {
                assert!((o - v).abs() < 1e-5, "{o} vs {v}");
            }
        }
    }

    #[test]
    fn sequence_checks() {
        let s = linear_schedule(20, 1e-4, 2e-3).unwrap();
        let x = ramp(2);
        let zero = |v: &Volume, _t: usize| Ok(Volume::zeros(*v.grid()));
        assert!(ddim_sample(&x, &[3, 5], &zero, &s).is_err());
        assert!(ddim_sample(&x, &[21], &zero, &s).is_err());
        assert!(ddim_sample(&x, &[3, 0], &zero, &s).is_err());
        assert_eq!(refine_steps(10, None).unwrap(), (1..=10).rev().collect::<Vec<_>>());
        assert_eq!(refine_steps(10, Some(5)).unwrap(), vec![10, 8, 6, 4, 2]);
    }
}
