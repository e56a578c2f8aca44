use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Variance schedule of the forward noising process.
///
/// Timesteps run `1..=T`; index 0 of the `alpha_bar` table is the clean
/// image with `alpha_bar(0) = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    steps: usize,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

/// Parameters of a linear schedule, as stored in configs and provenance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleParams {
    pub steps: usize,
    pub beta_1: f64,
    pub beta_t: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        ScheduleParams {
            steps: 200,
            beta_1: 1e-4,
            beta_t: 2e-3,
        }
    }
}

impl ScheduleParams {
    pub fn build(&self) -> Result<DiffusionSchedule> {
        linear_schedule(self.steps, self.beta_1, self.beta_t)
    }
}

/// Linear schedule from `beta_1` at `t = 1` to `beta_t` at `t = T`.
///
/// The interpolation weight is formed as `(t - 1) / (T - 1)` so both
/// endpoints are reproduced exactly.
pub fn linear_schedule(steps: usize, beta_1: f64, beta_t: f64) -> Result<DiffusionSchedule> {
    if steps < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 timesteps, got {steps}"
        )));
    }
    if !(beta_1 > 0.0 && beta_1 < beta_t && beta_t < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < beta_1 < beta_T < 1, got {beta_1} and {beta_t}"
        )));
    }
    let last = (steps - 1) as f64;
    let betas: Vec<f64> = (0..steps)
        .map(|i| {
            let f = i as f64 / last;
            beta_1 * (1.0 - f) + beta_t * f
        })
        .collect();
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(steps + 1);
    alpha_bars.push(1.0);
    let mut acc = 1.0;
    for a in &alphas {
        acc *= a;
        alpha_bars.push(acc);
    }
    Ok(DiffusionSchedule {
        steps,
        betas,
        alphas,
        alpha_bars,
    })
}

impl DiffusionSchedule {
    /// Number of timesteps `T`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// `beta_t` for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// `alpha_t = 1 - beta_t` for `t` in `1..=T`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// Cumulative product for `t` in `0..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// `alpha_bar` for `t = 0..=T`.
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub(crate) fn check_t(&self, t: usize) -> Result<()> {
        if t > self.steps {
            return Err(Error::InvalidArgument(format!(
                "timestep {t} outside 0..={}",
                self.steps
            )));
        }
        Ok(())
    }
}

/// Evenly strided timesteps for an `n`-step sampler: `T - round(i T / n)`
/// for `i = 0..n`, rounding halves up. Starts at `T`, strictly decreasing,
/// ends at or above 1.
pub fn ddim_steps(steps: usize, n: usize) -> Result<Vec<usize>> {
    if n == 0 || n > steps {
        return Err(Error::InvalidArgument(format!("need 1 <= n_steps <= {steps}, got {n}")));
    }
    Ok((0..n).map(|i| steps - (2 * i * steps + n) / (2 * n)).collect())
}
