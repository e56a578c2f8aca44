use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};
use crate::volume::Mask;

/// Smoothing term of the soft DICE loss.
pub const DICE_SMOOTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Mean squared error against the target, e.g. the noise draw.
    MseEps,
    /// Soft DICE of the sigmoid of the output against a binary target.
    DiceLoss,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `1 - (2 sum p g + s) / (sum p + sum g + s)` with `s = 1`.
pub fn dice_loss(prediction: &[f64], reference: &Mask) -> Result<f64> {
    if prediction.len() != reference.len() {
        return Err(Error::GridMismatch(format!(
            "{} predictions for {} voxels",
            prediction.len(),
            reference.len()
        )));
    }
    let g: Vec<f64> = reference.data().iter().map(|&v| v as f64).collect();
    Ok(soft_dice(prediction, &g).0)
}

/// Loss value and the derivative with respect to each probability.
fn soft_dice(p: &[f64], g: &[f64]) -> (f64, f64, f64) {
    let inter: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
    let sum: f64 = p.iter().sum::<f64>() + g.iter().sum::<f64>();
    let loss = 1.0 - (2.0 * inter + DICE_SMOOTH) / (sum + DICE_SMOOTH);
    (loss, inter, sum)
}

impl Loss {
    /// Loss of `output` against `target` and its gradient with respect to
    /// `output`.
    pub fn eval(self, output: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
        if output.dims() != target.dims() || output.channels() != target.channels() {
            return Err(Error::InvalidArgument(format!(
                "output {}x{:?} vs target {}x{:?}",
                output.channels(),
                output.dims(),
                target.channels(),
                target.dims()
            )));
        }
        let y = output.data();
        let t = target.data();
        let mut grad = Tensor::zeros(output.channels(), output.dims());
        let loss = match self {
            Loss::MseEps => {
                let n = y.len() as f64;
                let mut ss = 0.0;
                for ((gv, a), b) in grad.data_mut().iter_mut().zip(y).zip(t) {
                    let d = a - b;
                    ss += d * d;
                    *gv = 2.0 * d / n;
                }
                ss / n
            }
            Loss::DiceLoss => {
                let p: Vec<f64> = y.iter().map(|&z| sigmoid(z)).collect();
                let (loss, inter, sum) = soft_dice(&p, t);
                let den = sum + DICE_SMOOTH;
                let num = 2.0 * inter + DICE_SMOOTH;
                for ((gv, pv), gt) in grad.data_mut().iter_mut().zip(&p).zip(t) {
                    let dp = -(2.0 * gt * den - num) / (den * den);
                    *gv = dp * pv * (1.0 - pv);
                }
                loss
            }
        };
        Ok((loss, grad))
    }
}
