//! Small trainable 3D convolution stacks with exact backpropagation, used
//! as the noise predictor and as the toy segmenter.

mod loss;
mod net;
mod train;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::Denoiser;
use crate::error::{Error, Result};
use crate::volume::{Field, Mask, Volume};

pub use loss::{dice_loss, sigmoid, Loss, DICE_SMOOTH};
pub use net::{param_count, Activations, Tensor, TinyNet, DENOISER_PLAN, KERNEL, SEGMENTER_PLAN};
pub use train::{
    loss_and_gradient, mean_loss, train, EpochRecord, Example, Optimizer, TrainConfig, TrainOutcome,
    VALIDATION_FRACTION,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub plan: Vec<usize>,
    pub seed: u64,
    pub epoch: Option<usize>,
}

/// JSON header, newline, NUL, then every parameter as little-endian `f32`.
pub fn encode_checkpoint(net: &TinyNet, seed: u64, epoch: Option<usize>) -> Vec<u8> {
    let header = CheckpointHeader {
        plan: net.plan().to_vec(),
        seed,
        epoch,
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.extend_from_slice(b"\n\0");
    for &p in net.params() {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<(TinyNet, CheckpointHeader)> {
    let split = bytes
        .windows(2)
        .position(|w| w == b"\n\0")
        .ok_or_else(|| Error::format(path, "missing header terminator"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[..split]).map_err(|e| Error::format(path, format!("bad header: {e}")))?;
    let payload = &bytes[split + 2..];
    let expected = param_count(&header.plan) * 4;
    if payload.len() != expected {
        return Err(Error::format(
            path,
            format!("payload has {} bytes, plan needs {expected}", payload.len()),
        ));
    }
    let params = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let net = TinyNet::from_params(&header.plan, params).map_err(|e| Error::format(path, e.to_string()))?;
    Ok((net, header))
}

pub fn write_checkpoint(net: &TinyNet, seed: u64, epoch: Option<usize>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(net, seed, epoch)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(TinyNet, CheckpointHeader)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

/// Rounds every parameter to `f32`, as a checkpoint round trip does.
pub fn quantize(net: &TinyNet) -> TinyNet {
    let params = net.params().iter().map(|&p| p as f32 as f64).collect();
    TinyNet::from_params(net.plan(), params).expect("same plan")
}

/// Input of the noise predictor: the image and a constant `t / T` channel.
pub fn denoiser_input(x_t: &Volume, t: usize, steps: usize) -> Tensor {
    let n = x_t.len();
    let mut data = Vec::with_capacity(2 * n);
    data.extend(x_t.data().iter().map(|&v| v as f64));
    data.extend(std::iter::repeat_n(t as f64 / steps as f64, n));
    Tensor::from_vec(2, x_t.dims(), data).expect("shape from volume")
}

/// A [`TinyNet`] with two input channels acting as a noise predictor for a
/// schedule with `steps` timesteps.
#[derive(Debug, Clone, PartialEq)]
pub struct NetDenoiser {
    pub net: TinyNet,
    pub steps: usize,
}

impl NetDenoiser {
    pub fn new(net: TinyNet, steps: usize) -> Result<Self> {
        if net.plan().first() != Some(&2) || net.plan().last() != Some(&1) {
            return Err(Error::InvalidArgument(format!(
                "denoiser needs 2 input and 1 output channel, plan is {:?}",
                net.plan()
            )));
        }
        Ok(NetDenoiser { net, steps })
    }
}

impl Denoiser for NetDenoiser {
    fn predict_noise(&self, x_t: &Volume, t: usize) -> Result<Volume> {
        let out = self.net.forward(&denoiser_input(x_t, t, self.steps))?;
        out.to_volume(0, *x_t.grid())
    }
}

/// Foreground probability per voxel from a one-logit segmenter.
pub fn predict_probabilities(net: &TinyNet, image: &Volume) -> Result<Vec<f64>> {
    let out = net.forward(&Tensor::from_volumes(&[image])?)?;
    Ok(out.channel(0).iter().map(|&z| sigmoid(z)).collect())
}

/// Binary segmentation: probability above 0.5, i.e. a positive logit.
pub fn segment(net: &TinyNet, image: &Volume) -> Result<Mask> {
    let out = net.forward(&Tensor::from_volumes(&[image])?)?;
    let data = out.channel(0).iter().map(|&z| (z > 0.0) as u8).collect();
    Field::from_vec(*image.grid(), data)
}
