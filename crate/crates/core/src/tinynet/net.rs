use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, SeededRng};
use crate::volume::{Field, Grid, Mask, Volume};

/// Taps of a 3x3x3 kernel.
pub const KERNEL: usize = 27;

/// Multi-channel voxel data, channel-major; each channel is x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    channels: usize,
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(channels: usize, dims: [usize; 3]) -> Self {
        Tensor {
            channels,
            dims,
            data: vec![0.0; channels * dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn from_vec(channels: usize, dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        if channels == 0 || dims.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "tensor needs channels >= 1 and nonzero dims, got {channels} x {dims:?}"
            )));
        }
        if data.len() != channels * dims[0] * dims[1] * dims[2] {
            return Err(Error::InvalidArgument(format!(
                "tensor {channels} x {dims:?} cannot hold {} values",
                data.len()
            )));
        }
        Ok(Tensor { channels, dims, data })
    }

    /// One channel per volume, all on the same grid.
    pub fn from_volumes(volumes: &[&Volume]) -> Result<Self> {
        let first = volumes
            .first()
            .ok_or_else(|| Error::InvalidArgument("no volumes".into()))?;
        let mut data = Vec::with_capacity(volumes.len() * first.len());
        for v in volumes {
            first.require_same_grid(*v, "tensor channel")?;
            data.extend(v.data().iter().map(|&x| x as f64));
        }
        Tensor::from_vec(volumes.len(), first.dims(), data)
    }

    pub fn from_mask(m: &Mask) -> Self {
        Tensor {
            channels: 1,
            dims: m.dims(),
            data: m.data().iter().map(|&x| x as f64).collect(),
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// Voxels per channel.
    pub fn voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.voxels();
        &self.data[c * n..(c + 1) * n]
    }

    /// Channel `c` as a volume on `grid`.
    pub fn to_volume(&self, c: usize, grid: Grid) -> Result<Volume> {
        if grid.dims != self.dims {
            return Err(Error::GridMismatch(format!(
                "tensor dims {:?} vs grid {:?}",
                self.dims, grid.dims
            )));
        }
        Field::from_vec(grid, self.channel(c).iter().map(|&v| v as f32).collect())
            .map_err(|e| Error::Numeric(e.to_string()))
    }
}

/// Plain stack of 3x3x3 convolutions (zero padding 1, with bias) with ReLU
/// between consecutive layers and none after the last.
///
/// Parameters live in one flat vector; layer `l` stores its weights as
/// `[c_out][c_in][27]` (taps z-major, x-fastest) followed by `c_out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyNet {
    plan: Vec<usize>,
    params: Vec<f64>,
}

/// Per-layer inputs and pre-activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct Activations {
    inputs: Vec<Tensor>,
    output: Tensor,
}

impl Activations {
    pub fn output(&self) -> &Tensor {
        &self.output
    }
}

/// Denoiser channel plan: image and timestep channels in, noise out.
pub const DENOISER_PLAN: [usize; 4] = [2, 8, 8, 1];
/// Segmenter channel plan: image in, one logit out.
pub const SEGMENTER_PLAN: [usize; 5] = [1, 8, 16, 8, 1];

pub fn param_count(plan: &[usize]) -> usize {
    plan.windows(2).map(|w| KERNEL * w[0] * w[1] + w[1]).sum()
}

struct Layer {
    c_in: usize,
    c_out: usize,
    w: usize,
    b: usize,
}

impl TinyNet {
    /// All-zero parameters.
    pub fn zeros(plan: &[usize]) -> Result<Self> {
        if plan.len() < 2 || plan.contains(&0) {
            return Err(Error::InvalidArgument(format!("bad channel plan {plan:?}")));
        }
        Ok(TinyNet {
            plan: plan.to_vec(),
            params: vec![0.0; param_count(plan)],
        })
    }

    /// He-normal weights (std `sqrt(2 / (27 c_in))`) drawn layer by layer
    /// in storage order; zero biases.
    pub fn init(plan: &[usize], rng: &mut SeededRng) -> Result<Self> {
        let mut net = TinyNet::zeros(plan)?;
        for l in net.layers() {
            let std = (2.0 / (KERNEL * l.c_in) as f64).sqrt();
            for p in &mut net.params[l.w..l.b] {
                *p = std * rng::standard_normal(rng);
            }
        }
        Ok(net)
    }

    pub fn from_params(plan: &[usize], params: Vec<f64>) -> Result<Self> {
        let mut net = TinyNet::zeros(plan)?;
        if params.len() != net.params.len() {
            return Err(Error::InvalidArgument(format!(
                "plan {plan:?} needs {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric("non-finite parameter".into()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn plan(&self) -> &[usize] {
        &self.plan
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layers(&self) -> Vec<Layer> {
        let mut at = 0;
        self.plan
            .windows(2)
            .map(|w| {
                let (c_in, c_out) = (w[0], w[1]);
                let layer = Layer {
                    c_in,
                    c_out,
                    w: at,
                    b: at + KERNEL * c_in * c_out,
                };
                at = layer.b + c_out;
                layer
            })
            .collect()
    }

    /// Offsets of layer `l`'s weights and biases in the flat vector.
    pub fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let layer = &self.layers()[l];
        (layer.w, layer.b)
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.forward_cached(input)?.output)
    }

    pub fn forward_cached(&self, input: &Tensor) -> Result<Activations> {
        if input.channels != self.plan[0] {
            return Err(Error::InvalidArgument(format!(
                "net expects {} input channels, got {}",
                self.plan[0], input.channels
            )));
        }
        let layers = self.layers();
        let mut inputs = Vec::with_capacity(layers.len());
        let mut x = input.clone();
        for (k, l) in layers.iter().enumerate() {
            let mut z = conv_forward(&x, &self.params[l.w..l.b], &self.params[l.b..l.b + l.c_out], l.c_out);
            inputs.push(x);
            if k + 1 == layers.len() {
                return Ok(Activations { inputs, output: z });
            }
            for v in &mut z.data {
                *v = v.max(0.0);
            }
            x = z;
        }
        unreachable!("plan has at least one layer")
    }

    /// Gradient of the loss with respect to every parameter, given the
    /// gradient with respect to the network output.
    pub fn backward(&self, acts: &Activations, upstream: &Tensor) -> Result<Vec<f64>> {
        if upstream.dims != acts.output.dims || upstream.channels != acts.output.channels {
            return Err(Error::InvalidArgument("upstream gradient shape mismatch".into()));
        }
        let layers = self.layers();
        let mut grads = vec![0.0; self.params.len()];
        let mut g = upstream.clone();
        for (k, l) in layers.iter().enumerate().rev() {
            let x = &acts.inputs[k];
            let need_input = k > 0;
            let (gw, rest) = grads[l.w..].split_at_mut(l.b - l.w);
            let gin = conv_backward(x, &self.params[l.w..l.b], &g, gw, &mut rest[..l.c_out], need_input);
            if let Some(mut gin) = gin {
                // the layer input is the ReLU of the previous pre-activation,
                // so it is positive exactly where that ReLU was active
                for (gv, &xv) in gin.data.iter_mut().zip(&x.data) {
                    if xv <= 0.0 {
                        *gv = 0.0;
                    }
                }
                g = gin;
            }
        }
        Ok(grads)
    }
}

/// Ranges of output index `i` for which `i + d` stays inside `0..n`.
fn valid(n: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).min(n as isize).max(0) as usize;
    (lo, hi.max(lo))
}

fn taps() -> impl Iterator<Item = (usize, [isize; 3])> {
    (0..KERNEL).map(|t| {
        let (x, y, z) = (t % 3, (t / 3) % 3, t / 9);
        (t, [x as isize - 1, y as isize - 1, z as isize - 1])
    })
}

fn conv_forward(x: &Tensor, w: &[f64], b: &[f64], c_out: usize) -> Tensor {
    let [nx, ny, nz] = x.dims;
    let n = x.voxels();
    let c_in = x.channels;
    let mut out = Tensor::zeros(c_out, x.dims);
    for o in 0..c_out {
        let dst = &mut out.data[o * n..(o + 1) * n];
        dst.fill(b[o]);
        for i in 0..c_in {
            let src = &x.data[i * n..(i + 1) * n];
            for (t, d) in taps() {
                let wv = w[(o * c_in + i) * KERNEL + t];
                if wv == 0.0 {
                    continue;
                }
                let (x0, x1) = valid(nx, d[0]);
                let (y0, y1) = valid(ny, d[1]);
                let (z0, z1) = valid(nz, d[2]);
                let len = x1 - x0;
                for z in z0..z1 {
                    for y in y0..y1 {
                        let a = z * nx * ny + y * nx + x0;
                        let s = ((z as isize + d[2]) as usize * ny + (y as isize + d[1]) as usize) * nx
                            + (x0 as isize + d[0]) as usize;
                        for (dv, sv) in dst[a..a + len].iter_mut().zip(&src[s..s + len]) {
                            *dv += wv * sv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients; returns the input gradient when
/// asked for it.
fn conv_backward(
    x: &Tensor,
    w: &[f64],
    g: &Tensor,
    gw: &mut [f64],
    gb: &mut [f64],
    need_input: bool,
) -> Option<Tensor> {
    let [nx, ny, nz] = x.dims;
    let n = x.voxels();
    let c_in = x.channels;
    let c_out = g.channels;
    let mut gin = need_input.then(|| Tensor::zeros(c_in, x.dims));
    for o in 0..c_out {
        let go = &g.data[o * n..(o + 1) * n];
        gb[o] += go.iter().sum::<f64>();
        for i in 0..c_in {
            let src = &x.data[i * n..(i + 1) * n];
            for (t, d) in taps() {
                let wi = (o * c_in + i) * KERNEL + t;
                let (x0, x1) = valid(nx, d[0]);
                let (y0, y1) = valid(ny, d[1]);
                let (z0, z1) = valid(nz, d[2]);
                let len = x1 - x0;
                let mut acc = 0.0;
                for z in z0..z1 {
                    for y in y0..y1 {
                        let a = z * nx * ny + y * nx + x0;
                        let s = ((z as isize + d[2]) as usize * ny + (y as isize + d[1]) as usize) * nx
                            + (x0 as isize + d[0]) as usize;
                        acc += go[a..a + len]
                            .iter()
                            .zip(&src[s..s + len])
                            .map(|(p, q)| p * q)
                            .sum::<f64>();
                        if let Some(gin) = gin.as_mut() {
                            let wv = w[wi];
                            let dst = &mut gin.data[i * n + s..i * n + s + len];
                            for (dv, gv) in dst.iter_mut().zip(&go[a..a + len]) {
                                *dv += wv * gv;
                            }
                        }
                    }
                }
                gw[wi] += acc;
            }
        }
    }
    gin
}
