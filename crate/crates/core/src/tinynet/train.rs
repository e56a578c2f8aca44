use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Loss, Tensor, TinyNet};
use crate::error::{Error, Result};
use crate::rng;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Share of the shuffled dataset held out for early stopping.
pub const VALIDATION_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Optimizer {
    Adam { lr: f64, decay: f64 },
    SgdMomentum { lr: f64, momentum: f64, decay: f64 },
}

impl Optimizer {
    pub fn lr(&self) -> f64 {
        match *self {
            Optimizer::Adam { lr, .. } | Optimizer::SgdMomentum { lr, .. } => lr,
        }
    }

    pub fn decay(&self) -> f64 {
        match *self {
            Optimizer::Adam { decay, .. } | Optimizer::SgdMomentum { decay, .. } => decay,
        }
    }

    /// Learning rate used during epoch `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr() * self.decay().powi(epoch as i32)
    }

    /// Same optimizer kind with a new initial rate and decay.
    pub fn with_schedule(&self, lr: f64, decay: f64) -> Optimizer {
        match *self {
            Optimizer::Adam { .. } => Optimizer::Adam { lr, decay },
            Optimizer::SgdMomentum { momentum, .. } => Optimizer::SgdMomentum { lr, momentum, decay },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub loss: Loss,
    pub epochs: usize,
    pub patience: usize,
    pub batch: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let (lr, decay) = (self.optimizer.lr(), self.optimizer.decay());
        if !(lr > 0.0 && lr.is_finite()) {
            return bad(format!("learning rate {lr} must be > 0"));
        }
        if !(decay > 0.0 && decay <= 1.0) {
            return bad(format!("decay {decay} must be in (0, 1]"));
        }
        if let Optimizer::SgdMomentum { momentum, .. } = self.optimizer {
            if !(0.0..1.0).contains(&momentum) {
                return bad(format!("momentum {momentum} must be in [0, 1)"));
            }
        }
        if self.patience == 0 {
            return bad("patience must be >= 1".into());
        }
        if self.batch == 0 {
            return bad("batch must be >= 1".into());
        }
        Ok(())
    }
}

/// One training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Tensor,
    pub target: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss seen, including the
    /// initial ones.
    pub net: TinyNet,
    pub history: Vec<EpochRecord>,
    pub initial_val_loss: f64,
    pub best_val_loss: f64,
    /// Epoch that produced `net`, `None` if no epoch improved on the start.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

struct OptState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl OptState {
    fn new(n: usize) -> Self {
        OptState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, opt: &Optimizer, lr: f64, params: &mut [f64], grads: &[f64]) {
        self.step += 1;
        match *opt {
            Optimizer::Adam { .. } => {
                let c1 = 1.0 - ADAM_BETA1.powi(self.step);
                let c2 = 1.0 - ADAM_BETA2.powi(self.step);
                for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                }
            }
            Optimizer::SgdMomentum { momentum, .. } => {
                for ((p, &g), buf) in params.iter_mut().zip(grads).zip(&mut self.m) {
                    *buf = momentum * *buf + g;
                    *p -= lr * *buf;
                }
            }
        }
    }
}

/// Loss of one example and the parameter gradient.
pub fn loss_and_gradient(net: &TinyNet, ex: &Example, loss: Loss) -> Result<(f64, Vec<f64>)> {
    let acts = net.forward_cached(&ex.input)?;
    let (value, upstream) = loss.eval(acts.output(), &ex.target)?;
    Ok((value, net.backward(&acts, &upstream)?))
}

/// Mean loss over `examples`, evaluated in parallel and summed in order.
pub fn mean_loss(net: &TinyNet, examples: &[&Example], loss: Loss) -> Result<f64> {
    let values: Vec<f64> = examples
        .par_iter()
        .map(|ex| {
            let out = net.forward(&ex.input)?;
            Ok(loss.eval(&out, &ex.target)?.0)
        })
        .collect::<Result<_>>()?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

fn shuffle(order: &mut [usize], r: &mut rng::SeededRng) {
    for i in (1..order.len()).rev() {
        let j = rng::index(r, i + 1);
        order.swap(i, j);
    }
}

fn check_finite(v: f64, what: &str, epoch: usize) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{what} became {v} in epoch {epoch}")))
    }
}

/// Minibatch training with early stopping on validation loss.
///
/// The stream `rng::seeded(cfg.seed)` first shuffles the dataset once; the
/// last 20% (rounded down) is the validation set, or the training set itself
/// when that would be empty. Each epoch then reshuffles the training
/// indices from the same stream. Batch gradients are the mean of the
/// per-example gradients, computed in parallel and summed in batch order.
/// Training stops after `patience` epochs without a strictly lower
/// validation loss, or after `epochs` epochs.
pub fn train(net: &TinyNet, data: &[Example], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let mut r = rng::seeded(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    shuffle(&mut order, &mut r);
    let n_val = (data.len() as f64 * VALIDATION_FRACTION).floor() as usize;
    let (train_idx, val_idx) = order.split_at(data.len() - n_val);
    let mut train_idx = train_idx.to_vec();
    let val: Vec<&Example> = if val_idx.is_empty() {
        train_idx.iter().map(|&i| &data[i]).collect()
    } else {
        val_idx.iter().map(|&i| &data[i]).collect()
    };

    let mut current = net.clone();
    let initial_val_loss = mean_loss(&current, &val, cfg.loss)?;
    check_finite(initial_val_loss, "validation loss", 0)?;
    let mut best = current.clone();
    let mut best_val_loss = initial_val_loss;
    let mut best_epoch = None;
    let mut since_best = 0;
    let mut history = Vec::new();
    let mut state = OptState::new(current.params().len());
    let mut stopped_early = false;

    for epoch in 0..cfg.epochs {
        let lr = cfg.optimizer.lr_at(epoch);
        shuffle(&mut train_idx, &mut r);
        let mut total = 0.0;
        for batch in train_idx.chunks(cfg.batch) {
            let results: Vec<(f64, Vec<f64>)> = batch
                .par_iter()
                .map(|&i| loss_and_gradient(&current, &data[i], cfg.loss))
                .collect::<Result<_>>()?;
            let mut grad = vec![0.0; current.params().len()];
            for (value, g) in &results {
                total += value;
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for g in &mut grad {
                *g *= scale;
            }
            state.update(&cfg.optimizer, lr, current.params_mut(), &grad);
        }
        let train_loss = total / train_idx.len() as f64;
        check_finite(train_loss, "training loss", epoch)?;
        let val_loss = mean_loss(&current, &val, cfg.loss)?;
        check_finite(val_loss, "validation loss", epoch)?;
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        if val_loss < best_val_loss {
            best_val_loss = val_loss;
            best = current.clone();
            best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainOutcome {
        net: best,
        history,
        initial_val_loss,
        best_val_loss,
        best_epoch,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_example(x: f64, y: f64) -> Example {
        Example {
            input: Tensor::from_vec(1, [1, 1, 1], vec![x]).unwrap(),
            target: Tensor::from_vec(1, [1, 1, 1], vec![y]).unwrap(),
        }
    }

    #[test]
    fn scalar_sgd_follows_recurrence() {
        // on a single voxel only the centre tap and the bias act:
        // y = w x + b, L = (y - t)^2
        let (x, t) = (1.5, -0.7);
        let (lr, mu, decay) = (0.05, 0.9, 0.95);
        let mut net = TinyNet::zeros(&[1, 1]).unwrap();
        net.params_mut()[13] = 0.4;
        net.params_mut()[27] = 0.1;
        let cfg = TrainConfig {
            optimizer: Optimizer::SgdMomentum {
                lr,
                momentum: mu,
                decay,
            },
            loss: Loss::MseEps,
            epochs: 12,
            patience: 100,
            batch: 1,
            seed: 0,
        };
        let out = train(&net, &[scalar_example(x, t)], &cfg).unwrap();

        let (mut w, mut b, mut vw, mut vb) = (0.4f64, 0.1f64, 0.0, 0.0);
        let mut best = (f64::INFINITY, w, b);
        let loss0 = (w * x + b - t).powi(2);
        best.0 = loss0;
        for (k, rec) in out.history.iter().enumerate() {
            let lr_k = lr * decay.powi(k as i32);
            let e = w * x + b - t;
            assert!((rec.train_loss - e * e).abs() < 1e-10);
            vw = mu * vw + 2.0 * e * x;
            vb = mu * vb + 2.0 * e;
            w -= lr_k * vw;
            b -= lr_k * vb;
            let l = (w * x + b - t).powi(2);
            assert!((rec.val_loss - l).abs() < 1e-10);
            assert!((rec.lr - lr_k).abs() < 1e-12 * lr);
            if l < best.0 {
                best = (l, w, b);
            }
        }
        assert!((out.net.params()[13] - best.1).abs() < 1e-10);
        assert!((out.net.params()[27] - best.2).abs() < 1e-10);
    }

    #[test]
    fn perfect_fit_stops_at_patience() {
        let mut net = TinyNet::zeros(&[1, 1]).unwrap();
        net.params_mut()[13] = 2.0;
        let data = [scalar_example(1.0, 2.0), scalar_example(-3.0, -6.0)];
        let cfg = TrainConfig {
            optimizer: Optimizer::Adam { lr: 1e-3, decay: 1.0 },
            loss: Loss::MseEps,
            epochs: 50,
            patience: 1,
            batch: 1,
            seed: 3,
        };
        let out = train(&net, &data, &cfg).unwrap();
        assert_eq!(out.history.len(), 1);
        assert!(out.stopped_early);
        assert_eq!(out.best_val_loss, 0.0);
        assert_eq!(out.best_epoch, None);
        assert_eq!(out.net, net);
    }

    #[test]
    fn divergence_is_reported() {
        let mut net = TinyNet::zeros(&[1, 1]).unwrap();
        net.params_mut()[13] = 1.0;
        let cfg = TrainConfig {
            optimizer: Optimizer::SgdMomentum {
                lr: 1e6,
                momentum: 0.0,
                decay: 1.0,
            },
            loss: Loss::MseEps,
            epochs: 200,
            patience: 500,
            batch: 1,
            seed: 0,
        };
        let err = train(&net, &[scalar_example(3.0, -1.0)], &cfg).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn adam_decay_schedule() {
        let opt = Optimizer::Adam { lr: 1e-4, decay: 0.999 };
        for k in [0usize, 1, 10, 500] {
            assert!((opt.lr_at(k) - 1e-4 * 0.999f64.powi(k as i32)).abs() < 1e-12);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let mut r = rng::seeded(1);
        let net = TinyNet::init(&[1, 2, 1], &mut r).unwrap();
        let data: Vec<Example> = (0..6)
            .map(|_| {
                let x: Vec<f64> = (0..27).map(|_| rng::standard_normal(&mut r)).collect();
                let t = x.iter().map(|v| 0.5 * v).collect();
                Example {
                    input: Tensor::from_vec(1, [3, 3, 3], x).unwrap(),
                    target: Tensor::from_vec(1, [3, 3, 3], t).unwrap(),
                }
            })
            .collect();
        let cfg = TrainConfig {
            optimizer: Optimizer::Adam { lr: 1e-2, decay: 0.99 },
            loss: Loss::MseEps,
            epochs: 5,
            patience: 5,
            batch: 2,
            seed: 8,
        };
        let a = train(&net, &data, &cfg).unwrap();
        let b = train(&net, &data, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.best_val_loss < a.initial_val_loss);
    }
}
