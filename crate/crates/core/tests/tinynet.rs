mod common;

use metsynth::diffusion::{forward_diffuse, linear_schedule};
use metsynth::experiment::{denoiser_examples, healthy_cohort, train_denoiser, CohortConfig, DenoiserConfig};
use metsynth::rng;
use metsynth::tinynet::{mean_loss, train, Example, Loss, Optimizer, Tensor, TinyNet, TrainConfig, DENOISER_PLAN};
use metsynth::volume::{Grid, Volume};

#[test]
fn analytic_gradients_match_central_differences() {
    for seed in 0..20 {
        let c = common::gradient_check(seed, 1e-5, 1e-4, 1e-6);
        assert_eq!(c.failures, 0, "seed {seed}: {c:?}");
    }
}

fn noise_examples(count: usize, seed: u64) -> Vec<Example> {
    let s = linear_schedule(200, 1e-4, 2e-3).unwrap();
    let g = Grid::isotropic([6, 6, 6], 1.0).unwrap();
    let mut r = rng::seeded(seed);
    (0..count)
        .map(|_| {
            let x0 = Volume::from_fn(g, |p| (p[0] as f32 - 2.5) * 0.3).unwrap();
            let t = 1 + rng::index(&mut r, 200);
            let n = forward_diffuse(&x0, t, &s, &mut r).unwrap();
            Example {
                input: metsynth::tinynet::denoiser_input(&n.data, t, 200),
                target: Tensor::from_volumes(&[&n.eps]).unwrap(),
            }
        })
        .collect()
}

#[test]
fn training_is_bit_identical_across_runs_and_thread_counts() {
    let data = noise_examples(12, 3);
    let net = TinyNet::init(&[2, 3, 1], &mut rng::seeded(1)).unwrap();
    let cfg = TrainConfig {
        optimizer: Optimizer::Adam { lr: 1e-2, decay: 0.9 },
        loss: Loss::MseEps,
        epochs: 4,
        patience: 4,
        batch: 3,
        seed: 8,
    };
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| train(&net, &data, &cfg).unwrap());
    let b = four.install(|| train(&net, &data, &cfg).unwrap());
    let c = train(&net, &data, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
    for rec in &a.history {
        let want = 1e-2 * 0.9f64.powi(rec.epoch as i32);
        assert!((rec.lr - want).abs() < 1e-12);
    }
}

/// A denoiser trained on 200 noised 16³ phantom patches roughly halves the
/// zero predictor's error, which is the variance of the noise.
#[test]
fn denoiser_halves_the_zero_predictor_error() {
    let cohort = CohortConfig::default();
    let hosts = healthy_cohort(&cohort, "h", 6, 70).unwrap();
    let sources: Vec<_> = hosts.iter().map(|h| (&h.image, &h.mask)).collect();
    let cfg = DenoiserConfig {
        epochs: 25,
        seed: 5,
        ..DenoiserConfig::default()
    };
    let (_, outcome) = train_denoiser(&sources, &cfg).unwrap();
    let test_hosts = healthy_cohort(&cohort, "t", 3, 71).unwrap();
    let test_sources: Vec<_> = test_hosts.iter().map(|h| (&h.image, &h.mask)).collect();
    let test = denoiser_examples(&test_sources, 60, 16, &cfg.schedule, 99).unwrap();
    let refs: Vec<&Example> = test.iter().collect();
    let trained = mean_loss(&outcome.net, &refs, Loss::MseEps).unwrap();
    let zero = mean_loss(&TinyNet::zeros(&DENOISER_PLAN).unwrap(), &refs, Loss::MseEps).unwrap();
    assert!((zero - 1.0).abs() < 0.05, "zero predictor {zero}");
    assert!(trained <= 0.5 * zero, "trained {trained} vs zero {zero}");
}
