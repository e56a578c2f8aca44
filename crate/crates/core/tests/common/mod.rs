//! Brute-force reference implementations shared by the integration tests.
//! Nothing here calls into the code paths it is used to check.
#![allow(dead_code)]

use metsynth::diffusion::DiffusionSchedule;
use metsynth::rng::{self, SeededRng};
use metsynth::stats::{Annotator, Role};
use metsynth::synthesis::{Subject, SyntheticSample};
use metsynth::volume::{Field, Grid, Mask, Volume};

/// Foreground voxels with a background or out-of-grid face neighbour,
/// by direct scan.
pub fn surface(m: &Mask) -> Vec<[i64; 3]> {
    let [nx, ny, nz] = m.dims();
    let (nx, ny, nz) = (nx as i64, ny as i64, nz as i64);
    let on = |x: i64, y: i64, z: i64| {
        x >= 0 && y >= 0 && z >= 0 && x < nx && y < ny && z < nz && m.get([x as usize, y as usize, z as usize]) == 1
    };
    let mut out = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if !on(x, y, z) {
                    continue;
                }
                let inner = on(x - 1, y, z)
                    && on(x + 1, y, z)
                    && on(x, y - 1, z)
                    && on(x, y + 1, z)
                    && on(x, y, z - 1)
                    && on(x, y, z + 1);
                if !inner {
                    out.push([x, y, z]);
                }
            }
        }
    }
    out
}

/// All-pairs nearest distances from each point of `a` to the set `b`.
pub fn directed(a: &[[i64; 3]], b: &[[i64; 3]], s: [f64; 3]) -> Vec<f64> {
    a.iter()
        .map(|p| {
            b.iter()
                .map(|q| {
                    let dx = (p[0] - q[0]) as f64 * s[0];
                    let dy = (p[1] - q[1]) as f64 * s[1];
                    let dz = (p[2] - q[2]) as f64 * s[2];
                    (dx * dx + dy * dy + dz * dz).sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// 95th percentile by nearest rank, on a sorted copy.
pub fn p95(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    let mut rank = 0;
    while rank * 100 < 95 * n {
        rank += 1;
    }
    s[rank - 1]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleMetrics {
    pub dice: f64,
    pub hd: f64,
    pub hd95: f64,
    pub assd: f64,
}

/// Metrics of two nonempty masks by exhaustive evaluation.
pub fn metrics(a: &Mask, b: &Mask) -> OracleMetrics {
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (x, y) in a.data().iter().zip(b.data()) {
        if *x == 1 && *y == 1 {
            inter += 1;
        }
        na += *x as usize;
        nb += *y as usize;
    }
    let s = a.spacing();
    let sa = surface(a);
    let sb = surface(b);
    let ab = directed(&sa, &sb, s);
    let ba = directed(&sb, &sa, s);
    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    let sum = |v: &[f64]| v.iter().sum::<f64>();
    OracleMetrics {
        dice: 2.0 * inter as f64 / (na + nb) as f64,
        hd: max(&ab).max(max(&ba)),
        hd95: p95(&ab).max(p95(&ba)),
        assd: (sum(&ab) + sum(&ba)) / (ab.len() + ba.len()) as f64,
    }
}

/// Component partition by depth-first flood fill. Returns one label per
/// voxel (0 background), labels numbered in order of first voxel.
pub fn flood_fill(m: &Mask) -> (Vec<usize>, Vec<usize>) {
    let [nx, ny, nz] = m.dims();
    let n = nx * ny * nz;
    let mut label = vec![0usize; n];
    let mut sizes = Vec::new();
    for start in 0..n {
        if m.data()[start] == 0 || label[start] != 0 {
            continue;
        }
        let id = sizes.len() + 1;
        let mut stack = vec![start];
        label[start] = id;
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            let (x, y, z) = (i % nx, (i / nx) % ny, i / (nx * ny));
            let mut visit = |j: usize| {
                if m.data()[j] == 1 && label[j] == 0 {
                    label[j] = id;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < nx {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - nx);
            }
            if y + 1 < ny {
                visit(i + nx);
            }
            if z > 0 {
                visit(i - nx * ny);
            }
            if z + 1 < nz {
                visit(i + nx * ny);
            }
        }
        sizes.push(size);
    }
    (label, sizes)
}

/// Random mask: a few random balls plus sparse salt noise, never empty.
pub fn random_mask(rng: &mut SeededRng, grid: Grid) -> Mask {
    let d = grid.dims;
    let mut m = Mask::zeros(grid);
    let balls = 1 + rng::index(rng, 3);
    for _ in 0..balls {
        let c: Vec<f64> = (0..3).map(|k| rng::uniform(rng, 0.0, d[k] as f64)).collect();
        let r = rng::uniform(rng, 0.5, 4.0);
        for z in 0..d[2] {
            for y in 0..d[1] {
                for x in 0..d[0] {
                    let p = [x as f64, y as f64, z as f64];
                    let dist2: f64 = (0..3).map(|k| (p[k] - c[k]).powi(2)).sum();
                    if dist2 <= r * r {
                        m.set([x, y, z], 1);
                    }
                }
            }
        }
    }
    let salt = rng::uniform(rng, 0.0, 0.05);
    for i in 0..grid.len() {
        if rng::uniform(rng, 0.0, 1.0) < salt {
            m.set(grid.coords(i), 1);
        }
    }
    if m.is_blank() {
        m.set([d[0] / 2, d[1] / 2, d[2] / 2], 1);
    }
    m
}

/// Random grid with dims in `3..=12` and spacing from a small menu.
pub fn random_grid(rng: &mut SeededRng) -> Grid {
    let menu = [0.5, 0.85, 1.0, 1.25, 2.0];
    let dims = [
        3 + rng::index(rng, 10),
        3 + rng::index(rng, 10),
        3 + rng::index(rng, 10),
    ];
    let spacing = [
        menu[rng::index(rng, menu.len())],
        menu[rng::index(rng, menu.len())],
        menu[rng::index(rng, menu.len())],
    ];
    Grid::new(dims, spacing).unwrap()
}

/// Exhaustive two-sided Mann-Whitney p-value: every subset of the pooled
/// sample, encoded as a bitmask, is scored by direct pair counting.
pub fn mann_whitney_exact_p(a: &[f64], b: &[f64]) -> f64 {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let n = pooled.len();
    let na = a.len();
    let count_u = |first: &[f64], second: &[f64]| -> f64 {
        let mut u = 0.0;
        for x in first {
            for y in second {
                if x > y {
                    u += 1.0;
                } else if x == y {
                    u += 0.5;
                }
            }
        }
        u
    };
    let mean = (na * (n - na)) as f64 / 2.0;
    let observed = (count_u(a, b) - mean).abs();
    let mut extreme = 0usize;
    let mut total = 0usize;
    for bits in 0u32..(1 << n) {
        if bits.count_ones() as usize != na {
            continue;
        }
        let first: Vec<f64> = (0..n).filter(|i| bits >> i & 1 == 1).map(|i| pooled[i]).collect();
        let second: Vec<f64> = (0..n).filter(|i| bits >> i & 1 == 0).map(|i| pooled[i]).collect();
        total += 1;
        if (count_u(&first, &second) - mean).abs() >= observed - 1e-9 {
            extreme += 1;
        }
    }
    extreme as f64 / total as f64
}

/// Exhaustive two-sided signed-rank p-value over all sign flips of the
/// nonzero differences `b - a`, ranking by direct counting.
pub fn wilcoxon_exact_p(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).filter(|v| *v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return 1.0;
    }
    // mid-rank of |d_i|: 1 + #smaller + (#equal - 1) / 2
    let rank: Vec<f64> = d
        .iter()
        .map(|x| {
            let smaller = d.iter().filter(|y| y.abs() < x.abs()).count() as f64;
            let equal = d.iter().filter(|y| y.abs() == x.abs()).count() as f64;
            1.0 + smaller + (equal - 1.0) / 2.0
        })
        .collect();
    let total: f64 = rank.iter().sum();
    let mean = total / 2.0;
    let w_obs: f64 = d.iter().zip(&rank).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let observed = (w_obs - mean).abs();
    let mut extreme = 0usize;
    for signs in 0u32..(1 << n) {
        let w: f64 = (0..n).filter(|i| signs >> i & 1 == 1).map(|i| rank[i]).sum();
        if (w - mean).abs() >= observed - 1e-9 {
            extreme += 1;
        }
    }
    extreme as f64 / (1u64 << n) as f64
}

/// Kruskal-Wallis H evaluated straight from the tie-corrected formula,
/// ranks by direct counting.
pub fn kruskal_h(groups: &[Vec<f64>]) -> f64 {
    let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
    let n = pooled.len() as f64;
    let rank = |x: f64| {
        let smaller = pooled.iter().filter(|&&y| y < x).count() as f64;
        let equal = pooled.iter().filter(|&&y| y == x).count() as f64;
        1.0 + smaller + (equal - 1.0) / 2.0
    };
    let mut s = 0.0;
    for g in groups {
        let r: f64 = g.iter().map(|&x| rank(x)).sum();
        s += r * r / g.len() as f64;
    }
    let h = 12.0 / (n * (n + 1.0)) * s - 3.0 * (n + 1.0);
    let mut seen: Vec<f64> = Vec::new();
    let mut ties = 0.0;
    for &x in &pooled {
        if seen.contains(&x) {
            continue;
        }
        seen.push(x);
        let t = pooled.iter().filter(|&&y| y == x).count() as f64;
        ties += t * t * t - t;
    }
    h / (1.0 - ties / (n * n * n - n))
}

/// Error-free product `a * b = hi + lo`.
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Error-free sum `a + b = hi + lo`.
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Product of `1 - beta_t` for the linear schedule, carried in
/// double-double arithmetic. The betas are formed as
/// `beta_1 + (beta_T - beta_1) * (t - 1) / (T - 1)`.
pub fn alpha_bar_compensated(steps: usize, beta_1: f64, beta_t: f64, upto: usize) -> f64 {
    let (mut hi, mut lo) = (1.0f64, 0.0f64);
    for t in 1..=upto {
        let beta = beta_1 + (beta_t - beta_1) * (t - 1) as f64 / (steps - 1) as f64;
        let (a_hi, a_lo) = two_sum(1.0, -beta);
        let (p, e) = two_prod(hi, a_hi);
        let e = e + hi * a_lo + lo * a_hi;
        let (s, f) = two_sum(p, e);
        hi = s;
        lo = f;
    }
    hi + lo
}

/// Largest absolute difference over the largest absolute reference value.
pub fn relative_max_error(got: &[f32], want: &[f32]) -> f64 {
    let scale = want.iter().fold(0.0f64, |m, &v| m.max((v as f64).abs()));
    let diff = got
        .iter()
        .zip(want)
        .fold(0.0f64, |m, (&a, &b)| m.max((a as f64 - b as f64).abs()));
    diff / scale
}

/// Two-sided normal bound for `count` checks whose family-wise false-alarm
/// rate equals that of one check at `z`.
pub fn family_bound(z: f64, count: usize) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    let n = Normal::standard();
    let alpha = 2.0 * (1.0 - n.cdf(z));
    n.inverse_cdf(1.0 - alpha / (2.0 * count as f64))
}

/// Per-voxel running sums of a Monte-Carlo experiment.
#[derive(Debug, Clone)]
pub struct Moments {
    pub trials: usize,
    pub sum: Vec<f64>,
    pub sum2: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct MomentCheck {
    pub pooled_mean_z: f64,
    pub pooled_var_z: f64,
    pub max_voxel_z: f64,
}

/// Runs `step` for `t = 1..=steps` from `x0` in each trial and accumulates
/// the per-voxel moments of the end state.
pub fn chain_moments(
    x0: &metsynth::volume::Volume,
    steps: usize,
    trials: usize,
    rng: &mut SeededRng,
    mut step: impl FnMut(&metsynth::volume::Volume, usize, &mut SeededRng) -> metsynth::volume::Volume,
) -> Moments {
    let mut sum = vec![0.0; x0.len()];
    let mut sum2 = vec![0.0; x0.len()];
    for _ in 0..trials {
        let mut x = x0.clone();
        for t in 1..=steps {
            x = step(&x, t, rng);
        }
        for (i, &v) in x.data().iter().enumerate() {
            sum[i] += v as f64;
            sum2[i] += v as f64 * v as f64;
        }
    }
    Moments { trials, sum, sum2 }
}

impl Moments {
    /// Standardized deviations from Gaussian moments `want_mean` per voxel
    /// and common variance `var`.
    pub fn check(&self, want_mean: &[f64], var: f64) -> MomentCheck {
        let n = self.trials as f64;
        let se_mean = (var / n).sqrt();
        let se_var = var * (2.0 / (n - 1.0)).sqrt();
        let voxels = self.sum.len() as f64;
        let (mut dm, mut dv, mut worst) = (0.0, 0.0, 0.0f64);
        for i in 0..self.sum.len() {
            let mean = self.sum[i] / n;
            let v = (self.sum2[i] - n * mean * mean) / (n - 1.0);
            let zm = (mean - want_mean[i]) / se_mean;
            let zv = (v - var) / se_var;
            dm += zm;
            dv += zv;
            worst = worst.max(zm.abs()).max(zv.abs());
        }
        MomentCheck {
            pooled_mean_z: dm / voxels.sqrt(),
            pooled_var_z: dv / voxels.sqrt(),
            max_voxel_z: worst,
        }
    }
}

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Debug, Clone)]
pub struct GradientCheck {
    pub plan: Vec<usize>,
    pub loss: metsynth::tinynet::Loss,
    pub params: usize,
    /// Largest relative error among entries above the absolute floor.
    pub worst_relative: f64,
    pub worst_absolute: f64,
    pub failures: usize,
}

/// A seeded net, input and target on a 4³ grid; every parameter's analytic
/// gradient is compared with a central difference of step `h`. A parameter
/// fails when the gap exceeds `rel` times the larger magnitude and also
/// exceeds `abs_floor`.
pub fn gradient_check(seed: u64, h: f64, rel: f64, abs_floor: f64) -> GradientCheck {
    use metsynth::tinynet::{loss_and_gradient, Example, Loss, Tensor, TinyNet};
    let mut r = rng::seeded(seed);
    let depth = 1 + rng::index(&mut r, 3);
    let mut plan = vec![1 + rng::index(&mut r, 2)];
    for _ in 1..depth {
        plan.push(1 + rng::index(&mut r, 3));
    }
    plan.push(1);
    let loss = if seed % 2 == 0 { Loss::MseEps } else { Loss::DiceLoss };
    let mut net = TinyNet::init(&plan, &mut r).unwrap();
    for p in net.params_mut() {
        *p += 0.05 * rng::standard_normal(&mut r);
    }
    let dims = [4, 4, 4];
    let n = 64;
    let input: Vec<f64> = (0..plan[0] * n).map(|_| rng::standard_normal(&mut r)).collect();
    let target: Vec<f64> = match loss {
        Loss::MseEps => (0..n).map(|_| rng::standard_normal(&mut r)).collect(),
        Loss::DiceLoss => (0..n)
            .map(|_| (rng::uniform(&mut r, 0.0, 1.0) < 0.4) as u8 as f64)
            .collect(),
    };
    let ex = Example {
        input: Tensor::from_vec(plan[0], dims, input).unwrap(),
        target: Tensor::from_vec(1, dims, target).unwrap(),
    };
    let (_, analytic) = loss_and_gradient(&net, &ex, loss).unwrap();
    let value = |net: &TinyNet| loss.eval(&net.forward(&ex.input).unwrap(), &ex.target).unwrap().0;
    let mut worst = 0.0f64;
    let mut worst_absolute = 0.0f64;
    let mut failures = 0;
    for i in 0..net.params().len() {
        let orig = net.params()[i];
        net.params_mut()[i] = orig + h;
        let up = value(&net);
        net.params_mut()[i] = orig - h;
        let down = value(&net);
        net.params_mut()[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let gap = (fd - analytic[i]).abs();
        let scale = fd.abs().max(analytic[i].abs());
        worst_absolute = worst_absolute.max(gap);
        if gap > abs_floor {
            worst = worst.max(gap / scale);
            if gap > rel * scale {
                failures += 1;
            }
        }
    }
    GradientCheck {
        plan,
        loss,
        params: net.params().len(),
        worst_relative: worst,
        worst_absolute,
        failures,
    }
}

/// Smooth deterministic test volume on an `n`³ grid.
pub fn smooth_volume(n: usize, seed: u64) -> Volume {
    let g = Grid::isotropic([n, n, n], 0.85).unwrap();
    let mut r = rng::seeded(seed);
    let phase: Vec<f64> = (0..3).map(|_| rng::uniform(&mut r, 0.0, 6.0)).collect();
    Volume::from_fn(g, |p| {
        let f = |k: usize| (p[k] as f64 * 0.4 + phase[k]).sin();
        (f(0) + f(1) * f(2) + 0.5 * f(2)) as f32
    })
    .unwrap()
}

/// Denoiser that knows the clean volume and returns the exact noise.
pub fn oracle_denoiser(
    x0: &Volume,
    s: &DiffusionSchedule,
) -> impl Fn(&Volume, usize) -> metsynth::Result<Volume> + Sync {
    let x0 = x0.clone();
    let s = s.clone();
    move |x_t: &Volume, t: usize| {
        let ab = s.alpha_bar(t);
        let data = x_t
            .data()
            .iter()
            .zip(x0.data())
            .map(|(&x, &c)| ((x as f64 - ab.sqrt() * c as f64) / (1.0 - ab).sqrt()) as f32)
            .collect();
        Field::from_vec(*x_t.grid(), data)
    }
}

/// Voxels within one face step of the mask, by direct neighbour scan.
pub fn near(m: &Mask, p: [usize; 3]) -> bool {
    let [nx, ny, nz] = m.dims();
    let q = [p[0] as i64, p[1] as i64, p[2] as i64];
    let offsets = [
        [0, 0, 0],
        [1, 0, 0],
        [-1, 0, 0],
        [0, 1, 0],
        [0, -1, 0],
        [0, 0, 1],
        [0, 0, -1],
    ];
    offsets.iter().any(|d| {
        let r = [q[0] + d[0], q[1] + d[1], q[2] + d[2]];
        r.iter().all(|&c| c >= 0)
            && (r[0] as usize) < nx
            && (r[1] as usize) < ny
            && (r[2] as usize) < nz
            && m.get([r[0] as usize, r[1] as usize, r[2] as usize]) == 1
    })
}

/// First violated synthesis invariant of a sample: label inside the host
/// femur, label above the size floor, host voxels unchanged away from the
/// label.
pub fn sample_violation(s: &SyntheticSample, hosts: &[Subject], min_mm3: f64) -> Option<String> {
    let host = hosts.iter().find(|h| h.id == s.provenance.host_id)?;
    if !s.label.is_subset_of(&host.mask) {
        return Some(format!("{}: label leaves the femur", s.name()));
    }
    if s.label.volume_mm3() <= min_mm3 {
        return Some(format!("{}: label of {} mm3", s.name(), s.label.volume_mm3()));
    }
    let g = *s.image.grid();
    (0..g.len()).find_map(|i| {
        let p = g.coords(i);
        (!near(&s.label, p) && s.image.data()[i].to_bits() != host.image.data()[i].to_bits())
            .then(|| format!("{} changed voxel {p:?}", s.name()))
    })
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn sample_std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Mask of the first `n_on` voxels of a 10-voxel row.
pub fn row(n_on: usize) -> Mask {
    let g = Grid::isotropic([10, 1, 1], 1.0).unwrap();
    Mask::from_predicate(g, |p| p[0] < n_on)
}

pub fn row_annotator(name: &str, role: Role, lengths: &[usize], repeat: Option<&[usize]>) -> Annotator {
    Annotator {
        name: name.into(),
        role,
        masks: lengths.iter().map(|&n| row(n)).collect(),
        repeat: repeat.map(|r| r.iter().map(|&n| row(n)).collect()),
    }
}
