//! Rank-based hypothesis tests.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use super::ranks::{midranks, tie_term};
use super::Sample;
use crate::error::{Error, Result};

/// Largest pooled size for which Mann-Whitney p-values are enumerated.
pub const MANN_WHITNEY_EXACT_MAX: usize = 12;
/// Largest number of nonzero differences for which Wilcoxon p-values are
/// enumerated.
pub const WILCOXON_EXACT_MAX: usize = 12;

// U and W are multiples of 0.5; anything closer than this is equal
const STAT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PMethod {
    Exact,
    Normal,
}

/// How to obtain a p-value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PValue {
    /// Exact below the size threshold, normal approximation above.
    Auto,
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KruskalWallis {
    pub h: f64,
    pub p: f64,
    pub df: usize,
}

/// Kruskal-Wallis H with mid-ranks and tie correction; p from the
/// chi-squared approximation with `k - 1` degrees of freedom.
pub fn kruskal_wallis(groups: &[Sample]) -> Result<KruskalWallis> {
    if groups.len() < 2 {
        return Err(Error::InvalidArgument("kruskal-wallis needs >= 2 groups".into()));
    }
    for g in groups {
        g.validate()?;
    }
    let pooled: Vec<f64> = groups.iter().flat_map(|g| g.values.iter().copied()).collect();
    let n = pooled.len() as f64;
    let (ranks, ties) = midranks(&pooled);
    let mut offset = 0;
    let mut sum = 0.0;
    for g in groups {
        let r: f64 = ranks[offset..offset + g.values.len()].iter().sum();
        sum += r * r / g.values.len() as f64;
        offset += g.values.len();
    }
    let df = groups.len() - 1;
    let correction = 1.0 - tie_term(&ties) / (n * n * n - n);
    if correction <= 0.0 {
        // every value identical
        return Ok(KruskalWallis { h: 0.0, p: 1.0, df });
    }
    let h = (12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0)) / correction;
    let h = h.max(0.0);
    let chi = ChiSquared::new(df as f64).expect("df >= 1");
    Ok(KruskalWallis {
        h,
        p: chi.sf(h).clamp(0.0, 1.0),
        df,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// `U` of the first sample: pairs with `a > b`, ties counting one half.
    pub u: f64,
    pub p: f64,
    pub method: PMethod,
}

fn two_sided_normal(deviation: f64, sd: f64) -> f64 {
    if !(sd > 0.0) {
        return 1.0;
    }
    let z = (deviation.abs() - 0.5).max(0.0) / sd;
    let normal = Normal::standard();
    (2.0 * normal.sf(z)).min(1.0)
}

pub fn mann_whitney_u(a: &Sample, b: &Sample) -> Result<MannWhitney> {
    mann_whitney_u_with(a, b, PValue::Auto)
}

/// Two-sided Mann-Whitney U test.
///
/// The exact p-value enumerates every assignment of the pooled mid-ranks to
/// the first group, so it remains exact under ties. The normal
/// approximation uses the tie-corrected variance and a 0.5 continuity
/// correction.
pub fn mann_whitney_u_with(a: &Sample, b: &Sample, how: PValue) -> Result<MannWhitney> {
    a.validate()?;
    b.validate()?;
    let na = a.values.len();
    let nb = b.values.len();
    let pooled: Vec<f64> = a.values.iter().chain(&b.values).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let base = (na * (na + 1)) as f64 / 2.0;
    let u = ranks[..na].iter().sum::<f64>() - base;
    let mean = (na * nb) as f64 / 2.0;
    let n = (na + nb) as f64;

    let method = match how {
        PValue::Auto if na + nb <= MANN_WHITNEY_EXACT_MAX => PMethod::Exact,
        PValue::Auto | PValue::Normal => PMethod::Normal,
        PValue::Exact => PMethod::Exact,
    };
    let p = match method {
        PMethod::Exact => {
            let observed = (u - mean).abs();
            let mut extreme = 0u64;
            let mut total = 0u64;
            let mut chosen = Vec::with_capacity(na);
            for_each_combination(na + nb, na, &mut chosen, &mut |idx| {
                let r: f64 = idx.iter().map(|&i| ranks[i]).sum();
                total += 1;
                if ((r - base) - mean).abs() >= observed - STAT_EPS {
                    extreme += 1;
                }
            });
            extreme as f64 / total as f64
        }
        PMethod::Normal => {
            let var = (na * nb) as f64 / 12.0 * ((n + 1.0) - tie_term(&ties) / (n * (n - 1.0)));
            two_sided_normal(u - mean, var.max(0.0).sqrt())
        }
    };
    Ok(MannWhitney { u, p, method })
}

/// Calls `f` with every k-subset of `0..n` in lexicographic order.
fn for_each_combination(n: usize, k: usize, chosen: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
    fn rec(start: usize, n: usize, k: usize, chosen: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if chosen.len() == k {
            f(chosen);
            return;
        }
        let need = k - chosen.len();
        for i in start..=(n - need) {
            chosen.push(i);
            rec(i + 1, n, k, chosen, f);
            chosen.pop();
        }
    }
    chosen.clear();
    rec(0, n, k, chosen, f);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wilcoxon {
    /// `min(W+, W-)`.
    pub w: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Number of nonzero differences.
    pub n: usize,
    pub p: f64,
    pub method: PMethod,
}

pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<Wilcoxon> {
    wilcoxon_signed_rank_with(a, b, PValue::Auto)
}

/// Two-sided Wilcoxon signed-rank test on the differences `b - a`.
///
/// Zero differences are dropped; tied magnitudes get mid-ranks. With no
/// nonzero difference the test is degenerate and returns `p = 1`.
pub fn wilcoxon_signed_rank_with(a: &[f64], b: &[f64], how: PValue) -> Result<Wilcoxon> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "paired samples differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite value in paired sample".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).filter(|&d| d != 0.0).collect();
    let n = diffs.len();
    let method = match how {
        PValue::Auto if n <= WILCOXON_EXACT_MAX => PMethod::Exact,
        PValue::Auto | PValue::Normal => PMethod::Normal,
        PValue::Exact => PMethod::Exact,
    };
    if n == 0 {
        return Ok(Wilcoxon {
            w: 0.0,
            w_plus: 0.0,
            w_minus: 0.0,
            n: 0,
            p: 1.0,
            method,
        });
    }
    let magnitudes: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = midranks(&magnitudes);
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .fold(0.0, |acc, (_, r)| acc + r);
    let total: f64 = ranks.iter().sum();
    let w_minus = total - w_plus;
    let mean = total / 2.0;

    let p = match method {
        PMethod::Exact => {
            if n > 30 {
                return Err(Error::InvalidArgument(format!(
                    "exact signed-rank enumeration over 2^{n} signs refused"
                )));
            }
            let observed = (w_plus - mean).abs();
            let mut extreme = 0u64;
            for signs in 0u64..(1u64 << n) {
                let s: f64 = (0..n).filter(|&i| signs >> i & 1 == 1).map(|i| ranks[i]).sum();
                if (s - mean).abs() >= observed - STAT_EPS {
                    extreme += 1;
                }
            }
            extreme as f64 / (1u64 << n) as f64
        }
        PMethod::Normal => {
            let nf = n as f64;
            let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term(&ties) / 48.0;
            two_sided_normal(w_plus - mean, var.max(0.0).sqrt())
        }
    };
    Ok(Wilcoxon {
        w: w_plus.min(w_minus),
        w_plus,
        w_minus,
        n,
        p,
        method,
    })
}
