use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::hypothesis::{kruskal_wallis, mann_whitney_u, wilcoxon_signed_rank, KruskalWallis, PMethod};
use super::variability::VariabilityReport;
use super::{mean_std, Sample};
use crate::error::{Error, Result};

/// Significance level used only to annotate reports.
pub const REPORT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairedTest {
    /// Wilcoxon signed-rank on per-case values (same cases in every group).
    Wilcoxon,
    /// Mann-Whitney U, treating groups as independent.
    MannWhitney,
}

impl PairedTest {
    pub fn name(self) -> &'static str {
        match self {
            PairedTest::Wilcoxon => "wilcoxon_signed_rank",
            PairedTest::MannWhitney => "mann_whitney_u",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub label: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseResult {
    pub a: String,
    pub b: String,
    pub test: PairedTest,
    pub statistic: f64,
    pub p: f64,
    pub method: PMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub metric: String,
    pub groups: Vec<GroupSummary>,
    pub kruskal: KruskalWallis,
    pub pairwise: Vec<PairwiseResult>,
}

/// Kruskal-Wallis across all groups, then every pair with `test`.
pub fn compare_groups(metric: &str, groups: &[Sample], test: PairedTest) -> Result<GroupComparison> {
    let kruskal = kruskal_wallis(groups)?;
    let mut pairwise = Vec::new();
    for (i, a) in groups.iter().enumerate() {
        for b in &groups[i + 1..] {
            let (statistic, p, method) = match test {
                PairedTest::Wilcoxon => {
                    if a.values.len() != b.values.len() {
                        return Err(Error::InvalidArgument(format!(
                            "paired comparison of {:?} ({}) and {:?} ({}) needs equal case counts",
                            a.label,
                            a.values.len(),
                            b.label,
                            b.values.len()
                        )));
                    }
                    let w = wilcoxon_signed_rank(&a.values, &b.values)?;
                    (w.w, w.p, w.method)
                }
                PairedTest::MannWhitney => {
                    let u = mann_whitney_u(a, b)?;
                    (u.u, u.p, u.method)
                }
            };
            pairwise.push(PairwiseResult {
                a: a.label.clone(),
                b: b.label.clone(),
                test,
                statistic,
                p,
                method,
            });
        }
    }
    let groups = groups
        .iter()
        .map(|g| {
            let (mean, std) = mean_std(&g.values);
            GroupSummary {
                label: g.label.clone(),
                n: g.values.len(),
                mean,
                std,
            }
        })
        .collect();
    Ok(GroupComparison {
        metric: metric.to_string(),
        groups,
        kruskal,
        pairwise,
    })
}

fn star(p: f64) -> &'static str {
    if p < REPORT_ALPHA {
        " (P<0.05)"
    } else {
        ""
    }
}

/// Plain-text table: one `mean ± std` row per group, tests in a footer.
pub fn render_comparison(c: &GroupComparison) -> String {
    let width = c.groups.iter().map(|g| g.label.len()).max().unwrap_or(5).max(5);
    let mut out = String::new();
    let head = format!("{} (mean ± std)", c.metric);
    let cells: Vec<String> = c
        .groups
        .iter()
        .map(|g| format!("{:.4} ± {:.4}", g.mean, g.std))
        .collect();
    let cell = cells
        .iter()
        .chain([&head])
        .map(|s| s.chars().count())
        .max()
        .unwrap_or(0);
    let _ = writeln!(out, "{:<width$} | {head:<cell$} | n", "group");
    let _ = writeln!(out, "{}", "-".repeat(width + cell + 7));
    for (g, text) in c.groups.iter().zip(&cells) {
        let _ = writeln!(out, "{:<width$} | {text:<cell$} | {}", g.label, g.n);
    }
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "Kruskal-Wallis: H = {:.4}, df = {}, p = {:.4e}{}",
        c.kruskal.h,
        c.kruskal.df,
        c.kruskal.p,
        star(c.kruskal.p)
    );
    for t in &c.pairwise {
        let _ = writeln!(
            out,
            "{} vs {}: {} = {:.4}, p = {:.4e} ({:?}){}",
            t.a,
            t.b,
            t.test.name(),
            t.statistic,
            t.p,
            t.method,
            star(t.p)
        );
    }
    out
}

/// Operator-variability table, one column per pairing.
pub fn render_variability(rows: &[VariabilityReport]) -> String {
    let mut out = String::new();
    let mut header = String::from("           ");
    let mut line = String::from("Mean DICE  ");
    for r in rows {
        let cell = format!("{:.2} ± {:.2}", r.mean_dice, r.std_dice);
        let w = r.pairing.len().max(cell.len()) + 2;
        let _ = write!(header, "| {:<w$}", r.pairing);
        let _ = write!(line, "| {:<w$}", cell);
    }
    let _ = writeln!(out, "{header}");
    let _ = writeln!(out, "{line}");
    out
}
