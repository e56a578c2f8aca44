//! Nonparametric comparison of metric groups and operator variability.

mod hypothesis;
mod ranks;
mod report;
mod variability;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use hypothesis::{
    kruskal_wallis, mann_whitney_u, mann_whitney_u_with, wilcoxon_signed_rank, wilcoxon_signed_rank_with,
    KruskalWallis, MannWhitney, PMethod, PValue, Wilcoxon, MANN_WHITNEY_EXACT_MAX, WILCOXON_EXACT_MAX,
};
pub use ranks::{midranks, tie_term};
pub use report::{
    compare_groups, render_comparison, render_variability, GroupComparison, GroupSummary, PairedTest, PairwiseResult,
    REPORT_ALPHA,
};
pub use variability::{variability_table, Annotator, Role, VariabilityReport};

/// One group of metric values, e.g. per-case DICE of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub label: String,
    pub values: Vec<f64>,
}

impl Sample {
    pub fn new(label: impl Into<String>, values: Vec<f64>) -> Self {
        Sample {
            label: label.into(),
            values,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::InvalidArgument(format!("group {:?} is empty", self.label)));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "group {:?} has non-finite values",
                self.label
            )));
        }
        Ok(())
    }
}

/// Mean and sample standard deviation (`n - 1`); the std of a single value
/// is 0 and an empty slice gives `(NaN, NaN)`.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_values() {
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }
}
