//! Segmentation metrics and mask post-processing.

mod components;
mod distance;
mod morphology;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::volume::Mask;

pub use components::{connected_components, largest_component, remove_small_components, Components};
pub use distance::{
    assd, directed_surface_distances, hausdorff, nearest_rank_percentile, squared_mm, surface_voxels, SurfaceDistances,
};
pub use morphology::{close, dilate, dilate_n, erode, shell};

/// Minimum lesion volume kept by post-processing, in mm³.
pub const DEFAULT_MIN_LESION_MM3: f64 = 16.0;

/// `2|A∩B| / (|A|+|B|)`, 1.0 when both are empty.
pub fn dice(a: &Mask, b: &Mask) -> Result<f64> {
    a.require_same_grid(b, "dice")?;
    let mut inter = 0usize;
    let mut total = 0usize;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += (x & y) as usize;
        total += x as usize + y as usize;
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Morphological closing followed by removal of components `<= min_mm3`.
pub fn postprocess(prediction: &Mask, min_mm3: f64) -> Mask {
    remove_small_components(&close(prediction), min_mm3)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dice: f64,
    pub hd_mm: f64,
    pub hd95_mm: f64,
    pub assd_mm: f64,
    /// Set when either mask was empty and the distance metrics carry the
    /// penalty value instead of a measurement.
    pub empty: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvaluateOptions {
    /// Post-process the prediction with this minimum component volume.
    pub postprocess_min_mm3: Option<f64>,
}

impl Default for EvaluateOptions {
    fn default() -> Self {
        EvaluateOptions {
            postprocess_min_mm3: None,
        }
    }
}

/// All four metrics for one (prediction, reference) pair.
///
/// When exactly one mask is empty, DICE is 0 and the distances are the
/// grid's physical diagonal. When both are empty, DICE is 1 and the
/// distances are 0. Both cases set `empty`.
pub fn evaluate(prediction: &Mask, reference: &Mask, opts: &EvaluateOptions) -> Result<MetricsReport> {
    prediction.require_same_grid(reference, "evaluate")?;
    let processed;
    let pred = match opts.postprocess_min_mm3 {
        Some(min) => {
            processed = postprocess(prediction, min);
            &processed
        }
        None => prediction,
    };
    let d = dice(pred, reference)?;
    match (pred.is_blank(), reference.is_blank()) {
        (false, false) => {
            let sd = SurfaceDistances::compute(pred, reference)?;
            Ok(MetricsReport {
                dice: d,
                hd_mm: sd.hausdorff(),
                hd95_mm: sd.hausdorff95(),
                assd_mm: sd.assd(),
                empty: false,
            })
        }
        (true, true) => Ok(MetricsReport {
            dice: d,
            hd_mm: 0.0,
            hd95_mm: 0.0,
            assd_mm: 0.0,
            empty: true,
        }),
        _ => {
            let penalty = reference.grid().diagonal_mm();
            Ok(MetricsReport {
                dice: d,
                hd_mm: penalty,
                hd95_mm: penalty,
                assd_mm: penalty,
                empty: true,
            })
        }
    }
}

/// Mean and sample standard deviation of each metric over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub n: usize,
    pub dice: (f64, f64),
    pub hd_mm: (f64, f64),
    pub hd95_mm: (f64, f64),
    pub assd_mm: (f64, f64),
}

pub fn summarize(reports: &[MetricsReport]) -> MetricsSummary {
    let stat = |f: fn(&MetricsReport) -> f64| crate::stats::mean_std(&reports.iter().map(f).collect::<Vec<_>>());
    MetricsSummary {
        n: reports.len(),
        dice: stat(|r| r.dice),
        hd_mm: stat(|r| r.hd_mm),
        hd95_mm: stat(|r| r.hd95_mm),
        assd_mm: stat(|r| r.assd_mm),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;

    fn grid() -> Grid {
        Grid::isotropic([6, 6, 6], 1.0).unwrap()
    }

    #[test]
    fn dice_basics() {
        let g = grid();
        let a = Mask::from_voxels(g, &[[0, 0, 0], [1, 0, 0]]).unwrap();
        let b = Mask::from_voxels(g, &[[1, 0, 0], [2, 0, 0]]).unwrap();
        assert_eq!(dice(&a, &b).unwrap(), 0.5);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let c = Mask::from_voxels(g, &[[5, 5, 5]]).unwrap();
        assert_eq!(dice(&a, &c).unwrap(), 0.0);
        assert_eq!(dice(&Mask::zeros(g), &Mask::zeros(g)).unwrap(), 1.0);
        let other = Mask::zeros(Grid::isotropic([6, 6, 5], 1.0).unwrap());
        assert!(dice(&a, &other).is_err());
    }

    #[test]
    fn evaluate_identical() {
        let g = grid();
        let a = Mask::from_predicate(g, |p| p.iter().all(|&c| (1..4).contains(&c)));
        let r = evaluate(&a, &a, &EvaluateOptions::default()).unwrap();
        assert_eq!(
            r,
            MetricsReport {
                dice: 1.0,
                hd_mm: 0.0,
                hd95_mm: 0.0,
                assd_mm: 0.0,
                empty: false
            }
        );
    }

    #[test]
    fn evaluate_empty_prediction_policy() {
        let g = grid();
        let reference = Mask::from_voxels(g, &[[2, 2, 2]]).unwrap();
        let r = evaluate(&Mask::zeros(g), &reference, &EvaluateOptions::default()).unwrap();
        assert!(r.empty);
        assert_eq!(r.dice, 0.0);
        let diag = (3.0f64 * 36.0).sqrt();
        assert_eq!(r.hd_mm, diag);
        assert_eq!(r.hd95_mm, diag);
        assert_eq!(r.assd_mm, diag);
    }

    #[test]
    fn postprocess_cases() {
        let g = Grid::isotropic([10, 10, 10], 0.85).unwrap();
        assert!(postprocess(&Mask::zeros(g), 16.0).is_blank());
        let mut blob = Mask::from_predicate(g, |p| p.iter().all(|&c| (2..7).contains(&c)));
        let solid = blob.clone();
        blob.set([4, 4, 4], 0);
        assert_eq!(postprocess(&blob, 16.0), solid);
        let small = Mask::from_predicate(g, |p| p[0] < 5 && p[1] < 4 && p[2] == 0);
        assert!(postprocess(&small, 16.0).is_blank());
    }

    #[test]
    fn postprocess_in_evaluate() {
        let g = Grid::isotropic([10, 10, 10], 0.85).unwrap();
        let reference = Mask::from_predicate(g, |p| p.iter().all(|&c| (2..7).contains(&c)));
        let mut pred = reference.clone();
        pred.set([9, 9, 9], 1);
        let raw = evaluate(&pred, &reference, &EvaluateOptions::default()).unwrap();
        assert!(raw.hd_mm > 0.0);
        let opts = EvaluateOptions {
            postprocess_min_mm3: Some(16.0),
        };
        let cleaned = evaluate(&pred, &reference, &opts).unwrap();
        assert_eq!(cleaned.hd_mm, 0.0);
        assert_eq!(cleaned.dice, 1.0);
    }
}
