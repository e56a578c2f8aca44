//! Surface-to-surface distances between binary masks.
//!
//! Distances are Euclidean, between voxel centres, scaled by the grid
//! spacing. Nearest-surface queries go through a kd-tree over integer voxel
//! coordinates; the squared distance of a candidate is always evaluated by
//! [`squared_mm`], so the results are bit-identical to an all-pairs scan.

use crate::error::{Error, Result};
use crate::volume::{Grid, Mask};

/// Foreground voxels with at least one 6-neighbour that is background or
/// outside the grid, in linear-index order.
pub fn surface_voxels(m: &Mask) -> Result<Vec<[usize; 3]>> {
    if m.is_blank() {
        return Err(Error::EmptyMask("surface of an empty mask".into()));
    }
    let g = m.grid();
    Ok(m.foreground_indices()
        .into_iter()
        .map(|i| g.coords(i))
        .filter(|&p| g.neighbors6(p).count() < 6 || g.neighbors6(p).any(|q| !m.is_set(q)))
        .collect())
}

/// Squared physical distance between two voxel centres.
#[inline]
pub fn squared_mm(a: [i64; 3], b: [i64; 3], spacing: [f64; 3]) -> f64 {
    let dx = (a[0] - b[0]) as f64 * spacing[0];
    let dy = (a[1] - b[1]) as f64 * spacing[1];
    let dz = (a[2] - b[2]) as f64 * spacing[2];
    dx * dx + dy * dy + dz * dz
}

fn to_i64(p: [usize; 3]) -> [i64; 3] {
    [p[0] as i64, p[1] as i64, p[2] as i64]
}

/// Static kd-tree for nearest-neighbour queries under a diagonal metric.
struct KdTree {
    // implicit balanced tree: node = median of points[lo..hi]
    points: Vec<[i64; 3]>,
    axes: Vec<u8>,
    spacing: [f64; 3],
}

impl KdTree {
    fn build(mut points: Vec<[i64; 3]>, spacing: [f64; 3]) -> Self {
        let mut axes = vec![0u8; points.len()];
        Self::build_rec(&mut points, &mut axes, 0);
        KdTree { points, axes, spacing }
    }

    fn build_rec(points: &mut [[i64; 3]], axes: &mut [u8], depth: usize) {
        if points.is_empty() {
            return;
        }
        // split on the axis of largest physical spread
        let mut best_axis = depth % 3;
        let mut best_spread = -1i64;
        for k in 0..3 {
            let (lo, hi) = points
                .iter()
                .fold((i64::MAX, i64::MIN), |(lo, hi), p| (lo.min(p[k]), hi.max(p[k])));
            if hi - lo > best_spread {
                best_spread = hi - lo;
                best_axis = k;
            }
        }
        let mid = points.len() / 2;
        points.select_nth_unstable_by_key(mid, |p| p[best_axis]);
        axes[mid] = best_axis as u8;
        let (left, rest) = points.split_at_mut(mid);
        let (left_axes, rest_axes) = axes.split_at_mut(mid);
        Self::build_rec(left, left_axes, depth + 1);
        Self::build_rec(&mut rest[1..], &mut rest_axes[1..], depth + 1);
    }

    /// Smallest squared distance from `q` to any point.
    fn nearest_sq(&self, q: [i64; 3]) -> f64 {
        let mut best = f64::INFINITY;
        self.search(0, self.points.len(), q, &mut best);
        best
    }

    fn search(&self, lo: usize, hi: usize, q: [i64; 3], best: &mut f64) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let p = self.points[mid];
        let d = squared_mm(q, p, self.spacing);
        if d < *best {
            *best = d;
        }
        let axis = self.axes[mid] as usize;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(near.0, near.1, q, best);
        let plane = diff as f64 * self.spacing[axis];
        // any point across the plane is at least this far along `axis`
        if plane * plane <= *best {
            self.search(far.0, far.1, q, best);
        }
    }
}

/// For each surface voxel of `from` (linear order), the distance in mm to the
/// nearest surface voxel of `to`.
pub fn directed_surface_distances(from: &Mask, to: &Mask) -> Result<Vec<f64>> {
    from.require_same_grid(to, "surface distance")?;
    let a = surface_voxels(from)?;
    let b = surface_voxels(to)?;
    Ok(directed(&a, &b, from.grid()))
}

fn directed(a: &[[usize; 3]], b: &[[usize; 3]], grid: &Grid) -> Vec<f64> {
    let tree = KdTree::build(b.iter().map(|&p| to_i64(p)).collect(), grid.spacing);
    a.iter().map(|&p| tree.nearest_sq(to_i64(p)).sqrt()).collect()
}

/// Nearest-rank percentile: the `ceil(q/100 * n)`-th smallest value.
pub fn nearest_rank_percentile(values: &[f64], q: u32) -> f64 {
    assert!(!values.is_empty() && (1..=100).contains(&q));
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = (q as usize * n).div_ceil(100);
    sorted[rank.max(1) - 1]
}

/// Both directed distance sets between two nonempty masks.
#[derive(Debug, Clone)]
pub struct SurfaceDistances {
    pub a_to_b: Vec<f64>,
    pub b_to_a: Vec<f64>,
}

impl SurfaceDistances {
    pub fn compute(a: &Mask, b: &Mask) -> Result<Self> {
        a.require_same_grid(b, "surface distance")?;
        let sa = surface_voxels(a)?;
        let sb = surface_voxels(b)?;
        Ok(SurfaceDistances {
            a_to_b: directed(&sa, &sb, a.grid()),
            b_to_a: directed(&sb, &sa, a.grid()),
        })
    }

    pub fn hausdorff(&self) -> f64 {
        let max = |v: &[f64]| v.iter().copied().fold(0.0f64, f64::max);
        max(&self.a_to_b).max(max(&self.b_to_a))
    }

    /// Max of the two directed nearest-rank 95th percentiles.
    pub fn hausdorff95(&self) -> f64 {
        nearest_rank_percentile(&self.a_to_b, 95).max(nearest_rank_percentile(&self.b_to_a, 95))
    }

    pub fn assd(&self) -> f64 {
        let total: f64 = self.a_to_b.iter().sum::<f64>() + self.b_to_a.iter().sum::<f64>();
        total / (self.a_to_b.len() + self.b_to_a.len()) as f64
    }
}

/// `(HD, HD95)` in mm.
pub fn hausdorff(a: &Mask, b: &Mask) -> Result<(f64, f64)> {
    let d = SurfaceDistances::compute(a, b)?;
    Ok((d.hausdorff(), d.hausdorff95()))
}

/// Average symmetric surface distance in mm.
pub fn assd(a: &Mask, b: &Mask) -> Result<f64> {
    Ok(SurfaceDistances::compute(a, b)?.assd())
}
