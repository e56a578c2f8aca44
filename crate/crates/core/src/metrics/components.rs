use std::collections::VecDeque;

use crate::volume::{Field, Grid, Mask};

/// 6-connected component labelling.
///
/// Labels run from 1 in order of decreasing size; equal sizes are ordered by
/// the smallest linear voxel index in the component. Label 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct Components {
    grid: Grid,
    labels: Vec<u32>,
    sizes: Vec<usize>,
}

impl Components {
    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    /// Voxel count of each component, indexed by `label - 1`.
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn mask_of(&self, label: u32) -> Mask {
        let data = self.labels.iter().map(|&l| (l == label) as u8).collect();
        Field::from_raw(self.grid, data)
    }

    /// Union of the components for which `keep(label, size)` holds.
    pub fn select(&self, mut keep: impl FnMut(u32, usize) -> bool) -> Mask {
        let kept: Vec<bool> = std::iter::once(false)
            .chain(self.sizes.iter().enumerate().map(|(i, &s)| keep(i as u32 + 1, s)))
            .collect();
        let data = self.labels.iter().map(|&l| kept[l as usize] as u8).collect();
        Field::from_raw(self.grid, data)
    }
}

pub fn connected_components(m: &Mask) -> Components {
    let g = *m.grid();
    let mut provisional = vec![0u32; g.len()];
    // (size, first index) per provisional label, discovered in scan order
    let mut found: Vec<(usize, usize)> = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..g.len() {
        if !m.is_set_index(start) || provisional[start] != 0 {
            continue;
        }
        let label = found.len() as u32 + 1;
        provisional[start] = label;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            for q in g.neighbors6(g.coords(i)) {
                let j = g.index(q);
                if m.is_set_index(j) && provisional[j] == 0 {
                    provisional[j] = label;
                    queue.push_back(j);
                }
            }
        }
        found.push((size, start));
    }

    let mut order: Vec<usize> = (0..found.len()).collect();
    // scan order already gives ascending first index, so a stable sort on
    // size alone implements the tie-break
    order.sort_by(|&a, &b| found[b].0.cmp(&found[a].0));
    let mut relabel = vec![0u32; found.len() + 1];
    for (new, &old) in order.iter().enumerate() {
        relabel[old + 1] = new as u32 + 1;
    }
    let labels = provisional.iter().map(|&l| relabel[l as usize]).collect();
    let sizes = order.iter().map(|&o| found[o].0).collect();
    Components { grid: g, labels, sizes }
}

/// The largest 6-connected component (ties: smallest first voxel index);
/// blank input gives a blank mask.
pub fn largest_component(m: &Mask) -> Mask {
    let c = connected_components(m);
    if c.is_empty() {
        return Mask::zeros(*m.grid());
    }
    c.mask_of(1)
}

/// Drops components whose physical volume is `<= min_mm3`.
pub fn remove_small_components(m: &Mask, min_mm3: f64) -> Mask {
    let voxel = m.grid().voxel_volume();
    connected_components(m).select(|_, size| size as f64 * voxel > min_mm3)
}
