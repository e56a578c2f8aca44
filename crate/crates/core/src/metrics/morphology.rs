//! Binary morphology with the 6-connected cross as structuring element.

use crate::volume::{crop, paste, BoundingBox, Field, Mask, NEIGHBOR_OFFSETS};

/// One step of dilation; the result is clipped to the grid.
pub fn dilate(m: &Mask) -> Mask {
    let g = *m.grid();
    let mut out = m.data().to_vec();
    for i in 0..g.len() {
        if m.is_set_index(i) {
            continue;
        }
        let p = g.coords(i);
        if g.neighbors6(p).any(|q| m.is_set(q)) {
            out[i] = 1;
        }
    }
    Field::from_raw(g, out)
}

/// One step of erosion; voxels outside the grid count as background.
pub fn erode(m: &Mask) -> Mask {
    let g = *m.grid();
    let mut out = m.data().to_vec();
    for i in 0..g.len() {
        if !m.is_set_index(i) {
            continue;
        }
        let p = g.coords(i);
        let keep = NEIGHBOR_OFFSETS.iter().all(|d| {
            let q = [p[0] as i64 + d[0], p[1] as i64 + d[1], p[2] as i64 + d[2]];
            g.checked_index(q).is_some_and(|j| m.is_set_index(j))
        });
        if !keep {
            out[i] = 0;
        }
    }
    Field::from_raw(g, out)
}

/// Dilation followed by erosion, evaluated on a grid padded by one voxel so
/// the border does not clip the dilation. Never removes an input voxel.
pub fn close(m: &Mask) -> Mask {
    let g = *m.grid();
    let padded_grid = g
        .with_dims([g.dims[0] + 2, g.dims[1] + 2, g.dims[2] + 2])
        .expect("padding keeps dims valid");
    let padded = paste(&Mask::zeros(padded_grid), m, [1, 1, 1]).expect("fits by construction");
    let closed = erode(&dilate(&padded));
    let inner = BoundingBox {
        lo: [1, 1, 1],
        hi: g.dims,
    };
    crop(&closed, &inner).expect("fits by construction")
}

/// Boundary band: one-step dilation minus one-step erosion.
pub fn shell(m: &Mask) -> Mask {
    dilate(m).difference(&erode(m)).expect("same grid by construction")
}

/// `steps` successive dilations.
pub fn dilate_n(m: &Mask, steps: usize) -> Mask {
    let mut out = m.clone();
    for _ in 0..steps {
        out = dilate(&out);
    }
    out
}
