use serde::{Deserialize, Serialize};

/// Regular voxel grid. Dimensions of extent 1 are invariant directions: they
/// carry no boundary faces, so `nz = 1` is the 2D cross-section case and
/// `ny = nz = 1` degenerates to a 1D slab.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Uniform cell spacing, m.
    pub spacing: f64,
    /// Coordinates of the center of cell (0,0,0), m.
    pub origin: [f64; 3],
}

/// Face of a cell, identified by its outward axis direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Face {
    XNeg,
    XPos,
    YNeg,
    YPos,
    ZNeg,
    ZPos,
}

impl Face {
    pub const ALL: [Face; 6] = [
        Face::XNeg,
        Face::XPos,
        Face::YNeg,
        Face::YPos,
        Face::ZNeg,
        Face::ZPos,
    ];

    pub fn axis(self) -> usize {
        match self {
            Face::XNeg | Face::XPos => 0,
            Face::YNeg | Face::YPos => 1,
            Face::ZNeg | Face::ZPos => 2,
        }
    }

    pub fn step(self) -> isize {
        match self {
            Face::XNeg | Face::YNeg | Face::ZNeg => -1,
            Face::XPos | Face::YPos | Face::ZPos => 1,
        }
    }
}

impl Grid {
    pub fn new(nx: usize, ny: usize, nz: usize, spacing: f64, origin: [f64; 3]) -> Self {
        Self {
            nx,
            ny,
            nz,
            spacing,
            origin,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    /// True when the grid represents a planar (single z layer) problem.
    pub fn is_2d(&self) -> bool {
        self.nz == 1
    }

    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.ny + j) * self.nx + i
    }

    pub fn coords_of(&self, idx: usize) -> (usize, usize, usize) {
        let i = idx % self.nx;
        let j = (idx / self.nx) % self.ny;
        let k = idx / (self.nx * self.ny);
        (i, j, k)
    }

    pub fn cell_center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.origin[0] + i as f64 * self.spacing,
            self.origin[1] + j as f64 * self.spacing,
            self.origin[2] + k as f64 * self.spacing,
        ]
    }

    pub fn center_of(&self, idx: usize) -> [f64; 3] {
        let (i, j, k) = self.coords_of(idx);
        self.cell_center(i, j, k)
    }

    /// Neighbor index across `face`, or None at the grid edge.
    pub fn neighbor(&self, idx: usize, face: Face) -> Option<usize> {
        let (i, j, k) = self.coords_of(idx);
        let mut c = [i as isize, j as isize, k as isize];
        c[face.axis()] += face.step();
        let lims = [self.nx as isize, self.ny as isize, self.nz as isize];
        if c.iter().zip(&lims).all(|(&v, &l)| v >= 0 && v < l) {
            Some(self.idx(c[0] as usize, c[1] as usize, c[2] as usize))
        } else {
            None
        }
    }

    /// Cell whose center is nearest to `p`, if `p` lies within the grid
    /// bounding box (expanded by half a cell).
    pub fn nearest_cell(&self, p: [f64; 3]) -> Option<usize> {
        let mut c = [0usize; 3];
        let lims = [self.nx, self.ny, self.nz];
        for a in 0..3 {
            let t = (p[a] - self.origin[a]) / self.spacing;
            let r = t.round();
            if r < -0.5 || r > lims[a] as f64 - 0.5 {
                return None;
            }
            c[a] = r.clamp(0.0, lims[a] as f64 - 1.0) as usize;
        }
        Some(self.idx(c[0], c[1], c[2]))
    }

    pub fn same_layout(&self, other: &Grid) -> bool {
        self.dims() == other.dims()
            && (self.spacing - other.spacing).abs() <= 1e-12 * self.spacing.abs()
            && self
                .origin
                .iter()
                .zip(&other.origin)
                .all(|(a, b)| (a - b).abs() <= 1e-9)
    }

    /// Faces that exist for this grid (flat axes are skipped).
    pub fn active_faces(&self) -> Vec<Face> {
        let lims = [self.nx, self.ny, self.nz];
        Face::ALL
            .into_iter()
            .filter(|f| lims[f.axis()] > 1)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        let g = Grid::new(5, 4, 3, 1e-3, [0.0; 3]);
        for k in 0..3 {
            for j in 0..4 {
                for i in 0..5 {
                    assert_eq!(g.coords_of(g.idx(i, j, k)), (i, j, k));
                }
            }
        }
    }

    #[test]
    fn flat_axes_have_no_faces() {
        let g2 = Grid::new(8, 8, 1, 1e-3, [0.0; 3]);
        assert!(!g2.active_faces().contains(&Face::ZNeg));
        let g1 = Grid::new(8, 1, 1, 1e-3, [0.0; 3]);
        assert_eq!(g1.active_faces(), vec![Face::XNeg, Face::XPos]);
    }

    #[test]
    fn nearest_cell_rounds_to_center() {
        let g = Grid::new(10, 10, 1, 1e-3, [0.0; 3]);
        assert_eq!(g.nearest_cell([3.2e-3, 4.6e-3, 0.0]), Some(g.idx(3, 5, 0)));
        assert_eq!(g.nearest_cell([20e-3, 0.0, 0.0]), None);
    }
}
