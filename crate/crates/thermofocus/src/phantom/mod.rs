//! Voxel phantom construction: tissue database, geometric primitives, and
//! rasterization onto a regular grid with named region masks and classified
//! boundary faces.

mod grid;
mod shape;
mod tissue;

pub use grid::{Face, Grid};
pub use shape::{build_simple_neck, Axis, NeckConfig, Shape, ShapeKind};
pub use tissue::{BloodModel, TissueDb, TissueProperties, INTERNAL_AIR};

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Classification of a boundary face by what lies on its non-tissue side.
/// Grid-edge faces are classified by their axis plane so that axial surfaces
/// (e.g. the neck top/bottom in 3D) can carry their own condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Surface {
    Exterior,
    InternalAir,
    XLow,
    XHigh,
    YLow,
    YHigh,
    ZLow,
    ZHigh,
}

impl Surface {
    fn from_edge(face: Face) -> Surface {
        match face {
            Face::XNeg => Surface::XLow,
            Face::XPos => Surface::XHigh,
            Face::YNeg => Surface::YLow,
            Face::YPos => Surface::YHigh,
            Face::ZNeg => Surface::ZLow,
            Face::ZPos => Surface::ZHigh,
        }
    }

    /// Axis-plane surfaces fall back to the exterior entry when no dedicated
    /// plane entry exists.
    pub fn fallback(self) -> Option<Surface> {
        match self {
            Surface::Exterior | Surface::InternalAir => None,
            _ => Some(Surface::Exterior),
        }
    }
}

/// One face of a tissue cell on the domain boundary.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryFace {
    pub cell: usize,
    pub face: Face,
    pub surface: Surface,
}

/// Voxelized material map with per-cell tissue indices, named masks and the
/// classified boundary faces. Immutable after construction.
#[derive(Debug, Clone)]
pub struct PhantomGrid {
    pub grid: Grid,
    pub db: TissueDb,
    material: Vec<Option<u16>>,
    gtv_mask: Vec<bool>,
    tissue_cells: Vec<usize>,
    gtv_cells: Vec<usize>,
    healthy_cells: Vec<usize>,
    internal_air_cells: Vec<usize>,
    boundary_faces: Vec<BoundaryFace>,
}

impl PhantomGrid {
    pub fn material(&self, idx: usize) -> Option<&TissueProperties> {
        self.material[idx].map(|m| self.db.by_index(m as usize))
    }

    pub fn material_index(&self, idx: usize) -> Option<u16> {
        self.material[idx]
    }

    /// Tissue = painted cells that are not internal air.
    pub fn is_tissue(&self, idx: usize) -> bool {
        match self.material[idx] {
            Some(m) => self.db.by_index(m as usize).name != INTERNAL_AIR,
            None => false,
        }
    }

    pub fn is_gtv(&self, idx: usize) -> bool {
        self.gtv_mask[idx]
    }

    pub fn tissue_cells(&self) -> &[usize] {
        &self.tissue_cells
    }

    pub fn gtv_cells(&self) -> &[usize] {
        &self.gtv_cells
    }

    pub fn healthy_cells(&self) -> &[usize] {
        &self.healthy_cells
    }

    pub fn internal_air_cells(&self) -> &[usize] {
        &self.internal_air_cells
    }

    pub fn boundary_faces(&self) -> &[BoundaryFace] {
        &self.boundary_faces
    }

    /// Mean of the GTV cell centers, m.
    pub fn gtv_centroid(&self) -> Result<[f64; 3]> {
        if self.gtv_cells.is_empty() {
            return Err(Error::EmptyMask("gtv".into()));
        }
        let mut c = [0.0; 3];
        for &idx in &self.gtv_cells {
            let p = self.grid.center_of(idx);
            for a in 0..3 {
                c[a] += p[a];
            }
        }
        for v in &mut c {
            *v /= self.gtv_cells.len() as f64;
        }
        Ok(c)
    }

    /// Redefine the GTV as the cells painted with `tissue`.
    pub fn set_gtv_from_tissue(&mut self, tissue: &str) -> Result<()> {
        let want = self.db.index_of(tissue)? as u16;
        let mask: Vec<bool> = self.material.iter().map(|m| *m == Some(want)).collect();
        self.apply_gtv_mask(mask)
    }

    fn apply_gtv_mask(&mut self, mask: Vec<bool>) -> Result<()> {
        for (idx, &g) in mask.iter().enumerate() {
            if g && !self.is_tissue(idx) {
                return Err(Error::Config(format!(
                    "gtv mask marks non-tissue cell {idx}"
                )));
            }
        }
        self.gtv_mask = mask;
        self.gtv_cells = self
            .tissue_cells
            .iter()
            .copied()
            .filter(|&i| self.gtv_mask[i])
            .collect();
        self.healthy_cells = self
            .tissue_cells
            .iter()
            .copied()
            .filter(|&i| !self.gtv_mask[i])
            .collect();
        Ok(())
    }

    /// Swap in a different tissue table (sensitivity sweeps) without touching
    /// geometry. The new table must contain every material the phantom uses.
    pub fn with_tissue_db(&self, db: TissueDb) -> Result<PhantomGrid> {
        for t in self.db.iter() {
            db.lookup(&t.name)?;
        }
        // Material indices must stay aligned; remap via names.
        let remap: Vec<u16> = self
            .db
            .iter()
            .map(|t| db.index_of(&t.name).map(|i| i as u16))
            .collect::<Result<_>>()?;
        let material = self
            .material
            .iter()
            .map(|m| m.map(|i| remap[i as usize]))
            .collect();
        let mut out = PhantomGrid {
            grid: self.grid.clone(),
            db,
            material,
            gtv_mask: self.gtv_mask.clone(),
            tissue_cells: self.tissue_cells.clone(),
            gtv_cells: self.gtv_cells.clone(),
            healthy_cells: self.healthy_cells.clone(),
            internal_air_cells: self.internal_air_cells.clone(),
            boundary_faces: self.boundary_faces.clone(),
        };
        out.rebuild_boundary_faces();
        Ok(out)
    }

    fn rebuild_boundary_faces(&mut self) {
        let mut faces = Vec::new();
        let active = self.grid.active_faces();
        for &cell in &self.tissue_cells {
            for &f in &active {
                let surface = match self.grid.neighbor(cell, f) {
                    None => Surface::from_edge(f),
                    Some(nb) => {
                        if self.is_tissue(nb) {
                            continue;
                        }
                        match self.material[nb] {
                            Some(_) => Surface::InternalAir,
                            None => Surface::Exterior,
                        }
                    }
                };
                faces.push(BoundaryFace {
                    cell,
                    face: f,
                    surface,
                });
            }
        }
        self.boundary_faces = faces;
    }

    /// Grid CSV export: `x_mm,y_mm[,z_mm],tissue_id` per cell, exterior cells
    /// labeled `exterior`.
    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        let twod = self.grid.is_2d();
        if twod {
            writeln!(f, "x_mm,y_mm,tissue_id")?;
        } else {
            writeln!(f, "x_mm,y_mm,z_mm,tissue_id")?;
        }
        for idx in 0..self.grid.n_cells() {
            let c = self.grid.center_of(idx);
            let name = match self.material(idx) {
                Some(t) => t.name.as_str(),
                None => "exterior",
            };
            if twod {
                writeln!(f, "{},{},{}", c[0] * 1e3, c[1] * 1e3, name)?;
            } else {
                writeln!(f, "{},{},{},{}", c[0] * 1e3, c[1] * 1e3, c[2] * 1e3, name)?;
            }
        }
        Ok(())
    }
}

/// Paint shapes onto the grid by cell-center membership in ascending priority
/// order (stable for equal priorities), then derive masks and boundary faces.
pub fn rasterize(shapes: &[Shape], grid: Grid, db: TissueDb) -> Result<PhantomGrid> {
    if shapes.is_empty() {
        return Err(Error::Config("rasterize: no shapes given".into()));
    }
    if !(grid.spacing > 0.0) {
        return Err(Error::Config(format!(
            "rasterize: spacing must be positive (got {})",
            grid.spacing
        )));
    }
    for s in shapes {
        s.validate()?;
    }

    let mut order: Vec<usize> = (0..shapes.len()).collect();
    order.sort_by_key(|&i| shapes[i].priority);

    let mut material: Vec<Option<u16>> = vec![None; grid.n_cells()];
    for &si in &order {
        let s = &shapes[si];
        let tissue_idx = db.index_of(&s.tissue)? as u16;
        let (lo, hi) = s.bbox();
        let range = |a: usize, n: usize| -> (usize, usize) {
            let tmin = ((lo[a] - grid.origin[a]) / grid.spacing).ceil().max(0.0) as usize;
            let tmax = ((hi[a] - grid.origin[a]) / grid.spacing).floor();
            let tmax = if tmax < 0.0 {
                0
            } else {
                (tmax as usize).min(n - 1)
            };
            (tmin.min(n - 1), tmax)
        };
        let (i0, i1) = range(0, grid.nx);
        let (j0, j1) = range(1, grid.ny);
        let (k0, k1) = range(2, grid.nz);
        let mut covered = 0usize;
        for k in k0..=k1 {
            for j in j0..=j1 {
                for i in i0..=i1 {
                    let p = grid.cell_center(i, j, k);
                    if s.contains(p) {
                        material[grid.idx(i, j, k)] = Some(tissue_idx);
                        covered += 1;
                    }
                }
            }
        }
        if covered == 0 {
            return Err(Error::Config(format!(
                "shape `{}` (priority {}) covers no grid cell",
                s.tissue, s.priority
            )));
        }
    }

    let air_idx = db.index_of(INTERNAL_AIR).ok().map(|i| i as u16);
    let mut tissue_cells = Vec::new();
    let mut internal_air_cells = Vec::new();
    for (idx, m) in material.iter().enumerate() {
        match m {
            Some(i) if Some(*i) == air_idx => internal_air_cells.push(idx),
            Some(_) => tissue_cells.push(idx),
            None => {}
        }
    }

    let mut phantom = PhantomGrid {
        grid,
        db,
        material,
        gtv_mask: Vec::new(),
        tissue_cells,
        gtv_cells: Vec::new(),
        healthy_cells: Vec::new(),
        internal_air_cells,
        boundary_faces: Vec::new(),
    };
    phantom.rebuild_boundary_faces();

    // GTV defaults to the cells painted `tumor` when that tissue exists;
    // scenarios may override via set_gtv_from_tissue.
    let default_gtv = match phantom.db.index_of("tumor") {
        Ok(t) => phantom
            .material
            .iter()
            .map(|m| *m == Some(t as u16))
            .collect(),
        Err(_) => vec![false; phantom.grid.n_cells()],
    };
    phantom.apply_gtv_mask(default_gtv)?;
    Ok(phantom)
}
