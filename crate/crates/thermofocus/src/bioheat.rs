//! Steady-state Pennes bioheat solver on the phantom grid.
//!
//! The equation solved is
//!
//! ```text
//! -div(k grad T) + rho_b c_pb omega (T - T_a) = rho SAR
//! ```
//!
//! with perfusion acting as a heat sink toward the arterial temperature,
//! which keeps the solution bounded between the coldest boundary and T_a
//! for nonnegative sources. Discretization is a cell-centered finite volume
//! scheme (5-point stencil in 2D, 7-point in 3D) with harmonic-mean face
//! conductivities. Convective faces use the series resistance of half-cell
//! conduction and the film coefficient; isothermal faces pin the face
//! temperature through the half-cell conductance. Non-tissue cells are not
//! unknowns; they act only through boundary faces.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::fields::SarMap;
use crate::linalg::{pcg, SparseSym};
use crate::phantom::{BloodModel, Grid, PhantomGrid, Surface};
use crate::{Error, Result};

/// Default relative-residual tolerance of the linear solve.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Unknown count up to which the banded direct factorization is preferred
/// over conjugate gradient (when the band is narrow enough to store).
const DIRECT_UNKNOWN_LIMIT: usize = 40_000;
const DIRECT_BAND_LIMIT: usize = 1024;

/// Thermal condition applied to a class of boundary faces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundaryKind {
    /// Fixed surface temperature (contact with a good conductor).
    Isothermal { t_s: f64 },
    /// Convective flux h (T_s - T), h in W/(m^2 °C).
    Convective { h: f64, t_s: f64 },
}

/// Map from face classes to boundary conditions. Axis-plane faces without a
/// dedicated entry fall back to the `Exterior` entry, so a lateral tissue
/// patch touching the grid edge still gets the bolus condition.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundarySpec {
    pub entries: Vec<(Surface, BoundaryKind)>,
}

impl BoundarySpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, surface: Surface, kind: BoundaryKind) -> &mut Self {
        if let Some(e) = self.entries.iter_mut().find(|(s, _)| *s == surface) {
            e.1 = kind;
        } else {
            self.entries.push((surface, kind));
        }
        self
    }

    pub fn resolve(&self, surface: Surface) -> Option<BoundaryKind> {
        let exact = self.entries.iter().find(|(s, _)| *s == surface);
        match exact {
            Some((_, k)) => Some(*k),
            None => surface
                .fallback()
                .and_then(|fb| self.entries.iter().find(|(s, _)| *s == fb))
                .map(|(_, k)| *k),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (s, k) in &self.entries {
            if let BoundaryKind::Convective { h, .. } = k {
                if !(*h > 0.0) {
                    return Err(Error::Config(format!(
                        "convective entry for {s:?} requires h > 0 (got {h})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Reference neck conditions: water bolus on the exterior
    /// (h = 82 W/(m^2 °C), T_s = 20 °C), airway walls convective
    /// (h = 50, T_s = 30), and in 3D isothermal 37 °C on the axial cuts.
    pub fn default_neck(two_d: bool) -> Self {
        let mut spec = Self::new();
        spec.set(
            Surface::Exterior,
            BoundaryKind::Convective { h: 82.0, t_s: 20.0 },
        );
        spec.set(
            Surface::InternalAir,
            BoundaryKind::Convective { h: 50.0, t_s: 30.0 },
        );
        if !two_d {
            spec.set(Surface::ZLow, BoundaryKind::Isothermal { t_s: 37.0 });
            spec.set(Surface::ZHigh, BoundaryKind::Isothermal { t_s: 37.0 });
        }
        spec
    }
}

/// Linear solver diagnostics for reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub residual: f64,
    pub iterations: usize,
    pub wall_ms: f64,
    pub unknowns: usize,
    pub method: String,
}

/// Temperature per cell in °C; non-tissue cells hold NaN.
#[derive(Debug, Clone)]
pub struct TemperatureField {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub diagnostics: SolveDiagnostics,
}

/// Assembled linear system together with the unknown-to-cell maps.
#[derive(Debug)]
pub struct Assembled {
    pub matrix: SparseSym,
    pub rhs: Vec<f64>,
    /// Cell index of each unknown.
    pub cell_of: Vec<usize>,
    /// Unknown index per cell (usize::MAX for non-tissue).
    pub unknown_of: Vec<usize>,
}

/// Conductance of one boundary face per unit area.
fn face_conductance(kind: BoundaryKind, k_cell: f64, spacing: f64) -> (f64, f64) {
    match kind {
        BoundaryKind::Isothermal { t_s } => (2.0 * k_cell / spacing, t_s),
        BoundaryKind::Convective { h, t_s } => {
            (1.0 / (0.5 * spacing / k_cell + 1.0 / h), t_s)
        }
    }
}

/// Build the finite-volume system for the tissue unknowns.
pub fn assemble(
    phantom: &PhantomGrid,
    blood: &BloodModel,
    sar: &SarMap,
    bc: &BoundarySpec,
) -> Result<Assembled> {
    blood.validate()?;
    bc.validate()?;
    if !sar.grid.same_layout(&phantom.grid) {
        return Err(Error::GridMismatch(
            "SAR map and phantom use different grids".into(),
        ));
    }
    let grid = &phantom.grid;
    let h = grid.spacing;
    let ndim = [grid.nx, grid.ny, grid.nz]
        .iter()
        .filter(|&&n| n > 1)
        .count()
        .max(1);
    let volume = h.powi(ndim as i32);
    let area = volume / h;

    let cells = phantom.tissue_cells();
    let n = cells.len();
    if n == 0 {
        return Err(Error::EmptyMask("tissue (no thermal unknowns)".into()));
    }
    let mut unknown_of = vec![usize::MAX; grid.n_cells()];
    for (u, &c) in cells.iter().enumerate() {
        unknown_of[c] = u;
    }

    // Check coverage before touching the matrix.
    let mut uncovered = Vec::new();
    for bf in phantom.boundary_faces() {
        if bc.resolve(bf.surface).is_none() {
            uncovered.push((bf.cell, bf.face, bf.surface));
        }
    }
    if !uncovered.is_empty() {
        let sample: Vec<String> = uncovered
            .iter()
            .take(5)
            .map(|(c, f, s)| format!("cell {c} {f:?} ({s:?})"))
            .collect();
        return Err(Error::Config(format!(
            "{} boundary faces have no boundary condition entry: {}",
            uncovered.len(),
            sample.join(", ")
        )));
    }

    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::with_capacity(7); n];
    let mut diag = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let active = grid.active_faces();

    for (u, &cell) in cells.iter().enumerate() {
        let t = phantom.material(cell).unwrap();

        // Perfusion sink and SAR source.
        let perf = blood.rho_b * blood.cp_b * t.omega() * volume;
        diag[u] += perf;
        rhs[u] += perf * blood.t_a + t.rho * sar.values[cell] * volume;

        for &f in &active {
            if let Some(nb) = grid.neighbor(cell, f) {
                if phantom.is_tissue(nb) {
                    let tn = phantom.material(nb).unwrap();
                    let k_face = 2.0 * t.k * tn.k / (t.k + tn.k);
                    let c = k_face * area / h;
                    diag[u] += c;
                    rows[u].push((unknown_of[nb], -c));
                }
            }
        }
    }

    // Boundary faces were classified at rasterize time.
    for bf in phantom.boundary_faces() {
        let u = unknown_of[bf.cell];
        let t = phantom.material(bf.cell).unwrap();
        let kind = bc.resolve(bf.surface).expect("coverage checked above");
        let (g, t_s) = face_conductance(kind, t.k, h);
        diag[u] += g * area;
        rhs[u] += g * area * t_s;
    }

    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::new();
    let mut vals = Vec::new();
    row_ptr.push(0);
    for (u, row) in rows.iter_mut().enumerate() {
        if diag[u] <= 0.0 {
            return Err(Error::Numerical(format!(
                "cell {}: zero diagonal (isolated cell without perfusion)",
                cells[u]
            )));
        }
        row.push((u, diag[u]));
        row.sort_unstable_by_key(|&(j, _)| j);
        for &(j, v) in row.iter() {
            col_idx.push(j);
            vals.push(v);
        }
        row_ptr.push(col_idx.len());
    }

    Ok(Assembled {
        matrix: SparseSym {
            n,
            row_ptr,
            col_idx,
            vals,
        },
        rhs,
        cell_of: cells.to_vec(),
        unknown_of,
    })
}

enum SolverKind {
    /// Factored once; reused for every right-hand side.
    Direct(crate::linalg::BandCholesky),
    /// Jacobi-preconditioned CG from a zero initial guess each time.
    Iterative,
}

/// Steady-state solver with the geometry- and boundary-dependent system
/// assembled (and, for small bands, factored) once. SAR enters only the
/// right-hand side, so candidate searches reuse the factorization; every
/// call is independent of any other, which keeps results order-independent.
pub struct SteadySolver {
    sys: Assembled,
    kind: SolverKind,
    tol: f64,
    source_scale: Vec<f64>,
    grid: Grid,
}

impl SteadySolver {
    pub fn new(
        phantom: &PhantomGrid,
        blood: &BloodModel,
        bc: &BoundarySpec,
        tol: f64,
    ) -> Result<Self> {
        let zero = SarMap {
            grid: phantom.grid.clone(),
            values: vec![0.0; phantom.grid.n_cells()],
        };
        let sys = assemble(phantom, blood, &zero, bc)?;
        let n = sys.matrix.n;
        let bw = sys.matrix.bandwidth();
        let kind = if n <= DIRECT_UNKNOWN_LIMIT && bw + 1 <= DIRECT_BAND_LIMIT {
            SolverKind::Direct(crate::linalg::BandCholesky::factor(&sys.matrix)?)
        } else {
            SolverKind::Iterative
        };
        let h = phantom.grid.spacing;
        let ndim = [phantom.grid.nx, phantom.grid.ny, phantom.grid.nz]
            .iter()
            .filter(|&&d| d > 1)
            .count()
            .max(1);
        let volume = h.powi(ndim as i32);
        let source_scale = sys
            .cell_of
            .iter()
            .map(|&c| phantom.material(c).unwrap().rho * volume)
            .collect();
        Ok(Self {
            sys,
            kind,
            tol,
            source_scale,
            grid: phantom.grid.clone(),
        })
    }

    pub fn unknowns(&self) -> usize {
        self.sys.matrix.n
    }

    pub fn solve(&self, sar: &SarMap) -> Result<TemperatureField> {
        if !sar.grid.same_layout(&self.grid) {
            return Err(Error::GridMismatch(
                "SAR map grid differs from the assembled system".into(),
            ));
        }
        let t0 = Instant::now();
        let mut rhs = self.sys.rhs.clone();
        for (u, &cell) in self.sys.cell_of.iter().enumerate() {
            rhs[u] += self.source_scale[u] * sar.values[cell];
        }
        let (x, stats, method) = match &self.kind {
            SolverKind::Direct(factor) => {
                let x = factor.solve(&rhs);
                // Residual check guards against an ill-conditioned factor.
                let mut ax = vec![0.0; x.len()];
                self.sys.matrix.matvec(&x, &mut ax);
                let mut rn = 0.0;
                let mut bn = 0.0;
                for i in 0..x.len() {
                    rn += (rhs[i] - ax[i]) * (rhs[i] - ax[i]);
                    bn += rhs[i] * rhs[i];
                }
                let res = if bn > 0.0 { (rn / bn).sqrt() } else { 0.0 };
                (
                    x,
                    crate::linalg::SolveStats {
                        iterations: 1,
                        relative_residual: res,
                    },
                    "band_cholesky",
                )
            }
            SolverKind::Iterative => {
                let max_iter = (20 * self.sys.matrix.n).max(5_000);
                let (x, stats) = pcg(&self.sys.matrix, &rhs, self.tol, max_iter)?;
                (x, stats, "pcg_jacobi")
            }
        };
        if stats.relative_residual > self.tol.max(1e-12) * 10.0 {
            return Err(Error::Numerical(format!(
                "linear solve residual {:.3e} exceeds tolerance {:.1e}",
                stats.relative_residual, self.tol
            )));
        }
        let mut values = vec![f64::NAN; self.grid.n_cells()];
        for (u, &cell) in self.sys.cell_of.iter().enumerate() {
            values[cell] = x[u];
        }
        Ok(TemperatureField {
            grid: self.grid.clone(),
            values,
            diagnostics: SolveDiagnostics {
                residual: stats.relative_residual,
                iterations: stats.iterations,
                wall_ms: t0.elapsed().as_secs_f64() * 1e3,
                unknowns: self.sys.matrix.n,
                method: method.into(),
            },
        })
    }
}

/// Assemble and solve a single problem to the requested relative residual.
pub fn solve_steady(
    phantom: &PhantomGrid,
    blood: &BloodModel,
    sar: &SarMap,
    bc: &BoundarySpec,
    tol: f64,
) -> Result<TemperatureField> {
    SteadySolver::new(phantom, blood, bc, tol)?.solve(sar)
}

/// Closed steady-state power budget of a solved field, W (per meter of depth
/// in 2D).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergyBudget {
    pub deposited_w: f64,
    pub boundary_outflow_w: f64,
    pub perfusion_sink_w: f64,
}

impl EnergyBudget {
    /// Relative closure error |in - out| / max(in, out).
    pub fn relative_imbalance(&self) -> f64 {
        let inp = self.deposited_w;
        let out = self.boundary_outflow_w + self.perfusion_sink_w;
        (inp - out).abs() / inp.abs().max(out.abs()).max(1e-300)
    }
}

pub fn energy_budget(
    phantom: &PhantomGrid,
    blood: &BloodModel,
    sar: &SarMap,
    bc: &BoundarySpec,
    temp: &TemperatureField,
) -> Result<EnergyBudget> {
    if !temp.grid.same_layout(&phantom.grid) {
        return Err(Error::GridMismatch(
            "temperature field grid differs from phantom".into(),
        ));
    }
    let grid = &phantom.grid;
    let h = grid.spacing;
    let ndim = [grid.nx, grid.ny, grid.nz]
        .iter()
        .filter(|&&n| n > 1)
        .count()
        .max(1);
    let volume = h.powi(ndim as i32);
    let area = volume / h;

    let mut deposited = 0.0;
    let mut perfusion = 0.0;
    for &cell in phantom.tissue_cells() {
        let t = phantom.material(cell).unwrap();
        deposited += t.rho * sar.values[cell] * volume;
        perfusion += blood.rho_b * blood.cp_b * t.omega() * volume * (temp.values[cell] - blood.t_a);
    }
    let mut outflow = 0.0;
    for bf in phantom.boundary_faces() {
        let t = phantom.material(bf.cell).unwrap();
        let kind = bc
            .resolve(bf.surface)
            .ok_or_else(|| Error::Config(format!("face {:?} uncovered", bf.surface)))?;
        let (g, t_s) = face_conductance(kind, t.k, h);
        outflow += g * area * (temp.values[bf.cell] - t_s);
    }
    Ok(EnergyBudget {
        deposited_w: deposited,
        boundary_outflow_w: outflow,
        perfusion_sink_w: perfusion,
    })
}
