//! Temperature-shaped SAR planning: measure the SAR-temperature shift,
//! search the refinement region for the Gaussian-mask center that maximizes
//! the tumor coverage objective, re-run the SAR optimization on the corrected
//! target, and report the before/after metrics with a timing decomposition.
//!
//! Coverage objective: tau90 = T90 / max GTV temperature, where T90 is the
//! temperature exceeded by 90% of the GTV cells. The exhaustive center search
//! solves one bioheat problem per lattice candidate; candidates are
//! independent and evaluated in parallel with an order-independent argmax.

use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bioheat::{BoundarySpec, SteadySolver, TemperatureField};
use crate::fields::{
    build_array, import_fields, sar_from_field, scale_to_peak_e2, superpose, superpose_on,
    AntennaFieldSet, ArrayConfig, ExcitationVector, SarMap,
};
use crate::gaussfit::{fit_gaussian, gaussian_sar, GaussianParams};
use crate::phantom::{BloodModel, PhantomGrid};
use crate::sar_planner::{pso_optimize, PsoConfig, PsoOutcome, ThqReport};
use crate::{Error, Result};

/// Argmax cell of `values` over `mask`; ties break toward the lowest cell
/// index. An all-equal field therefore returns the first masked cell.
pub fn peak_location(values: &[f64], mask: &[usize]) -> Result<usize> {
    let mut it = mask.iter();
    let mut best = *it
        .next()
        .ok_or_else(|| Error::EmptyMask("peak_location".into()))?;
    for &c in it {
        if values[c] > values[best] {
            best = c;
        }
    }
    Ok(best)
}

/// SAR-to-temperature peak displacement restricted to `mask`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Shift {
    /// Displacement vector (temperature peak minus SAR peak), m.
    pub delta: [f64; 3],
    pub magnitude: f64,
    /// Unit vector, or zeros when the peaks coincide.
    pub direction: [f64; 3],
}

pub fn shift_magnitude(sar: &SarMap, temp: &TemperatureField, mask: &[usize]) -> Result<Shift> {
    if !sar.grid.same_layout(&temp.grid) {
        return Err(Error::GridMismatch(
            "SAR and temperature grids differ".into(),
        ));
    }
    let p_sar = sar.grid.center_of(peak_location(&sar.values, mask)?);
    let p_tmp = temp.grid.center_of(peak_location(&temp.values, mask)?);
    let delta = [p_tmp[0] - p_sar[0], p_tmp[1] - p_sar[1], p_tmp[2] - p_sar[2]];
    let magnitude = (delta[0] * delta[0] + delta[1] * delta[1] + delta[2] * delta[2]).sqrt();
    let direction = if magnitude > 0.0 {
        [
            delta[0] / magnitude,
            delta[1] / magnitude,
            delta[2] / magnitude,
        ]
    } else {
        [0.0; 3]
    };
    Ok(Shift {
        delta,
        magnitude,
        direction,
    })
}

/// Temperature exceeded by 90% of the GTV cells: the value at index
/// ceil(0.1 n) - 1 of the ascending sort.
pub fn t90(temp: &TemperatureField, gtv: &[usize]) -> Result<f64> {
    if gtv.is_empty() {
        return Err(Error::EmptyMask("gtv".into()));
    }
    let mut vals: Vec<f64> = gtv.iter().map(|&c| temp.values[c]).collect();
    vals.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((0.1 * vals.len() as f64).ceil() as usize).max(1) - 1;
    Ok(vals[idx])
}

/// tau90 = T90 / max GTV temperature; lies in (0, 1] on the Celsius scale.
pub fn tau90(temp: &TemperatureField, gtv: &[usize]) -> Result<f64> {
    let t = t90(temp, gtv)?;
    let max = gtv
        .iter()
        .map(|&c| temp.values[c])
        .fold(f64::MIN, f64::max);
    if !(max > 0.0) {
        return Err(Error::Numerical(format!(
            "tau90 undefined: max GTV temperature {max} not positive"
        )));
    }
    Ok(t / max)
}

/// Smallest sphere enclosing a point set (Welzl's algorithm on a shuffled
/// copy). Returns (center, radius). Flat axes are reduced away first, so
/// planar sets are solved as circles.
pub fn smallest_enclosing_sphere(points: &[[f64; 3]]) -> Result<([f64; 3], f64)> {
    if points.is_empty() {
        return Err(Error::EmptyMask("smallest enclosing sphere".into()));
    }
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let axes: Vec<usize> = (0..3).filter(|&a| hi[a] - lo[a] > 0.0).collect();
    let reduced: Vec<Vec<f64>> = points
        .iter()
        .map(|p| axes.iter().map(|&a| p[a]).collect())
        .collect();

    // Deterministic shuffle keeps the expected-linear behavior.
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut order: Vec<usize> = (0..reduced.len()).collect();
    order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed));

    let pts: Vec<&[f64]> = order.iter().map(|&i| reduced[i].as_slice()).collect();
    let dim = axes.len();
    let (c_red, r) = welzl(&pts, &mut Vec::new(), pts.len(), dim);

    let mut center = points[0]; // flat axes keep their shared coordinate
    for (i, &a) in axes.iter().enumerate() {
        center[a] = c_red[i];
    }
    Ok((center, r))
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Recursive Welzl: sphere of pts[..n] with `boundary` constrained on the
/// surface.
fn welzl(pts: &[&[f64]], boundary: &mut Vec<Vec<f64>>, n: usize, dim: usize) -> (Vec<f64>, f64) {
    if n == 0 || boundary.len() == dim + 1 {
        return trivial_sphere(boundary, dim);
    }
    let p = pts[n - 1];
    let (c, r) = welzl(pts, boundary, n - 1, dim);
    if r >= 0.0 && dist2(p, &c) <= r * r * (1.0 + 1e-12) + 1e-30 {
        return (c, r);
    }
    boundary.push(p.to_vec());
    let result = welzl(pts, boundary, n - 1, dim);
    boundary.pop();
    result
}

/// Exact sphere through up to dim+1 boundary points.
fn trivial_sphere(boundary: &[Vec<f64>], dim: usize) -> (Vec<f64>, f64) {
    match boundary.len() {
        0 => (vec![0.0; dim], -1.0),
        1 => (boundary[0].clone(), 0.0),
        2 => {
            let c: Vec<f64> = boundary[0]
                .iter()
                .zip(&boundary[1])
                .map(|(a, b)| 0.5 * (a + b))
                .collect();
            let r = dist2(&c, &boundary[0]).sqrt();
            (c, r)
        }
        m => {
            // Solve 2 (p_i - p_0) . c = |p_i|^2 - |p_0|^2 in the affine span.
            let p0 = &boundary[0];
            let k = m - 1;
            let basis: Vec<Vec<f64>> = (1..m)
                .map(|i| {
                    boundary[i]
                        .iter()
                        .zip(p0.iter())
                        .map(|(a, b)| a - b)
                        .collect()
                })
                .collect();
            let mut a = vec![vec![0.0; k]; k];
            let mut b = vec![0.0; k];
            for i in 0..k {
                for j in 0..k {
                    a[i][j] = 2.0 * crate::linalg::dot(&basis[i], &basis[j]);
                }
                b[i] = crate::linalg::dot(&basis[i], &basis[i]);
            }
            match crate::linalg::solve_dense(&mut a, &mut b) {
                Ok(alpha) => {
                    let mut c = p0.clone();
                    for i in 0..k {
                        for (ci, bi) in c.iter_mut().zip(&basis[i]) {
                            *ci += alpha[i] * bi;
                        }
                    }
                    let r = dist2(&c, p0).sqrt();
                    (c, r)
                }
                // Degenerate (collinear) support: fall back to the widest pair.
                Err(_) => {
                    let mut best = (0, 1, 0.0);
                    for i in 0..m {
                        for j in (i + 1)..m {
                            let d = dist2(&boundary[i], &boundary[j]);
                            if d > best.2 {
                                best = (i, j, d);
                            }
                        }
                    }
                    let c: Vec<f64> = boundary[best.0]
                        .iter()
                        .zip(&boundary[best.1])
                        .map(|(a, b)| 0.5 * (a + b))
                        .collect();
                    let r = best.2.sqrt() * 0.5;
                    (c, r)
                }
            }
        }
    }
}

/// Lattice of candidate Gaussian centers inside the ball (disc in 2D mode)
/// of diameter d_R = d + 2*delta around the GTV centroid, sampled at
/// delta / n_samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefinementRegion {
    /// GTV centroid r_t, m.
    pub center: [f64; 3],
    /// Region diameter d_R, m.
    pub diameter: f64,
    /// Lattice spacing, m.
    pub spacing: f64,
    /// Smallest-enclosing-sphere diameter d of the GTV, m.
    pub gtv_diameter: f64,
    /// Shift length delta used for the sizing, m.
    pub delta: f64,
    pub candidates: Vec<[f64; 3]>,
    /// Integer lattice offsets matching `candidates`.
    pub offsets: Vec<[i32; 3]>,
}

impl RefinementRegion {
    pub fn n_points(&self) -> usize {
        self.candidates.len()
    }

    /// Index of the candidate at the region center (always present).
    pub fn center_index(&self) -> usize {
        self.offsets
            .iter()
            .position(|o| *o == [0, 0, 0])
            .expect("center candidate always generated")
    }
}

/// Explicit-geometry constructor: `center` r_t and GTV diameter `d` given.
pub fn build_refinement_region_at(
    center: [f64; 3],
    gtv_diameter: f64,
    delta: f64,
    n_samples: usize,
    three_d: bool,
) -> Result<RefinementRegion> {
    if !(delta > 0.0) {
        return Err(Error::Config(format!(
            "refinement delta must be positive (got {delta})"
        )));
    }
    if n_samples < 1 {
        return Err(Error::Config("refinement sampling density must be >= 1".into()));
    }
    let spacing = delta / n_samples as f64;
    let diameter = gtv_diameter + 2.0 * delta;
    let (candidates, offsets) = ball_lattice(center, diameter / 2.0, spacing, three_d);
    if candidates.is_empty() {
        return Err(Error::Config(
            "refinement region contains no lattice candidates".into(),
        ));
    }
    Ok(RefinementRegion {
        center,
        diameter,
        spacing,
        gtv_diameter,
        delta,
        candidates,
        offsets,
    })
}

/// Lattice points of the given spacing inside the closed ball (disc when
/// `three_d` is false). The ball center is always a lattice point, so the
/// result is never empty for positive radius; a radius below the spacing
/// leaves only the center.
pub fn ball_lattice(
    center: [f64; 3],
    radius: f64,
    spacing: f64,
    three_d: bool,
) -> (Vec<[f64; 3]>, Vec<[i32; 3]>) {
    let reach = (radius / spacing).floor().max(0.0) as i32;
    let z_range = if three_d { -reach..=reach } else { 0..=0 };
    let mut candidates = Vec::new();
    let mut offsets = Vec::new();
    for m in z_range {
        for q in -reach..=reach {
            for p in -reach..=reach {
                let norm = spacing * ((p * p + q * q + m * m) as f64).sqrt();
                if norm <= radius {
                    candidates.push([
                        center[0] + p as f64 * spacing,
                        center[1] + q as f64 * spacing,
                        center[2] + m as f64 * spacing,
                    ]);
                    offsets.push([p, q, m]);
                }
            }
        }
    }
    (candidates, offsets)
}

/// Region constructor deriving r_t (GTV centroid) and d (smallest enclosing
/// sphere of the GTV cell centers) from the phantom.
pub fn build_refinement_region(
    phantom: &PhantomGrid,
    delta: f64,
    n_samples: usize,
    three_d: bool,
) -> Result<RefinementRegion> {
    let center = phantom.gtv_centroid()?;
    let points: Vec<[f64; 3]> = phantom
        .gtv_cells()
        .iter()
        .map(|&c| phantom.grid.center_of(c))
        .collect();
    let (_, radius) = smallest_enclosing_sphere(&points)?;
    build_refinement_region_at(center, 2.0 * radius, delta, n_samples, three_d)
}

/// tau90 of one candidate center.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CandidateTau {
    pub center_m: [f64; 3],
    pub offset: [i32; 3],
    pub tau90: f64,
}

/// Solve the bioheat problem for the Gaussian mask at every candidate center
/// and pick the argmax of tau90. Ties break toward the candidate nearest r_t,
/// then the lowest lattice index; the result does not depend on evaluation
/// order.
pub fn search_optimal_center(
    region: &RefinementRegion,
    params: &GaussianParams,
    phantom: &PhantomGrid,
    blood: &BloodModel,
    bc: &BoundarySpec,
    tol: f64,
) -> Result<([f64; 3], Vec<CandidateTau>)> {
    if region.candidates.is_empty() {
        return Err(Error::EmptyMask("refinement candidates".into()));
    }
    // One assembly and factorization serves every candidate: only the source
    // side changes when the mask center moves.
    let solver = SteadySolver::new(phantom, blood, bc, tol)?;
    let surface: Vec<CandidateTau> = region
        .candidates
        .par_iter()
        .zip(region.offsets.par_iter())
        .map(|(&c, &off)| -> Result<CandidateTau> {
            let sar = gaussian_sar(&params.with_center(c), phantom)?;
            let temp = solver.solve(&sar).map_err(|e| {
                Error::Numerical(format!(
                    "candidate at ({:.2}, {:.2}, {:.2}) mm failed: {e}",
                    c[0] * 1e3,
                    c[1] * 1e3,
                    c[2] * 1e3
                ))
            })?;
            let tau = tau90(&temp, phantom.gtv_cells())?;
            Ok(CandidateTau {
                center_m: c,
                offset: off,
                tau90: tau,
            })
        })
        .collect::<Result<_>>()?;

    let mut best = 0usize;
    for i in 1..surface.len() {
        let a = &surface[i];
        let b = &surface[best];
        let da = dist2(&a.center_m, &region.center);
        let db = dist2(&b.center_m, &region.center);
        if a.tau90 > b.tau90 || (a.tau90 == b.tau90 && da < db) {
            best = i;
        }
    }
    Ok((surface[best].center_m, surface))
}

/// Step-7 optimization: maximize SAR in the sphere of diameter `d` centered
/// at the corrected position.
pub fn retarget_sar_optimization(
    fields: &AntennaFieldSet,
    r_bar: [f64; 3],
    d: f64,
    phantom: &PhantomGrid,
    cfg: &PsoConfig,
) -> Result<PsoOutcome> {
    let r2 = (d / 2.0) * (d / 2.0);
    let mask: Vec<usize> = phantom
        .tissue_cells()
        .iter()
        .copied()
        .filter(|&c| {
            let p = phantom.grid.center_of(c);
            dist2(&p, &r_bar) <= r2
        })
        .collect();
    if mask.is_empty() {
        return Err(Error::EmptyMask(format!(
            "retarget sphere (d = {:.1} mm at ({:.1}, {:.1}, {:.1}) mm) misses tissue",
            d * 1e3,
            r_bar[0] * 1e3,
            r_bar[1] * 1e3,
            r_bar[2] * 1e3
        )));
    }
    pso_optimize(fields, phantom, &mask, cfg)
}

/// Refinement search settings (scenario section `refinement`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefinementConfig {
    /// Override for the measured SAR-temperature shift, mm.
    pub delta_mm: Option<f64>,
    /// Sampling density: lattice spacing is delta / samples_per_delta.
    pub samples_per_delta: usize,
    /// Solve candidates on the 3D grid instead of the z = r_t plane.
    pub three_d: bool,
    /// Floor applied when the measured shift is below two grid cells, mm.
    pub delta_floor_mm: f64,
    /// Radius of the Gaussian-fit region around the in-tissue |E|^2 peak.
    /// Keeps the fit on the focal lobe, away from near-skin brightness.
    pub fit_roi_radius_mm: f64,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            delta_mm: None,
            samples_per_delta: 6,
            three_d: false,
            delta_floor_mm: 4.0,
            fit_roi_radius_mm: 20.0,
        }
    }
}

/// Tissue cells within `radius_m` of the in-tissue |E|^2 peak: the region
/// the Gaussian fit runs on. Shared by the pipeline and the `fit` command so
/// the two produce identical parameters on identical maps.
pub fn fit_roi(phantom: &PhantomGrid, e2: &[f64], radius_m: f64) -> Result<Vec<usize>> {
    let peak_cell = peak_location(e2, phantom.tissue_cells())?;
    let peak_pos = phantom.grid.center_of(peak_cell);
    let r2 = radius_m * radius_m;
    Ok(phantom
        .tissue_cells()
        .iter()
        .copied()
        .filter(|&c| dist2(&phantom.grid.center_of(c), &peak_pos) <= r2)
        .collect())
}

/// Where the single-antenna fields come from.
#[derive(Debug, Clone)]
pub enum FieldsSource {
    Analytic(ArrayConfig),
    Import(PathBuf),
}

/// Fully resolved planning scenario (geometry already rasterized).
#[derive(Debug, Clone)]
pub struct Scenario {
    pub phantom: PhantomGrid,
    pub blood: BloodModel,
    pub bc: BoundarySpec,
    pub fields_source: FieldsSource,
    pub pso: PsoConfig,
    pub refinement: RefinementConfig,
    /// Excitations are rescaled so that the in-tissue |E|^2 peak equals this
    /// value; tau90 depends on the absolute heating level, so before/after
    /// runs must share one normalization.
    pub target_peak_e2: f64,
    pub solver_tol: f64,
}

/// Wall-clock decomposition of one pipeline run, seconds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Timings {
    pub t_em_s: f64,
    pub t_sar_opt_s: [f64; 2],
    pub t_search_s: f64,
    pub t_bioheat_single_s: f64,
    pub t_lc_single_s: f64,
    pub total_s: f64,
    pub n_opt: usize,
    pub n_rfn: usize,
}

impl Timings {
    /// T_search + both SAR optimizations.
    pub fn t_tsar_s(&self) -> f64 {
        self.t_search_s + self.t_sar_opt_s[0] + self.t_sar_opt_s[1]
    }
}

/// Before/after planning metrics plus the search artifacts.
#[derive(Debug, Clone)]
pub struct PlanResult {
    pub weights_before: ExcitationVector,
    pub weights_after: ExcitationVector,
    pub thq_before: ThqReport,
    pub thq_after: ThqReport,
    pub t90_before: f64,
    pub t90_after: f64,
    pub tau90_before: f64,
    pub tau90_after: f64,
    pub shift: Shift,
    /// Shift length actually used for the region sizing, m.
    pub delta_used: f64,
    pub gaussian: GaussianParams,
    pub gaussian_rms: f64,
    pub region: RefinementRegion,
    pub optimal_center: [f64; 3],
    pub tau90_surface: Vec<CandidateTau>,
    /// tau90 of the Gaussian mask at r_t (surface value at the center).
    pub tau90_at_center: f64,
    pub timings: Timings,
}

/// Full pipeline output: the plan plus the field maps for export.
pub struct PipelineOutput {
    pub plan: PlanResult,
    pub fields: AntennaFieldSet,
    pub e2_before: Vec<f64>,
    pub e2_after: Vec<f64>,
    pub sar_before: SarMap,
    pub sar_after: SarMap,
    pub temp_before: TemperatureField,
    pub temp_after: TemperatureField,
}

/// Run the seven planning stages:
/// 1. single-antenna fields, 2. SAR optimization on the GTV, 3. Gaussian fit
/// of |E|^2, 4. refinement region around r_t, 5. bioheat + tau90 per
/// candidate, 6. corrected center selection, 7. SAR optimization on the
/// corrected target; then solve the final temperature and fill the metrics.
pub fn run_pipeline(scenario: &Scenario) -> Result<PipelineOutput> {
    let t_total = Instant::now();
    let phantom = &scenario.phantom;
    if phantom.gtv_cells().is_empty() {
        return Err(Error::EmptyMask("gtv".into()).in_stage("scenario"));
    }

    // Stage 1: per-antenna fields.
    let t0 = Instant::now();
    let fields = match &scenario.fields_source {
        FieldsSource::Analytic(cfg) => build_array(cfg, phantom),
        FieldsSource::Import(path) => import_fields(path, &phantom.grid),
    }
    .map_err(|e| e.in_stage("fields"))?;
    let t_em = t0.elapsed().as_secs_f64();

    // Stage 2: SAR optimization on the GTV.
    let t0 = Instant::now();
    let opt_before = pso_optimize(&fields, phantom, phantom.gtv_cells(), &scenario.pso)
        .map_err(|e| e.in_stage("sar-opt"))?;
    let t_sar_1 = t0.elapsed().as_secs_f64();
    let weights_before =
        scale_to_peak_e2(&fields, &opt_before.weights, phantom.tissue_cells(), scenario.target_peak_e2)
            .map_err(|e| e.in_stage("sar-opt"))?;

    // Single linear-combination cost (for the complexity report).
    let t0 = Instant::now();
    let _ = superpose_on(&fields, &weights_before, phantom.tissue_cells())
        .map_err(|e| e.in_stage("sar-opt"))?;
    let t_lc_single = t0.elapsed().as_secs_f64();

    let solver = SteadySolver::new(phantom, &scenario.blood, &scenario.bc, scenario.solver_tol)
        .map_err(|e| e.in_stage("bioheat"))?;
    let e2_before = superpose(&fields, &weights_before).map_err(|e| e.in_stage("sar-opt"))?;
    let sar_before = sar_from_field(&e2_before, phantom).map_err(|e| e.in_stage("sar-opt"))?;
    let temp_before = solver.solve(&sar_before).map_err(|e| e.in_stage("bioheat"))?;
    let t90_before = t90(&temp_before, phantom.gtv_cells())?;
    let tau90_before = tau90(&temp_before, phantom.gtv_cells())?;

    // Shift measurement over the tissue mask.
    let shift = shift_magnitude(&sar_before, &temp_before, phantom.tissue_cells())
        .map_err(|e| e.in_stage("shift"))?;
    let spacing = phantom.grid.spacing;
    let delta_used = match scenario.refinement.delta_mm {
        Some(mm) => mm * 1e-3,
        None => {
            if shift.magnitude < 2.0 * spacing {
                scenario.refinement.delta_floor_mm * 1e-3
            } else {
                shift.magnitude
            }
        }
    };

    // Stage 3: Gaussian approximation of the focused |E|^2, fitted on the
    // focal lobe around the in-tissue peak.
    let roi = fit_roi(phantom, &e2_before, scenario.refinement.fit_roi_radius_mm * 1e-3)?;
    let (gaussian, gaussian_rms) =
        fit_gaussian(&e2_before, &roi, &phantom.grid).map_err(|e| e.in_stage("gaussfit"))?;

    // Stage 4: refinement region.
    let region = build_refinement_region(
        phantom,
        delta_used,
        scenario.refinement.samples_per_delta,
        scenario.refinement.three_d,
    )
    .map_err(|e| e.in_stage("refinement"))?;

    // Stages 5-6: exhaustive tau90 search.
    let t0 = Instant::now();
    let (optimal_center, tau90_surface) = search_optimal_center(
        &region,
        &gaussian,
        phantom,
        &scenario.blood,
        &scenario.bc,
        scenario.solver_tol,
    )
    .map_err(|e| e.in_stage("search"))?;
    let t_search = t0.elapsed().as_secs_f64();
    let tau90_at_center = tau90_surface[region.center_index()].tau90;

    // Stage 7: retargeted SAR optimization.
    let retarget_cfg = PsoConfig {
        seed: scenario.pso.seed.wrapping_add(1),
        ..scenario.pso.clone()
    };
    let t0 = Instant::now();
    let opt_after = retarget_sar_optimization(
        &fields,
        optimal_center,
        region.gtv_diameter,
        phantom,
        &retarget_cfg,
    )
    .map_err(|e| e.in_stage("retarget"))?;
    let t_sar_2 = t0.elapsed().as_secs_f64();
    let weights_after =
        scale_to_peak_e2(&fields, &opt_after.weights, phantom.tissue_cells(), scenario.target_peak_e2)
            .map_err(|e| e.in_stage("retarget"))?;

    let e2_after = superpose(&fields, &weights_after).map_err(|e| e.in_stage("retarget"))?;
    let sar_after = sar_from_field(&e2_after, phantom).map_err(|e| e.in_stage("retarget"))?;
    let temp_after = solver.solve(&sar_after).map_err(|e| e.in_stage("bioheat"))?;
    let t90_after = t90(&temp_after, phantom.gtv_cells())?;
    let tau90_after = tau90(&temp_after, phantom.gtv_cells())?;

    let n_rfn = region.n_points();
    let timings = Timings {
        t_em_s: t_em,
        t_sar_opt_s: [t_sar_1, t_sar_2],
        t_search_s: t_search,
        t_bioheat_single_s: t_search / n_rfn as f64,
        t_lc_single_s: t_lc_single,
        total_s: t_total.elapsed().as_secs_f64(),
        n_opt: opt_before.evals.max(opt_after.evals),
        n_rfn,
    };

    Ok(PipelineOutput {
        plan: PlanResult {
            weights_before,
            weights_after,
            thq_before: opt_before.report,
            thq_after: opt_after.report,
            t90_before,
            t90_after,
            tau90_before,
            tau90_after,
            shift,
            delta_used,
            gaussian,
            gaussian_rms,
            region,
            optimal_center,
            tau90_surface,
            tau90_at_center,
            timings,
        },
        fields,
        e2_before,
        e2_after,
        sar_before,
        sar_after,
        temp_before,
        temp_after,
    })
}

/// One perfusion perturbation: scale factors for the tumor and muscle rates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCase {
    pub id: String,
    pub tumor_factor: f64,
    pub muscle_factor: f64,
}

impl SweepCase {
    pub fn parse(id: &str) -> Result<Self> {
        match id {
            "a" => Ok(Self {
                id: "a".into(),
                tumor_factor: 2.0,
                muscle_factor: 1.0,
            }),
            "b" => Ok(Self {
                id: "b".into(),
                tumor_factor: 2.0,
                muscle_factor: 2.0,
            }),
            "c" => Ok(Self {
                id: "c".into(),
                tumor_factor: 0.5,
                muscle_factor: 1.5,
            }),
            other => Err(Error::Config(format!(
                "unknown sweep case `{other}` (expected a, b, or c)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub case_id: String,
    pub tumor_factor: f64,
    pub muscle_factor: f64,
    pub tau90_before: f64,
    pub tau90_after: f64,
}

/// Re-solve the temperature for both weight vectors under perturbed perfusion
/// tables. Weights stay fixed: no re-optimization, and the SAR maps are
/// unchanged because perfusion does not enter the deposition.
pub fn sensitivity_sweep(
    scenario: &Scenario,
    sar_before: &SarMap,
    sar_after: &SarMap,
    cases: &[SweepCase],
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(cases.len());
    for case in cases {
        let mut db = scenario.phantom.db.clone();
        db.scale_perfusion("tumor", case.tumor_factor)?;
        db.scale_perfusion("muscle", case.muscle_factor)?;
        let phantom = scenario.phantom.with_tissue_db(db)?;
        let solver = SteadySolver::new(&phantom, &scenario.blood, &scenario.bc, scenario.solver_tol)?;
        let before = solver.solve(sar_before)?;
        let after = solver.solve(sar_after)?;
        rows.push(SweepRow {
            case_id: case.id.clone(),
            tumor_factor: case.tumor_factor,
            muscle_factor: case.muscle_factor,
            tau90_before: tau90(&before, phantom.gtv_cells())?,
            tau90_after: tau90(&after, phantom.gtv_cells())?,
        });
    }
    Ok(rows)
}
