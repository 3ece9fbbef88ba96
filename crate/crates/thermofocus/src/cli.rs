//! Scenario configuration files, the subcommand drivers behind the
//! `thermofocus` binary, and the plan/sweep/timing report formats.
//!
//! A scenario is one JSON document with sections `grid`, `tissues`, `shapes`,
//! `gtv`, `boundaries`, `array`, `pso`, `refinement`; unknown keys are
//! rejected. Lengths in config files are millimeters; the domain layer works
//! in meters.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bioheat::{energy_budget, solve_steady, BoundaryKind, BoundarySpec};
use crate::fields::{
    build_array, export_fields, sar_from_field, scale_to_peak_e2, superpose, ArrayConfig,
    ExcitationVector, SarMap, WeightEntry,
};
use crate::gaussfit::fit_gaussian;
use crate::io::{read_scalar_csv, write_pgm, write_scalar_csv};
use crate::phantom::{
    build_simple_neck, rasterize, Axis, BloodModel, Grid, NeckConfig, Shape,
    ShapeKind, Surface, TissueDb, TissueProperties,
};
use crate::sar_planner::{pso_optimize, PsoConfig, ThqReport};
use crate::tshape::{
    run_pipeline, sensitivity_sweep, FieldsSource, PipelineOutput, PlanResult, RefinementConfig,
    Scenario, SweepCase, SweepRow, Timings,
};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    #[serde(default = "one")]
    pub nz: usize,
    pub spacing_mm: f64,
    pub origin_mm: [f64; 3],
}

fn one() -> usize {
    1
}

impl GridConfig {
    pub fn to_grid(&self) -> Result<Grid> {
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return Err(Error::Config("grid dims must be positive".into()));
        }
        if !(self.spacing_mm > 0.0) {
            return Err(Error::Config(format!(
                "grid spacing must be positive (got {} mm)",
                self.spacing_mm
            )));
        }
        Ok(Grid::new(
            self.nx,
            self.ny,
            self.nz,
            self.spacing_mm * 1e-3,
            [
                self.origin_mm[0] * 1e-3,
                self.origin_mm[1] * 1e-3,
                self.origin_mm[2] * 1e-3,
            ],
        ))
    }
}

/// Shape entry with millimeter geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeSpec {
    pub geometry: ShapeSpecKind,
    pub tissue: String,
    pub priority: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeSpecKind {
    Cylinder {
        center_mm: [f64; 2],
        radius_mm: f64,
        #[serde(default = "z_axis")]
        axis: Axis,
    },
    Sphere {
        center_mm: [f64; 3],
        radius_mm: f64,
    },
    Annulus {
        center_mm: [f64; 2],
        r_in_mm: f64,
        r_out_mm: f64,
        #[serde(default = "z_axis")]
        axis: Axis,
    },
    PolygonPrism {
        vertices_mm: Vec<[f64; 2]>,
        #[serde(default = "z_axis")]
        axis: Axis,
    },
}

fn z_axis() -> Axis {
    Axis::Z
}

impl ShapeSpec {
    pub fn to_shape(&self) -> Shape {
        const MM: f64 = 1e-3;
        let kind = match &self.geometry {
            ShapeSpecKind::Cylinder {
                center_mm,
                radius_mm,
                axis,
            } => ShapeKind::Cylinder {
                center: [center_mm[0] * MM, center_mm[1] * MM],
                radius: radius_mm * MM,
                axis: *axis,
            },
            ShapeSpecKind::Sphere {
                center_mm,
                radius_mm,
            } => ShapeKind::Sphere {
                center: [center_mm[0] * MM, center_mm[1] * MM, center_mm[2] * MM],
                radius: radius_mm * MM,
            },
            ShapeSpecKind::Annulus {
                center_mm,
                r_in_mm,
                r_out_mm,
                axis,
            } => ShapeKind::Annulus {
                center: [center_mm[0] * MM, center_mm[1] * MM],
                r_in: r_in_mm * MM,
                r_out: r_out_mm * MM,
                axis: *axis,
            },
            ShapeSpecKind::PolygonPrism { vertices_mm, axis } => ShapeKind::PolygonPrism {
                vertices: vertices_mm
                    .iter()
                    .map(|v| [v[0] * MM, v[1] * MM])
                    .collect(),
                axis: *axis,
            },
        };
        Shape {
            kind,
            tissue: self.tissue.clone(),
            priority: self.priority,
        }
    }
}

/// Either the built-in cylindrical neck or an explicit shape list.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapesConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub neck: Option<NeckConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub list: Vec<ShapeSpec>,
}

impl ShapesConfig {
    pub fn to_shapes(&self) -> Result<Vec<Shape>> {
        let mut shapes = Vec::new();
        if let Some(name) = &self.builtin {
            match name.as_str() {
                "simple_neck" => {
                    let cfg = self.neck.clone().unwrap_or_default();
                    shapes.extend(build_simple_neck(&cfg)?);
                }
                other => {
                    return Err(Error::Config(format!(
                        "unknown builtin phantom `{other}` (expected `simple_neck`)"
                    )))
                }
            }
        }
        shapes.extend(self.list.iter().map(|s| s.to_shape()));
        if shapes.is_empty() {
            return Err(Error::Config(
                "shapes: provide `builtin` and/or a non-empty `list`".into(),
            ));
        }
        Ok(shapes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GtvConfig {
    pub tissue: String,
}

impl Default for GtvConfig {
    fn default() -> Self {
        Self {
            tissue: "tumor".into(),
        }
    }
}

/// Top-level scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub grid: GridConfig,
    /// Full tissue records registered over the built-in database.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tissues: Vec<TissueProperties>,
    pub shapes: ShapesConfig,
    #[serde(default)]
    pub gtv: GtvConfig,
    /// Boundary entries keyed by surface; defaults to the neck conditions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundaries: Option<BTreeMap<Surface, BoundaryKind>>,
    #[serde(default)]
    pub array: ArrayConfig,
    #[serde(default)]
    pub pso: PsoConfig,
    #[serde(default)]
    pub refinement: RefinementConfig,
    #[serde(default)]
    pub blood: BloodModel,
    /// Import single-antenna fields from this file instead of the analytic
    /// array model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fields_file: Option<String>,
    /// In-tissue |E|^2 peak after excitation normalization, V^2/m^2.
    #[serde(default = "default_peak_e2")]
    pub target_peak_e2: f64,
    #[serde(default = "default_tol")]
    pub solver_tol: f64,
    #[serde(default)]
    pub seed: u64,
    /// Published before/after tau90 pair to print next to the computed one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_tau90: Option<[f64; 2]>,
}

fn default_peak_e2() -> f64 {
    1.29e5
}

fn default_tol() -> f64 {
    crate::bioheat::DEFAULT_TOL
}

impl ScenarioConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let cfg: ScenarioConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    /// Build the domain-level scenario. `seed` and `three_d` override the
    /// file values when given (CLI flags).
    pub fn resolve(&self, seed: Option<u64>, three_d: Option<bool>) -> Result<Scenario> {
        let mut db = TissueDb::builtin();
        for t in &self.tissues {
            TissueProperties::new(&t.name, t.rho, t.k, t.w, t.eps_r, t.sigma)?;
            db.register(t.clone());
        }
        let grid = self.grid.to_grid()?;
        let shapes = self.shapes.to_shapes()?;
        let mut phantom = rasterize(&shapes, grid, db)?;
        phantom.set_gtv_from_tissue(&self.gtv.tissue)?;
        if phantom.gtv_cells().is_empty() {
            return Err(Error::EmptyMask(format!(
                "gtv (no cells painted `{}`)",
                self.gtv.tissue
            )));
        }
        let bc = match &self.boundaries {
            Some(map) => {
                let mut spec = BoundarySpec::new();
                for (surface, kind) in map {
                    spec.set(*surface, *kind);
                }
                spec.validate()?;
                spec
            }
            None => BoundarySpec::default_neck(phantom.grid.is_2d()),
        };
        self.blood.validate()?;
        let mut pso = self.pso.clone();
        if let Some(s) = seed {
            pso.seed = s;
        } else if pso.seed == 0 {
            pso.seed = self.seed;
        }
        pso.validate()?;
        let mut refinement = self.refinement.clone();
        if let Some(t) = three_d {
            refinement.three_d = t;
        }
        let fields_source = match &self.fields_file {
            Some(p) => FieldsSource::Import(PathBuf::from(p)),
            None => FieldsSource::Analytic(self.array.clone()),
        };
        Ok(Scenario {
            phantom,
            blood: self.blood.clone(),
            bc,
            fields_source,
            pso,
            refinement,
            target_peak_e2: self.target_peak_e2,
            solver_tol: self.solver_tol,
        })
    }
}

/// Gaussian fit section of the plan report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussFitReport {
    pub a: f64,
    pub r0_mm: [f64; 3],
    pub sigma_mm: Vec<f64>,
    pub rms_residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefinementReport {
    pub d_mm: f64,
    pub d_r_mm: f64,
    pub spacing_mm: f64,
    pub delta_used_mm: f64,
    pub n_candidates: usize,
}

/// Peak values used to scale the PGM heatmaps.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PgmScales {
    pub sar_before: f64,
    pub sar_after: f64,
    pub temp_before: f64,
    pub temp_after: f64,
    pub tau90_surface: f64,
}

/// Serialized planning outcome (`plan.json`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanReport {
    pub scenario: ScenarioConfig,
    pub seed: u64,
    pub weights_before: Vec<WeightEntry>,
    pub weights_after: Vec<WeightEntry>,
    pub thq_before: ThqReport,
    pub thq_after: ThqReport,
    pub t90_before_c: f64,
    pub t90_after_c: f64,
    pub tau90_before: f64,
    pub tau90_after: f64,
    pub tau90_at_center: f64,
    pub shift_mm: [f64; 3],
    pub shift_magnitude_mm: f64,
    pub shift_direction: [f64; 3],
    pub r_t_mm: [f64; 3],
    pub r_bar_mm: [f64; 3],
    pub gaussian_fit: GaussFitReport,
    pub refinement: RefinementReport,
    pub reference_tau90: Option<[f64; 2]>,
    pub timings: Timings,
    pub pgm_scales: PgmScales,
    pub manifest: Vec<String>,
    /// SHA-256 of the report JSON with `timings` zeroed and this field empty;
    /// identical seeds and configs produce identical hashes.
    pub determinism_hash: String,
}

fn mm3(v: [f64; 3]) -> [f64; 3] {
    [v[0] * 1e3, v[1] * 1e3, v[2] * 1e3]
}

impl PlanReport {
    pub fn build(
        scenario_cfg: &ScenarioConfig,
        seed: u64,
        plan: &PlanResult,
        pgm_scales: PgmScales,
        manifest: Vec<String>,
    ) -> Result<PlanReport> {
        let sigma_mm: Vec<f64> = plan
            .gaussian
            .sigma
            .iter()
            .filter(|s| s.is_finite())
            .map(|s| s * 1e3)
            .collect();
        let mut report = PlanReport {
            scenario: scenario_cfg.clone(),
            seed,
            weights_before: (&plan.weights_before).into(),
            weights_after: (&plan.weights_after).into(),
            thq_before: plan.thq_before.clone(),
            thq_after: plan.thq_after.clone(),
            t90_before_c: plan.t90_before,
            t90_after_c: plan.t90_after,
            tau90_before: plan.tau90_before,
            tau90_after: plan.tau90_after,
            tau90_at_center: plan.tau90_at_center,
            shift_mm: mm3(plan.shift.delta),
            shift_magnitude_mm: plan.shift.magnitude * 1e3,
            shift_direction: plan.shift.direction,
            r_t_mm: mm3(plan.region.center),
            r_bar_mm: mm3(plan.optimal_center),
            gaussian_fit: GaussFitReport {
                a: plan.gaussian.a,
                r0_mm: mm3(plan.gaussian.r0),
                sigma_mm,
                rms_residual: plan.gaussian_rms,
            },
            refinement: RefinementReport {
                d_mm: plan.region.gtv_diameter * 1e3,
                d_r_mm: plan.region.diameter * 1e3,
                spacing_mm: plan.region.spacing * 1e3,
                delta_used_mm: plan.delta_used * 1e3,
                n_candidates: plan.region.n_points(),
            },
            reference_tau90: scenario_cfg.reference_tau90,
            timings: plan.timings.clone(),
            pgm_scales,
            manifest,
            determinism_hash: String::new(),
        };
        report.determinism_hash = report.compute_hash()?;
        Ok(report)
    }

    /// Hash of the deterministic report content (wall-clock fields excluded).
    pub fn compute_hash(&self) -> Result<String> {
        let mut clone = self.clone();
        clone.determinism_hash = String::new();
        clone.timings = Timings {
            t_em_s: 0.0,
            t_sar_opt_s: [0.0; 2],
            t_search_s: 0.0,
            t_bioheat_single_s: 0.0,
            t_lc_single_s: 0.0,
            total_s: 0.0,
            n_opt: clone.timings.n_opt,
            n_rfn: clone.timings.n_rfn,
        };
        let bytes = serde_json::to_vec(&clone)?;
        let digest = Sha256::digest(&bytes);
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// The complexity decomposition printed after a plan run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimingReport {
    pub t_em_s: f64,
    /// Mean of the two SAR optimizations.
    pub t_sar_s: f64,
    pub t_search_s: f64,
    /// t_search + both SAR optimizations.
    pub t_tsar_s: f64,
    pub t_total_s: f64,
    pub t_lc_single_s: f64,
    pub t_bioheat_single_s: f64,
    pub n_opt: usize,
    pub n_rfn: usize,
    /// Cost estimate of a direct temperature optimization with the same
    /// budget: n_opt * (t_lc + t_bioheat).
    pub estimated_direct_t_s: f64,
    /// Per-evaluation cost ratio t_bioheat / t_lc.
    pub bioheat_to_lc_ratio: f64,
}

pub fn timing_report(timings: &Timings) -> TimingReport {
    let t_sar = 0.5 * (timings.t_sar_opt_s[0] + timings.t_sar_opt_s[1]);
    TimingReport {
        t_em_s: timings.t_em_s,
        t_sar_s: t_sar,
        t_search_s: timings.t_search_s,
        t_tsar_s: timings.t_tsar_s(),
        t_total_s: timings.total_s,
        t_lc_single_s: timings.t_lc_single_s,
        t_bioheat_single_s: timings.t_bioheat_single_s,
        n_opt: timings.n_opt,
        n_rfn: timings.n_rfn,
        estimated_direct_t_s: timings.n_opt as f64
            * (timings.t_lc_single_s + timings.t_bioheat_single_s),
        bioheat_to_lc_ratio: timings.t_bioheat_single_s / timings.t_lc_single_s.max(1e-12),
    }
}

impl std::fmt::Display for TimingReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "timing decomposition:")?;
        writeln!(f, "  t_em        = {:9.3} s  (single-antenna fields)", self.t_em_s)?;
        writeln!(f, "  t_sar       = {:9.3} s  (one SAR optimization, mean of 2)", self.t_sar_s)?;
        writeln!(f, "  t_search    = {:9.3} s  ({} bioheat solves)", self.t_search_s, self.n_rfn)?;
        writeln!(f, "  t_tsar      = {:9.3} s  (= t_search + 2 t_sar)", self.t_tsar_s)?;
        writeln!(f, "  total       = {:9.3} s", self.t_total_s)?;
        writeln!(f, "  per eval: linear combination {:.3} ms, bioheat {:.3} ms (ratio {:.1})",
            self.t_lc_single_s * 1e3, self.t_bioheat_single_s * 1e3, self.bioheat_to_lc_ratio)?;
        writeln!(f, "  budgets: n_opt = {}, n_rfn = {}", self.n_opt, self.n_rfn)?;
        write!(f,
            "  direct temperature optimization at the same budget would cost ~{:.1} s",
            self.estimated_direct_t_s
        )
    }
}

/// Write all plan artifacts into `out_dir`; returns the report.
pub fn write_plan_outputs(
    out_dir: &Path,
    scenario_cfg: &ScenarioConfig,
    scenario: &Scenario,
    output: &PipelineOutput,
) -> Result<PlanReport> {
    std::fs::create_dir_all(out_dir)?;
    let grid = &scenario.phantom.grid;
    let mut manifest = Vec::new();
    let mut push = |name: &str| manifest.push(name.to_string());

    scenario.phantom.export_csv(&out_dir.join("phantom.csv"))?;
    push("phantom.csv");

    write_scalar_csv(&out_dir.join("e2_before.csv"), grid, &output.e2_before, "e2")?;
    push("e2_before.csv");
    write_scalar_csv(&out_dir.join("e2_after.csv"), grid, &output.e2_after, "e2")?;
    push("e2_after.csv");

    let mut scales = PgmScales::default();
    write_scalar_csv(&out_dir.join("sar_before.csv"), grid, &output.sar_before.values, "sar_w_per_kg")?;
    push("sar_before.csv");
    scales.sar_before = write_pgm(&out_dir.join("sar_before.pgm"), grid, &output.sar_before.values)?;
    push("sar_before.pgm");
    write_scalar_csv(&out_dir.join("sar_after.csv"), grid, &output.sar_after.values, "sar_w_per_kg")?;
    push("sar_after.csv");
    scales.sar_after = write_pgm(&out_dir.join("sar_after.pgm"), grid, &output.sar_after.values)?;
    push("sar_after.pgm");

    write_scalar_csv(&out_dir.join("temp_before.csv"), grid, &output.temp_before.values, "t_c")?;
    push("temp_before.csv");
    scales.temp_before = write_pgm(&out_dir.join("temp_before.pgm"), grid, &output.temp_before.values)?;
    push("temp_before.pgm");
    write_scalar_csv(&out_dir.join("temp_after.csv"), grid, &output.temp_after.values, "t_c")?;
    push("temp_after.csv");
    scales.temp_after = write_pgm(&out_dir.join("temp_after.pgm"), grid, &output.temp_after.values)?;
    push("temp_after.pgm");

    scales.tau90_surface =
        write_tau90_surface(out_dir, &output.plan, grid.is_2d(), &mut push)?;

    let report = PlanReport::build(
        scenario_cfg,
        scenario.pso.seed,
        &output.plan,
        scales,
        {
            manifest.push("plan.json".into());
            manifest.push("timing.json".into());
            manifest.sort();
            manifest.clone()
        },
    )?;
    std::fs::write(
        out_dir.join("plan.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    std::fs::write(
        out_dir.join("timing.json"),
        serde_json::to_string_pretty(&timing_report(&output.plan.timings))?,
    )?;
    Ok(report)
}

/// CSV (per candidate) plus a lattice-raster PGM of the tau90 surface.
fn write_tau90_surface(
    out_dir: &Path,
    plan: &PlanResult,
    two_d: bool,
    push: &mut dyn FnMut(&str),
) -> Result<f64> {
    use std::io::Write;
    let path = out_dir.join("tau90_surface.csv");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
    if two_d {
        writeln!(f, "x_mm,y_mm,tau90")?;
    } else {
        writeln!(f, "x_mm,y_mm,z_mm,tau90")?;
    }
    for c in &plan.tau90_surface {
        if two_d {
            writeln!(f, "{},{},{}", c.center_m[0] * 1e3, c.center_m[1] * 1e3, c.tau90)?;
        } else {
            writeln!(
                f,
                "{},{},{},{}",
                c.center_m[0] * 1e3,
                c.center_m[1] * 1e3,
                c.center_m[2] * 1e3,
                c.tau90
            )?;
        }
    }
    drop(f);
    push("tau90_surface.csv");

    // Raster over the candidate lattice (central z layer in 3D).
    let reach = plan
        .tau90_surface
        .iter()
        .map(|c| c.offset[0].abs().max(c.offset[1].abs()))
        .max()
        .unwrap_or(0);
    let n = (2 * reach + 1) as usize;
    let raster_grid = Grid::new(n, n, 1, plan.region.spacing, [0.0; 3]);
    let mut raster = vec![0.0; n * n];
    for c in &plan.tau90_surface {
        if c.offset[2] != 0 {
            continue;
        }
        let i = (c.offset[0] + reach) as usize;
        let j = (c.offset[1] + reach) as usize;
        raster[raster_grid.idx(i, j, 0)] = c.tau90;
    }
    let max = write_pgm(&out_dir.join("tau90_surface.pgm"), &raster_grid, &raster)?;
    push("tau90_surface.pgm");
    Ok(max)
}

// ---------------------------------------------------------------------------
// Subcommand drivers. Each returns Err on failure; main maps errors to exit
// codes (2 config/file, 1 numerical).
// ---------------------------------------------------------------------------

pub struct CommonArgs {
    pub scenario: PathBuf,
    pub seed: Option<u64>,
    pub mode: Option<bool>,
}

impl CommonArgs {
    fn load(&self) -> Result<(ScenarioConfig, Scenario)> {
        let cfg = ScenarioConfig::from_file(&self.scenario)?;
        let scenario = cfg.resolve(self.seed, self.mode)?;
        Ok((cfg, scenario))
    }
}

pub fn cmd_plan(common: &CommonArgs, out_dir: &Path, dry_run: bool) -> Result<()> {
    let (mut cfg, scenario) = common.load()?;
    if dry_run {
        println!(
            "scenario ok: {} tissue cells, {} gtv cells, {} boundary faces",
            scenario.phantom.tissue_cells().len(),
            scenario.phantom.gtv_cells().len(),
            scenario.phantom.boundary_faces().len()
        );
        return Ok(());
    }
    // Echo the effective seed so the report is self-contained.
    cfg.seed = scenario.pso.seed;
    let output = run_pipeline(&scenario)?;
    let report = write_plan_outputs(out_dir, &cfg, &scenario, &output)?;

    println!(
        "tau90: {:.4} -> {:.4}   (T90 {:.2} °C -> {:.2} °C, THQ {:.3} -> {:.3})",
        report.tau90_before,
        report.tau90_after,
        report.t90_before_c,
        report.t90_after_c,
        report.thq_before.thq,
        report.thq_after.thq
    );
    if let Some([b, a]) = report.reference_tau90 {
        println!("reference tau90 for this scenario family: {b:.2} -> {a:.2}");
    }
    println!(
        "shift: {:.1} mm, corrected center ({:.1}, {:.1}, {:.1}) mm vs r_t ({:.1}, {:.1}, {:.1}) mm",
        report.shift_magnitude_mm,
        report.r_bar_mm[0],
        report.r_bar_mm[1],
        report.r_bar_mm[2],
        report.r_t_mm[0],
        report.r_t_mm[1],
        report.r_t_mm[2]
    );
    println!("{}", timing_report(&output.plan.timings));
    println!("report written to {}", out_dir.join("plan.json").display());
    Ok(())
}

pub fn cmd_solve(common: &CommonArgs, sar_path: &Path, out_dir: &Path) -> Result<()> {
    let (_, scenario) = common.load()?;
    let grid = &scenario.phantom.grid;
    let values = read_scalar_csv(sar_path, grid)?;
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Config(format!(
            "{}: SAR values must be finite and nonnegative",
            sar_path.display()
        )));
    }
    let sar = SarMap {
        grid: grid.clone(),
        values,
    };
    let temp = solve_steady(
        &scenario.phantom,
        &scenario.blood,
        &sar,
        &scenario.bc,
        scenario.solver_tol,
    )?;
    std::fs::create_dir_all(out_dir)?;
    write_scalar_csv(&out_dir.join("temperature.csv"), grid, &temp.values, "t_c")?;
    write_pgm(&out_dir.join("temperature.pgm"), grid, &temp.values)?;
    std::fs::write(
        out_dir.join("diagnostics.json"),
        serde_json::to_string_pretty(&temp.diagnostics)?,
    )?;
    let budget = energy_budget(&scenario.phantom, &scenario.blood, &sar, &scenario.bc, &temp)?;
    let (mut tmin, mut tmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for &c in scenario.phantom.tissue_cells() {
        tmin = tmin.min(temp.values[c]);
        tmax = tmax.max(temp.values[c]);
    }
    println!(
        "solved {} unknowns in {:.1} ms ({}): T in [{tmin:.2}, {tmax:.2}] °C, energy imbalance {:.2e}",
        temp.diagnostics.unknowns,
        temp.diagnostics.wall_ms,
        temp.diagnostics.method,
        budget.relative_imbalance()
    );
    Ok(())
}

/// Weight file written by `sar-opt` (and consumed by tests/tools).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightsFile {
    pub seed: u64,
    pub target: String,
    pub weights: Vec<WeightEntry>,
    pub thq: ThqReport,
}

pub fn cmd_sar_opt(common: &CommonArgs, target: &str, out: &Path) -> Result<()> {
    if target != "gtv" {
        return Err(Error::Config(format!(
            "unsupported target `{target}` (only `gtv` is available)"
        )));
    }
    let (_, scenario) = common.load()?;
    let phantom = &scenario.phantom;
    let fields = match &scenario.fields_source {
        FieldsSource::Analytic(cfg) => build_array(cfg, phantom)?,
        FieldsSource::Import(path) => crate::fields::import_fields(path, &phantom.grid)?,
    };
    let outcome = pso_optimize(&fields, phantom, phantom.gtv_cells(), &scenario.pso)?;
    let weights = scale_to_peak_e2(
        &fields,
        &outcome.weights,
        phantom.tissue_cells(),
        scenario.target_peak_e2,
    )?;
    let e2 = superpose(&fields, &weights)?;
    let sar = sar_from_field(&e2, phantom)?;

    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let file = WeightsFile {
        seed: scenario.pso.seed,
        target: target.into(),
        weights: (&weights).into(),
        thq: outcome.report.clone(),
    };
    std::fs::write(out, serde_json::to_string_pretty(&file)?)?;
    let stem = out.with_extension("");
    let e2_path = stem.with_extension("e2.csv");
    let sar_path = stem.with_extension("sar.csv");
    write_scalar_csv(&e2_path, &phantom.grid, &e2, "e2")?;
    write_scalar_csv(&sar_path, &phantom.grid, &sar.values, "sar_w_per_kg")?;
    println!(
        "THQ {:.3} after {} evaluations; weights -> {}, maps -> {}, {}",
        outcome.report.thq,
        outcome.evals,
        out.display(),
        e2_path.display(),
        sar_path.display()
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitFile {
    pub a: f64,
    pub r0_mm: [f64; 3],
    pub sigma_mm: Vec<f64>,
    pub rms_residual: f64,
}

pub fn cmd_fit(common: &CommonArgs, e2_path: &Path, out: &Path) -> Result<()> {
    let (_, scenario) = common.load()?;
    let grid = &scenario.phantom.grid;
    let e2 = read_scalar_csv(e2_path, grid)?;
    let roi = crate::tshape::fit_roi(
        &scenario.phantom,
        &e2,
        scenario.refinement.fit_roi_radius_mm * 1e-3,
    )?;
    let (params, rms) = fit_gaussian(&e2, &roi, grid)?;
    let file = FitFile {
        a: params.a,
        r0_mm: mm3(params.r0),
        sigma_mm: params
            .sigma
            .iter()
            .filter(|s| s.is_finite())
            .map(|s| s * 1e3)
            .collect(),
        rms_residual: rms,
    };
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(out, serde_json::to_string_pretty(&file)?)?;
    println!(
        "fit: a = {:.4e}, r0 = ({:.1}, {:.1}, {:.1}) mm, sigma = {:?} mm, rms {:.3e}",
        file.a, file.r0_mm[0], file.r0_mm[1], file.r0_mm[2], file.sigma_mm, file.rms_residual
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub plan: String,
    pub rows: Vec<SweepRow>,
}

pub fn cmd_sweep(plan_path: &Path, cases: &str, out: Option<&Path>) -> Result<()> {
    let report = PlanReport::from_file(plan_path)?;
    let scenario = report.scenario.resolve(Some(report.seed), None)?;
    let fields = match &scenario.fields_source {
        FieldsSource::Analytic(cfg) => build_array(cfg, &scenario.phantom)?,
        FieldsSource::Import(path) => crate::fields::import_fields(path, &scenario.phantom.grid)?,
    };
    let wb: ExcitationVector = report.weights_before.as_slice().into();
    let wa: ExcitationVector = report.weights_after.as_slice().into();
    let sar_b = sar_from_field(&superpose(&fields, &wb)?, &scenario.phantom)?;
    let sar_a = sar_from_field(&superpose(&fields, &wa)?, &scenario.phantom)?;

    let cases: Vec<SweepCase> = cases
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| SweepCase::parse(s.trim()))
        .collect::<Result<_>>()?;
    if cases.is_empty() {
        return Err(Error::Config("sweep: no cases given".into()));
    }
    let rows = sensitivity_sweep(&scenario, &sar_b, &sar_a, &cases)?;

    println!("case  tumor_w  muscle_w  tau90_before  tau90_after");
    for r in &rows {
        println!(
            "{:4}  x{:5.2}  x{:6.2}  {:12.4}  {:11.4}",
            r.case_id, r.tumor_factor, r.muscle_factor, r.tau90_before, r.tau90_after
        );
    }
    if let Some(out) = out {
        let sr = SweepReport {
            plan: plan_path.display().to_string(),
            rows,
        };
        if let Some(parent) = out.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(out, serde_json::to_string_pretty(&sr)?)?;
        println!("sweep table written to {}", out.display());
    }
    Ok(())
}

pub fn cmd_export(common: &CommonArgs, what: &str, out: &Path) -> Result<()> {
    let (_, scenario) = common.load()?;
    match what {
        "phantom" => {
            scenario.phantom.export_csv(out)?;
            println!("phantom grid -> {}", out.display());
        }
        "fields" => {
            let fields = match &scenario.fields_source {
                FieldsSource::Analytic(cfg) => build_array(cfg, &scenario.phantom)?,
                FieldsSource::Import(path) => {
                    crate::fields::import_fields(path, &scenario.phantom.grid)?
                }
            };
            export_fields(&fields, out)?;
            println!(
                "{} antenna field maps -> {}",
                fields.n_antennas(),
                out.display()
            );
        }
        other => {
            return Err(Error::Config(format!(
                "unknown export target `{other}` (expected phantom or fields)"
            )))
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_rejects_unknown_keys() {
        let json = r#"{
            "grid": {"nx": 4, "ny": 4, "spacing_mm": 1.0, "origin_mm": [0, 0, 0]},
            "shapes": {"builtin": "simple_neck"},
            "surprise": 1
        }"#;
        let err = serde_json::from_str::<ScenarioConfig>(json).unwrap_err();
        assert!(err.to_string().contains("surprise"));
    }

    #[test]
    fn minimal_scenario_resolves() {
        let json = r#"{
            "grid": {"nx": 120, "ny": 120, "spacing_mm": 1.0, "origin_mm": [-59.5, -59.5, 0.0]},
            "shapes": {"builtin": "simple_neck"},
            "seed": 9
        }"#;
        let cfg: ScenarioConfig = serde_json::from_str(json).unwrap();
        let scenario = cfg.resolve(None, None).unwrap();
        assert!(!scenario.phantom.gtv_cells().is_empty());
        assert_eq!(scenario.pso.seed, 9);
        // CLI seed wins over the file.
        let scenario = cfg.resolve(Some(33), None).unwrap();
        assert_eq!(scenario.pso.seed, 33);
    }

    #[test]
    fn explicit_shape_list_in_millimeters() {
        let json = r#"{
            "grid": {"nx": 30, "ny": 30, "spacing_mm": 2.0, "origin_mm": [-29.0, -29.0, 0.0]},
            "shapes": {"list": [
                {"geometry": {"kind": "cylinder", "center_mm": [0, 0], "radius_mm": 25.0},
                 "tissue": "muscle", "priority": 0},
                {"geometry": {"kind": "sphere", "center_mm": [5, -4, 0], "radius_mm": 5.0},
                 "tissue": "tumor", "priority": 1}
            ]}
        }"#;
        let cfg: ScenarioConfig = serde_json::from_str(json).unwrap();
        let scenario = cfg.resolve(None, None).unwrap();
        assert!(!scenario.phantom.gtv_cells().is_empty());
        assert!(scenario.phantom.tissue_cells().len() > scenario.phantom.gtv_cells().len());
    }
}
