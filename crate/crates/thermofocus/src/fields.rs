//! Per-antenna complex E-field maps on the phantom grid, their superposition
//! under excitation weights, and SAR computation.
//!
//! Single-antenna fields come either from the built-in analytic lossy-medium
//! surrogate (outgoing cylindrical/spherical wave with the complex wavenumber
//! of the propagation medium) or from an import file produced by an external
//! solver. Superposition is linear in the complex weights, so optimizers only
//! ever combine precomputed maps.

use std::io::{BufRead, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::phantom::{Grid, PhantomGrid, TissueProperties};
use crate::{Error, Result};

pub const EPS0: f64 = 8.8541878128e-12;
pub const MU0: f64 = 1.25663706212e-6;

/// Per-antenna complex phasor maps sharing the phantom grid layout.
/// Immutable after build/import.
#[derive(Debug, Clone)]
pub struct AntennaFieldSet {
    pub grid: Grid,
    /// Operating frequency, Hz.
    pub frequency: f64,
    /// One complex scalar map per antenna (peak-value phasor, V/m).
    pub fields: Vec<Vec<Complex64>>,
    /// Source positions, m; empty when the set was imported.
    pub source_positions: Vec<[f64; 3]>,
}

impl AntennaFieldSet {
    pub fn n_antennas(&self) -> usize {
        self.fields.len()
    }
}

/// Complex antenna weights (amplitude and phase per antenna).
#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationVector {
    pub weights: Vec<Complex64>,
}

impl ExcitationVector {
    pub fn from_amp_phase(pairs: &[(f64, f64)]) -> Self {
        Self {
            weights: pairs
                .iter()
                .map(|&(a, p)| Complex64::from_polar(a, p))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        Self {
            weights: self.weights.iter().map(|w| w * c).collect(),
        }
    }
}

/// Serialized form used in weight files and plan reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightEntry {
    pub amplitude: f64,
    pub phase_rad: f64,
}

impl From<&ExcitationVector> for Vec<WeightEntry> {
    fn from(v: &ExcitationVector) -> Self {
        v.weights
            .iter()
            .map(|w| WeightEntry {
                amplitude: w.norm(),
                phase_rad: w.arg(),
            })
            .collect()
    }
}

impl From<&[WeightEntry]> for ExcitationVector {
    fn from(entries: &[WeightEntry]) -> Self {
        ExcitationVector::from_amp_phase(
            &entries
                .iter()
                .map(|e| (e.amplitude, e.phase_rad))
                .collect::<Vec<_>>(),
        )
    }
}

/// Specific absorption rate per cell, W/kg. Zero outside tissue and wherever
/// the electrical conductivity vanishes.
#[derive(Debug, Clone)]
pub struct SarMap {
    pub grid: Grid,
    pub values: Vec<f64>,
}

/// Uniform circular array configuration (scenario section `array`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArrayConfig {
    pub n_antennas: usize,
    /// Explicit ring radius in mm; when absent the radius is the outermost
    /// tissue extent plus `standoff_mm`.
    pub ring_radius_mm: Option<f64>,
    pub standoff_mm: f64,
    pub frequency_hz: f64,
    pub start_angle_deg: f64,
    /// Reference |E| at the array center used to fix the source amplitude.
    pub center_field_v_per_m: f64,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self {
            n_antennas: 8,
            ring_radius_mm: None,
            standoff_mm: 50.0,
            frequency_hz: 434.0e6,
            start_angle_deg: 0.0,
            center_field_v_per_m: 100.0,
        }
    }
}

/// Complex wavenumber k = omega * sqrt(mu0 eps0 eps_c) with
/// eps_c = eps_r - j sigma / (omega eps0). Im(k) <= 0; the attenuation
/// constant is -Im(k).
pub fn complex_wavenumber(medium: &TissueProperties, frequency: f64) -> Result<Complex64> {
    if frequency <= 0.0 {
        return Err(Error::Config(format!(
            "frequency must be positive (got {frequency} Hz)"
        )));
    }
    let omega = 2.0 * std::f64::consts::PI * frequency;
    let eps_c = Complex64::new(medium.eps_r, -medium.sigma / (omega * EPS0));
    Ok(omega * (MU0 * EPS0).sqrt() * eps_c.sqrt())
}

/// Outgoing wave from a point source in a homogeneous lossy medium, sampled
/// at every cell center. 2D grids get cylindrical spreading 1/sqrt(d), 3D
/// grids spherical spreading 1/d; the singularity is regularized at one grid
/// spacing.
pub fn analytic_source_field(
    source: [f64; 3],
    medium: &TissueProperties,
    grid: &Grid,
    frequency: f64,
    amplitude: f64,
) -> Result<Vec<Complex64>> {
    let k = complex_wavenumber(medium, frequency)?;
    let r_min = grid.spacing;
    let cylindrical = grid.is_2d();
    let mut out = Vec::with_capacity(grid.n_cells());
    for idx in 0..grid.n_cells() {
        let p = grid.center_of(idx);
        let d = ((p[0] - source[0]).powi(2)
            + (p[1] - source[1]).powi(2)
            + (p[2] - source[2]).powi(2))
        .sqrt();
        let d_eff = d.max(r_min);
        let spread = if cylindrical {
            d_eff.sqrt()
        } else {
            d_eff
        };
        let phase = (-Complex64::i() * k * d).exp();
        out.push(amplitude * phase / spread);
    }
    Ok(out)
}

/// Build the uniform circular array and its per-antenna field maps.
///
/// The propagation medium of the surrogate is muscle (per-cell SAR still uses
/// the local tissue properties). The source amplitude is fixed so that a
/// standalone antenna produces `center_field_v_per_m` at the ring center,
/// which keeps in-tissue peaks at the hundred-volt scale.
pub fn build_array(cfg: &ArrayConfig, phantom: &PhantomGrid) -> Result<AntennaFieldSet> {
    if cfg.n_antennas < 2 {
        return Err(Error::Config(format!(
            "array requires at least 2 antennas (got {})",
            cfg.n_antennas
        )));
    }
    let grid = &phantom.grid;
    let medium = phantom.db.lookup("muscle")?.clone();

    // Lateral tissue extent around the grid center axis.
    let mut max_r: f64 = 0.0;
    let cz = grid.origin[2] + (grid.nz as f64 - 1.0) / 2.0 * grid.spacing;
    let mut centroid = [0.0f64; 2];
    for &idx in phantom.tissue_cells() {
        let p = grid.center_of(idx);
        centroid[0] += p[0];
        centroid[1] += p[1];
    }
    let nt = phantom.tissue_cells().len() as f64;
    centroid[0] /= nt;
    centroid[1] /= nt;
    for &idx in phantom.tissue_cells() {
        let p = grid.center_of(idx);
        let r = ((p[0] - centroid[0]).powi(2) + (p[1] - centroid[1]).powi(2)).sqrt();
        max_r = max_r.max(r);
    }
    let ring_radius = match cfg.ring_radius_mm {
        Some(mm) => mm * 1e-3,
        None => max_r + cfg.standoff_mm * 1e-3,
    };

    let k = complex_wavenumber(&medium, cfg.frequency_hz)?;
    let alpha = -k.im;
    let spread_ref = if grid.is_2d() {
        ring_radius.sqrt()
    } else {
        ring_radius
    };
    let amplitude = cfg.center_field_v_per_m * spread_ref * (alpha * ring_radius).exp();

    let mut fields = Vec::with_capacity(cfg.n_antennas);
    let mut positions = Vec::with_capacity(cfg.n_antennas);
    for n in 0..cfg.n_antennas {
        // Degree arithmetic modulo 360 keeps rotated configurations
        // bit-identical to antenna permutations whenever the spacing divides
        // the rotation.
        let theta = (cfg.start_angle_deg + 360.0 * n as f64 / cfg.n_antennas as f64)
            .rem_euclid(360.0)
            .to_radians();
        let pos = [
            centroid[0] + ring_radius * theta.cos(),
            centroid[1] + ring_radius * theta.sin(),
            cz,
        ];
        // Sources must sit at least one cell outside tissue.
        let mut min_d = f64::INFINITY;
        for &idx in phantom.tissue_cells() {
            let p = grid.center_of(idx);
            let d2 = (p[0] - pos[0]).powi(2) + (p[1] - pos[1]).powi(2) + (p[2] - pos[2]).powi(2);
            min_d = min_d.min(d2);
        }
        if min_d.sqrt() < grid.spacing {
            return Err(Error::Config(format!(
                "antenna {n} at ({:.1}, {:.1}) mm lies inside or touches tissue",
                pos[0] * 1e3,
                pos[1] * 1e3
            )));
        }
        fields.push(analytic_source_field(
            pos,
            &medium,
            grid,
            cfg.frequency_hz,
            amplitude,
        )?);
        positions.push(pos);
    }
    Ok(AntennaFieldSet {
        grid: grid.clone(),
        frequency: cfg.frequency_hz,
        fields,
        source_positions: positions,
    })
}

fn check_weights(fields: &AntennaFieldSet, w: &ExcitationVector) -> Result<()> {
    if w.len() != fields.n_antennas() {
        return Err(Error::GridMismatch(format!(
            "{} weights for {} antennas",
            w.len(),
            fields.n_antennas()
        )));
    }
    Ok(())
}

/// Complex total field sum_n w_n E_n per cell.
pub fn superpose_field(fields: &AntennaFieldSet, w: &ExcitationVector) -> Result<Vec<Complex64>> {
    check_weights(fields, w)?;
    let n_cells = fields.grid.n_cells();
    let mut total = vec![Complex64::ZERO; n_cells];
    for (wn, map) in w.weights.iter().zip(&fields.fields) {
        if *wn == Complex64::ZERO {
            continue;
        }
        for (t, e) in total.iter_mut().zip(map) {
            *t += wn * e;
        }
    }
    Ok(total)
}

/// Squared field magnitude |sum_n w_n E_n|^2 per cell, V^2/m^2.
pub fn superpose(fields: &AntennaFieldSet, w: &ExcitationVector) -> Result<Vec<f64>> {
    Ok(superpose_field(fields, w)?
        .into_iter()
        .map(|e| e.norm_sqr())
        .collect())
}

/// Same as [`superpose`] but only at `cells`; output aligned with `cells`.
/// Used by the optimizer inner loop.
pub fn superpose_on(
    fields: &AntennaFieldSet,
    w: &ExcitationVector,
    cells: &[usize],
) -> Result<Vec<f64>> {
    check_weights(fields, w)?;
    let mut out = vec![Complex64::ZERO; cells.len()];
    for (wn, map) in w.weights.iter().zip(&fields.fields) {
        if *wn == Complex64::ZERO {
            continue;
        }
        for (o, &c) in out.iter_mut().zip(cells) {
            *o += wn * map[c];
        }
    }
    Ok(out.into_iter().map(|e| e.norm_sqr()).collect())
}

/// SAR = sigma |E|^2 / (2 rho) with the local tissue properties; zero outside
/// tissue and in internal air (sigma = 0).
pub fn sar_from_field(e2: &[f64], phantom: &PhantomGrid) -> Result<SarMap> {
    if e2.len() != phantom.grid.n_cells() {
        return Err(Error::GridMismatch(format!(
            "|E|^2 map has {} cells, grid has {}",
            e2.len(),
            phantom.grid.n_cells()
        )));
    }
    let mut values = vec![0.0; e2.len()];
    for (idx, v) in values.iter_mut().enumerate() {
        if let Some(t) = phantom.material(idx) {
            *v = t.sigma * e2[idx] / (2.0 * t.rho);
        }
    }
    Ok(SarMap {
        grid: phantom.grid.clone(),
        values,
    })
}

/// Real scale c >= 0 such that max over `cells` of |E|^2 for c*w equals
/// `target_peak_e2`.
pub fn scale_to_peak_e2(
    fields: &AntennaFieldSet,
    w: &ExcitationVector,
    cells: &[usize],
    target_peak_e2: f64,
) -> Result<ExcitationVector> {
    let e2 = superpose_on(fields, w, cells)?;
    let peak = e2.iter().cloned().fold(0.0f64, f64::max);
    if peak <= 0.0 {
        return Err(Error::Numerical(
            "cannot normalize an identically zero field".into(),
        ));
    }
    let c = (target_peak_e2 / peak).sqrt();
    Ok(w.scaled(Complex64::new(c, 0.0)))
}

/// Write the per-antenna field maps.
///
/// Format: header `nx ny [nz] spacing_mm n_antennas frequency_hz`, then CSV
/// rows `antenna_idx,i,j[,k],re,im`. Floats use the shortest round-trip
/// decimal form, so export/import is bit-exact.
pub fn export_fields(set: &AntennaFieldSet, path: &Path) -> Result<()> {
    let g = &set.grid;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    if g.is_2d() {
        writeln!(
            f,
            "{} {} {} {} {}",
            g.nx,
            g.ny,
            g.spacing * 1e3,
            set.n_antennas(),
            set.frequency
        )?;
    } else {
        writeln!(
            f,
            "{} {} {} {} {} {}",
            g.nx,
            g.ny,
            g.nz,
            g.spacing * 1e3,
            set.n_antennas(),
            set.frequency
        )?;
    }
    for (a, map) in set.fields.iter().enumerate() {
        for idx in 0..g.n_cells() {
            let (i, j, k) = g.coords_of(idx);
            let e = map[idx];
            if g.is_2d() {
                writeln!(f, "{a},{i},{j},{},{}", e.re, e.im)?;
            } else {
                writeln!(f, "{a},{i},{j},{k},{},{}", e.re, e.im)?;
            }
        }
    }
    Ok(())
}

/// Load a field set previously written by [`export_fields`]; the header must
/// match `grid`.
pub fn import_fields(path: &Path, grid: &Grid) -> Result<AntennaFieldSet> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut lines = std::io::BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Io(format!("{}: empty file", path.display())))??;
    let toks: Vec<&str> = header.split_whitespace().collect();
    let (dims_3d, expect) = match toks.len() {
        5 => (false, 5),
        6 => (true, 6),
        n => {
            return Err(Error::Io(format!(
                "field header has {n} tokens, expected 5 (2D) or 6 (3D)"
            )))
        }
    };
    let num = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::Io(format!("bad header token `{s}`")))
    };
    let nx = num(toks[0])? as usize;
    let ny = num(toks[1])? as usize;
    let nz = if dims_3d { num(toks[2])? as usize } else { 1 };
    let spacing_mm = num(toks[expect - 3])?;
    let n_antennas = num(toks[expect - 2])? as usize;
    let frequency = num(toks[expect - 1])?;

    if [nx, ny, nz] != grid.dims() {
        return Err(Error::GridMismatch(format!(
            "file grid {nx}x{ny}x{nz} vs expected {}x{}x{}",
            grid.nx, grid.ny, grid.nz
        )));
    }
    let spacing = spacing_mm * 1e-3;
    if (spacing - grid.spacing).abs() > 1e-12 * grid.spacing {
        return Err(Error::GridMismatch(format!(
            "file spacing {spacing} m vs expected {} m",
            grid.spacing
        )));
    }

    let n_cells = grid.n_cells();
    let mut fields = vec![vec![Complex64::ZERO; n_cells]; n_antennas];
    let mut seen = vec![0usize; n_antennas];
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = lineno + 2;
        let parts: Vec<&str> = line.split(',').collect();
        let want = if dims_3d { 6 } else { 5 };
        if parts.len() != want {
            return Err(Error::Io(format!(
                "line {row}: {} fields, expected {want}",
                parts.len()
            )));
        }
        let pint = |s: &str| -> Result<usize> {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Io(format!("line {row}: bad index `{s}`")))
        };
        let pf = |s: &str| -> Result<f64> {
            let v = s
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Io(format!("line {row}: bad float `{s}`")))?;
            if !v.is_finite() {
                return Err(Error::Io(format!("line {row}: non-finite value `{s}`")));
            }
            Ok(v)
        };
        let a = pint(parts[0])?;
        let i = pint(parts[1])?;
        let j = pint(parts[2])?;
        let k = if dims_3d { pint(parts[3])? } else { 0 };
        if a >= n_antennas || i >= nx || j >= ny || k >= nz {
            return Err(Error::Io(format!("line {row}: index out of range")));
        }
        let re = pf(parts[want - 2])?;
        let im = pf(parts[want - 1])?;
        fields[a][grid.idx(i, j, k)] = Complex64::new(re, im);
        seen[a] += 1;
    }
    for (a, &count) in seen.iter().enumerate() {
        if count != n_cells {
            return Err(Error::Io(format!(
                "antenna {a}: {count} rows, expected {n_cells}"
            )));
        }
    }
    Ok(AntennaFieldSet {
        grid: grid.clone(),
        frequency,
        fields,
        source_positions: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{rasterize, Shape, ShapeKind, TissueDb};

    fn lossless_medium() -> TissueProperties {
        TissueProperties::new("ideal", 1000.0, 0.5, 0.0, 56.9, 0.0).unwrap()
    }

    #[test]
    fn lossless_cylindrical_spreading_follows_inverse_sqrt() {
        let grid = Grid::new(32, 1, 1, 1e-3, [0.0; 3]);
        let medium = lossless_medium();
        let e = analytic_source_field([0.0; 3], &medium, &grid, 434.0e6, 1.0).unwrap();
        // Cells 4 and 8 sit at distances d and 2d from the source.
        let ratio = e[8].norm() / e[4].norm();
        assert!((ratio - 1.0 / 2.0f64.sqrt()).abs() < 1e-9, "ratio {ratio}");
    }

    #[test]
    fn attenuation_matches_polar_form_root() {
        let db = TissueDb::builtin();
        let muscle = db.lookup("muscle").unwrap();
        let f = 434.0e6;
        let k = complex_wavenumber(muscle, f).unwrap();
        // Independent route: polar decomposition of eps_c, half-angle root.
        let omega = 2.0 * std::f64::consts::PI * f;
        let im = -muscle.sigma / (omega * EPS0);
        let mag = (muscle.eps_r * muscle.eps_r + im * im).sqrt();
        let theta = im.atan2(muscle.eps_r);
        let root_mag = mag.sqrt();
        let scale = omega * (MU0 * EPS0).sqrt();
        let k_ref_im = scale * root_mag * (theta / 2.0).sin();
        let alpha = -k.im;
        let alpha_ref = -k_ref_im;
        assert!(alpha > 0.0);
        assert!(((alpha - alpha_ref) / alpha_ref).abs() < 1e-9);
    }

    #[test]
    fn zero_frequency_rejected() {
        let medium = lossless_medium();
        let grid = Grid::new(4, 4, 1, 1e-3, [0.0; 3]);
        assert!(analytic_source_field([0.0; 3], &medium, &grid, 0.0, 1.0).is_err());
    }

    #[test]
    fn symmetric_sources_give_equal_magnitude() {
        let grid = Grid::new(9, 9, 1, 1e-3, [-4e-3, -4e-3, 0.0]);
        let db = TissueDb::builtin();
        let muscle = db.lookup("muscle").unwrap();
        let e1 =
            analytic_source_field([-20e-3, 0.0, 0.0], muscle, &grid, 434.0e6, 1.0).unwrap();
        let e2 = analytic_source_field([20e-3, 0.0, 0.0], muscle, &grid, 434.0e6, 1.0).unwrap();
        let mid = grid.idx(4, 4, 0);
        assert!((e1[mid].norm() - e2[mid].norm()).abs() < 1e-12);
    }

    fn disc_phantom() -> PhantomGrid {
        let grid = Grid::new(40, 40, 1, 2e-3, [-39e-3, -39e-3, 0.0]);
        let shapes = vec![Shape {
            kind: ShapeKind::Cylinder {
                center: [0.0, 0.0],
                radius: 30e-3,
                axis: crate::phantom::Axis::Z,
            },
            tissue: "muscle".into(),
            priority: 0,
        }];
        rasterize(&shapes, grid, TissueDb::builtin()).unwrap()
    }

    #[test]
    fn array_of_eight_has_45_degree_spacing() {
        let ph = disc_phantom();
        let set = build_array(&ArrayConfig::default(), &ph).unwrap();
        assert_eq!(set.n_antennas(), 8);
        let centroid = {
            let mut c = [0.0f64; 2];
            for p in &set.source_positions {
                c[0] += p[0];
                c[1] += p[1];
            }
            [c[0] / 8.0, c[1] / 8.0]
        };
        for n in 0..8 {
            let p = set.source_positions[n];
            let ang = (p[1] - centroid[1]).atan2(p[0] - centroid[0]).to_degrees();
            let diff = (ang - 45.0 * n as f64).rem_euclid(360.0);
            let dist = diff.min(360.0 - diff);
            assert!(dist < 1e-9, "antenna {n}: angle {ang}");
        }
    }

    #[test]
    fn single_antenna_array_rejected() {
        let ph = disc_phantom();
        let cfg = ArrayConfig {
            n_antennas: 1,
            ..ArrayConfig::default()
        };
        assert!(build_array(&cfg, &ph).is_err());
    }

    #[test]
    fn rotating_array_by_spacing_permutes_antennas() {
        let ph = disc_phantom();
        let base = build_array(&ArrayConfig::default(), &ph).unwrap();
        let rotated = build_array(
            &ArrayConfig {
                start_angle_deg: 45.0,
                ..ArrayConfig::default()
            },
            &ph,
        )
        .unwrap();
        for n in 0..8 {
            let m = (n + 1) % 8;
            assert_eq!(rotated.fields[n], base.fields[m], "antenna {n}");
        }
    }

    #[test]
    fn source_inside_tissue_rejected() {
        let ph = disc_phantom();
        let cfg = ArrayConfig {
            ring_radius_mm: Some(10.0),
            ..ArrayConfig::default()
        };
        assert!(build_array(&cfg, &ph).is_err());
    }

    #[test]
    fn unit_weight_selects_single_antenna() {
        let ph = disc_phantom();
        let set = build_array(&ArrayConfig::default(), &ph).unwrap();
        let mut pairs = vec![(0.0, 0.0); 8];
        pairs[3] = (1.0, 0.0);
        let w = ExcitationVector::from_amp_phase(&pairs);
        let e2 = superpose(&set, &w).unwrap();
        for (idx, v) in e2.iter().enumerate() {
            assert_eq!(*v, set.fields[3][idx].norm_sqr());
        }
    }

    #[test]
    fn superposition_matches_naive_complex_arithmetic() {
        let grid = Grid::new(4, 4, 1, 1e-3, [0.0; 3]);
        let db = TissueDb::builtin();
        let muscle = db.lookup("muscle").unwrap();
        let sources = [[-5e-3, 1e-3, 0.0], [8e-3, 2e-3, 0.0], [1e-3, 9e-3, 0.0]];
        let fields: Vec<Vec<Complex64>> = sources
            .iter()
            .map(|&s| analytic_source_field(s, muscle, &grid, 434.0e6, 1.0).unwrap())
            .collect();
        let set = AntennaFieldSet {
            grid: grid.clone(),
            frequency: 434.0e6,
            fields,
            source_positions: sources.to_vec(),
        };
        let w = ExcitationVector::from_amp_phase(&[(0.7, 0.3), (1.2, -1.1), (0.4, 2.7)]);
        let e2 = superpose(&set, &w).unwrap();
        for idx in 0..grid.n_cells() {
            // Separate real/imag accumulation, no complex type.
            let mut re = 0.0;
            let mut im = 0.0;
            for (wn, map) in w.weights.iter().zip(&set.fields) {
                let e = map[idx];
                re += wn.re * e.re - wn.im * e.im;
                im += wn.re * e.im + wn.im * e.re;
            }
            let expect = re * re + im * im;
            let rel = (e2[idx] - expect).abs() / expect.max(1e-300);
            assert!(rel < 1e-12, "cell {idx}: {} vs {expect}", e2[idx]);
        }
    }

    #[test]
    fn weight_scaling_scales_sar_quadratically() {
        let ph = disc_phantom();
        let set = build_array(&ArrayConfig::default(), &ph).unwrap();
        let w = ExcitationVector::from_amp_phase(&[
            (1.0, 0.0),
            (0.5, 1.0),
            (0.8, 2.0),
            (0.3, 3.0),
            (0.9, 4.0),
            (0.2, 5.0),
            (0.7, 0.5),
            (0.6, 1.5),
        ]);
        let c = Complex64::new(1.7, -2.3);
        let sar1 = sar_from_field(&superpose(&set, &w).unwrap(), &ph).unwrap();
        let sar2 = sar_from_field(&superpose(&set, &w.scaled(c)).unwrap(), &ph).unwrap();
        let c2 = c.norm_sqr();
        for (a, b) in sar1.values.iter().zip(&sar2.values) {
            if *a > 0.0 {
                assert!(((b / a) - c2).abs() / c2 < 1e-12);
            } else {
                assert_eq!(*b, 0.0);
            }
        }
    }

    #[test]
    fn sar_hand_value_for_muscle() {
        let grid = Grid::new(1, 1, 1, 1e-3, [0.0; 3]);
        let shapes = vec![Shape {
            kind: ShapeKind::Sphere {
                center: [0.0; 3],
                radius: 1e-3,
            },
            tissue: "muscle".into(),
            priority: 0,
        }];
        let ph = rasterize(&shapes, grid, TissueDb::builtin()).unwrap();
        let sar = sar_from_field(&[1.0e4], &ph).unwrap();
        let expect = 0.805 * 1.0e4 / (2.0 * 1090.0);
        assert!((sar.values[0] - expect).abs() < 1e-12);
        assert!((sar.values[0] - 3.6927).abs() < 1e-4);
    }

    #[test]
    fn field_linearity_at_complex_level() {
        let ph = disc_phantom();
        let set = build_array(&ArrayConfig::default(), &ph).unwrap();
        let w1 = ExcitationVector::from_amp_phase(&[(0.3, 0.1); 8]);
        let w2 = ExcitationVector::from_amp_phase(&[
            (0.9, 1.0),
            (0.1, 2.0),
            (0.5, 0.0),
            (0.2, 0.7),
            (0.4, 2.2),
            (0.8, 1.3),
            (0.6, 0.4),
            (0.7, 2.9),
        ]);
        let sum = ExcitationVector {
            weights: w1
                .weights
                .iter()
                .zip(&w2.weights)
                .map(|(a, b)| a + b)
                .collect(),
        };
        let f1 = superpose_field(&set, &w1).unwrap();
        let f2 = superpose_field(&set, &w2).unwrap();
        let fs = superpose_field(&set, &sum).unwrap();
        for idx in 0..fs.len() {
            let d = (fs[idx] - (f1[idx] + f2[idx])).norm();
            let scale = fs[idx].norm().max(1e-300);
            assert!(d / scale < 1e-12);
        }
    }

    #[test]
    fn export_import_round_trip_is_exact() {
        let ph = disc_phantom();
        let set = build_array(&ArrayConfig::default(), &ph).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fields.txt");
        export_fields(&set, &path).unwrap();
        let back = import_fields(&path, &ph.grid).unwrap();
        assert_eq!(back.n_antennas(), set.n_antennas());
        assert_eq!(back.frequency, set.frequency);
        for a in 0..set.n_antennas() {
            assert_eq!(back.fields[a], set.fields[a], "antenna {a}");
        }
    }

    #[test]
    fn import_rejects_wrong_grid_and_nan() {
        let ph = disc_phantom();
        let set = build_array(&ArrayConfig::default(), &ph).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fields.txt");
        export_fields(&set, &path).unwrap();

        let wrong = Grid::new(41, 40, 1, 2e-3, ph.grid.origin);
        assert!(matches!(
            import_fields(&path, &wrong),
            Err(Error::GridMismatch(_))
        ));

        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[1] = "0,0,0,NaN,0".into();
        let bad = dir.path().join("bad.txt");
        std::fs::write(&bad, lines.join("\n")).unwrap();
        let err = import_fields(&bad, &ph.grid).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}
