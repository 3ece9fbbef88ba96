//! Axis-aligned multivariate Gaussian fit of a squared-field map and the
//! relocatable Gaussian SAR mask it induces.
//!
//! Fitting runs as a linear least-squares problem on log values (the log of
//! an axis-aligned Gaussian is a separable quadratic), followed by a single
//! Gauss-Newton polish in the linear domain to remove the log-weighting bias.
//! Both steps are deterministic.

use serde::{Deserialize, Serialize};

use crate::fields::{sar_from_field, SarMap};
use crate::linalg::solve_dense;
use crate::phantom::{Grid, PhantomGrid};
use crate::{Error, Result};

/// Fraction of the ROI peak below which cells are excluded from the fit.
const SUPPORT_THRESHOLD: f64 = 0.05;
const MIN_SUPPORT_CELLS: usize = 10;

/// Height, center, and per-axis standard deviations of the fitted Gaussian.
/// Flat grid axes carry an infinite sigma (no decay along them).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    /// Peak value, V^2/m^2.
    pub a: f64,
    /// Center, m.
    pub r0: [f64; 3],
    /// Standard deviations, m.
    pub sigma: [f64; 3],
}

impl GaussianParams {
    pub fn with_center(&self, r0: [f64; 3]) -> Self {
        Self {
            r0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.a > 0.0 && self.sigma.iter().all(|&s| s > 0.0) {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "gaussian params require a > 0 and sigma > 0 (a={}, sigma={:?})",
                self.a, self.sigma
            )))
        }
    }

    pub fn eval_at(&self, p: [f64; 3]) -> f64 {
        let mut q = 0.0;
        for axis in 0..3 {
            if self.sigma[axis].is_finite() {
                let d = p[axis] - self.r0[axis];
                q += d * d / (self.sigma[axis] * self.sigma[axis]);
            }
        }
        self.a * (-0.5 * q).exp()
    }
}

/// Evaluate the Gaussian at every cell center.
pub fn eval_gaussian(p: &GaussianParams, grid: &Grid) -> Vec<f64> {
    (0..grid.n_cells())
        .map(|idx| p.eval_at(grid.center_of(idx)))
        .collect()
}

/// Relocatable Gaussian heat-source mask: SAR = sigma(r) g(r) / (2 rho(r)),
/// zero outside tissue.
pub fn gaussian_sar(p: &GaussianParams, phantom: &PhantomGrid) -> Result<SarMap> {
    let g = eval_gaussian(p, &phantom.grid);
    sar_from_field(&g, phantom)
}

/// Fit the Gaussian to `e2` over the cells of `roi` at or above 5% of the
/// ROI peak. Returns the parameters and the RMS residual over the fit
/// support, relative to the peak.
pub fn fit_gaussian(
    e2: &[f64],
    roi: &[usize],
    grid: &Grid,
) -> Result<(GaussianParams, f64)> {
    if roi.is_empty() {
        return Err(Error::EmptyMask("fit roi".into()));
    }
    if e2.len() != grid.n_cells() {
        return Err(Error::GridMismatch(format!(
            "|E|^2 map has {} cells, grid has {}",
            e2.len(),
            grid.n_cells()
        )));
    }
    let peak = roi.iter().map(|&c| e2[c]).fold(f64::MIN, f64::max);
    if !(peak > 0.0) {
        return Err(Error::DegenerateFit("roi peak is not positive".into()));
    }
    let support: Vec<usize> = roi
        .iter()
        .copied()
        .filter(|&c| e2[c] >= SUPPORT_THRESHOLD * peak)
        .collect();
    if support.len() < MIN_SUPPORT_CELLS {
        return Err(Error::DegenerateFit(format!(
            "only {} cells above the support threshold (need {MIN_SUPPORT_CELLS})",
            support.len()
        )));
    }

    let axes: Vec<usize> = (0..3).filter(|&a| grid.dims()[a] > 1).collect();
    let n_par = 1 + 2 * axes.len();

    // Center coordinates on the support centroid for conditioning.
    let mut mean = [0.0f64; 3];
    for &c in &support {
        let p = grid.center_of(c);
        for a in 0..3 {
            mean[a] += p[a];
        }
    }
    for m in mean.iter_mut() {
        *m /= support.len() as f64;
    }

    // Normal equations of log(e2) ~ c0 + sum_d (c1_d x_d + c2_d x_d^2).
    let mut ata = vec![vec![0.0; n_par]; n_par];
    let mut atb = vec![0.0; n_par];
    let mut row = vec![0.0; n_par];
    for &c in &support {
        let p = grid.center_of(c);
        row[0] = 1.0;
        for (ai, &a) in axes.iter().enumerate() {
            let x = p[a] - mean[a];
            row[1 + 2 * ai] = x;
            row[2 + 2 * ai] = x * x;
        }
        let y = e2[c].ln();
        for i in 0..n_par {
            for j in 0..n_par {
                ata[i][j] += row[i] * row[j];
            }
            atb[i] += row[i] * y;
        }
    }
    let coef = solve_dense(&mut ata, &mut atb).map_err(|_| {
        Error::DegenerateFit("support cells are collinear or otherwise degenerate".into())
    })?;

    let mut sigma = [f64::INFINITY; 3];
    let mut r0 = mean;
    let mut log_a = coef[0];
    for (ai, &a) in axes.iter().enumerate() {
        let c1 = coef[1 + 2 * ai];
        let c2 = coef[2 + 2 * ai];
        if c2 >= 0.0 {
            return Err(Error::DegenerateFit(format!(
                "non-Gaussian profile: fitted variance along axis {a} is not positive"
            )));
        }
        let var = -1.0 / (2.0 * c2);
        let center = c1 * var; // relative to the support centroid
        sigma[a] = var.sqrt();
        r0[a] = mean[a] + center;
        log_a += center * center / (2.0 * var);
    }
    let params = GaussianParams {
        a: log_a.exp(),
        r0,
        sigma,
    };
    params.validate().map_err(|e| {
        Error::DegenerateFit(format!("log-domain fit produced invalid params: {e}"))
    })?;

    let rms = |p: &GaussianParams| -> f64 {
        let mut acc = 0.0;
        for &c in &support {
            let d = p.eval_at(grid.center_of(c)) - e2[c];
            acc += d * d;
        }
        (acc / support.len() as f64).sqrt() / peak
    };
    let rms_log = rms(&params);

    // One Gauss-Newton step on (a, r0, sigma) in the linear domain;
    // kept only if it actually reduces the residual.
    if let Some(polished) = gauss_newton_step(&params, e2, &support, grid, &axes) {
        if polished.validate().is_ok() {
            let rms_pol = rms(&polished);
            if rms_pol < rms_log {
                return Ok((polished, rms_pol));
            }
        }
    }
    Ok((params, rms_log))
}

fn gauss_newton_step(
    params: &GaussianParams,
    e2: &[f64],
    support: &[usize],
    grid: &Grid,
    axes: &[usize],
) -> Option<GaussianParams> {
    let n_par = 1 + 2 * axes.len();
    let mut jtj = vec![vec![0.0; n_par]; n_par];
    let mut jtr = vec![0.0; n_par];
    let mut jrow = vec![0.0; n_par];
    for &c in support {
        let p = grid.center_of(c);
        let g = params.eval_at(p);
        let resid = g - e2[c];
        jrow[0] = g / params.a;
        for (ai, &a) in axes.iter().enumerate() {
            let d = p[a] - params.r0[a];
            let s = params.sigma[a];
            jrow[1 + 2 * ai] = g * d / (s * s);
            jrow[2 + 2 * ai] = g * d * d / (s * s * s);
        }
        for i in 0..n_par {
            for j in 0..n_par {
                jtj[i][j] += jrow[i] * jrow[j];
            }
            jtr[i] -= jrow[i] * resid;
        }
    }
    let delta = solve_dense(&mut jtj, &mut jtr).ok()?;
    let mut out = params.clone();
    out.a += delta[0];
    for (ai, &a) in axes.iter().enumerate() {
        out.r0[a] += delta[1 + 2 * ai];
        out.sigma[a] += delta[2 + 2 * ai];
    }
    Some(out)
}
