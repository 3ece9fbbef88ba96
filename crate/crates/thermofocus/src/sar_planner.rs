//! Excitation optimization: target-to-hotspot SAR quotient (THQ), hotspot
//! volume statistics, and a particle swarm optimizer over complex antenna
//! weights.
//!
//! THQ is the mean SAR in the target region divided by the mean SAR of the
//! hottest fraction (default 1%) of the healthy volume. The optimizer
//! minimizes 1/THQ over 2N-1 real parameters: N amplitudes in [0,1] and N-1
//! phases (the first antenna's phase is the gauge and stays 0).

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fields::{superpose_on, AntennaFieldSet, ExcitationVector, SarMap};
use crate::phantom::PhantomGrid;
use crate::{Error, Result};

/// Fraction of the healthy volume forming the hotspot set V1.
pub const V1_FRACTION: f64 = 0.01;

/// THQ value with its constituents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThqReport {
    pub thq: f64,
    pub sar_target_avg: f64,
    pub sar_v1_avg: f64,
    pub v1_cell_count: usize,
}

/// PSO settings; values are the standard constriction coefficients unless a
/// scenario overrides them. Runs are reproducible per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PsoConfig {
    pub swarm_size: usize,
    pub max_evals: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub seed: u64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self {
            swarm_size: 40,
            max_evals: 20_000,
            inertia: 0.729,
            cognitive: 1.494,
            social: 1.494,
            seed: 0,
        }
    }
}

impl PsoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.swarm_size < 2 {
            return Err(Error::Config("pso: swarm_size must be >= 2".into()));
        }
        if self.max_evals < self.swarm_size {
            return Err(Error::Config(
                "pso: max_evals must be >= swarm_size".into(),
            ));
        }
        Ok(())
    }
}

/// Mean SAR over the top `fraction` of `healthy` cells (count rounded up),
/// plus the selected cell set. Ties at the cutoff break by ascending cell
/// index, which makes the selection deterministic.
pub fn hotspot_average(
    sar: &SarMap,
    healthy: &[usize],
    fraction: f64,
) -> Result<(f64, Vec<usize>)> {
    if healthy.is_empty() {
        return Err(Error::EmptyMask("healthy".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "hotspot fraction must lie in (0, 1] (got {fraction})"
        )));
    }
    let m = ((fraction * healthy.len() as f64).ceil() as usize).max(1);
    let mut ranked: Vec<usize> = healthy.to_vec();
    ranked.sort_unstable_by(|&a, &b| {
        sar.values[b]
            .partial_cmp(&sar.values[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    ranked.truncate(m);
    let avg = ranked.iter().map(|&i| sar.values[i]).sum::<f64>() / m as f64;
    Ok((avg, ranked))
}

/// Target-to-hotspot SAR quotient for the given masks.
pub fn thq(sar: &SarMap, gtv: &[usize], healthy: &[usize], fraction: f64) -> Result<ThqReport> {
    if gtv.is_empty() {
        return Err(Error::EmptyMask("gtv".into()));
    }
    let target_avg = gtv.iter().map(|&i| sar.values[i]).sum::<f64>() / gtv.len() as f64;
    let (v1_avg, v1_cells) = hotspot_average(sar, healthy, fraction)?;
    if target_avg == 0.0 && v1_avg == 0.0 {
        return Err(Error::Numerical(
            "THQ undefined: SAR is zero everywhere (degenerate excitation)".into(),
        ));
    }
    if v1_avg == 0.0 {
        return Err(Error::Numerical(
            "THQ undefined: hotspot average is zero".into(),
        ));
    }
    Ok(ThqReport {
        thq: target_avg / v1_avg,
        sar_target_avg: target_avg,
        sar_v1_avg: v1_avg,
        v1_cell_count: v1_cells.len(),
    })
}

/// Optimization outcome: best weights (first antenna phase = 0), their THQ,
/// the evaluation count, and the best-objective trace per iteration.
#[derive(Debug, Clone)]
pub struct PsoOutcome {
    pub weights: ExcitationVector,
    pub report: ThqReport,
    pub evals: usize,
    pub best_objective_history: Vec<f64>,
}

/// Precomputed cell data for fast THQ evaluation inside the optimizer.
struct ThqWorkspace<'a> {
    fields: &'a AntennaFieldSet,
    /// Tissue cells in ascending index order.
    cells: Vec<usize>,
    /// sigma/(2 rho) per tissue cell.
    coef: Vec<f64>,
    /// Positions (into `cells`) of target / healthy cells.
    target_pos: Vec<usize>,
    healthy_pos: Vec<usize>,
    v1_count: usize,
}

impl<'a> ThqWorkspace<'a> {
    fn new(
        fields: &'a AntennaFieldSet,
        phantom: &PhantomGrid,
        target_mask: &[usize],
    ) -> Result<Self> {
        if target_mask.is_empty() {
            return Err(Error::EmptyMask("optimization target".into()));
        }
        if !fields.grid.same_layout(&phantom.grid) {
            return Err(Error::GridMismatch(
                "field set and phantom use different grids".into(),
            ));
        }
        let cells: Vec<usize> = phantom.tissue_cells().to_vec();
        let mut pos_of = vec![usize::MAX; phantom.grid.n_cells()];
        for (p, &c) in cells.iter().enumerate() {
            pos_of[c] = p;
        }
        let mut is_target = vec![false; phantom.grid.n_cells()];
        for &c in target_mask {
            if pos_of[c] == usize::MAX {
                return Err(Error::Config(format!(
                    "target mask includes non-tissue cell {c}"
                )));
            }
            is_target[c] = true;
        }
        let coef = cells
            .iter()
            .map(|&c| {
                let t = phantom.material(c).unwrap();
                t.sigma / (2.0 * t.rho)
            })
            .collect();
        let target_pos: Vec<usize> = cells
            .iter()
            .enumerate()
            .filter(|(_, &c)| is_target[c])
            .map(|(p, _)| p)
            .collect();
        let healthy_pos: Vec<usize> = cells
            .iter()
            .enumerate()
            .filter(|(_, &c)| !is_target[c])
            .map(|(p, _)| p)
            .collect();
        if healthy_pos.is_empty() {
            return Err(Error::EmptyMask("healthy (tissue minus target)".into()));
        }
        let v1_count = ((V1_FRACTION * healthy_pos.len() as f64).ceil() as usize).max(1);
        Ok(Self {
            fields,
            cells,
            coef,
            target_pos,
            healthy_pos,
            v1_count,
        })
    }

    /// 1/THQ of the weight vector; +inf for degenerate inputs.
    fn objective(&self, w: &ExcitationVector) -> f64 {
        let e2 = match superpose_on(self.fields, w, &self.cells) {
            Ok(v) => v,
            Err(_) => return f64::INFINITY,
        };
        let sar: Vec<f64> = e2.iter().zip(&self.coef).map(|(e, c)| e * c).collect();
        let target_avg =
            self.target_pos.iter().map(|&p| sar[p]).sum::<f64>() / self.target_pos.len() as f64;
        // Top-m healthy by SAR; positions ascend with cell index, so the
        // position tiebreak equals the cell-index tiebreak.
        let mut ranked: Vec<usize> = self.healthy_pos.clone();
        ranked.sort_unstable_by(|&a, &b| sar[b].partial_cmp(&sar[a]).unwrap().then(a.cmp(&b)));
        ranked.truncate(self.v1_count);
        let v1_avg = ranked.iter().map(|&p| sar[p]).sum::<f64>() / self.v1_count as f64;
        if v1_avg <= 0.0 || !target_avg.is_finite() {
            return f64::INFINITY;
        }
        v1_avg / target_avg
    }

    fn report(&self, w: &ExcitationVector, phantom: &PhantomGrid) -> Result<ThqReport> {
        let e2 = crate::fields::superpose(self.fields, w)?;
        let sar = crate::fields::sar_from_field(&e2, phantom)?;
        let gtv: Vec<usize> = self.target_pos.iter().map(|&p| self.cells[p]).collect();
        let healthy: Vec<usize> = self.healthy_pos.iter().map(|&p| self.cells[p]).collect();
        thq(&sar, &gtv, &healthy, V1_FRACTION)
    }
}

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Decode a particle position (N amplitudes, N-1 phases) into weights.
fn decode(x: &[f64], n_antennas: usize) -> ExcitationVector {
    let mut weights = Vec::with_capacity(n_antennas);
    weights.push(Complex64::new(x[0], 0.0));
    for n in 1..n_antennas {
        weights.push(Complex64::from_polar(x[n], x[n_antennas + n - 1]));
    }
    ExcitationVector { weights }
}

fn sample_position(rng: &mut ChaCha8Rng, n_antennas: usize) -> Vec<f64> {
    let dims = 2 * n_antennas - 1;
    loop {
        let mut x: Vec<f64> = Vec::with_capacity(dims);
        for _ in 0..n_antennas {
            x.push(rng.random_range(0.0..1.0));
        }
        for _ in 0..n_antennas - 1 {
            x.push(rng.random_range(0.0..TWO_PI));
        }
        // Re-sample candidates with no excitation at all.
        if x[..n_antennas].iter().any(|&a| a > 1e-9) {
            return x;
        }
    }
}

/// Maximize THQ over antenna weights with a synchronous global-best PSO.
///
/// Healthy tissue is everything outside `target_mask`. Each particle owns a
/// pre-seeded RNG stream, so results do not depend on evaluation parallelism.
pub fn pso_optimize(
    fields: &AntennaFieldSet,
    phantom: &PhantomGrid,
    target_mask: &[usize],
    cfg: &PsoConfig,
) -> Result<PsoOutcome> {
    cfg.validate()?;
    let ws = ThqWorkspace::new(fields, phantom, target_mask)?;
    let n_antennas = fields.n_antennas();
    let dims = 2 * n_antennas - 1;
    let swarm = cfg.swarm_size;

    let mut rngs: Vec<ChaCha8Rng> = (0..swarm)
        .map(|p| ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(p as u64 + 1))))
        .collect();

    let mut pos: Vec<Vec<f64>> = rngs
        .iter_mut()
        .map(|r| sample_position(r, n_antennas))
        .collect();
    let mut vel: Vec<Vec<f64>> = rngs
        .iter_mut()
        .map(|r| {
            (0..dims)
                .map(|d| {
                    let range = if d < n_antennas { 1.0 } else { TWO_PI };
                    r.random_range(-0.1 * range..0.1 * range)
                })
                .collect()
        })
        .collect();

    let eval_all = |positions: &[Vec<f64>]| -> Vec<f64> {
        positions
            .par_iter()
            .map(|x| ws.objective(&decode(x, n_antennas)))
            .collect()
    };

    let mut fitness = eval_all(&pos);
    let mut evals = swarm;
    let mut pbest = pos.clone();
    let mut pbest_f = fitness.clone();
    let mut gbest_idx = argmin(&pbest_f);
    let mut gbest = pbest[gbest_idx].clone();
    let mut gbest_f = pbest_f[gbest_idx];
    let mut history = vec![gbest_f];

    while evals + swarm <= cfg.max_evals {
        for p in 0..swarm {
            let rng = &mut rngs[p];
            for d in 0..dims {
                let r1: f64 = rng.random_range(0.0..1.0);
                let r2: f64 = rng.random_range(0.0..1.0);
                vel[p][d] = cfg.inertia * vel[p][d]
                    + cfg.cognitive * r1 * (pbest[p][d] - pos[p][d])
                    + cfg.social * r2 * (gbest[d] - pos[p][d]);
                pos[p][d] += vel[p][d];
            }
            for d in 0..n_antennas {
                pos[p][d] = pos[p][d].clamp(0.0, 1.0);
            }
            for d in n_antennas..dims {
                pos[p][d] = pos[p][d].rem_euclid(TWO_PI);
            }
            if pos[p][..n_antennas].iter().all(|&a| a <= 1e-9) {
                pos[p] = sample_position(rng, n_antennas);
                for v in vel[p].iter_mut() {
                    *v = 0.0;
                }
            }
        }
        fitness = eval_all(&pos);
        evals += swarm;
        for p in 0..swarm {
            if fitness[p] < pbest_f[p] {
                pbest_f[p] = fitness[p];
                pbest[p] = pos[p].clone();
            }
        }
        gbest_idx = argmin(&pbest_f);
        if pbest_f[gbest_idx] < gbest_f {
            gbest_f = pbest_f[gbest_idx];
            gbest = pbest[gbest_idx].clone();
        }
        history.push(gbest_f);
    }

    if !gbest_f.is_finite() {
        return Err(Error::Numerical(
            "PSO found no feasible excitation (objective stayed infinite)".into(),
        ));
    }
    let weights = decode(&gbest, n_antennas);
    let report = ws.report(&weights, phantom)?;
    Ok(PsoOutcome {
        weights,
        report,
        evals,
        best_objective_history: history,
    })
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{build_array, ArrayConfig};
    use crate::phantom::{rasterize, Axis, Grid, Shape, ShapeKind, TissueDb};

    fn sar_on_grid(nx: usize, ny: usize, values: Vec<f64>) -> SarMap {
        SarMap {
            grid: Grid::new(nx, ny, 1, 1e-3, [0.0; 3]),
            values,
        }
    }

    #[test]
    fn uniform_sar_hotspot_average_is_that_value() {
        let sar = sar_on_grid(10, 10, vec![2.5; 100]);
        let healthy: Vec<usize> = (0..100).collect();
        for fraction in [0.01, 0.1, 0.5, 1.0] {
            let (avg, _) = hotspot_average(&sar, &healthy, fraction).unwrap();
            assert_eq!(avg, 2.5);
        }
    }

    #[test]
    fn hotspot_top_one_cell_of_linear_ramp() {
        let values: Vec<f64> = (0..100).map(|i| (i + 1) as f64).collect();
        let sar = sar_on_grid(10, 10, values);
        let healthy: Vec<usize> = (0..100).collect();
        let (avg, cells) = hotspot_average(&sar, &healthy, 0.01).unwrap();
        assert_eq!(avg, 100.0);
        assert_eq!(cells, vec![99]);
    }

    #[test]
    fn hotspot_fraction_one_is_plain_mean() {
        let values: Vec<f64> = (0..100).map(|i| (i as f64 * 0.31).cos().abs()).collect();
        let sar = sar_on_grid(10, 10, values.clone());
        let healthy: Vec<usize> = (0..100).collect();
        let (avg, _) = hotspot_average(&sar, &healthy, 1.0).unwrap();
        let mean = values.iter().sum::<f64>() / 100.0;
        assert!((avg - mean).abs() < 1e-12);
    }

    #[test]
    fn hotspot_ties_break_by_cell_index() {
        let mut values = vec![1.0; 100];
        values[40] = 7.0;
        values[60] = 7.0;
        values[10] = 7.0;
        let sar = sar_on_grid(10, 10, values);
        let healthy: Vec<usize> = (0..100).collect();
        let (_, cells) = hotspot_average(&sar, &healthy, 0.02).unwrap();
        assert_eq!(cells, vec![10, 40]);
    }

    #[test]
    fn hotspot_monotone_in_fraction() {
        let values: Vec<f64> = (0..100).map(|i| ((i * 37) % 83) as f64).collect();
        let sar = sar_on_grid(10, 10, values);
        let healthy: Vec<usize> = (0..100).collect();
        let mut last = f64::INFINITY;
        for fraction in [0.01, 0.05, 0.2, 0.6, 1.0] {
            let (avg, _) = hotspot_average(&sar, &healthy, fraction).unwrap();
            assert!(avg <= last + 1e-12);
            last = avg;
        }
    }

    #[test]
    fn empty_healthy_mask_is_error() {
        let sar = sar_on_grid(2, 2, vec![1.0; 4]);
        assert!(hotspot_average(&sar, &[], 0.01).is_err());
    }

    #[test]
    fn thq_matches_hand_computation_on_3x3() {
        // GTV = cells 0,1; healthy = the rest. fraction 0.3 -> top 3 of 7.
        let values = vec![10.0, 14.0, 1.0, 5.0, 3.0, 8.0, 2.0, 0.5, 4.0];
        let sar = sar_on_grid(3, 3, values);
        let gtv = vec![0, 1];
        let healthy = vec![2, 3, 4, 5, 6, 7, 8];
        let rep = thq(&sar, &gtv, &healthy, 0.3).unwrap();
        // target mean = 12; top-3 healthy = {8, 5, 4} -> (8+5+4)/3.
        assert!((rep.sar_target_avg - 12.0).abs() < 1e-12);
        assert!((rep.sar_v1_avg - 17.0 / 3.0).abs() < 1e-12);
        assert!((rep.thq - 12.0 / (17.0 / 3.0)).abs() < 1e-12);
        assert_eq!(rep.v1_cell_count, 3);
    }

    #[test]
    fn thq_scale_invariant() {
        let values: Vec<f64> = (0..100).map(|i| ((i * 13) % 29) as f64 + 0.1).collect();
        let gtv: Vec<usize> = (0..5).collect();
        let healthy: Vec<usize> = (5..100).collect();
        let sar1 = sar_on_grid(10, 10, values.clone());
        let sar5 = sar_on_grid(10, 10, values.iter().map(|v| v * 5.0).collect());
        let t1 = thq(&sar1, &gtv, &healthy, V1_FRACTION).unwrap().thq;
        let t5 = thq(&sar5, &gtv, &healthy, V1_FRACTION).unwrap().thq;
        assert!(((t1 - t5) / t1).abs() < 1e-12);
    }

    #[test]
    fn thq_error_paths() {
        let zeros = sar_on_grid(3, 3, vec![0.0; 9]);
        let gtv = vec![0];
        let healthy: Vec<usize> = (1..9).collect();
        assert!(thq(&zeros, &gtv, &healthy, V1_FRACTION).is_err());

        // SAR only inside the GTV: hotspot average is zero.
        let mut values = vec![0.0; 9];
        values[0] = 3.0;
        let sar = sar_on_grid(3, 3, values);
        assert!(thq(&sar, &gtv, &healthy, V1_FRACTION).is_err());

        // One healthy cell slightly above zero makes it well-defined.
        let mut values = vec![0.0; 9];
        values[0] = 3.0;
        values[5] = 1e-6;
        let sar = sar_on_grid(3, 3, values);
        let rep = thq(&sar, &gtv, &healthy, V1_FRACTION).unwrap();
        assert!((rep.thq - 3.0 / 1e-6).abs() / rep.thq < 1e-9);
    }

    fn small_problem() -> (PhantomGrid, AntennaFieldSet) {
        let grid = Grid::new(30, 30, 1, 2e-3, [-29e-3, -29e-3, 0.0]);
        let shapes = vec![
            Shape {
                kind: ShapeKind::Cylinder {
                    center: [0.0, 0.0],
                    radius: 22e-3,
                    axis: Axis::Z,
                },
                tissue: "muscle".into(),
                priority: 0,
            },
            Shape {
                kind: ShapeKind::Sphere {
                    center: [6e-3, -4e-3, 0.0],
                    radius: 4e-3,
                },
                tissue: "tumor".into(),
                priority: 1,
            },
        ];
        let ph = rasterize(&shapes, grid, TissueDb::builtin()).unwrap();
        let set = build_array(
            &ArrayConfig {
                n_antennas: 4,
                ..ArrayConfig::default()
            },
            &ph,
        )
        .unwrap();
        (ph, set)
    }

    #[test]
    fn pso_is_deterministic_per_seed() {
        let (ph, set) = small_problem();
        let cfg = PsoConfig {
            swarm_size: 8,
            max_evals: 200,
            seed: 42,
            ..PsoConfig::default()
        };
        let a = pso_optimize(&set, &ph, ph.gtv_cells(), &cfg).unwrap();
        let b = pso_optimize(&set, &ph, ph.gtv_cells(), &cfg).unwrap();
        assert_eq!(a.weights.weights, b.weights.weights);
        assert_eq!(a.report.thq, b.report.thq);
        assert_eq!(a.evals, b.evals);
    }

    #[test]
    fn pso_objective_history_non_increasing() {
        let (ph, set) = small_problem();
        let cfg = PsoConfig {
            swarm_size: 10,
            max_evals: 400,
            seed: 7,
            ..PsoConfig::default()
        };
        let out = pso_optimize(&set, &ph, ph.gtv_cells(), &cfg).unwrap();
        for w in out.best_objective_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
        // Best found can only improve on the initial swarm.
        assert!(1.0 / out.report.thq <= out.best_objective_history[0] + 1e-12);
    }

    #[test]
    fn pso_weights_scale_to_identical_thq() {
        let (ph, set) = small_problem();
        let cfg = PsoConfig {
            swarm_size: 8,
            max_evals: 160,
            seed: 3,
            ..PsoConfig::default()
        };
        let out = pso_optimize(&set, &ph, ph.gtv_cells(), &cfg).unwrap();
        let doubled = out.weights.scaled(Complex64::new(2.0, 0.0));
        let e2 = crate::fields::superpose(&set, &doubled).unwrap();
        let sar = crate::fields::sar_from_field(&e2, &ph).unwrap();
        let rep = thq(&sar, ph.gtv_cells(), ph.healthy_cells(), V1_FRACTION).unwrap();
        assert!(((rep.thq - out.report.thq) / out.report.thq).abs() < 1e-12);
    }

    #[test]
    fn fast_objective_agrees_with_public_thq() {
        let (ph, set) = small_problem();
        let ws = ThqWorkspace::new(&set, &ph, ph.gtv_cells()).unwrap();
        let w = ExcitationVector::from_amp_phase(&[(0.9, 0.0), (0.4, 1.7), (0.7, 3.1), (0.2, 5.0)]);
        let inv = ws.objective(&w);
        let rep = ws.report(&w, &ph).unwrap();
        assert!(((1.0 / inv) - rep.thq).abs() / rep.thq < 1e-12);
    }
}
