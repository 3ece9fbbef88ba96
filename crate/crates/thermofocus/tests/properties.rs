//! Property tests for the order- and scale-sensitive kernels.

use num_complex::Complex64;
use proptest::prelude::*;

use thermofocus::fields::{superpose_field, AntennaFieldSet, ExcitationVector, SarMap};
use thermofocus::gaussfit::{eval_gaussian, GaussianParams};
use thermofocus::phantom::{Grid, TissueProperties};
use thermofocus::sar_planner::hotspot_average;
use thermofocus::tshape::ball_lattice;

fn small_field_set() -> AntennaFieldSet {
    let grid = Grid::new(4, 4, 1, 1e-3, [0.0; 3]);
    let fields = (0..3)
        .map(|a| {
            (0..16)
                .map(|i| {
                    let t = (a * 16 + i) as f64;
                    Complex64::new((t * 0.37).sin(), (t * 0.73).cos())
                })
                .collect()
        })
        .collect();
    AntennaFieldSet {
        grid,
        frequency: 434.0e6,
        fields,
        source_positions: Vec::new(),
    }
}

proptest! {
    #[test]
    fn hotspot_average_is_monotone_in_fraction(
        values in proptest::collection::vec(0.0f64..100.0, 30..200),
        f1 in 0.01f64..1.0,
        f2 in 0.01f64..1.0,
    ) {
        let n = values.len();
        let sar = SarMap {
            grid: Grid::new(n, 1, 1, 1e-3, [0.0; 3]),
            values,
        };
        let healthy: Vec<usize> = (0..n).collect();
        let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
        let (avg_small, _) = hotspot_average(&sar, &healthy, lo).unwrap();
        let (avg_large, _) = hotspot_average(&sar, &healthy, hi).unwrap();
        // A smaller fraction keeps only hotter cells.
        prop_assert!(avg_small >= avg_large - 1e-12);
    }

    #[test]
    fn hotspot_set_contains_the_m_largest_values(
        values in proptest::collection::vec(0.0f64..10.0, 20..80),
        fraction in 0.02f64..0.9,
    ) {
        let n = values.len();
        let sar = SarMap {
            grid: Grid::new(n, 1, 1, 1e-3, [0.0; 3]),
            values: values.clone(),
        };
        let healthy: Vec<usize> = (0..n).collect();
        let (_, cells) = hotspot_average(&sar, &healthy, fraction).unwrap();
        let m = cells.len();
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let cutoff = sorted[m - 1];
        for &c in &cells {
            prop_assert!(values[c] >= cutoff - 1e-12);
        }
    }

    #[test]
    fn superposition_is_linear_in_the_weights(
        amps1 in proptest::collection::vec(0.0f64..1.0, 3),
        phs1 in proptest::collection::vec(0.0f64..6.28, 3),
        amps2 in proptest::collection::vec(0.0f64..1.0, 3),
        phs2 in proptest::collection::vec(0.0f64..6.28, 3),
    ) {
        let set = small_field_set();
        let w1 = ExcitationVector::from_amp_phase(
            &amps1.iter().zip(&phs1).map(|(&a, &p)| (a, p)).collect::<Vec<_>>(),
        );
        let w2 = ExcitationVector::from_amp_phase(
            &amps2.iter().zip(&phs2).map(|(&a, &p)| (a, p)).collect::<Vec<_>>(),
        );
        let sum = ExcitationVector {
            weights: w1.weights.iter().zip(&w2.weights).map(|(a, b)| a + b).collect(),
        };
        let f1 = superpose_field(&set, &w1).unwrap();
        let f2 = superpose_field(&set, &w2).unwrap();
        let fs = superpose_field(&set, &sum).unwrap();
        for i in 0..fs.len() {
            let err = (fs[i] - (f1[i] + f2[i])).norm();
            prop_assert!(err <= 1e-12 * (1.0 + fs[i].norm()));
        }
    }

    #[test]
    fn perfusion_rate_round_trips(
        rho in 500.0f64..2500.0,
        w in 0.0f64..300.0,
    ) {
        let t = TissueProperties::new("x", rho, 0.5, w, 50.0, 0.5).unwrap();
        let back = TissueProperties::w_from_omega(t.omega(), rho);
        prop_assert!((back - w).abs() <= 1e-12 * w.max(1.0));
    }

    #[test]
    fn gaussian_never_exceeds_its_height(
        cx in -10.0f64..10.0,
        cy in -10.0f64..10.0,
        sx in 1.0f64..20.0,
        sy in 1.0f64..20.0,
        a in 0.1f64..1e6,
    ) {
        let grid = Grid::new(16, 16, 1, 1e-3, [-8e-3, -8e-3, 0.0]);
        let p = GaussianParams {
            a,
            r0: [cx * 1e-3, cy * 1e-3, 0.0],
            sigma: [sx * 1e-3, sy * 1e-3, f64::INFINITY],
        };
        let g = eval_gaussian(&p, &grid);
        for v in g {
            prop_assert!(v <= a && v >= 0.0);
        }
    }

    #[test]
    fn ball_lattice_stays_inside_the_ball_and_keeps_the_center(
        radius in 0.5f64..20.0,
        spacing in 0.3f64..5.0,
    ) {
        let center = [1e-3, -2e-3, 0.0];
        let (candidates, offsets) = ball_lattice(center, radius * 1e-3, spacing * 1e-3, false);
        prop_assert!(offsets.contains(&[0, 0, 0]));
        for c in &candidates {
            let d = ((c[0] - center[0]).powi(2) + (c[1] - center[1]).powi(2)).sqrt();
            prop_assert!(d <= radius * 1e-3 * (1.0 + 1e-12));
        }
    }
}
