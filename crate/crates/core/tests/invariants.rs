mod common;

use common::{dense_wls, random_rd_data, rd_design, triangular};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rdlasso::inference::{confidence_interval, LambdaMethod, PipelineConfig};
use rdlasso::kernels::Kernel;
use rdlasso::local_linear::{fit_adjusted, fit_baseline, fwl_theta};
use rdlasso::selection::{local_lasso, standardization_weights, PenaltyWeights};
use rdlasso::stats::benjamini_hochberg;
use rdlasso::tuning::pilot_bandwidth;
use rdlasso::{estimate_sharp, Dataset};

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn partialled_fit_equals_joint_fit(seed in 0u64..10_000, h in 0.3f64..1.0, k in 0usize..5) {
        let data = random_rd_data(seed, 120, 5);
        let subset: Vec<usize> = (0..k).collect();
        let kernel = Kernel::default();
        let joint = fit_adjusted(&data, &subset, h, &kernel).unwrap();
        let fwl = fwl_theta(&data, &subset, h, &kernel).unwrap();
        for j in 0..4 {
            prop_assert!(rel_close(joint.theta[j], fwl[j], 1e-10), "{} vs {}", joint.theta[j], fwl[j]);
        }
    }

    #[test]
    fn joint_fit_matches_dense_least_squares(seed in 0u64..10_000, h in 0.3f64..1.0) {
        let data = random_rd_data(seed, 150, 3);
        let subset = [0usize, 2];
        let fit = fit_adjusted(&data, &subset, h, &Kernel::default()).unwrap();
        let w: Vec<f64> = data.x().iter().map(|&x| triangular(x, h)).collect();
        let coef = dense_wls(&rd_design(&data, &subset, h), data.y(), &w);
        prop_assert!(rel_close(fit.tau(), coef[1], 1e-9));
        prop_assert!(rel_close(fit.gamma[1], coef[5], 1e-9));
    }

    #[test]
    fn rows_outside_window_do_not_matter(seed in 0u64..10_000, extra in 1usize..20) {
        let data = random_rd_data(seed, 150, 2);
        let h = 0.5;
        let kernel = Kernel::default();
        let mut y = data.y().to_vec();
        let mut x = data.x().to_vec();
        let mut rows: Vec<Vec<f64>> = (0..data.n()).map(|i| vec![data.z()[(i, 0)], data.z()[(i, 1)]]).collect();
        for e in 0..extra {
            x.push(if e % 2 == 0 { 0.9 + 0.001 * e as f64 } else { -0.95 });
            y.push(1e3 * e as f64);
            rows.push(vec![-50.0, 75.0]);
        }
        let padded = Dataset::from_rows(y, x, &rows, None).unwrap();
        let a = fit_adjusted(&data, &[0, 1], h, &kernel).unwrap();
        let b = fit_adjusted(&padded, &[0, 1], h, &kernel).unwrap();
        prop_assert!(rel_close(a.tau(), b.tau(), 1e-10));
    }

    #[test]
    fn selection_invariant_to_shifts_along_v(seed in 0u64..10_000, shift in prop::array::uniform4(-2.0f64..2.0)) {
        let data = random_rd_data(seed, 200, 8);
        let b = 0.8;
        let kernel = Kernel::default();
        let weights = standardization_weights(&data, b, &kernel).unwrap();
        let lambda = 0.3 * max_score(&data, b, &weights);
        let base = local_lasso(&data, b, lambda, &kernel, &weights).unwrap();

        let z = DMatrix::from_fn(data.n(), data.p(), |i, k| {
            let x = data.x()[i];
            let t = Dataset::assigned(x);
            let scale = 1.0 + k as f64 / 4.0;
            data.z()[(i, k)] + scale * (shift[0] + shift[1] * t + shift[2] * x / b + shift[3] * t * x / b)
        });
        let shifted = data.with_covariates(z).unwrap();
        // Same loadings; the centering is recomputed for the shifted covariates.
        let mu = standardization_weights(&shifted, b, &kernel).unwrap().mu_z;
        let w = PenaltyWeights { w: weights.w.clone(), b, mu_z: mu };
        let moved = local_lasso(&shifted, b, lambda, &kernel, &w).unwrap();
        prop_assert_eq!(&base.selected, &moved.selected);
        for k in 0..data.p() {
            prop_assert!((base.gamma_tilde[k] - moved.gamma_tilde[k]).abs() <= 1e-6 * base.gamma_tilde[k].abs().max(1.0));
        }
    }

    #[test]
    fn selection_invariant_to_column_scaling(seed in 0u64..10_000, scales in prop::collection::vec(0.1f64..10.0, 8)) {
        let data = random_rd_data(seed, 200, 8);
        let b = 0.8;
        let kernel = Kernel::default();
        let weights = standardization_weights(&data, b, &kernel).unwrap();
        let lambda = 0.3 * max_score(&data, b, &weights);
        let base = local_lasso(&data, b, lambda, &kernel, &weights).unwrap();
        let z = DMatrix::from_fn(data.n(), data.p(), |i, k| scales[k] * data.z()[(i, k)]);
        let scaled = data.with_covariates(z).unwrap();
        let sw = standardization_weights(&scaled, b, &kernel).unwrap();
        let moved = local_lasso(&scaled, b, lambda, &kernel, &sw).unwrap();
        prop_assert_eq!(&base.selected, &moved.selected);
        for k in 0..data.p() {
            let back = moved.gamma_tilde[k] * scales[k];
            prop_assert!((base.gamma_tilde[k] - back).abs() <= 1e-6 * base.gamma_tilde[k].abs().max(1.0));
        }
    }

    #[test]
    fn pilot_bandwidth_ignores_outcome_shift(seed in 0u64..10_000, c in -100.0f64..100.0) {
        let data = random_rd_data(seed, 300, 0);
        let kernel = Kernel::default();
        let b0 = pilot_bandwidth(&data, &kernel).unwrap().bandwidth;
        let shifted = data.with_outcome(data.y().iter().map(|v| v + c).collect()).unwrap();
        let b1 = pilot_bandwidth(&shifted, &kernel).unwrap().bandwidth;
        prop_assert!(rel_close(b0, b1, 1e-8));
    }

    #[test]
    fn jump_shifts_with_outcome_jump(seed in 0u64..10_000, c in -5.0f64..5.0) {
        let data = random_rd_data(seed, 150, 2);
        let kernel = Kernel::default();
        let a = fit_adjusted(&data, &[1], 0.6, &kernel).unwrap();
        let moved = data
            .with_outcome(data.y().iter().zip(data.x()).map(|(v, &x)| v + c * Dataset::assigned(x)).collect())
            .unwrap();
        let b = fit_adjusted(&moved, &[1], 0.6, &kernel).unwrap();
        prop_assert!((b.tau() - a.tau() - c).abs() < 1e-10);
    }

    #[test]
    fn bh_monotone_in_level(p in prop::collection::vec(0.0f64..1.0, 1..40), q1 in 0.001f64..0.3, q2 in 0.001f64..0.3) {
        let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
        let small = benjamini_hochberg(&p, lo);
        let large = benjamini_hochberg(&p, hi);
        for (a, b) in small.iter().zip(&large) {
            prop_assert!(!*a || *b);
        }
    }

    #[test]
    fn interval_is_symmetric(tau in -10.0f64..10.0, se in 1e-6f64..5.0, level in 0.5f64..0.999) {
        let (lo, hi) = confidence_interval(tau, se, level);
        prop_assert!(((hi + lo) / 2.0 - tau).abs() < 1e-9 * tau.abs().max(1.0));
        prop_assert!(hi > lo);
    }
}

fn max_score(data: &Dataset, b: f64, weights: &PenaltyWeights) -> f64 {
    let kw: Vec<f64> = data.x().iter().map(|&x| triangular(x, b)).collect();
    let design = rd_design(data, &[], b);
    let coef = dense_wls(&design, data.y(), &kw);
    let resid: Vec<f64> = (0..data.n()).map(|i| data.y()[i] - (design.row(i) * &coef)[0]).collect();
    (0..data.p())
        .map(|k| {
            let s: f64 = (0..data.n()).map(|i| 2.0 * kw[i] * (data.z()[(i, k)] - weights.mu_z[k]) * resid[i]).sum();
            s.abs() / weights.w[k]
        })
        .fold(0.0, f64::max)
}

#[test]
fn infinite_penalty_equals_baseline() {
    let data = random_rd_data(5, 400, 10);
    let cfg = PipelineConfig { lambda_method: LambdaMethod::Fixed(f64::INFINITY), ..Default::default() };
    let est = estimate_sharp(&data, &cfg).unwrap();
    let base = fit_baseline(&data, est.h, &Kernel::default()).unwrap();
    assert!(est.selected.is_empty());
    assert!((est.tau_hat - base.tau()).abs() <= 1e-12 * base.tau().abs().max(1.0));
}

#[test]
fn pipeline_is_deterministic() {
    let data = random_rd_data(8, 400, 15);
    for method in [LambdaMethod::Bch, LambdaMethod::Lv, LambdaMethod::Cv] {
        let cfg = PipelineConfig { lambda_method: method, ..Default::default() };
        let a = estimate_sharp(&data, &cfg).unwrap();
        let b = estimate_sharp(&data, &cfg).unwrap();
        assert_eq!(a.tau_hat.to_bits(), b.tau_hat.to_bits());
        assert_eq!(a.se.to_bits(), b.se.to_bits());
        assert_eq!(a.selected, b.selected);
    }
}
