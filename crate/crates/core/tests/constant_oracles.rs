//! Simulation checks of the variance and bias constants on a fixed design.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rdlasso::kernels::{BiasReading, Kernel, KernelFamily};
use rdlasso::local_linear::fit_baseline;
use rdlasso::Dataset;

/// Equally spaced running variable on `(-1, 1)`, so `f(0) = 1/2` exactly.
fn grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| -1.0 + 2.0 * (i as f64 + 0.5) / n as f64).collect()
}

#[test]
fn variance_constant_matches_simulated_variance() {
    let n = 4000;
    let h = 0.4;
    let sigma = 1.0;
    let reps = 20_000;
    let x = grid(n);
    for family in [KernelFamily::Triangular, KernelFamily::Uniform] {
        let kernel = Kernel::new(family);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let base = Dataset::without_covariates(vec![0.0; n], x.clone()).unwrap();
        let psi = fit_baseline(&base, h, &kernel).unwrap().jump_influence(&base);
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..reps {
            let tau: f64 = psi.iter().map(|p| { let e: f64 = StandardNormal.sample(&mut rng); p * sigma * e }).sum();
            sum += tau;
            sum_sq += tau * tau;
        }
        let mean = sum / reps as f64;
        let mc_var = sum_sq / reps as f64 - mean * mean;
        let formula = kernel.variance_constant() * 2.0 * sigma * sigma / (0.5 * n as f64 * h);
        let rel = (mc_var / formula - 1.0).abs();
        assert!(rel < 0.05, "{family}: simulated {mc_var:.4e} vs formula {formula:.4e}");
    }
}

#[test]
fn influence_weights_reproduce_the_fit() {
    let n = 500;
    let x = grid(n);
    let y: Vec<f64> = x.iter().map(|&v| (3.0 * v).sin() + if v >= 0.0 { 0.7 } else { 0.0 }).collect();
    let data = Dataset::without_covariates(y.clone(), x).unwrap();
    let fit = fit_baseline(&data, 0.5, &Kernel::default()).unwrap();
    let psi = fit.jump_influence(&data);
    let tau: f64 = psi.iter().zip(&y).map(|(p, v)| p * v).sum();
    assert!((tau - fit.tau()).abs() < 1e-12);
}

#[test]
fn bias_constant_matches_noise_free_curvature() {
    // Right-side mean c·x², left side flat: μ₊'' − μ₋'' = 2c.
    let n = 200_000;
    let c = 1.5;
    let x = grid(n);
    let y: Vec<f64> = x.iter().map(|&v| if v >= 0.0 { c * v * v } else { 0.0 }).collect();
    let data = Dataset::without_covariates(y, x).unwrap();
    for family in [KernelFamily::Triangular, KernelFamily::Uniform] {
        let kernel = Kernel::new(family);
        for h in [0.2, 0.5] {
            let bias = fit_baseline(&data, h, &kernel).unwrap().tau();
            let predicted = kernel.bias_constant_with(BiasReading::Amended) * h * h * (2.0 * c) / 2.0;
            assert!((bias / predicted - 1.0).abs() < 1e-3, "{family} h={h}: {bias} vs {predicted}");
            let printed = kernel.bias_constant() * h * h * (2.0 * c) / 2.0;
            assert!((bias / printed - 1.0).abs() > 0.5);
        }
    }
}
