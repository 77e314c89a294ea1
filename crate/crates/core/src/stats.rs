//! Normal distribution helpers and the Benjamini–Hochberg step-up rule.

use statrs::distribution::{ContinuousCDF, Normal};

fn standard() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// `Φ⁻¹(p)`; infinite at `p ∈ {0, 1}` and NaN outside `[0, 1]`.
pub fn normal_quantile(p: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    standard().inverse_cdf(p)
}

pub fn normal_cdf(x: f64) -> f64 {
    standard().cdf(x)
}

/// Two-sided p-value of a standard normal statistic.
pub fn two_sided_p(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    (2.0 * standard().sf(z.abs())).min(1.0)
}

/// Rejection flags of the Benjamini–Hochberg step-up procedure at level `q`.
pub fn benjamini_hochberg(p_values: &[f64], q: f64) -> Vec<bool> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let cutoff_rank = (1..=m)
        .rev()
        .find(|&rank| p_values[order[rank - 1]] <= rank as f64 * q / m as f64);
    let mut reject = vec![false; m];
    if let Some(rank) = cutoff_rank {
        for &i in &order[..rank] {
            reject[i] = true;
        }
    }
    reject
}

/// Empirical quantile by linear interpolation between order statistics.
pub fn quantile(values: &mut [f64], prob: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let pos = prob.clamp(0.0, 1.0) * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    values[lo] + frac * (values[hi] - values[lo])
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (divisor `n − 1`).
pub fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}
