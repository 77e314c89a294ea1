//! Reference implementations shared by the integration tests. None of these
//! call into the library's numerical code.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rdlasso::Dataset;

/// Composite 5-point Gauss–Legendre rule on `[a, b]`.
pub fn gauss_legendre(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    const NODES: [f64; 5] = [
        0.0,
        -0.538_469_310_105_683_1,
        0.538_469_310_105_683_1,
        -0.906_179_845_938_664,
        0.906_179_845_938_664,
    ];
    const WEIGHTS: [f64; 5] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
        0.236_926_885_056_189_1,
    ];
    let step = (b - a) / panels as f64;
    let mut total = 0.0;
    for j in 0..panels {
        let lo = a + j as f64 * step;
        let mid = lo + step / 2.0;
        for (x, w) in NODES.iter().zip(WEIGHTS) {
            total += w * f(mid + x * step / 2.0);
        }
    }
    total * step / 2.0
}

/// Kernel-weighted least squares by a dense QR of the `√w`-scaled system.
pub fn dense_wls(design: &DMatrix<f64>, y: &[f64], w: &[f64]) -> DVector<f64> {
    let rows: Vec<usize> = (0..y.len()).filter(|&i| w[i] > 0.0).collect();
    let a = DMatrix::from_fn(rows.len(), design.ncols(), |r, c| w[rows[r]].sqrt() * design[(rows[r], c)]);
    let rhs = DVector::from_iterator(rows.len(), rows.iter().map(|&i| w[i].sqrt() * y[i]));
    let qr = a.qr();
    let qty = qr.q().transpose() * rhs;
    qr.r().solve_upper_triangular(&qty).expect("full column rank")
}

/// Local linear design `(1, T, X/h, TX/h)` followed by the chosen covariates.
pub fn rd_design(data: &Dataset, subset: &[usize], h: f64) -> DMatrix<f64> {
    DMatrix::from_fn(data.n(), 4 + subset.len(), |i, j| {
        let x = data.x()[i];
        let t = if x >= 0.0 { 1.0 } else { 0.0 };
        match j {
            0 => 1.0,
            1 => t,
            2 => x / h,
            3 => t * x / h,
            _ => data.z()[(i, subset[j - 4])],
        }
    })
}

pub fn triangular(x: f64, h: f64) -> f64 {
    let u = (x / h).abs();
    if u > 1.0 {
        0.0
    } else {
        (1.0 - u) / h
    }
}

/// Penalized objective `Σ wᵢ (yᵢ − Vᵢθ − (Zᵢ − μ)γ)² + λ Σ ℓₖ |γₖ|`.
pub fn lasso_objective(
    data: &Dataset,
    w: &[f64],
    b: f64,
    mu: &[f64],
    theta: &[f64],
    gamma: &[f64],
    lambda: f64,
    loadings: &[f64],
) -> f64 {
    let mut ssr = 0.0;
    for i in 0..data.n() {
        if w[i] == 0.0 {
            continue;
        }
        let x = data.x()[i];
        let t = if x >= 0.0 { 1.0 } else { 0.0 };
        let v = [1.0, t, x / b, t * x / b];
        let mut fit: f64 = v.iter().zip(theta).map(|(a, c)| a * c).sum();
        for k in 0..data.p() {
            fit += (data.z()[(i, k)] - mu[k]) * gamma[k];
        }
        ssr += w[i] * (data.y()[i] - fit).powi(2);
    }
    let pen: f64 = gamma.iter().zip(loadings).map(|(g, l)| l * g.abs()).sum();
    ssr + lambda * pen
}

/// Accelerated proximal gradient (FISTA with adaptive restart) on the joint
/// `(θ, γ)` problem with only `γ` penalized. Returns `(θ, γ, objective)`.
pub fn proximal_gradient_lasso(
    data: &Dataset,
    w: &[f64],
    b: f64,
    mu: &[f64],
    lambda: f64,
    loadings: &[f64],
    max_iter: usize,
) -> (Vec<f64>, Vec<f64>, f64) {
    let p = data.p();
    let d = 4 + p;
    let rows: Vec<usize> = (0..data.n()).filter(|&i| w[i] > 0.0).collect();
    let a = DMatrix::from_fn(rows.len(), d, |r, j| {
        let i = rows[r];
        let x = data.x()[i];
        let t = if x >= 0.0 { 1.0 } else { 0.0 };
        let val = match j {
            0 => 1.0,
            1 => t,
            2 => x / b,
            3 => t * x / b,
            _ => data.z()[(i, j - 4)] - mu[j - 4],
        };
        w[i].sqrt() * val
    });
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| w[i].sqrt() * data.y()[i]));
    let ata = a.transpose() * &a;
    let aty = a.transpose() * &y;
    let step = 1.0 / (2.0 * ata.symmetric_eigenvalues().max());

    let objective = |c: &DVector<f64>| -> f64 {
        let r = &y - &a * c;
        let pen: f64 = (0..p).map(|k| loadings[k] * c[4 + k].abs()).sum();
        r.norm_squared() + lambda * pen
    };
    let prox = |v: DVector<f64>| -> DVector<f64> {
        DVector::from_iterator(
            d,
            (0..d).map(|j| {
                if j < 4 {
                    v[j]
                } else {
                    let thr = step * lambda * loadings[j - 4];
                    v[j].signum() * (v[j].abs() - thr).max(0.0)
                }
            }),
        )
    };

    let mut x = DVector::<f64>::zeros(d);
    let mut z = x.clone();
    let mut t = 1.0f64;
    let mut f_prev = objective(&x);
    let mut stall = 0;
    for _ in 0..max_iter {
        let grad = 2.0 * (&ata * &z - &aty);
        let x_new = prox(&z - step * grad);
        let f_new = objective(&x_new);
        if f_new > f_prev {
            // Restart momentum when the objective goes up.
            t = 1.0;
            z = x.clone();
            continue;
        }
        let t_new = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        z = &x_new + ((t - 1.0) / t_new) * (&x_new - &x);
        t = t_new;
        stall = if (f_prev - f_new) <= 1e-16 * f_prev.abs() { stall + 1 } else { 0 };
        x = x_new;
        f_prev = f_new;
        if stall >= 50 {
            break;
        }
    }
    let theta = x.rows(0, 4).iter().copied().collect();
    let gamma = x.rows(4, p).iter().copied().collect();
    (theta, gamma, f_prev)
}

/// Random sharp RD sample with `p` correlated covariates and a sparse signal.
pub fn random_rd_data(seed: u64, n: usize, p: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let common: f64 = rng.sample(StandardNormal);
            (0..p)
                .map(|_| {
                    let e: f64 = rng.sample(StandardNormal);
                    0.4 * common + e
                })
                .collect()
        })
        .collect();
    let beta: Vec<f64> = (0..p).map(|k| if k < 3 { 0.5 / (k as f64 + 1.0) } else { 0.0 }).collect();
    let y = (0..n)
        .map(|i| {
            let t = if x[i] >= 0.0 { 1.0 } else { 0.0 };
            let e: f64 = rng.sample(StandardNormal);
            0.3 * x[i] + 0.5 * t + rows[i].iter().zip(&beta).map(|(z, b)| z * b).sum::<f64>() + 0.5 * e
        })
        .collect();
    Dataset::from_rows(y, x, &rows, None).unwrap()
}
