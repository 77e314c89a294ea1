mod common;

use approx::assert_relative_eq;
use common::gauss_legendre;
use rdlasso::kernels::{BiasReading, Kernel, KernelFamily, Side, VarianceReading};

#[test]
fn moments_match_quadrature() {
    for family in KernelFamily::ALL {
        let k = Kernel::new(family);
        for squared in [false, true] {
            let max = if squared { 2 } else { 4 };
            for a in 0..=max {
                let f = |u: f64| {
                    let kv = k.eval(u);
                    u.powi(a as i32) * if squared { kv * kv } else { kv }
                };
                for (side, lo, hi) in [(Side::Right, 0.0, 1.0), (Side::Left, -1.0, 0.0), (Side::Both, -1.0, 1.0)] {
                    let got = k.moment(a, side, squared).unwrap();
                    let want = gauss_legendre(f, lo, hi, 64);
                    assert!(
                        (got - want).abs() <= 1e-10 * want.abs().max(1e-3),
                        "{family} a={a} sq={squared} {side:?}: {got} vs {want}"
                    );
                }
            }
        }
    }
}

#[test]
fn printed_bias_constants() {
    assert_relative_eq!(Kernel::new(KernelFamily::Triangular).bias_constant(), 0.8, epsilon = 1e-12);
    assert_relative_eq!(Kernel::new(KernelFamily::Uniform).bias_constant(), 1.0, epsilon = 1e-12);
}

#[test]
fn amended_constants_from_quadrature() {
    for family in KernelFamily::ALL {
        let k = Kernel::new(family);
        let m = |a: i32| gauss_legendre(|u| u.powi(a) * k.eval(u), 0.0, 1.0, 64);
        let m2 = |a: i32| gauss_legendre(|u| u.powi(a) * k.eval(u).powi(2), 0.0, 1.0, 64);
        let bias = 2.0 * (m(2).powi(2) - m(1) * m(3)) / (m(2) - 2.0 * m(1).powi(2));
        let det = m(0) * m(2) - m(1).powi(2);
        let var = (m(2).powi(2) * m2(0) - 2.0 * m(1) * m(2) * m2(1) + m(1).powi(2) * m2(2)) / det.powi(2);
        assert_relative_eq!(k.bias_constant_with(BiasReading::Amended), bias, max_relative = 1e-10);
        assert_relative_eq!(k.variance_constant(), var, max_relative = 1e-10);
    }
    assert_relative_eq!(Kernel::new(KernelFamily::Triangular).variance_constant(), 4.8, max_relative = 1e-12);
    assert_relative_eq!(Kernel::new(KernelFamily::Uniform).variance_constant(), 4.0, max_relative = 1e-12);
    assert!(Kernel::new(KernelFamily::Triangular).variance_constant_with(VarianceReading::Printed) < 0.0);
}
