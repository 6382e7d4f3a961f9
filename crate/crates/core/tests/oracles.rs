//! Gaussian-moment oracles behind the Monte-Carlo acceptance targets,
//! recomputed by quadrature against the standard normal density.

use symsde::suite::{cos_oracle, MARTINGALE_ORACLE, THEOREM_ORACLE};

/// Composite Simpson rule for `E f(W_1)` on `[-12, 12]`.
fn gaussian_mean(f: impl Fn(f64) -> f64) -> f64 {
    let n = 24_000;
    let (a, b) = (-12.0, 12.0);
    let h = (b - a) / n as f64;
    let density = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let g = |x: f64| f(x) * density(x);
    let mut s = g(a) + g(b);
    for i in 1..n {
        let x = a + i as f64 * h;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * g(x);
    }
    s * h / 3.0
}

fn oracle(name: &str) -> f64 {
    THEOREM_ORACLE.iter().find(|(n, _)| *n == name).unwrap().1
}

#[test]
fn theorem_terms_for_brownian_square() {
    // β(z) = z², F = x²: m(1) = 1, LF = 1, H = −x, Y(F) = 2z·x²
    let generator = -1.0 * gaussian_mean(|_| 1.0);
    // ∫₀¹ −W dW = −(W₁² − 1)/2
    let girsanov = gaussian_mean(|w| w * w * (-(w * w - 1.0) / 2.0));
    let flow = gaussian_mean(|w| 2.0 * w * w);
    let initial = -(2.0 * 0.0 * 0.0 * 0.0);
    for (name, v) in [
        ("generator", generator),
        ("girsanov", girsanov),
        ("flow", flow),
        ("initial", initial),
    ] {
        assert!((oracle(name) - v).abs() < 1e-10, "{name}: {v}");
    }
    let sum: f64 = THEOREM_ORACLE.iter().map(|t| t.1).sum();
    assert!(sum.abs() < 1e-12);
}

#[test]
fn quasi_doob_factor_moment() {
    // k = −x²/2, L k = −1/2: k(W₁) − k(0) + t/2 = −(W₁² − 1)/2
    let m = gaussian_mean(|w| w * w * (-(w * w - 1.0) / 2.0));
    assert!((m - MARTINGALE_ORACLE).abs() < 1e-10, "{m}");
}

#[test]
fn characteristic_function_at_one() {
    let m = gaussian_mean(f64::cos);
    assert!((m - cos_oracle()).abs() < 1e-12, "{m}");
}
