//! Quadrature rules used across the crate.

use std::f64::consts::PI;

/// Composite Simpson weights for `n` equispaced samples with spacing `h`.
///
/// `n` must be odd and at least 3.
pub fn simpson_weights(n: usize, h: f64) -> Vec<f64> {
    assert!(
        n >= 3 && n % 2 == 1,
        "Simpson needs an odd sample count >= 3"
    );
    let mut w = vec![0.0; n];
    for (i, wi) in w.iter_mut().enumerate() {
        *wi = if i == 0 || i == n - 1 {
            h / 3.0
        } else if i % 2 == 1 {
            4.0 * h / 3.0
        } else {
            2.0 * h / 3.0
        };
    }
    w
}

/// Equispaced Simpson grid on `[lo, hi]` with spacing at most `max_step`.
pub fn simpson_grid(lo: f64, hi: f64, max_step: f64) -> (Vec<f64>, Vec<f64>) {
    let span = hi - lo;
    let mut intervals = (span / max_step).ceil().max(2.0) as usize;
    if intervals % 2 == 1 {
        intervals += 1;
    }
    let h = span / intervals as f64;
    let x = (0..=intervals).map(|i| lo + h * i as f64).collect();
    (x, simpson_weights(intervals + 1, h))
}

/// Integrate `f` over `[lo, hi]` with composite Simpson at spacing at most `max_step`.
pub fn simpson<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, max_step: f64) -> f64 {
    let (x, w) = simpson_grid(lo, hi, max_step);
    x.iter().zip(&w).map(|(&xi, &wi)| wi * f(xi)).sum()
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Gauss–Legendre rule mapped to `[lo, hi]`.
pub fn gauss_legendre_on(n: usize, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let c = 0.5 * (hi + lo);
    let r = 0.5 * (hi - lo);
    (
        x.iter().map(|t| c + r * t).collect(),
        w.iter().map(|wi| r * wi).collect(),
    )
}

/// Composite Gauss–Legendre integral of `f` over `[lo, hi]`.
pub fn integrate_gl<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, panels: usize, order: usize) -> f64 {
    let (x, w) = gauss_legendre(order);
    let width = (hi - lo) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let a = lo + width * p as f64;
        let c = a + 0.5 * width;
        let r = 0.5 * width;
        total += x
            .iter()
            .zip(&w)
            .map(|(t, wi)| wi * f(c + r * t))
            .sum::<f64>()
            * r;
    }
    total
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_is_exact_for_cubics() {
        let v = simpson(|x| x * x * x - 2.0 * x + 1.0, 0.0, 2.0, 0.5);
        assert!((v - (4.0 - 4.0 + 2.0)).abs() < 1e-13);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert!((s - 2.0 / 15.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn gauss_legendre_large_order() {
        let (x, w) = gauss_legendre_on(256, 0.0, PI);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.sin()).sum();
        assert!((s - 2.0).abs() < 1e-13);
    }
}
