//! Adaptive Gauss-Legendre quadrature.
//!
//! Nodes and weights are computed once by Newton iteration on the Legendre
//! recurrence (machine precision, no transcribed tables). The adaptive
//! driver compares a 7-point and a 15-point rule on each interval and
//! bisects until the requested absolute tolerance is met.

use crate::error::{Error, EvalError, Result};
use std::sync::OnceLock;

/// Nodes and weights of the `n`-point Gauss-Legendre rule on [-1, 1].
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Chebyshev-like initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Legendre polynomial P_n and derivative at `x` via the three-term
/// recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

struct Rules {
    low_nodes: Vec<f64>,
    low_weights: Vec<f64>,
    high_nodes: Vec<f64>,
    high_weights: Vec<f64>,
}

fn rules() -> &'static Rules {
    static RULES: OnceLock<Rules> = OnceLock::new();
    RULES.get_or_init(|| {
        let (low_nodes, low_weights) = gauss_legendre(7);
        let (high_nodes, high_weights) = gauss_legendre(15);
        Rules {
            low_nodes,
            low_weights,
            high_nodes,
            high_weights,
        }
    })
}

fn apply_rule<F>(
    f: &F,
    a: f64,
    b: f64,
    nodes: &[f64],
    weights: &[f64],
) -> std::result::Result<f64, EvalError>
where
    F: Fn(f64) -> std::result::Result<f64, EvalError>,
{
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut acc = 0.0;
    for (x, w) in nodes.iter().zip(weights) {
        acc += w * f(c + h * x)?;
    }
    Ok(acc * h)
}

/// Integrate `f` over `[a, b]` to absolute tolerance `abs_tol`.
pub fn integrate<F>(f: &F, a: f64, b: f64, abs_tol: f64) -> Result<f64>
where
    F: Fn(f64) -> std::result::Result<f64, EvalError>,
{
    if a == b {
        return Ok(0.0);
    }
    let r = rules();
    // Work stack of (a, b, tol); splitting halves the tolerance budget.
    let mut stack = vec![(a, b, abs_tol, 0u32)];
    let mut total = 0.0;
    while let Some((lo, hi, tol, depth)) = stack.pop() {
        let coarse = apply_rule(f, lo, hi, &r.low_nodes, &r.low_weights).map_err(Error::Eval)?;
        let fine = apply_rule(f, lo, hi, &r.high_nodes, &r.high_weights).map_err(Error::Eval)?;
        let err = (fine - coarse).abs();
        if err <= tol || depth >= 48 {
            if depth >= 48 && err > tol {
                return Err(Error::Quadrature {
                    requested: abs_tol,
                    achieved: err,
                });
            }
            total += fine;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((lo, mid, 0.5 * tol, depth + 1));
            stack.push((mid, hi, 0.5 * tol, depth + 1));
        }
    }
    Ok(total)
}

/// Vector-valued variant; the error estimate is the max-norm across
/// components.
pub fn integrate_vec<F>(f: &F, a: f64, b: f64, abs_tol: f64, len: usize) -> Result<Vec<f64>>
where
    F: Fn(f64) -> std::result::Result<Vec<f64>, EvalError>,
{
    if a == b {
        return Ok(vec![0.0; len]);
    }
    let r = rules();
    let apply = |lo: f64,
                 hi: f64,
                 nodes: &[f64],
                 weights: &[f64]|
     -> std::result::Result<Vec<f64>, EvalError> {
        let c = 0.5 * (lo + hi);
        let h = 0.5 * (hi - lo);
        let mut acc = vec![0.0; len];
        for (x, w) in nodes.iter().zip(weights) {
            let v = f(c + h * x)?;
            for (s, vi) in acc.iter_mut().zip(&v) {
                *s += w * vi;
            }
        }
        for s in &mut acc {
            *s *= h;
        }
        Ok(acc)
    };
    let mut stack = vec![(a, b, abs_tol, 0u32)];
    let mut total = vec![0.0; len];
    while let Some((lo, hi, tol, depth)) = stack.pop() {
        let coarse = apply(lo, hi, &r.low_nodes, &r.low_weights).map_err(Error::Eval)?;
        let fine = apply(lo, hi, &r.high_nodes, &r.high_weights).map_err(Error::Eval)?;
        let err = fine
            .iter()
            .zip(&coarse)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if err <= tol || depth >= 48 {
            if depth >= 48 && err > tol {
                return Err(Error::Quadrature {
                    requested: abs_tol,
                    achieved: err,
                });
            }
            for (t, v) in total.iter_mut().zip(&fine) {
                *t += v;
            }
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((lo, mid, 0.5 * tol, depth + 1));
            stack.push((mid, hi, 0.5 * tol, depth + 1));
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exactness() {
        // 7-point Gauss is exact through degree 13, 15-point through 29.
        let r = rules();
        for k in 0..=13usize {
            let exact = 1.0 / (k as f64 + 1.0);
            let f = |x: f64| Ok(x.powi(k as i32));
            let got = apply_rule(&f, 0.0, 1.0, &r.low_nodes, &r.low_weights).unwrap();
            assert!((got - exact).abs() < 1e-14, "deg {k}: {got} vs {exact}");
        }
        for k in 0..=29usize {
            let exact = 1.0 / (k as f64 + 1.0);
            let f = |x: f64| Ok(x.powi(k as i32));
            let got = apply_rule(&f, 0.0, 1.0, &r.high_nodes, &r.high_weights).unwrap();
            assert!((got - exact).abs() < 2e-14, "deg {k}: {got} vs {exact}");
        }
    }

    #[test]
    fn arctan_oracle() {
        // int_0^s dl/(1+4l^2) = atan(2s)/2.
        for &s in &[0.3, 1.0, 7.5] {
            let got = integrate(&|l| Ok(1.0 / (1.0 + 4.0 * l * l)), 0.0, s, 1e-10).unwrap();
            let exact = (2.0 * s).atan() / 2.0;
            assert!((got - exact).abs() <= 1e-10, "s={s}: {got} vs {exact}");
        }
    }

    #[test]
    fn kinked_integrand_converges() {
        let f = |x: f64| Ok((x - 0.37).abs());
        let got = integrate(&f, 0.0, 1.0, 1e-10).unwrap();
        let exact = 0.37f64.powi(2) / 2.0 + 0.63f64.powi(2) / 2.0;
        assert!((got - exact).abs() <= 1e-9);
    }

    #[test]
    fn empty_interval_is_zero() {
        assert_eq!(integrate(&|_| Ok(1.0), 2.0, 2.0, 1e-10).unwrap(), 0.0);
    }

    #[test]
    fn vector_variant_matches_scalar() {
        let f = |x: f64| Ok(vec![x * x, x.sin()]);
        let got = integrate_vec(&f, 0.0, 2.0, 1e-11, 2).unwrap();
        assert!((got[0] - 8.0 / 3.0).abs() < 1e-10);
        assert!((got[1] - (1.0 - 2.0f64.cos())).abs() < 1e-10);
    }

    #[test]
    fn domain_error_propagates() {
        let f = |x: f64| {
            if x > 0.5 {
                Err(EvalError::domain("test"))
            } else {
                Ok(x)
            }
        };
        assert!(integrate(&f, 0.0, 1.0, 1e-10).is_err());
    }
}
