//! Composite and adaptive Gauss–Legendre quadrature.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::stats::CompensatedSum;

/// Nodes per panel of the adaptive rule; exact for polynomials of degree 127.
pub const PANEL_NODES: usize = 64;

/// Default absolute tolerance of the adaptive rule.
pub const DEFAULT_TOL: f64 = 1e-10;

const MAX_DEPTH: usize = 40;

/// Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Nodes from Newton iteration on the Legendre recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `∫_a^b f`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F, a: f64, b: f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = CompensatedSum::new();
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc.add(w * f(mid + half * x));
        }
        half * acc.value()
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Shared 64-node panel rule.
pub fn panel_rule() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(PANEL_NODES))
}

/// Rule with `n` nodes for `n <= 16`, cached.
pub fn small_rule(n: usize) -> &'static GaussLegendre {
    static RULES: OnceLock<Vec<GaussLegendre>> = OnceLock::new();
    let rules = RULES.get_or_init(|| (1..=16).map(GaussLegendre::new).collect());
    &rules[n.clamp(1, 16) - 1]
}

/// Adaptive bisection with 64-node panels to absolute tolerance `tol`.
pub fn integrate_adaptive<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let rule = panel_rule();
    let total_width = (b - a).abs();
    let mut acc = CompensatedSum::new();
    let mut achieved = 0.0;
    let mut stack = vec![(a, b, rule.integrate(&mut f, a, b), 0usize)];
    while let Some((lo, hi, whole, depth)) = stack.pop() {
        let mid = 0.5 * (lo + hi);
        let left = rule.integrate(&mut f, lo, mid);
        let right = rule.integrate(&mut f, mid, hi);
        let err = (left + right - whole).abs();
        let local_tol = tol * (hi - lo).abs() / total_width;
        if err <= local_tol.max(f64::EPSILON * (left.abs() + right.abs())) || depth >= MAX_DEPTH {
            acc.add(left + right);
            achieved += err;
        } else {
            stack.push((lo, mid, left, depth + 1));
            stack.push((mid, hi, right, depth + 1));
        }
    }
    if !achieved.is_finite() || achieved > tol {
        return Err(Error::QuadratureDiverged {
            achieved,
            requested: tol,
        });
    }
    Ok(acc.value())
}

/// Adaptive integration over consecutive pieces `[b_i, b_{i+1}]`.
pub fn integrate_pieces<F: FnMut(f64) -> f64>(mut f: F, breaks: &[f64], tol: f64) -> Result<f64> {
    let mut acc = CompensatedSum::new();
    let n = breaks.len().saturating_sub(1).max(1) as f64;
    for w in breaks.windows(2) {
        acc.add(integrate_adaptive(&mut f, w[0], w[1], tol / n)?);
    }
    Ok(acc.value())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_two() {
        for n in [1, 2, 5, 16, 64] {
            let r = GaussLegendre::new(n);
            let s: f64 = r.weights().iter().sum();
            assert!((s - 2.0).abs() < 1e-13, "n={n} sum={s}");
        }
    }

    #[test]
    fn exact_for_high_degree_polynomials() {
        let r = panel_rule();
        // ∫_0^1 x^127 dx = 1/128
        let v = r.integrate(|x| x.powi(127), 0.0, 1.0);
        assert!((v - 1.0 / 128.0).abs() < 1e-14);
    }

    #[test]
    fn adaptive_handles_kinks() {
        let v = integrate_adaptive(|x: f64| (x - 0.3).abs(), 0.0, 1.0, 1e-10).unwrap();
        assert!((v - (0.045 + 0.245)).abs() < 1e-10);
    }

    #[test]
    fn adaptive_trig() {
        let v = integrate_adaptive(
            |x: f64| (2.0 * std::f64::consts::PI * x).cos().powi(2),
            0.0,
            1.0,
            1e-12,
        )
        .unwrap();
        assert!((v - 0.5).abs() < 1e-12);
    }
}
