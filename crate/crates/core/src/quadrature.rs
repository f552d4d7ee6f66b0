//! Gauss-Legendre rules and composite integration over knot spans.

use crate::basis::KnotVector;
use crate::error::{Error, Result};

/// Default number of Gauss points per knot span.
pub const DEFAULT_ORDER: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Nodes and weights mapped affinely onto `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(z, w)| (half * z + mid, half * w))
    }
}

/// Legendre polynomial `P_n(x)` and its derivative by the three-term recurrence.
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
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Gauss-Legendre rule with `order` points, nodes found by Newton iteration
/// on `P_order` from Chebyshev starting guesses.
pub fn gauss_legendre(order: usize) -> Result<QuadratureRule> {
    if !(1..=16).contains(&order) {
        return Err(Error::QuadratureOrder(order));
    }
    let n = order;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() <= 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // ascending order: the symmetric pair sits at i and n-1-i
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok(QuadratureRule { nodes, weights })
}

/// Integral of `f` over `[a, b]` with the affinely mapped rule.
pub fn integrate_interval<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rule: &QuadratureRule) -> f64 {
    if a == b {
        return 0.0;
    }
    rule.mapped(a, b).map(|(x, w)| w * f(x)).sum()
}

/// Composite integral over the non-empty knot spans of `knots`.
pub fn integrate_spans<F: Fn(f64) -> f64>(f: F, knots: &KnotVector, rule: &QuadratureRule) -> f64 {
    knots
        .spans()
        .into_iter()
        .map(|(a, b)| integrate_interval(&f, a, b, rule))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn one_point_rule_is_midpoint() {
        let r = gauss_legendre(1).unwrap();
        assert_eq!(r.nodes(), &[0.0]);
        assert_abs_diff_eq!(r.weights()[0], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn two_point_rule() {
        let r = gauss_legendre(2).unwrap();
        let s = 1.0 / 3f64.sqrt();
        assert_abs_diff_eq!(r.nodes()[0], -s, epsilon = 1e-15);
        assert_abs_diff_eq!(r.nodes()[1], s, epsilon = 1e-15);
        assert_abs_diff_eq!(r.weights()[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.weights()[1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn five_point_rule_integrates_degree_eight() {
        let r = gauss_legendre(5).unwrap();
        let v = integrate_interval(|z| z.powi(8), -1.0, 1.0, &r);
        assert_abs_diff_eq!(v, 2.0 / 9.0, epsilon = 1e-13);
    }

    #[test]
    fn order_out_of_range() {
        assert_eq!(gauss_legendre(0), Err(Error::QuadratureOrder(0)));
        assert_eq!(gauss_legendre(17), Err(Error::QuadratureOrder(17)));
    }

    #[test]
    fn exactness_all_orders() {
        for order in 1..=8 {
            let r = gauss_legendre(order).unwrap();
            let wsum: f64 = r.weights().iter().sum();
            assert_abs_diff_eq!(wsum, 2.0, epsilon = 1e-13);
            for d in 0..=(2 * order - 1) {
                let exact = if d % 2 == 1 { 0.0 } else { 2.0 / (d as f64 + 1.0) };
                let v = integrate_interval(|z| z.powi(d as i32), -1.0, 1.0, &r);
                assert!((v - exact).abs() <= 1e-12, "order {order} degree {d}: {v} vs {exact}");
            }
            for (a, b) in r.nodes().iter().zip(r.nodes().iter().rev()) {
                assert_abs_diff_eq!(*a, -*b, epsilon = 1e-15);
            }
            assert!(r.weights().iter().all(|w| *w > 0.0));
        }
    }

    #[test]
    fn interval_examples() {
        let r3 = gauss_legendre(3).unwrap();
        assert_abs_diff_eq!(integrate_interval(|_| 1.0, 0.0, 1.0, &r3), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            integrate_interval(|x| x.powi(3), 0.0, 0.2, &r3),
            0.0004,
            epsilon = 1e-17
        );
        assert_eq!(integrate_interval(|x| x, 0.4, 0.4, &r3), 0.0);
    }

    #[test]
    fn spans_additivity() {
        let knots = KnotVector::refined(7, 3, 0.6, 0.8, 3).unwrap();
        let r = gauss_legendre(4).unwrap();
        let f = |x: f64| 3.0 * x.powi(7) - x.powi(2) + 0.5;
        let whole = integrate_interval(f, 0.0, 1.0, &r);
        let pieces = integrate_spans(f, &knots, &r);
        assert_abs_diff_eq!(whole, pieces, epsilon = 1e-12);
        assert_abs_diff_eq!(integrate_spans(|_| 1.0, &knots, &r), 1.0, epsilon = 1e-14);
    }
}
