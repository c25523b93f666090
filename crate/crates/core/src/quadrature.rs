//! Gauss-Legendre rules and the composite/graded variants built on them.

use std::f64::consts::PI;

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess, then Newton on P_n.
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

    /// Nodes and weights mapped affinely onto `[a, b]`.
    pub fn on(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes.iter().zip(&self.weights).map(move |(x, w)| (mid + half * x, half * w))
    }

    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        self.on(a, b).map(|(x, w)| w * f(x)).sum()
    }
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
    let dp = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, dp)
}

/// A flat list of quadrature points on an interval.
#[derive(Debug, Clone, Default)]
pub struct Rule {
    pub points: Vec<(f64, f64)>,
}

impl Rule {
    /// `panels` equal panels on `[a, b]`, `order` nodes each.
    pub fn composite(a: f64, b: f64, panels: usize, order: usize) -> Self {
        let gl = GaussLegendre::new(order);
        let w = (b - a) / panels as f64;
        let points = (0..panels)
            .flat_map(|k| {
                let lo = a + k as f64 * w;
                let hi = if k + 1 == panels { b } else { lo + w };
                gl.on(lo, hi).collect::<Vec<_>>()
            })
            .collect();
        Self { points }
    }

    /// Rule on `[0, 1]` with panels `[0, 2^-levels], …, [1/4, 1/2], [1/2, 1]`,
    /// resolving features that concentrate at the left endpoint.
    pub fn graded_unit(levels: usize, order: usize) -> Self {
        let gl = GaussLegendre::new(order);
        let mut points = Vec::with_capacity((levels + 1) * order);
        let mut hi = 1.0;
        for _ in 0..levels {
            let lo = 0.5 * hi;
            points.extend(gl.on(lo, hi));
            hi = lo;
        }
        points.extend(gl.on(0.0, hi));
        Self { points }
    }

    /// Rule on `[0, t]` graded geometrically toward both endpoints, with
    /// `levels` halvings on each side of `t/2`.
    pub fn two_sided_graded(t: f64, levels: usize, order: usize) -> Self {
        let unit = Self::graded_unit(levels, order);
        let half = 0.5 * t;
        let mut points = Vec::with_capacity(2 * unit.len());
        points.extend(unit.points.iter().map(|&(u, w)| (half * u, half * w)));
        points.extend(unit.points.iter().rev().map(|&(u, w)| (t - half * u, half * w)));
        Self { points }
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.points.iter().map(|&(x, w)| w * f(x)).sum()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Quadrature for `∫_0^τ g(s) ds` where `g` may carry an `s^{-1/2}` or
/// `e^{-r²/2s}` layer at `s = 0`: substitutes `s = τ u²` on a graded `u` rule.
#[derive(Debug, Clone)]
pub struct SqrtGradedRule {
    unit: Rule,
}

impl SqrtGradedRule {
    pub fn new(levels: usize, order: usize) -> Self {
        Self { unit: Rule::graded_unit(levels, order) }
    }

    /// Points `(s, weight)` on `[0, τ]`.
    pub fn points(&self, tau: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.unit.points.iter().map(move |&(u, w)| (tau * u * u, w * 2.0 * tau * u))
    }

    pub fn integrate(&self, tau: f64, g: impl Fn(f64) -> f64) -> f64 {
        self.points(tau).map(|(s, w)| w * g(s)).sum()
    }

    pub fn len(&self) -> usize {
        self.unit.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unit.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_exact_for_polynomials() {
        for n in [1usize, 2, 5, 12, 33] {
            let gl = GaussLegendre::new(n);
            let wsum: f64 = gl.weights.iter().sum();
            assert!((wsum - 2.0).abs() < 1e-13, "n={n}");
            let deg = 2 * n - 1;
            let v = gl.integrate(0.0, 1.0, |x| x.powi(deg as i32));
            assert!((v - 1.0 / (deg as f64 + 1.0)).abs() < 1e-13, "n={n}");
        }
    }

    #[test]
    fn sqrt_graded_rule_handles_inverse_sqrt() {
        let rule = SqrtGradedRule::new(6, 8);
        let v = rule.integrate(1.0, |s| 1.0 / (2.0 * PI * s).sqrt());
        assert!((v - (2.0 / PI).sqrt()).abs() < 1e-13);
    }

    #[test]
    fn composite_rule_integrates_gaussian() {
        let r = Rule::composite(-8.0, 8.0, 16, 10);
        let v = r.integrate(|x| (-0.5 * x * x).exp());
        assert!((v - (2.0 * PI).sqrt()).abs() < 1e-12);
    }
}
