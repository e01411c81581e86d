//! Gauss rules on intervals, reference triangles and mapped simplices.

use crate::mesh::Point2;

/// Gauss–Legendre nodes and weights on `[0, 1]` with `n` points (exact to degree `2n - 1`).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = 0.5 * (1.0 - z);
        nodes[n - 1 - i] = 0.5 * (1.0 + z);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

/// Quadrature rule with points in the plane.
#[derive(Debug, Clone, Default)]
pub struct Rule {
    pub points: Vec<Point2>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate(&self, f: impl Fn(Point2) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(&p, &w)| w * f(p)).sum()
    }

    pub fn extend(&mut self, other: Rule) {
        self.points.extend(other.points);
        self.weights.extend(other.weights);
    }
}

/// Surface rule carrying a unit normal per point.
#[derive(Debug, Clone, Default)]
pub struct SurfaceRule {
    pub points: Vec<Point2>,
    pub weights: Vec<f64>,
    pub normals: Vec<[f64; 2]>,
}

impl SurfaceRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate(&self, f: impl Fn(Point2, [f64; 2]) -> f64) -> f64 {
        (0..self.len()).map(|i| self.weights[i] * f(self.points[i], self.normals[i])).sum()
    }
}

/// Collapsed (Duffy) Gauss rule on the reference triangle `(0,0),(1,0),(0,1)`,
/// exact for polynomials of total degree `<= degree`. Weights sum to `1/2`.
pub fn reference_triangle_rule(degree: usize) -> Vec<([f64; 2], f64)> {
    let n = (degree + 2).div_ceil(2).max(1);
    let (x, wx) = gauss_legendre(n);
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let s = x[i];
            let t = x[j];
            // (s, t) in unit square -> (s (1 - t), t)
            out.push(([s * (1.0 - t), t], wx[i] * wx[j] * (1.0 - t)));
        }
    }
    out
}

/// Rule on the physical triangle `tri` (any orientation).
pub fn triangle_rule(tri: &[Point2; 3], degree: usize) -> Rule {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let det = (e1.x * e2.y - e1.y * e2.x).abs();
    let mut rule = Rule::default();
    for ([s, t], w) in reference_triangle_rule(degree) {
        rule.points.push(tri[0] + e1 * s + e2 * t);
        rule.weights.push(w * det);
    }
    rule
}

/// Gauss rule on the segment `a -> b`, exact to `degree`.
pub fn segment_rule(a: Point2, b: Point2, degree: usize) -> Rule {
    let n = (degree + 2).div_ceil(2).max(1);
    let (x, w) = gauss_legendre(n);
    let len = (b - a).norm();
    Rule {
        points: x.iter().map(|&s| a + (b - a) * s).collect(),
        weights: w.iter().map(|&wi| wi * len).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::reference_monomial_integral;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in 1..8 {
            let (x, w) = gauss_legendre(n);
            for p in 0..(2 * n) {
                let q: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(p as i32)).sum();
                assert!((q - 1.0 / (p as f64 + 1.0)).abs() < 1e-14, "n={n} p={p}");
            }
        }
    }

    #[test]
    fn triangle_rule_exact_to_degree() {
        for deg in 0..12 {
            let rule = reference_triangle_rule(deg);
            for a in 0..=deg {
                for b in 0..=(deg - a) {
                    let q: f64 = rule.iter().map(|(p, w)| w * p[0].powi(a as i32) * p[1].powi(b as i32)).sum();
                    let exact = reference_monomial_integral(a, b);
                    assert!((q - exact).abs() < 1e-14, "deg={deg} a={a} b={b}");
                }
            }
            assert!(rule.iter().all(|(_, w)| *w > 0.0));
        }
    }

    #[test]
    fn mapped_triangle_area() {
        let tri = [Point2::new(0.0, 0.0), Point2::new(0.0, 2.0), Point2::new(3.0, 0.0)];
        assert!((triangle_rule(&tri, 3).total_weight() - 3.0).abs() < 1e-14);
    }
}
