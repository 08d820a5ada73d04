//! Conical-product (collapsed Gauss-Legendre) rules on the reference simplex.
//!
//! A rule of exactness degree `p` collapses the unit square/cube onto the
//! simplex (Duffy map) and uses a tensor Gauss-Legendre rule with enough
//! points to absorb the Jacobian factors `(1-s)` and `(1-s)^2 (1-t)`. All
//! weights are positive and all points lie strictly inside the simplex.

use crate::mesh::Mesh;
use crate::{Error, Result};

/// Highest supported exactness degree per dimension.
pub const MAX_DEGREE_2D: usize = 19;
pub const MAX_DEGREE_3D: usize = 14;

#[derive(Debug, Clone)]
pub struct QuadratureRule {
    dim: usize,
    degree: usize,
    /// Barycentric coordinates, stride `dim + 1`.
    points: Vec<f64>,
    /// Weights on the reference simplex; they sum to `1/d!`.
    weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn simplex(dim: usize, degree: usize) -> Result<Self> {
        let cap = match dim {
            2 => MAX_DEGREE_2D,
            3 => MAX_DEGREE_3D,
            d => return Err(Error::UnsupportedDimension(d)),
        };
        if degree > cap {
            return Err(Error::UnsupportedDegree { dim, degree });
        }
        let (x, w) = gauss_legendre_unit((degree + dim).div_ceil(2).max(1));
        let mut points = Vec::new();
        let mut weights = Vec::new();
        if dim == 2 {
            for (&s, &ws) in x.iter().zip(&w) {
                for (&t, &wt) in x.iter().zip(&w) {
                    let xi1 = s;
                    let xi2 = t * (1.0 - s);
                    points.extend([1.0 - xi1 - xi2, xi1, xi2]);
                    weights.push(ws * wt * (1.0 - s));
                }
            }
        } else {
            for (&s, &ws) in x.iter().zip(&w) {
                for (&t, &wt) in x.iter().zip(&w) {
                    for (&u, &wu) in x.iter().zip(&w) {
                        let xi1 = s;
                        let xi2 = t * (1.0 - s);
                        let xi3 = u * (1.0 - s) * (1.0 - t);
                        points.extend([1.0 - xi1 - xi2 - xi3, xi1, xi2, xi3]);
                        weights.push(ws * wt * wu * (1.0 - s) * (1.0 - s) * (1.0 - t));
                    }
                }
            }
        }
        Ok(QuadratureRule {
            dim,
            degree,
            points,
            weights,
        })
    }

    /// The high-order rule used for right-hand sides and error norms.
    pub fn high_order(dim: usize) -> Result<Self> {
        match dim {
            2 => Self::simplex(2, MAX_DEGREE_2D),
            3 => Self::simplex(3, MAX_DEGREE_3D),
            d => Err(Error::UnsupportedDimension(d)),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn point(&self, q: usize) -> &[f64] {
        let n = self.dim + 1;
        &self.points[q * n..(q + 1) * n]
    }

    /// Integral of `f` over the reference simplex, `f` taking reference coordinates.
    pub fn integrate_reference(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        (0..self.len()).map(|q| self.weights[q] * f(&self.point(q)[1..])).sum()
    }
}

/// Gauss-Legendre nodes and weights mapped to `[0, 1]`.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, z);
        if d != 0.0 {
            dp = d;
        }
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = 0.5 * (1.0 - z);
        x[n - 1 - i] = 0.5 * (1.0 + z);
        w[i] = 0.5 * wi;
        w[n - 1 - i] = 0.5 * wi;
    }
    (x, w)
}

fn legendre(n: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// `f` integrated over the mesh with `rule`, summed cell by cell in index order.
pub fn integrate(mesh: &Mesh, rule: &QuadratureRule, f: impl Fn(&[f64]) -> f64) -> f64 {
    assert_eq!(rule.dim(), mesh.dim(), "rule and mesh dimension differ");
    let dim = mesh.dim();
    let mut total = 0.0;
    for c in 0..mesh.n_cells() {
        let g = mesh.geometry(c);
        let scale = g.det.abs();
        let mut cell_sum = 0.0;
        for q in 0..rule.len() {
            let x = g.to_physical(rule.point(q));
            cell_sum += rule.weights[q] * f(&x[..dim]);
        }
        total += scale * cell_sum;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    #[test]
    fn weights_sum_to_reference_volume() {
        for deg in 0..=19 {
            let r = QuadratureRule::simplex(2, deg).unwrap();
            let s: f64 = r.weights().iter().sum();
            assert!((s - 0.5).abs() < 1e-14, "deg {deg}");
        }
        for deg in 0..=14 {
            let r = QuadratureRule::simplex(3, deg).unwrap();
            let s: f64 = r.weights().iter().sum();
            assert!((s - 1.0 / 6.0).abs() < 1e-14, "deg {deg}");
        }
    }

    #[test]
    fn closed_form_monomials() {
        let r = QuadratureRule::simplex(2, 19).unwrap();
        let v = r.integrate_reference(|x| x[0].powi(19));
        assert!((v - 1.0 / 420.0).abs() < 1e-12 / 420.0);

        let r3 = QuadratureRule::simplex(3, 14).unwrap();
        let v = r3.integrate_reference(|x| x[0].powi(5) * x[1].powi(4) * x[2].powi(3));
        let exact = factorial(5) * factorial(4) * factorial(3) / factorial(15);
        assert!(((v - exact) / exact).abs() < 1e-12);
    }

    #[test]
    fn rejects_degrees_above_cap() {
        assert!(matches!(
            QuadratureRule::simplex(2, 20),
            Err(Error::UnsupportedDegree { dim: 2, degree: 20 })
        ));
        assert!(QuadratureRule::simplex(3, 15).is_err());
        assert!(QuadratureRule::simplex(4, 1).is_err());
    }

    #[test]
    fn points_are_inside_the_simplex() {
        let r = QuadratureRule::simplex(3, 14).unwrap();
        for q in 0..r.len() {
            let p = r.point(q);
            assert!(p.iter().all(|&b| b > 0.0 && b < 1.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn mesh_integrals() {
        let m = Mesh::unit(2, 2).unwrap();
        let r = QuadratureRule::high_order(2).unwrap();
        assert!((integrate(&m, &r, |_| 1.0) - 1.0).abs() < 1e-13);
        let bubble = integrate(&m, &r, |x| x[0] * x[1] * (1.0 - x[0]) * (1.0 - x[1]));
        assert!((bubble - 1.0 / 36.0).abs() < 1e-14);

        let t = Mesh::unit(3, 1).unwrap();
        let r3 = QuadratureRule::high_order(3).unwrap();
        assert!((integrate(&t, &r3, |x| x[0] * x[1] * x[2]) - 0.125).abs() < 1e-14);
    }
}
