//! Sparse direct solver for the Stokes saddle-point system.
//!
//! Dirichlet velocity DOFs are eliminated; the pressure is fixed by a scalar
//! Lagrange multiplier enforcing `\int p = 0`. The reduced matrix
//!
//! ```text
//! [ A_ff  B_f^T  0 ]
//! [ B_f   0      c ]
//! [ 0     c^T    0 ]
//! ```
//!
//! is factored once with a sparse LU and reused for every right-hand side.

use std::sync::Arc;

use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};
use faer::prelude::*;
use faer::Mat;

use crate::assembly::SaddleSystem;
use crate::fe_spaces::BoundaryValues;
use crate::sparse::{CsrMatrix, TripletBuilder};
use crate::{Error, Result};

/// Relative residual above which a solve is reported as singular.
const RESIDUAL_TOL: f64 = 1e-6;

pub struct Factorization {
    system: Arc<SaddleSystem>,
    /// Reduced index of each velocity DOF, `None` for Dirichlet DOFs.
    free_index: Vec<Option<usize>>,
    n_free: usize,
    boundary: BoundaryValues,
    reduced: CsrMatrix,
    lu: Lu<usize, f64>,
}

impl std::fmt::Debug for Factorization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Factorization")
            .field("n_free", &self.n_free)
            .field("size", &self.reduced.nrows())
            .finish()
    }
}

#[derive(Debug, Clone)]
pub struct SaddleSolution {
    pub velocity: Vec<f64>,
    pub pressure: Vec<f64>,
    pub multiplier: f64,
}

impl Factorization {
    /// Factor the system with `boundary.dofs` eliminated. `boundary.values`
    /// become the default Dirichlet data of [`solve`](Self::solve).
    pub fn new(system: Arc<SaddleSystem>, boundary: BoundaryValues) -> Result<Self> {
        let nu = system.a.nrows();
        let np = system.b.nrows();
        if boundary.dofs.len() != boundary.values.len() {
            return Err(Error::DimensionMismatch("boundary dofs and values differ in length".into()));
        }
        let mut free_index = vec![Some(0); nu];
        for &d in &boundary.dofs {
            if d >= nu {
                return Err(Error::DimensionMismatch(format!("boundary dof {d} out of range")));
            }
            free_index[d] = None;
        }
        let mut n_free = 0;
        for f in free_index.iter_mut() {
            if f.is_some() {
                *f = Some(n_free);
                n_free += 1;
            }
        }
        let n = n_free + np + 1;
        let mut t = TripletBuilder::new(n, n);
        for (r, c, v) in system.a.triplets() {
            if let (Some(fr), Some(fc)) = (free_index[r], free_index[c]) {
                t.push(fr, fc, v);
            }
        }
        for (r, c, v) in system.b.triplets() {
            if let Some(fc) = free_index[c] {
                t.push(n_free + r, fc, v);
                t.push(fc, n_free + r, v);
            }
        }
        for (i, &ci) in system.constraint.iter().enumerate() {
            t.push(n_free + i, n - 1, ci);
            t.push(n - 1, n_free + i, ci);
        }
        let reduced = t.build();
        let triplets: Vec<Triplet<usize, usize, f64>> =
            reduced.triplets().map(|(r, c, v)| Triplet::new(r, c, v)).collect();
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
            .map_err(|e| Error::SingularSystem(format!("{e:?}")))?;
        let lu = mat.sp_lu().map_err(|e| Error::SingularSystem(format!("{e:?}")))?;
        let fact = Factorization {
            system,
            free_index,
            n_free,
            boundary,
            reduced,
            lu,
        };
        // a zero pivot does not always surface as an error; probe instead
        let probe: Vec<f64> = (0..n).map(|i| 1.0 + (i % 7) as f64 * 0.1).collect();
        fact.solve_reduced(&probe)?;
        Ok(fact)
    }

    pub fn system(&self) -> &Arc<SaddleSystem> {
        &self.system
    }

    pub fn boundary(&self) -> &BoundaryValues {
        &self.boundary
    }

    pub fn size(&self) -> usize {
        self.reduced.nrows()
    }

    fn solve_reduced(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = rhs.len();
        let mut b = Mat::<f64>::from_fn(n, 1, |i, _| rhs[i]);
        self.lu.solve_in_place(b.as_mut());
        let x: Vec<f64> = (0..n).map(|i| b[(i, 0)]).collect();
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularSystem("non-finite solution".into()));
        }
        let kx = self.reduced.mul_vec(&x);
        let res = kx.iter().zip(rhs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = rhs.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        if res > RESIDUAL_TOL * scale {
            return Err(Error::SingularSystem(format!("relative residual {:.3e}", res / scale)));
        }
        Ok(x)
    }

    /// Solve with the Dirichlet data given at construction.
    pub fn solve(&self, rhs_velocity: &[f64], rhs_pressure: Option<&[f64]>) -> Result<SaddleSolution> {
        self.solve_impl(rhs_velocity, rhs_pressure, &self.boundary.values)
    }

    /// Solve with different values on the same Dirichlet DOFs.
    pub fn solve_with_boundary(
        &self,
        rhs_velocity: &[f64],
        rhs_pressure: Option<&[f64]>,
        boundary: &BoundaryValues,
    ) -> Result<SaddleSolution> {
        if boundary.dofs != self.boundary.dofs {
            return Err(Error::DimensionMismatch(
                "Dirichlet DOFs differ from the factored system".into(),
            ));
        }
        self.solve_impl(rhs_velocity, rhs_pressure, &boundary.values)
    }

    fn solve_impl(&self, rhs_u: &[f64], rhs_p: Option<&[f64]>, g: &[f64]) -> Result<SaddleSolution> {
        let sys = &self.system;
        let nu = sys.a.nrows();
        let np = sys.b.nrows();
        if rhs_u.len() != nu || rhs_p.is_some_and(|p| p.len() != np) {
            return Err(Error::DimensionMismatch("right-hand side has the wrong length".into()));
        }
        let mut lifted = vec![0.0; nu];
        for (&d, &v) in self.boundary.dofs.iter().zip(g) {
            lifted[d] = v;
        }
        let a_g = sys.a.mul_vec(&lifted);
        let b_g = sys.b.mul_vec(&lifted);
        let n = self.size();
        let mut rhs = vec![0.0; n];
        for (i, fi) in self.free_index.iter().enumerate() {
            if let Some(f) = fi {
                rhs[*f] = rhs_u[i] - a_g[i];
            }
        }
        for i in 0..np {
            rhs[self.n_free + i] = rhs_p.map_or(0.0, |p| p[i]) - b_g[i];
        }
        let x = if rhs.iter().all(|&v| v == 0.0) {
            vec![0.0; n]
        } else {
            self.solve_reduced(&rhs)?
        };
        let mut velocity = lifted;
        for (i, fi) in self.free_index.iter().enumerate() {
            if let Some(f) = fi {
                velocity[i] = x[*f];
            }
        }
        Ok(SaddleSolution {
            velocity,
            pressure: x[self.n_free..self.n_free + np].to_vec(),
            multiplier: x[n - 1],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble_saddle_system;
    use crate::fe_spaces::{ElementFamily, VelocityPressureSpace};
    use crate::mesh::Mesh;

    fn setup(fam: ElementFamily) -> (Arc<SaddleSystem>, Arc<VelocityPressureSpace>) {
        let space = Arc::new(VelocityPressureSpace::new(Arc::new(Mesh::unit(2, 2).unwrap()), fam));
        (Arc::new(assemble_saddle_system(&space).unwrap()), space)
    }

    #[test]
    fn zero_data_gives_zero() {
        let (sys, space) = setup(ElementFamily::TaylorHood);
        let f = Factorization::new(sys, space.zero_boundary()).unwrap();
        let s = f.solve(&vec![0.0; space.n_velocity_dofs()], None).unwrap();
        assert!(s.velocity.iter().chain(&s.pressure).all(|&v| v == 0.0));
    }

    #[test]
    fn reproduces_discrete_solution() {
        // take a discrete pair, build its right-hand side, recover it
        for fam in [ElementFamily::TaylorHood, ElementFamily::Mini] {
            let (sys, space) = setup(fam);
            let u = space.interpolate_velocity(|x| [x[0] * x[0] - 2.0 * x[0] * x[1], x[1] * x[1] - 2.0 * x[0] * x[1], 0.0]);
            let p = space.interpolate_pressure(|x| x[0] - 0.5);
            let rhs_u: Vec<f64> = sys
                .a
                .mul_vec(&u.coeffs)
                .iter()
                .zip(sys.b.transpose_mul_vec(&p.coeffs))
                .map(|(a, b)| a + b)
                .collect();
            let rhs_p = sys.b.mul_vec(&u.coeffs);
            let bc = space.interpolate_boundary(|x| [x[0] * x[0] - 2.0 * x[0] * x[1], x[1] * x[1] - 2.0 * x[0] * x[1], 0.0]);
            let f = Factorization::new(sys.clone(), space.zero_boundary()).unwrap();
            let s = f.solve_with_boundary(&rhs_u, Some(&rhs_p), &bc).unwrap();
            let err_u = s.velocity.iter().zip(&u.coeffs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let err_p = s.pressure.iter().zip(&p.coeffs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err_u < 1e-10 && err_p < 1e-10, "{fam:?} {err_u} {err_p}");
            assert!(s.multiplier.abs() < 1e-10);
        }
    }

    #[test]
    fn singular_without_pressure_fix() {
        // dropping every velocity DOF leaves a zero block: must be reported
        let (sys, space) = setup(ElementFamily::TaylorHood);
        let all: Vec<usize> = (0..space.n_velocity_dofs()).collect();
        let r = Factorization::new(sys, BoundaryValues::zeros(&all));
        assert!(matches!(r, Err(Error::SingularSystem(_))));
    }
}
