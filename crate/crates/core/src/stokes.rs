//! Forward and adjoint Stokes solves on one mesh.
//!
//! The adjoint system `-Δz - ∇r = g, div z = 0` differs from the forward one
//! only in the sign of the pressure, so both share a single factorization:
//! `r = -p` where `(z, p)` solves the forward system with load `g`.

use std::sync::{Arc, OnceLock};

use crate::assembly::{
    assemble_control_coupling, assemble_load_dirac, assemble_load_l2, assemble_saddle_system, SaddleSystem,
};
use crate::fe_spaces::{BoundaryValues, ControlField, ElementFamily, FEFunction, FieldKind, VelocityPressureSpace};
use crate::sparse::CsrMatrix;
use crate::mesh::Mesh;
use crate::quadrature::QuadratureRule;
use crate::saddle_solver::Factorization;
use crate::{Result, Vec3};

#[derive(Debug, Clone)]
pub struct StokesPair {
    pub velocity: FEFunction,
    pub pressure: FEFunction,
}

/// Momentum right-hand side; present parts are added.
#[derive(Default, Clone, Copy)]
pub struct StokesRhs<'a> {
    pub l2_load: Option<&'a dyn Fn(&[f64]) -> Vec3>,
    pub control: Option<&'a ControlField>,
    pub dirac: Option<(&'a [Vec<f64>], &'a [Vec3])>,
}

#[derive(Debug)]
pub struct StokesSolver {
    space: Arc<VelocityPressureSpace>,
    factorization: Factorization,
    rule: QuadratureRule,
    coupling: OnceLock<CsrMatrix>,
}

impl StokesSolver {
    pub fn new(mesh: Arc<Mesh>, family: ElementFamily) -> Result<Self> {
        let dim = mesh.dim();
        let space = Arc::new(VelocityPressureSpace::new(mesh, family));
        let system = Arc::new(assemble_saddle_system(&space)?);
        let factorization = Factorization::new(system, space.zero_boundary())?;
        Ok(StokesSolver {
            space,
            factorization,
            rule: QuadratureRule::high_order(dim)?,
            coupling: OnceLock::new(),
        })
    }

    pub fn space(&self) -> &Arc<VelocityPressureSpace> {
        &self.space
    }

    pub fn system(&self) -> &Arc<SaddleSystem> {
        self.factorization.system()
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        self.space.mesh()
    }

    /// High-order rule used for loads from closed-form data.
    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn load_from_fn(&self, f: impl Fn(&[f64]) -> Vec3) -> Vec<f64> {
        assemble_load_l2(&self.space, f, &self.rule)
    }

    pub fn load_from_dirac(&self, points: &[Vec<f64>], amplitudes: &[Vec3]) -> Result<Vec<f64>> {
        assemble_load_dirac(&self.space, points, amplitudes)
    }

    /// Control-to-load matrix, assembled on first use.
    pub fn control_coupling(&self) -> Result<&CsrMatrix> {
        if let Some(c) = self.coupling.get() {
            return Ok(c);
        }
        let c = assemble_control_coupling(&self.space)?;
        Ok(self.coupling.get_or_init(|| c))
    }

    pub fn assemble_rhs(&self, rhs: &StokesRhs) -> Result<Vec<f64>> {
        let mut load = vec![0.0; self.space.n_velocity_dofs()];
        let mut add = |v: Vec<f64>| load.iter_mut().zip(v).for_each(|(a, b)| *a += b);
        if let Some(f) = rhs.l2_load {
            add(self.load_from_fn(f));
        }
        if let Some(u) = rhs.control {
            add(self.control_coupling()?.mul_vec(&u.values));
        }
        if let Some((pts, amps)) = rhs.dirac {
            add(self.load_from_dirac(pts, amps)?);
        }
        Ok(load)
    }

    pub fn solve_stokes(&self, rhs: &StokesRhs, bc: Option<&BoundaryValues>) -> Result<StokesPair> {
        self.solve(&self.assemble_rhs(rhs)?, bc)
    }

    pub fn boundary_from_fn(&self, g: impl Fn(&[f64]) -> Vec3) -> BoundaryValues {
        self.space.interpolate_boundary(g)
    }

    /// `a(y, v) + b(v, p) = <load, v>`, `b(y, q) = 0`, `y = bc` on the boundary
    /// (homogeneous when `bc` is `None`), `\int p = 0`.
    pub fn solve(&self, load: &[f64], bc: Option<&BoundaryValues>) -> Result<StokesPair> {
        let s = match bc {
            Some(bc) => self.factorization.solve_with_boundary(load, None, bc)?,
            None => self.factorization.solve(load, None)?,
        };
        Ok(StokesPair {
            velocity: FEFunction::new(self.space.clone(), FieldKind::Velocity, s.velocity),
            pressure: FEFunction::new(self.space.clone(), FieldKind::Pressure, s.pressure),
        })
    }

    /// `a(w, z) - b(w, r) = <load, w>`, `b(z, q) = 0`.
    pub fn solve_adjoint(&self, load: &[f64], bc: Option<&BoundaryValues>) -> Result<StokesPair> {
        let mut pair = self.solve(load, bc)?;
        pair.pressure.coeffs.iter_mut().for_each(|p| *p = -*p);
        Ok(pair)
    }

    /// Adjoint with the Dirac load `sum_t (y_h(t) - y_t) δ_t`.
    pub fn solve_adjoint_tracking(
        &self,
        state: &FEFunction,
        points: &[Vec<f64>],
        targets: &[Vec3],
        bc: Option<&BoundaryValues>,
    ) -> Result<StokesPair> {
        if points.len() != targets.len() {
            return Err(crate::Error::MismatchedPoints);
        }
        let mut residuals = Vec::with_capacity(points.len());
        for (t, yt) in points.iter().zip(targets) {
            let y = state.eval_velocity(t)?;
            residuals.push([0, 1, 2].map(|k| y[k] - yt[k]));
        }
        let load = self.load_from_dirac(points, &residuals)?;
        self.solve_adjoint(&load, bc)
    }

    /// Adjoint with the distributed load `y_h - y_d`.
    pub fn solve_adjoint_desired(
        &self,
        state: &FEFunction,
        desired: impl Fn(&[f64]) -> Vec3,
        bc: Option<&BoundaryValues>,
    ) -> Result<StokesPair> {
        let my = self.system().m.mul_vec(&state.coeffs);
        let yd = self.load_from_fn(desired);
        let load: Vec<f64> = my.iter().zip(&yd).map(|(a, b)| a - b).collect();
        self.solve_adjoint(&load, bc)
    }
}
