//! Bilinear forms and load vectors.
//!
//! With `a(y, v) = (grad y, grad v)` and `b(v, q) = -(q, div v)` the Stokes
//! problem reads `a(y, v) + b(v, p) = <f, v>`, `b(y, q) = 0`; `B` stores
//! `b(phi_j, psi_i)` with pressure rows.

use std::sync::Arc;

use crate::fe_spaces::{ElementFamily, VelocityPressureSpace};
use crate::quadrature::QuadratureRule;
use crate::sparse::{CsrMatrix, TripletBuilder};
use crate::{Error, Result, Vec3};

/// Minimum distance from the boundary for a Dirac load.
pub const DIRAC_BOUNDARY_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct SaddleSystem {
    pub space: Arc<VelocityPressureSpace>,
    /// Vector Laplacian, block diagonal by component.
    pub a: CsrMatrix,
    /// Divergence form, `n_p x n_u`.
    pub b: CsrMatrix,
    /// Vector velocity mass matrix.
    pub m: CsrMatrix,
    /// `c_i = \int psi_i`, used for the zero-mean pressure constraint.
    pub constraint: Vec<f64>,
}

/// Exactness degree that integrates all products of basis functions exactly.
pub fn assembly_degree(family: ElementFamily, dim: usize) -> usize {
    match family {
        ElementFamily::TaylorHood => 4,
        ElementFamily::Mini => 2 * (dim + 1),
    }
}

pub fn assemble_saddle_system(space: &Arc<VelocityPressureSpace>) -> Result<SaddleSystem> {
    let dim = space.dim();
    let mesh = space.mesh();
    let rule = QuadratureRule::simplex(dim, assembly_degree(space.family(), dim))?;
    let nu = space.n_velocity_dofs();
    let np = space.n_pressure_dofs();
    let ns = space.n_scalar_nodes();
    let nl = space.n_local_velocity();
    let mut a = TripletBuilder::new(nu, nu);
    let mut b = TripletBuilder::new(np, nu);
    let mut m = TripletBuilder::new(nu, nu);
    let mut constraint = vec![0.0; np];

    let mut ka = vec![0.0; nl * nl];
    let mut km = vec![0.0; nl * nl];
    let mut kb = vec![0.0; (dim + 1) * nl * dim];
    for c in 0..mesh.n_cells() {
        let g = mesh.geometry(c);
        let bgrad = g.barycentric_gradients();
        let vol = g.det.abs();
        ka.iter_mut().for_each(|x| *x = 0.0);
        km.iter_mut().for_each(|x| *x = 0.0);
        kb.iter_mut().for_each(|x| *x = 0.0);
        let pn = space.pressure_nodes(c);
        for q in 0..rule.len() {
            let w = rule.weights()[q] * vol;
            let e = space.eval_basis_with(&bgrad, rule.point(q));
            for i in 0..nl {
                for j in 0..nl {
                    let gg: f64 = (0..dim).map(|k| e.velocity_grad[i][k] * e.velocity_grad[j][k]).sum();
                    ka[i * nl + j] += w * gg;
                    km[i * nl + j] += w * e.velocity[i] * e.velocity[j];
                }
            }
            for r in 0..=dim {
                constraint[pn[r]] += w * e.pressure[r];
                for j in 0..nl {
                    for k in 0..dim {
                        kb[(r * nl + j) * dim + k] -= w * e.pressure[r] * e.velocity_grad[j][k];
                    }
                }
            }
        }
        let vn = space.velocity_nodes(c);
        for k in 0..dim {
            for i in 0..nl {
                let gi = k * ns + vn[i];
                for j in 0..nl {
                    let gj = k * ns + vn[j];
                    a.push(gi, gj, ka[i * nl + j]);
                    m.push(gi, gj, km[i * nl + j]);
                }
            }
        }
        for r in 0..=dim {
            for j in 0..nl {
                for k in 0..dim {
                    b.push(pn[r], k * ns + vn[j], kb[(r * nl + j) * dim + k]);
                }
            }
        }
    }
    Ok(SaddleSystem {
        space: space.clone(),
        a: a.build(),
        b: b.build(),
        m: m.build(),
        constraint,
    })
}

/// `<f, phi_i>` for every velocity DOF, evaluated with `rule`.
pub fn assemble_load_l2(
    space: &VelocityPressureSpace,
    f: impl Fn(&[f64]) -> Vec3,
    rule: &QuadratureRule,
) -> Vec<f64> {
    let dim = space.dim();
    assemble_load_quadrature(space, rule, |_, _, x| f(&x[..dim]))
}

/// Load vector from a callback that receives `(cell, quadrature index, point)`.
/// Used when the integrand is only known at quadrature points.
pub fn assemble_load_quadrature(
    space: &VelocityPressureSpace,
    rule: &QuadratureRule,
    mut f: impl FnMut(usize, usize, &Vec3) -> Vec3,
) -> Vec<f64> {
    let dim = space.dim();
    let mesh = space.mesh();
    let ns = space.n_scalar_nodes();
    let mut load = vec![0.0; space.n_velocity_dofs()];
    for c in 0..mesh.n_cells() {
        let g = mesh.geometry(c);
        let bgrad = g.barycentric_gradients();
        let vol = g.det.abs();
        let vn = space.velocity_nodes(c);
        for q in 0..rule.len() {
            let x = g.to_physical(rule.point(q));
            let v = f(c, q, &x);
            let w = rule.weights()[q] * vol;
            let e = space.eval_basis_with(&bgrad, rule.point(q));
            for (i, &n) in vn.iter().enumerate() {
                for k in 0..dim {
                    load[k * ns + n] += w * v[k] * e.velocity[i];
                }
            }
        }
    }
    load
}

/// `sum_t F_t . phi_i(t)`. Points closer than [`DIRAC_BOUNDARY_TOL`] to the
/// boundary are rejected.
pub fn assemble_load_dirac(
    space: &VelocityPressureSpace,
    points: &[Vec<f64>],
    amplitudes: &[Vec3],
) -> Result<Vec<f64>> {
    if points.len() != amplitudes.len() {
        return Err(Error::MismatchedPoints);
    }
    let dim = space.dim();
    let ns = space.n_scalar_nodes();
    let mesh = space.mesh();
    let mut load = vec![0.0; space.n_velocity_dofs()];
    for (t, f) in points.iter().zip(amplitudes) {
        if t.len() != dim {
            return Err(Error::DimensionMismatch(format!("point {t:?} in {dim}D")));
        }
        if mesh.distance_to_boundary(t) <= DIRAC_BOUNDARY_TOL {
            return Err(Error::PointOnBoundary(t.clone()));
        }
        let (c, bary) = mesh.locate_point(t)?;
        let e = space.eval_basis(c, &bary);
        for (i, &n) in space.velocity_nodes(c).iter().enumerate() {
            for k in 0..dim {
                load[k * ns + n] += f[k] * e.velocity[i];
            }
        }
    }
    Ok(load)
}

/// `C[(k, n), (c, k)] = \int_c phi_n`: maps a piecewise-constant control
/// (cell-major, stride `dim`) to its velocity load.
pub fn assemble_control_coupling(space: &VelocityPressureSpace) -> Result<CsrMatrix> {
    let dim = space.dim();
    let mesh = space.mesh();
    let rule = QuadratureRule::simplex(dim, assembly_degree(space.family(), dim))?;
    let ns = space.n_scalar_nodes();
    let mut t = TripletBuilder::new(space.n_velocity_dofs(), dim * mesh.n_cells());
    for c in 0..mesh.n_cells() {
        let g = mesh.geometry(c);
        let bgrad = g.barycentric_gradients();
        let vol = g.det.abs();
        let mut integrals = [0.0; crate::fe_spaces::MAX_LOCAL];
        for q in 0..rule.len() {
            let e = space.eval_basis_with(&bgrad, rule.point(q));
            for (i, acc) in integrals.iter_mut().enumerate().take(e.n_velocity) {
                *acc += rule.weights()[q] * vol * e.velocity[i];
            }
        }
        for (i, &n) in space.velocity_nodes(c).iter().enumerate() {
            for k in 0..dim {
                t.push(k * ns + n, c * dim + k, integrals[i]);
            }
        }
    }
    Ok(t.build())
}
