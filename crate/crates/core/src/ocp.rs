//! Solvers for the two box-constrained control problems.
//!
//! Both problems observe or actuate the velocity only at finitely many
//! points, so the control-to-observation map factors through the `d·l`
//! responses `w_jk = S δ_{t_j} e_k` (velocity of a Stokes solve with a unit
//! Dirac load). These are computed once per mesh; every matrix-vector
//! product of the reduced Hessian is then a combination of them, which is
//! algebraically the same as one forward plus one adjoint solve.
//!
//! With inhomogeneous adjoint boundary data `g` the optimality system is the
//! first-order condition of the tracking functional plus the linear term
//! `(z_g, u)`, where `z_g` is the adjoint lifting of `g`. That merit
//! function is what the iterations monitor.

use faer::linalg::solvers::Solve;
use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_load_quadrature, assembly_degree};
use crate::fe_spaces::{BoundaryValues, ControlField, FEFunction};
use crate::quadrature::QuadratureRule;
use crate::stokes::{StokesPair, StokesSolver};
use crate::{Error, Result, Vec3, VectorFn};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxConstraint {
    pub dim: usize,
    pub lower: Vec3,
    pub upper: Vec3,
}

impl BoxConstraint {
    pub fn new(dim: usize, lower: Vec3, upper: Vec3) -> Result<Self> {
        for k in 0..dim {
            if !(lower[k] < upper[k]) {
                return Err(Error::InvalidConfig(format!(
                    "box bound {k}: lower {} must be below upper {}",
                    lower[k], upper[k]
                )));
            }
        }
        Ok(BoxConstraint { dim, lower, upper })
    }

    pub fn project(&self, v: &Vec3) -> Vec3 {
        let mut out = [0.0; 3];
        for k in 0..self.dim {
            out[k] = project_scalar(v[k], self.lower[k], self.upper[k]);
        }
        out
    }

    pub fn contains(&self, v: &Vec3) -> bool {
        (0..self.dim).all(|k| v[k] >= self.lower[k] && v[k] <= self.upper[k])
    }
}

/// `min(b, max(v, a))`.
pub fn project_scalar(v: f64, a: f64, b: f64) -> f64 {
    v.max(a).min(b)
}

/// Componentwise clamp of `v` onto the box.
pub fn project_box(v: &Vec3, bounds: &BoxConstraint) -> Vec3 {
    bounds.project(v)
}

/// Distributed control, tracking of the velocity at `points`.
#[derive(Clone)]
pub struct TrackingProblem {
    pub dim: usize,
    pub lambda: f64,
    pub bounds: BoxConstraint,
    pub points: Vec<Vec<f64>>,
    pub targets: Vec<Vec3>,
    /// Additional momentum forcing.
    pub forcing: Option<VectorFn>,
    pub state_bc: Option<VectorFn>,
    pub adjoint_bc: Option<VectorFn>,
}

/// Point-force amplitudes at `points`, distributed tracking of `desired`.
#[derive(Clone)]
pub struct PointSourceProblem {
    pub dim: usize,
    pub lambda: f64,
    pub bounds: BoxConstraint,
    pub points: Vec<Vec<f64>>,
    pub desired: VectorFn,
    pub state_bc: Option<VectorFn>,
    pub adjoint_bc: Option<VectorFn>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Tolerance on the variational-inequality residual (and on the control
    /// update for the variational discretization).
    pub tol: f64,
    pub max_iter: usize,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-10,
            max_iter: 50,
            cg_tol: 1e-12,
            cg_max_iter: 200,
        }
    }
}

/// Control values at the points of `rule` in every cell, index
/// `(cell * rule.len() + q) * dim + k`.
#[derive(Debug, Clone)]
pub struct QuadratureControl {
    pub dim: usize,
    pub rule: QuadratureRule,
    pub values: Vec<f64>,
}

impl QuadratureControl {
    pub fn value(&self, cell: usize, q: usize) -> Vec3 {
        let i = (cell * self.rule.len() + q) * self.dim;
        let mut v = [0.0; 3];
        v[..self.dim].copy_from_slice(&self.values[i..i + self.dim]);
        v
    }
}

#[derive(Debug, Clone)]
pub enum Control {
    Cellwise(ControlField),
    Quadrature(QuadratureControl),
    Amplitudes(Vec<Vec3>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveCounts {
    pub lower: usize,
    pub upper: usize,
}

#[derive(Debug, Clone)]
pub struct OCPSolution {
    pub state: StokesPair,
    pub adjoint: StokesPair,
    pub control: Control,
    /// Tracking functional at the returned pair.
    pub objective: f64,
    pub iterations: usize,
    pub active_history: Vec<ActiveCounts>,
    /// Merit value after every accepted step (`‖F‖∞` for the variational
    /// discretization), starting with the initial guess.
    pub merit_history: Vec<f64>,
    pub vi_residual: f64,
    /// `λu + Πz` per control entry (empty for the variational discretization).
    pub reduced_gradient: Vec<f64>,
    /// Weights of the control inner product matching `reduced_gradient`.
    pub pairing_weights: Vec<f64>,
}

impl OCPSolution {
    /// Flattened control values for the cellwise and amplitude variants.
    pub fn control_values(&self) -> Vec<f64> {
        match &self.control {
            Control::Cellwise(c) => c.values.clone(),
            Control::Amplitudes(a) => {
                let d = self.state.velocity.space().dim();
                a.iter().flat_map(|v| v[..d].to_vec()).collect()
            }
            Control::Quadrature(q) => q.values.clone(),
        }
    }

    /// `(λu + Πz, v - u)` in the control inner product; nonnegative for every
    /// admissible `v` at an optimum.
    pub fn directional_derivative(&self, v: &[f64]) -> f64 {
        let u = self.control_values();
        self.reduced_gradient
            .iter()
            .zip(&self.pairing_weights)
            .zip(v.iter().zip(&u))
            .map(|((g, w), (vi, ui))| g * w * (vi - ui))
            .sum()
    }
}

/// Cellwise averages `Π z` of a velocity field.
pub fn cell_averages(field: &FEFunction) -> Result<ControlField> {
    let space = field.space();
    let mesh = space.mesh();
    let dim = space.dim();
    let rule = QuadratureRule::simplex(dim, assembly_degree(space.family(), dim))?;
    let total: f64 = rule.weights().iter().sum();
    let mut values = Vec::with_capacity(dim * mesh.n_cells());
    for c in 0..mesh.n_cells() {
        let mut acc = [0.0; 3];
        for q in 0..rule.len() {
            let e = space.eval_basis_with(&[[0.0; 3]; 4], rule.point(q));
            let v = field.velocity_in_cell(c, &e);
            for k in 0..dim {
                acc[k] += rule.weights()[q] * v[k];
            }
        }
        values.extend(acc[..dim].iter().map(|a| a / total));
    }
    Ok(ControlField::from_values(dim, values))
}

/// Largest defect of the projection formula at the returned solution:
/// cellwise `|u - Π(-Πz/λ)|`, at quadrature points `|q - Π(-z/λ)|`, or at the
/// sources `|u_t - Π(-z(t)/λ)|`.
pub fn check_discrete_vi(
    solution: &OCPSolution,
    lambda: f64,
    bounds: &BoxConstraint,
    points: &[Vec<f64>],
) -> Result<f64> {
    let dim = bounds.dim;
    let z = &solution.adjoint.velocity;
    let mut worst: f64 = 0.0;
    match &solution.control {
        Control::Cellwise(u) => {
            let pz = cell_averages(z)?;
            for (i, (&ui, &zi)) in u.values.iter().zip(&pz.values).enumerate() {
                let k = i % dim;
                worst = worst.max((ui - project_scalar(-zi / lambda, bounds.lower[k], bounds.upper[k])).abs());
            }
        }
        Control::Quadrature(qc) => {
            let space = z.space();
            let nq = qc.rule.len();
            for c in 0..space.mesh().n_cells() {
                for q in 0..nq {
                    let e = space.eval_basis_with(&[[0.0; 3]; 4], qc.rule.point(q));
                    let zv = z.velocity_in_cell(c, &e);
                    let qv = qc.value(c, q);
                    for k in 0..dim {
                        let p = project_scalar(-zv[k] / lambda, bounds.lower[k], bounds.upper[k]);
                        worst = worst.max((qv[k] - p).abs());
                    }
                }
            }
        }
        Control::Amplitudes(a) => {
            if a.len() != points.len() {
                return Err(Error::MismatchedPoints);
            }
            for (t, ut) in points.iter().zip(a) {
                let zt = z.eval_velocity(t)?;
                for k in 0..dim {
                    let p = project_scalar(-zt[k] / lambda, bounds.lower[k], bounds.upper[k]);
                    worst = worst.max((ut[k] - p).abs());
                }
            }
        }
    }
    Ok(worst)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Velocity responses to unit Dirac loads, index `j * dim + k`.
fn unit_responses(solver: &StokesSolver, points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let dim = solver.space().dim();
    let mut out = Vec::with_capacity(points.len() * dim);
    for t in points {
        for k in 0..dim {
            let mut e = [0.0; 3];
            e[k] = 1.0;
            let load = solver.load_from_dirac(std::slice::from_ref(t), &[e])?;
            out.push(solver.solve(&load, None)?.velocity.coeffs);
        }
    }
    Ok(out)
}

fn boundary(solver: &StokesSolver, g: &Option<VectorFn>) -> Option<BoundaryValues> {
    g.as_ref().map(|g| solver.boundary_from_fn(|x| g(x)))
}

fn eval_at(field: &FEFunction, points: &[Vec<f64>], dim: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(points.len() * dim);
    for t in points {
        let v = field.eval_velocity(t)?;
        out.extend_from_slice(&v[..dim]);
    }
    Ok(out)
}

/// Affine data shared by both discretizations of the tracking problem.
struct TrackingContext<'a> {
    solver: &'a StokesSolver,
    problem: &'a TrackingProblem,
    dim: usize,
    forcing_load: Vec<f64>,
    state_bc: Option<BoundaryValues>,
    adjoint_bc: Option<BoundaryValues>,
    /// Observation of the uncontrolled state minus targets.
    offset: Vec<f64>,
    responses: Vec<Vec<f64>>,
    /// Adjoint velocity for zero load and the adjoint boundary data.
    adjoint_lift: Vec<f64>,
    targets_flat: Vec<f64>,
}

impl<'a> TrackingContext<'a> {
    fn new(solver: &'a StokesSolver, problem: &'a TrackingProblem) -> Result<Self> {
        let dim = solver.space().dim();
        if problem.dim != dim {
            return Err(Error::DimensionMismatch(format!("{}D problem on a {dim}D mesh", problem.dim)));
        }
        if problem.points.len() != problem.targets.len() {
            return Err(Error::MismatchedPoints);
        }
        let nu = solver.space().n_velocity_dofs();
        let forcing_load = match &problem.forcing {
            Some(f) => solver.load_from_fn(|x| f(x)),
            None => vec![0.0; nu],
        };
        let state_bc = boundary(solver, &problem.state_bc);
        let adjoint_bc = boundary(solver, &problem.adjoint_bc);
        let y0 = solver.solve(&forcing_load, state_bc.as_ref())?;
        let targets_flat: Vec<f64> = problem.targets.iter().flat_map(|t| t[..dim].to_vec()).collect();
        let offset: Vec<f64> = eval_at(&y0.velocity, &problem.points, dim)?
            .iter()
            .zip(&targets_flat)
            .map(|(a, b)| a - b)
            .collect();
        let responses = unit_responses(solver, &problem.points)?;
        let adjoint_lift = match &adjoint_bc {
            Some(bc) => solver.solve_adjoint(&vec![0.0; nu], Some(bc))?.velocity.coeffs,
            None => vec![0.0; nu],
        };
        Ok(TrackingContext {
            solver,
            problem,
            dim,
            forcing_load,
            state_bc,
            adjoint_bc,
            offset,
            responses,
            adjoint_lift,
            targets_flat,
        })
    }

    /// Final forward and adjoint solves for a given control load.
    fn finish(&self, control_load: &[f64]) -> Result<(StokesPair, StokesPair)> {
        let load: Vec<f64> = self.forcing_load.iter().zip(control_load).map(|(a, b)| a + b).collect();
        let state = self.solver.solve(&load, self.state_bc.as_ref())?;
        let adjoint = self.solver.solve_adjoint_tracking(
            &state.velocity,
            &self.problem.points,
            &self.problem.targets,
            self.adjoint_bc.as_ref(),
        )?;
        Ok((state, adjoint))
    }

    fn tracking_term(&self, state: &FEFunction) -> Result<f64> {
        let y = eval_at(state, &self.problem.points, self.dim)?;
        Ok(0.5 * y.iter().zip(&self.targets_flat).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
    }
}

fn classify(mu: &[f64], bounds: &BoxConstraint) -> Vec<i8> {
    let dim = bounds.dim;
    mu.iter()
        .enumerate()
        .map(|(i, &m)| {
            let k = i % dim;
            if m < bounds.lower[k] {
                -1
            } else if m > bounds.upper[k] {
                1
            } else {
                0
            }
        })
        .collect()
}

fn counts(sets: &[i8]) -> ActiveCounts {
    ActiveCounts {
        lower: sets.iter().filter(|&&s| s < 0).count(),
        upper: sets.iter().filter(|&&s| s > 0).count(),
    }
}

fn vi_defect(u: &[f64], mu: &[f64], bounds: &BoxConstraint) -> f64 {
    let dim = bounds.dim;
    u.iter()
        .zip(mu)
        .enumerate()
        .map(|(i, (&ui, &m))| (ui - project_scalar(m, bounds.lower[i % dim], bounds.upper[i % dim])).abs())
        .fold(0.0, f64::max)
}

/// Preconditioned CG for `(D + Gᵀ G) x = b` restricted to `free`, where `D`
/// is diagonal and `G` has the rows `g`.
fn pcg_restricted(
    diag: &[f64],
    g: &[Vec<f64>],
    free: &[usize],
    rhs: &[f64],
    x0: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let apply = |v: &[f64]| -> Vec<f64> {
        let gv: Vec<f64> = g.iter().map(|row| free.iter().zip(v).map(|(&i, vi)| row[i] * vi).sum()).collect();
        free.iter()
            .zip(v)
            .map(|(&i, vi)| diag[i] * vi + g.iter().zip(&gv).map(|(row, s)| row[i] * s).sum::<f64>())
            .collect()
    };
    let n = free.len();
    let bnorm = dot(rhs, rhs).sqrt();
    if n == 0 {
        return Ok(Vec::new());
    }
    if bnorm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut x = x0.to_vec();
    let ax = apply(&x);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut z: Vec<f64> = r.iter().zip(free).map(|(ri, &i)| ri / diag[i]).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for _ in 0..max_iter {
        let rn = dot(&r, &r).sqrt();
        if rn <= tol * bnorm {
            return Ok(x);
        }
        let ap = apply(&p);
        let alpha = rz / dot(&p, &ap);
        x.iter_mut().zip(&p).for_each(|(xi, pi)| *xi += alpha * pi);
        r.iter_mut().zip(&ap).for_each(|(ri, api)| *ri -= alpha * api);
        z = r.iter().zip(free).map(|(ri, &i)| ri / diag[i]).collect();
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.iter_mut().zip(&z).for_each(|(pi, zi)| *pi = zi + beta * *pi);
    }
    let rn = dot(&r, &r).sqrt();
    if rn <= tol * bnorm {
        return Ok(x);
    }
    Err(Error::MaxIterExceeded {
        solver: "conjugate gradients",
        iterations: max_iter,
        residual: rn / bnorm,
    })
}

/// Piecewise-constant controls, primal-dual active set iteration.
pub fn solve_tracking_fully_discrete(
    solver: &StokesSolver,
    problem: &TrackingProblem,
    opts: &SolverOptions,
) -> Result<OCPSolution> {
    let ctx = TrackingContext::new(solver, problem)?;
    let dim = ctx.dim;
    let mesh = solver.mesh();
    let nc = mesh.n_cells();
    let n = dim * nc;
    let lambda = problem.lambda;
    let bounds = &problem.bounds;
    let coupling = solver.control_coupling()?;
    let vol: Vec<f64> = (0..n).map(|i| mesh.cell_volume(i / dim)).collect();
    let diag: Vec<f64> = vol.iter().map(|v| lambda * v).collect();
    // observation = offset + G u
    let g: Vec<Vec<f64>> = ctx.responses.iter().map(|w| coupling.transpose_mul_vec(w)).collect();
    let lift = coupling.transpose_mul_vec(&ctx.adjoint_lift);

    let observe = |u: &[f64]| -> Vec<f64> { g.iter().zip(&ctx.offset).map(|(row, o)| o + dot(row, u)).collect() };
    // Cᵀz for the adjoint driven by the observation residual `res`
    let ctz = |res: &[f64]| -> Vec<f64> {
        let mut out = lift.clone();
        for (row, r) in g.iter().zip(res) {
            out.iter_mut().zip(row).for_each(|(o, gi)| *o += r * gi);
        }
        out
    };
    let merit = |u: &[f64]| -> f64 {
        let res = observe(u);
        0.5 * dot(&res, &res) + 0.5 * u.iter().zip(&diag).map(|(ui, d)| d * ui * ui).sum::<f64>() + dot(&lift, u)
    };
    let multiplier = |u: &[f64]| -> Vec<f64> {
        ctz(&observe(u)).iter().zip(&vol).map(|(c, v)| -c / (lambda * v)).collect()
    };

    let mut u: Vec<f64> = (0..n)
        .map(|i| project_scalar(0.0, bounds.lower[i % dim], bounds.upper[i % dim]))
        .collect();
    let mut prev_sets: Option<Vec<i8>> = None;
    let mut history = Vec::new();
    let mut current = merit(&u);
    let mut merits = vec![current];
    let mut iterations = 0;
    let mut converged = false;
    let mut defect = f64::INFINITY;
    for it in 0..=opts.max_iter {
        let mu = multiplier(&u);
        let sets = classify(&mu, bounds);
        defect = vi_defect(&u, &mu, bounds);
        history.push(counts(&sets));
        if prev_sets.as_ref() == Some(&sets) && defect <= opts.tol {
            converged = true;
            iterations = it;
            break;
        }
        if it == opts.max_iter {
            break;
        }
        // fix the active entries, solve the optimality equation on the rest
        let mut fixed = vec![0.0; n];
        let mut free = Vec::new();
        for i in 0..n {
            match sets[i] {
                -1 => fixed[i] = bounds.lower[i % dim],
                1 => fixed[i] = bounds.upper[i % dim],
                _ => free.push(i),
            }
        }
        let gfix: Vec<f64> = g.iter().zip(&ctx.offset).map(|(row, o)| o + dot(row, &fixed)).collect();
        let b_full = ctz(&gfix);
        let rhs: Vec<f64> = free.iter().map(|&i| -b_full[i]).collect();
        let x0: Vec<f64> = free.iter().map(|&i| u[i]).collect();
        let x = pcg_restricted(&diag, &g, &free, &rhs, &x0, opts.cg_tol, opts.cg_max_iter)?;
        let mut candidate = fixed;
        for (&i, xi) in free.iter().zip(&x) {
            candidate[i] = *xi;
        }
        let next = merit(&candidate);
        if it > 0 && next > current + 1e-12 * current.abs().max(1.0) {
            // safeguard: projected-gradient step with halving
            let target: Vec<f64> = (0..n)
                .map(|i| project_scalar(mu[i], bounds.lower[i % dim], bounds.upper[i % dim]))
                .collect();
            let mut step = 1.0;
            loop {
                let trial: Vec<f64> = u.iter().zip(&target).map(|(a, b)| a + step * (b - a)).collect();
                let m = merit(&trial);
                if m <= current || step < 1e-12 {
                    log::debug!("active-set step raised the merit; damped step {step}");
                    u = trial;
                    current = m;
                    break;
                }
                step *= 0.5;
            }
        } else {
            u = candidate;
            current = next;
        }
        merits.push(current);
        prev_sets = Some(sets);
        iterations = it + 1;
    }
    if !converged {
        return Err(Error::MaxIterExceeded {
            solver: "primal-dual active set",
            iterations: opts.max_iter,
            residual: defect,
        });
    }
    log::debug!("active set converged after {iterations} iterations");

    let control = ControlField::from_values(dim, u);
    let (state, adjoint) = ctx.finish(&coupling.mul_vec(&control.values))?;
    let pz = cell_averages(&adjoint.velocity)?;
    let reduced_gradient: Vec<f64> = control.values.iter().zip(&pz.values).map(|(u, z)| lambda * u + z).collect();
    let objective = ctx.tracking_term(&state.velocity)? + 0.5 * lambda * control.l2_norm(mesh).powi(2);
    let mut solution = OCPSolution {
        state,
        adjoint,
        control: Control::Cellwise(control),
        objective,
        iterations,
        active_history: history,
        merit_history: merits,
        vi_residual: 0.0,
        reduced_gradient,
        pairing_weights: vol,
    };
    solution.vi_residual = check_discrete_vi(&solution, lambda, bounds, &problem.points)?;
    Ok(solution)
}

/// Variational discretization: the control is `Π(-z_h/λ)` evaluated
/// pointwise. The unknowns of the nonlinear system are the `d·l` observed
/// velocity values `s`; with them fixed, `z_h` and hence the control are
/// explicit. `F(s) = s - y_h(s)(t)` is solved by a semismooth Newton
/// iteration with step halving.
pub fn solve_tracking_variational(
    solver: &StokesSolver,
    problem: &TrackingProblem,
    opts: &SolverOptions,
) -> Result<OCPSolution> {
    let ctx = TrackingContext::new(solver, problem)?;
    let dim = ctx.dim;
    let space = solver.space();
    let mesh = solver.mesh();
    let lambda = problem.lambda;
    let bounds = &problem.bounds;
    let rule = solver.rule().clone();
    let nq = rule.len();
    let nc = mesh.n_cells();
    let ns = space.n_scalar_nodes();
    let nl = space.n_local_velocity();
    let m = ctx.responses.len();
    let table: Vec<[f64; crate::fe_spaces::MAX_LOCAL]> = (0..nq)
        .map(|q| space.eval_basis_with(&[[0.0; 3]; 4], rule.point(q)).velocity)
        .collect();
    let weights: Vec<f64> = (0..nc).map(|c| mesh.geometry(c).det.abs()).collect();

    let eval = |coeffs: &[f64], c: usize, q: usize| -> Vec3 {
        let mut v = [0.0; 3];
        for (i, &node) in space.velocity_nodes(c).iter().enumerate().take(nl) {
            for k in 0..dim {
                v[k] += table[q][i] * coeffs[k * ns + node];
            }
        }
        v
    };

    // one sweep: control at quadrature points, its observation and the
    // generalized Jacobian of the observation
    struct Sweep {
        control: Vec<f64>,
        observed: Vec<f64>,
        jacobian: Vec<f64>,
    }
    let sweep = |s: &[f64], want_jacobian: bool| -> Sweep {
        let mut zc = ctx.adjoint_lift.clone();
        for ((w, si), yt) in ctx.responses.iter().zip(s).zip(&ctx.targets_flat) {
            let r = si - yt;
            zc.iter_mut().zip(w).for_each(|(z, wi)| *z += r * wi);
        }
        let mut control = vec![0.0; nc * nq * dim];
        let mut observed = ctx.offset.iter().zip(&ctx.targets_flat).map(|(o, t)| o + t).collect::<Vec<_>>();
        let mut jacobian = vec![0.0; m * m];
        let mut wv = vec![[0.0; 3]; m];
        for c in 0..nc {
            for q in 0..nq {
                let wq = rule.weights()[q] * weights[c];
                let z = eval(&zc, c, q);
                for (j, w) in ctx.responses.iter().enumerate() {
                    wv[j] = eval(w, c, q);
                }
                let mut inactive = [false; 3];
                for k in 0..dim {
                    let v = -z[k] / lambda;
                    let p = project_scalar(v, bounds.lower[k], bounds.upper[k]);
                    inactive[k] = v > bounds.lower[k] && v < bounds.upper[k];
                    control[(c * nq + q) * dim + k] = p;
                    for j in 0..m {
                        observed[j] += wq * p * wv[j][k];
                    }
                }
                if want_jacobian {
                    for k in (0..dim).filter(|&k| inactive[k]) {
                        for a in 0..m {
                            for b in 0..m {
                                jacobian[a * m + b] += wq * wv[a][k] * wv[b][k] / lambda;
                            }
                        }
                    }
                }
            }
        }
        Sweep { control, observed, jacobian }
    };
    let residual = |s: &[f64], sw: &Sweep| -> Vec<f64> { s.iter().zip(&sw.observed).map(|(a, b)| a - b).collect() };
    let norm_inf = |v: &[f64]| v.iter().fold(0.0f64, |a, b| a.max(b.abs()));

    // start from the observation of the control Π(0)
    let zero_state: Vec<f64> = ctx.offset.iter().zip(&ctx.targets_flat).map(|(o, t)| o + t).collect();
    let mut s = {
        let mut q0 = [0.0; 3];
        for k in 0..dim {
            q0[k] = project_scalar(0.0, bounds.lower[k], bounds.upper[k]);
        }
        let mut obs = zero_state.clone();
        for (j, w) in ctx.responses.iter().enumerate() {
            for c in 0..nc {
                for q in 0..nq {
                    let v = eval(w, c, q);
                    obs[j] += rule.weights()[q] * weights[c] * (0..dim).map(|k| q0[k] * v[k]).sum::<f64>();
                }
            }
        }
        obs
    };
    let mut current = sweep(&s, true);
    let mut f = residual(&s, &current);
    let mut merits = vec![norm_inf(&f)];
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut change = f64::INFINITY;
    for it in 0..opts.max_iter {
        let jac = Mat::<f64>::from_fn(m, m, |a, b| if a == b { 1.0 } else { 0.0 } + current.jacobian[a * m + b]);
        let rhs = Mat::<f64>::from_fn(m, 1, |a, _| -f[a]);
        let delta = jac.partial_piv_lu().solve(&rhs);
        let f_norm = norm_inf(&f);
        let mut step = 1.0;
        let (next_s, next, next_f) = loop {
            let trial: Vec<f64> = (0..m).map(|a| s[a] + step * delta[(a, 0)]).collect();
            let sw = sweep(&trial, true);
            let tf = residual(&trial, &sw);
            if norm_inf(&tf) < f_norm || step < 1e-6 {
                break (trial, sw, tf);
            }
            step *= 0.5;
        };
        change = next
            .control
            .iter()
            .zip(&current.control)
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        s = next_s;
        current = next;
        f = next_f;
        merits.push(norm_inf(&f));
        iterations = it + 1;
        history.push(ActiveCounts {
            lower: current
                .control
                .iter()
                .enumerate()
                .filter(|(i, &v)| v == bounds.lower[i % dim])
                .count(),
            upper: current
                .control
                .iter()
                .enumerate()
                .filter(|(i, &v)| v == bounds.upper[i % dim])
                .count(),
        });
        if change <= opts.tol && norm_inf(&f) <= opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::MaxIterExceeded {
            solver: "variational discretization",
            iterations: opts.max_iter,
            residual: change,
        });
    }
    let qc = QuadratureControl {
        dim,
        rule: rule.clone(),
        values: current.control,
    };
    let load = assemble_load_quadrature(space, &rule, |c, q, _| qc.value(c, q));
    let (state, adjoint) = ctx.finish(&load)?;
    let control_norm2: f64 = (0..nc)
        .map(|c| {
            (0..nq)
                .map(|q| rule.weights()[q] * weights[c] * qc.value(c, q).iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>()
        })
        .sum();
    let objective = ctx.tracking_term(&state.velocity)? + 0.5 * lambda * control_norm2;
    let mut solution = OCPSolution {
        state,
        adjoint,
        control: Control::Quadrature(qc),
        objective,
        iterations,
        active_history: history,
        merit_history: merits,
        vi_residual: 0.0,
        reduced_gradient: Vec::new(),
        pairing_weights: Vec::new(),
    };
    solution.vi_residual = check_discrete_vi(&solution, lambda, bounds, &problem.points)?;
    Ok(solution)
}

/// Dense reduced Hessian `S*S` of the point-source problem (without the
/// `λI` term) and the reduced gradient at zero amplitudes.
pub struct PointSourceReduced {
    pub hessian: Vec<f64>,
    pub gradient_at_zero: Vec<f64>,
    pub size: usize,
}

/// Assemble the reduced problem column by column: each column is the
/// point evaluation of an adjoint solve driven by a unit-amplitude state.
pub fn point_source_reduced(solver: &StokesSolver, problem: &PointSourceProblem) -> Result<PointSourceReduced> {
    let dim = solver.space().dim();
    let nu = solver.space().n_velocity_dofs();
    let mass = &solver.system().m;
    let responses = unit_responses(solver, &problem.points)?;
    let m = responses.len();
    let mut hessian = vec![0.0; m * m];
    for (b, w) in responses.iter().enumerate() {
        let z = solver.solve_adjoint(&mass.mul_vec(w), None)?;
        let col = eval_at(&z.velocity, &problem.points, dim)?;
        for a in 0..m {
            hessian[a * m + b] = col[a];
        }
    }
    let state_bc = boundary(solver, &problem.state_bc);
    let adjoint_bc = boundary(solver, &problem.adjoint_bc);
    let y_lift = solver.solve(&vec![0.0; nu], state_bc.as_ref())?;
    let z0 = solver.solve_adjoint_desired(&y_lift.velocity, |x| (problem.desired)(x), adjoint_bc.as_ref())?;
    let gradient_at_zero = eval_at(&z0.velocity, &problem.points, dim)?;
    Ok(PointSourceReduced {
        hessian,
        gradient_at_zero,
        size: m,
    })
}

/// Point-source amplitudes, primal-dual active set on the `d·l` unknowns.
pub fn solve_point_source_ocp(
    solver: &StokesSolver,
    problem: &PointSourceProblem,
    opts: &SolverOptions,
) -> Result<OCPSolution> {
    let dim = solver.space().dim();
    if problem.dim != dim {
        return Err(Error::DimensionMismatch(format!("{}D problem on a {dim}D mesh", problem.dim)));
    }
    let lambda = problem.lambda;
    let bounds = &problem.bounds;
    let red = point_source_reduced(solver, problem)?;
    let m = red.size;
    let h = &red.hessian;
    let c = &red.gradient_at_zero;
    // the assembled Hessian is symmetric up to solver round-off
    let hs: Vec<f64> = (0..m * m).map(|i| 0.5 * (h[i] + h[(i % m) * m + i / m])).collect();
    let gradient = |u: &[f64]| -> Vec<f64> {
        (0..m).map(|a| lambda * u[a] + c[a] + (0..m).map(|b| hs[a * m + b] * u[b]).sum::<f64>()).collect()
    };
    let merit = |u: &[f64]| -> f64 {
        let hu: Vec<f64> = (0..m).map(|a| (0..m).map(|b| hs[a * m + b] * u[b]).sum()).collect();
        0.5 * dot(u, &hu) + 0.5 * lambda * dot(u, u) + dot(c, u)
    };
    let mut u: Vec<f64> = (0..m)
        .map(|i| project_scalar(0.0, bounds.lower[i % dim], bounds.upper[i % dim]))
        .collect();
    let mut prev_sets: Option<Vec<i8>> = None;
    let mut history = Vec::new();
    let mut current = merit(&u);
    let mut merits = vec![current];
    let mut converged = false;
    let mut iterations = 0;
    let mut defect = f64::INFINITY;
    for it in 0..=opts.max_iter {
        let mu: Vec<f64> = gradient(&u).iter().zip(&u).map(|(g, ui)| -(g - lambda * ui) / lambda).collect();
        let sets = classify(&mu, bounds);
        defect = vi_defect(&u, &mu, bounds);
        history.push(counts(&sets));
        if prev_sets.as_ref() == Some(&sets) && defect <= opts.tol {
            converged = true;
            iterations = it;
            break;
        }
        if it == opts.max_iter {
            break;
        }
        let mut candidate = vec![0.0; m];
        let free: Vec<usize> = (0..m).filter(|&i| sets[i] == 0).collect();
        for i in 0..m {
            match sets[i] {
                -1 => candidate[i] = bounds.lower[i % dim],
                1 => candidate[i] = bounds.upper[i % dim],
                _ => {}
            }
        }
        if !free.is_empty() {
            let nf = free.len();
            let a = Mat::<f64>::from_fn(nf, nf, |r, s| {
                hs[free[r] * m + free[s]] + if r == s { lambda } else { 0.0 }
            });
            let rhs = Mat::<f64>::from_fn(nf, 1, |r, _| {
                let i = free[r];
                -c[i] - (0..m).filter(|&j| sets[j] != 0).map(|j| hs[i * m + j] * candidate[j]).sum::<f64>()
            });
            let x = a.partial_piv_lu().solve(&rhs);
            for (r, &i) in free.iter().enumerate() {
                candidate[i] = x[(r, 0)];
            }
        }
        let next = merit(&candidate);
        if it > 0 && next > current + 1e-12 * current.abs().max(1.0) {
            let target: Vec<f64> = (0..m)
                .map(|i| project_scalar(mu[i], bounds.lower[i % dim], bounds.upper[i % dim]))
                .collect();
            let mut step = 1.0;
            loop {
                let trial: Vec<f64> = u.iter().zip(&target).map(|(a, b)| a + step * (b - a)).collect();
                let mt = merit(&trial);
                if mt <= current || step < 1e-12 {
                    u = trial;
                    current = mt;
                    break;
                }
                step *= 0.5;
            }
        } else {
            u = candidate;
            current = next;
        }
        merits.push(current);
        prev_sets = Some(sets);
        iterations = it + 1;
    }
    if !converged {
        return Err(Error::MaxIterExceeded {
            solver: "primal-dual active set",
            iterations: opts.max_iter,
            residual: defect,
        });
    }

    let amplitudes: Vec<Vec3> = u
        .chunks(dim)
        .map(|ch| {
            let mut v = [0.0; 3];
            v[..dim].copy_from_slice(ch);
            v
        })
        .collect();
    let state_bc = boundary(solver, &problem.state_bc);
    let adjoint_bc = boundary(solver, &problem.adjoint_bc);
    let load = solver.load_from_dirac(&problem.points, &amplitudes)?;
    let state = solver.solve(&load, state_bc.as_ref())?;
    let adjoint = solver.solve_adjoint_desired(&state.velocity, |x| (problem.desired)(x), adjoint_bc.as_ref())?;
    let zt = eval_at(&adjoint.velocity, &problem.points, dim)?;
    let reduced_gradient: Vec<f64> = u.iter().zip(&zt).map(|(ui, z)| lambda * ui + z).collect();
    let space = solver.space();
    let rule = solver.rule();
    let mesh = solver.mesh();
    let mut misfit = 0.0;
    for cell in 0..mesh.n_cells() {
        let geo = mesh.geometry(cell);
        for q in 0..rule.len() {
            let bary = rule.point(q);
            let e = space.eval_basis_with(&[[0.0; 3]; 4], bary);
            let y = state.velocity.velocity_in_cell(cell, &e);
            let d = (problem.desired)(&geo.to_physical(bary)[..dim]);
            misfit += rule.weights()[q] * geo.det.abs() * (0..dim).map(|k| (y[k] - d[k]).powi(2)).sum::<f64>();
        }
    }
    let objective = 0.5 * misfit + 0.5 * lambda * dot(&u, &u);
    let mut solution = OCPSolution {
        state,
        adjoint,
        control: Control::Amplitudes(amplitudes),
        objective,
        iterations,
        active_history: history,
        merit_history: merits,
        vi_residual: 0.0,
        reduced_gradient,
        pairing_weights: vec![1.0; m],
    };
    solution.vi_residual = check_discrete_vi(&solution, lambda, bounds, &problem.points)?;
    Ok(solution)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamp() {
        let b = BoxConstraint::new(2, [-5.0, -5.0, 0.0], [5.0, 5.0, 0.0]).unwrap();
        assert_eq!(project_box(&[-7.0, 3.0, 0.0], &b), [-5.0, 3.0, 0.0]);
        assert_eq!(project_box(&[1.0, -2.0, 0.0], &b), [1.0, -2.0, 0.0]);
        let once = b.project(&[9.0, -9.0, 0.0]);
        assert_eq!(b.project(&once), once);
        assert!(BoxConstraint::new(2, [1.0, 0.0, 0.0], [1.0, 1.0, 0.0]).is_err());
    }

    #[test]
    fn pcg_solves_low_rank_update() {
        let diag = vec![1.0, 2.0, 3.0, 4.0];
        let g = vec![vec![1.0, 0.5, 0.0, 1.0]];
        let free = vec![0, 1, 3];
        let rhs = vec![1.0, -1.0, 2.0];
        let x = pcg_restricted(&diag, &g, &free, &rhs, &[0.0; 3], 1e-14, 50).unwrap();
        // check (D + g gᵀ) x = rhs on the free rows
        let gx: f64 = free.iter().zip(&x).map(|(&i, xi)| g[0][i] * xi).sum();
        for (r, &i) in free.iter().enumerate() {
            let lhs = diag[i] * x[r] + g[0][i] * gx;
            assert!((lhs - rhs[r]).abs() < 1e-12);
        }
    }
}
