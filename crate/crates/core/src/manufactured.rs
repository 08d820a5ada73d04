//! Closed-form fields: Stokes fundamental solutions and the three benchmark
//! problems built from them.
//!
//! Sign convention: with `T(r) = -r / (2π|r|²)` (2D) or `-r / (4π|r|³)` (3D)
//! the pair `(Φ, ζ)` solves `-ΔΦ - ∇ζ = F δ_t`, i.e. it is an *adjoint*
//! pair. As a forward pair (velocity, pressure) it is `(Φ, -ζ)`.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ocp::{BoxConstraint, PointSourceProblem, TrackingProblem};
use crate::{Error, Result, ScalarFn, Vec3, VectorFn};

/// `grad[k][m] = d v_k / d x_m`.
pub type Gradient = [Vec3; 3];
pub type GradientFn = Arc<dyn Fn(&[f64]) -> Gradient + Send + Sync>;

/// Distance below which an evaluation point is treated as hitting a center.
const CENTER_EPS: f64 = 1e-14;

fn norm(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn delta(i: usize, j: usize) -> f64 {
    if i == j {
        1.0
    } else {
        0.0
    }
}

/// Velocity kernel `T̃(r)`; entries beyond `r.len()` are zero.
pub fn stokeslet_velocity(r: &[f64]) -> Result<[[f64; 3]; 3]> {
    let d = r.len();
    let rho = norm(r);
    if rho < CENTER_EPS {
        return Err(Error::SingularPoint);
    }
    let mut t = [[0.0; 3]; 3];
    match d {
        2 => {
            let s = -1.0 / (4.0 * PI);
            for i in 0..2 {
                for j in 0..2 {
                    t[i][j] = s * (rho.ln() * delta(i, j) - r[i] * r[j] / (rho * rho));
                }
            }
        }
        3 => {
            let s = 1.0 / (8.0 * PI);
            for i in 0..3 {
                for j in 0..3 {
                    t[i][j] = s * (delta(i, j) / rho + r[i] * r[j] / rho.powi(3));
                }
            }
        }
        _ => return Err(Error::UnsupportedDimension(d)),
    }
    Ok(t)
}

/// Pressure kernel `T(r)`.
pub fn stokeslet_pressure(r: &[f64]) -> Result<Vec3> {
    let d = r.len();
    let rho = norm(r);
    if rho < CENTER_EPS {
        return Err(Error::SingularPoint);
    }
    let s = match d {
        2 => -1.0 / (2.0 * PI * rho * rho),
        3 => -1.0 / (4.0 * PI * rho.powi(3)),
        _ => return Err(Error::UnsupportedDimension(d)),
    };
    let mut t = [0.0; 3];
    for i in 0..d {
        t[i] = s * r[i];
    }
    Ok(t)
}

/// `g[i][j][m] = d T̃_ij / d r_m`.
pub fn stokeslet_velocity_gradient(r: &[f64]) -> Result<[[Vec3; 3]; 3]> {
    let d = r.len();
    let rho = norm(r);
    if rho < CENTER_EPS {
        return Err(Error::SingularPoint);
    }
    let mut g = [[[0.0; 3]; 3]; 3];
    match d {
        2 => {
            let s = -1.0 / (4.0 * PI);
            let r2 = rho * rho;
            for i in 0..2 {
                for j in 0..2 {
                    for m in 0..2 {
                        g[i][j][m] = s
                            * (delta(i, j) * r[m] / r2 - (delta(i, m) * r[j] + r[i] * delta(j, m)) / r2
                                + 2.0 * r[i] * r[j] * r[m] / (r2 * r2));
                    }
                }
            }
        }
        3 => {
            let s = 1.0 / (8.0 * PI);
            let r3 = rho.powi(3);
            let r5 = rho.powi(5);
            for i in 0..3 {
                for j in 0..3 {
                    for m in 0..3 {
                        g[i][j][m] = s
                            * (-delta(i, j) * r[m] / r3 + (delta(i, m) * r[j] + r[i] * delta(j, m)) / r3
                                - 3.0 * r[i] * r[j] * r[m] / r5);
                    }
                }
            }
        }
        _ => return Err(Error::UnsupportedDimension(d)),
    }
    Ok(g)
}

/// `Φ = sum_t T̃(x - t) F_t`, `ζ = sum_t T(x - t) . F_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct StokesletSum {
    pub dim: usize,
    pub centers: Vec<Vec<f64>>,
    pub amplitudes: Vec<Vec3>,
}

impl StokesletSum {
    /// Amplitude `e_1 + ... + e_d` at every center.
    pub fn unit(dim: usize, centers: Vec<Vec<f64>>) -> Self {
        let mut one = [0.0; 3];
        one[..dim].iter_mut().for_each(|v| *v = 1.0);
        let amplitudes = vec![one; centers.len()];
        StokesletSum { dim, centers, amplitudes }
    }

    pub fn with_amplitudes(dim: usize, centers: Vec<Vec<f64>>, amplitudes: Vec<Vec3>) -> Result<Self> {
        if centers.len() != amplitudes.len() {
            return Err(Error::MismatchedPoints);
        }
        Ok(StokesletSum { dim, centers, amplitudes })
    }

    /// Offset `x - t`, nudged off the center if the two coincide; no
    /// quadrature point of the structured meshes does.
    fn offset(&self, x: &[f64], t: &[f64]) -> Vec<f64> {
        let mut r: Vec<f64> = (0..self.dim).map(|i| x[i] - t[i]).collect();
        if norm(&r) < CENTER_EPS {
            log::warn!("Stokeslet evaluated at its center {t:?}; shifting by 1e-12");
            r[0] += 1e-12;
        }
        r
    }

    pub fn velocity(&self, x: &[f64]) -> Vec3 {
        let mut v = [0.0; 3];
        for (t, f) in self.centers.iter().zip(&self.amplitudes) {
            let k = stokeslet_velocity(&self.offset(x, t)).expect("offset is nonzero");
            for i in 0..self.dim {
                for j in 0..self.dim {
                    v[i] += k[i][j] * f[j];
                }
            }
        }
        v
    }

    pub fn pressure(&self, x: &[f64]) -> f64 {
        let mut p = 0.0;
        for (t, f) in self.centers.iter().zip(&self.amplitudes) {
            let k = stokeslet_pressure(&self.offset(x, t)).expect("offset is nonzero");
            p += (0..self.dim).map(|i| k[i] * f[i]).sum::<f64>();
        }
        p
    }

    pub fn velocity_gradient(&self, x: &[f64]) -> Gradient {
        let mut g = [[0.0; 3]; 3];
        for (t, f) in self.centers.iter().zip(&self.amplitudes) {
            let k = stokeslet_velocity_gradient(&self.offset(x, t)).expect("offset is nonzero");
            for i in 0..self.dim {
                for m in 0..self.dim {
                    g[i][m] += (0..self.dim).map(|j| k[i][j][m] * f[j]).sum::<f64>();
                }
            }
        }
        g
    }
}

/// One-dimensional profile `g` with its first three derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Profile {
    /// `s²(1-s)²`
    SquaredBubble,
    /// `sin²(2πs)`
    SquaredSine,
}

impl Profile {
    pub fn eval(self, s: f64, order: usize) -> f64 {
        match self {
            Profile::SquaredBubble => match order {
                0 => s * s * (1.0 - s) * (1.0 - s),
                1 => 2.0 * s - 6.0 * s * s + 4.0 * s * s * s,
                2 => 2.0 - 12.0 * s + 12.0 * s * s,
                3 => -12.0 + 24.0 * s,
                4 => 24.0,
                _ => 0.0,
            },
            Profile::SquaredSine => {
                let w = 2.0 * PI;
                match order {
                    0 => (w * s).sin().powi(2),
                    1 => w * (2.0 * w * s).sin(),
                    2 => 2.0 * w * w * (2.0 * w * s).cos(),
                    3 => -4.0 * w.powi(3) * (2.0 * w * s).sin(),
                    4 => -8.0 * w.powi(4) * (2.0 * w * s).cos(),
                    _ => unimplemented!("derivative order {order}"),
                }
            }
        }
    }
}

/// `scale * curl(ψ)` with `ψ(x) = prod_i g(x_i)`; in 2D `curl ψ = (∂₂ψ, -∂₁ψ)`,
/// in 3D the field is `curl(ψ e₁) = (0, ∂₃ψ, -∂₂ψ)`. Divergence-free.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurlField {
    pub dim: usize,
    pub profile: Profile,
    pub scale: f64,
}

impl CurlField {
    /// Components as `(sign, derivative orders of ψ)`.
    fn terms(&self) -> [(f64, [usize; 3]); 3] {
        if self.dim == 2 {
            [(1.0, [0, 1, 0]), (-1.0, [1, 0, 0]), (0.0, [0, 0, 0])]
        } else {
            [(0.0, [0, 0, 0]), (1.0, [0, 0, 1]), (-1.0, [0, 1, 0])]
        }
    }

    fn partial(&self, x: &[f64], orders: [usize; 3]) -> f64 {
        (0..self.dim).map(|i| self.profile.eval(x[i], orders[i])).product()
    }

    pub fn value(&self, x: &[f64]) -> Vec3 {
        self.terms().map(|(s, o)| if s == 0.0 { 0.0 } else { self.scale * s * self.partial(x, o) })
    }

    pub fn gradient(&self, x: &[f64]) -> Gradient {
        let mut g = [[0.0; 3]; 3];
        for (k, (s, o)) in self.terms().into_iter().enumerate() {
            if s == 0.0 {
                continue;
            }
            for m in 0..self.dim {
                let mut om = o;
                om[m] += 1;
                g[k][m] = self.scale * s * self.partial(x, om);
            }
        }
        g
    }

    pub fn laplacian(&self, x: &[f64]) -> Vec3 {
        let mut l = [0.0; 3];
        for (k, (s, o)) in self.terms().into_iter().enumerate() {
            if s == 0.0 {
                continue;
            }
            for m in 0..self.dim {
                let mut om = o;
                om[m] += 2;
                l[k] += self.scale * s * self.partial(x, om);
            }
        }
        l
    }
}

/// `prod_i x_i (1 - x_i)` in 2D; integrates to `1/36` over the unit square.
fn bubble2(x: &[f64]) -> f64 {
    x[0] * x[1] * (1.0 - x[0]) * (1.0 - x[1])
}

fn bubble2_gradient(x: &[f64]) -> Vec3 {
    [
        (1.0 - 2.0 * x[0]) * x[1] * (1.0 - x[1]),
        (1.0 - 2.0 * x[1]) * x[0] * (1.0 - x[0]),
        0.0,
    ]
}

/// Exact optimal quintuple (or quadruple plus amplitudes) of a benchmark.
#[derive(Clone)]
pub struct ExactSolution {
    pub y: VectorFn,
    pub grad_y: GradientFn,
    pub p: ScalarFn,
    pub z: VectorFn,
    pub grad_z: GradientFn,
    pub r: ScalarFn,
    /// Pointwise optimal control (tracking problems).
    pub u: Option<VectorFn>,
    /// Optimal amplitudes (point-source problem).
    pub amplitudes: Option<Vec<Vec3>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProblemKind {
    /// Distributed control, pointwise velocity tracking.
    Tracking,
    /// Point-source amplitudes, distributed velocity tracking.
    PointSource,
}

/// Optional changes to a benchmark's parameters; derived data follow.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExampleOverrides {
    pub lambda: Option<f64>,
    pub alpha: Option<f64>,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    pub points: Option<Vec<Vec<f64>>>,
}

#[derive(Clone)]
pub struct ExampleSpec {
    pub id: u8,
    pub kind: ProblemKind,
    pub dim: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub bounds: BoxConstraint,
    /// Observation points (tracking) or source locations (point source).
    pub points: Vec<Vec<f64>>,
    pub exact: ExactSolution,
    /// Extra momentum forcing (tracking problems).
    pub forcing: Option<VectorFn>,
    /// Observation targets (tracking problems).
    pub targets: Vec<Vec3>,
    /// Desired velocity (point-source problem).
    pub desired: Option<VectorFn>,
}

impl std::fmt::Debug for ExampleSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExampleSpec")
            .field("id", &self.id)
            .field("kind", &self.kind)
            .field("dim", &self.dim)
            .field("alpha", &self.alpha)
            .field("lambda", &self.lambda)
            .field("bounds", &self.bounds)
            .field("points", &self.points)
            .finish_non_exhaustive()
    }
}

fn to_vec3(v: &[f64], dim: usize, what: &str) -> Result<Vec3> {
    if v.len() != dim {
        return Err(Error::InvalidConfig(format!("{what} must have {dim} entries")));
    }
    let mut out = [0.0; 3];
    out[..dim].copy_from_slice(v);
    Ok(out)
}

pub fn example_spec(id: u8) -> Result<ExampleSpec> {
    example_spec_with(id, &ExampleOverrides::default())
}

pub fn example_spec_with(id: u8, o: &ExampleOverrides) -> Result<ExampleSpec> {
    let (dim, alpha, lower, upper, points) = match id {
        1 => (
            2,
            1.5,
            [-5.0, -5.0, 0.0],
            [5.0, 5.0, 0.0],
            vec![vec![0.25, 0.25], vec![0.25, 0.75], vec![0.75, 0.25], vec![0.75, 0.75]],
        ),
        2 => (3, 1.99, [-10.0; 3], [2.0; 3], vec![vec![0.5, 0.5, 0.5]]),
        3 => (2, 1.99, [0.0, 0.0, 0.0], [2.0, 2.0, 0.0], vec![vec![0.75, 0.25]]),
        _ => return Err(Error::InvalidConfig(format!("unknown example {id}"))),
    };
    let lambda = o.lambda.unwrap_or(1.0);
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidConfig(format!("lambda must be positive, got {lambda}")));
    }
    let alpha = o.alpha.unwrap_or(alpha);
    if !(dim as f64 - 2.0 < alpha && alpha < dim as f64) {
        return Err(Error::InvalidConfig(format!("alpha {alpha} outside ({}, {dim})", dim - 2)));
    }
    let lower = match &o.lower {
        Some(v) => to_vec3(v, dim, "lower bound")?,
        None => lower,
    };
    let upper = match &o.upper {
        Some(v) => to_vec3(v, dim, "upper bound")?,
        None => upper,
    };
    let bounds = BoxConstraint::new(dim, lower, upper)?;
    let points = o.points.clone().unwrap_or(points);
    if points.is_empty() {
        return Err(Error::InvalidConfig("point set is empty".into()));
    }
    for t in &points {
        if t.len() != dim || t.iter().any(|&c| c <= 0.0 || c >= 1.0) {
            return Err(Error::InvalidConfig(format!("point {t:?} is not interior")));
        }
    }
    match id {
        1 | 2 => Ok(tracking_example(id, dim, alpha, lambda, bounds, points)),
        _ => point_source_example(alpha, lambda, bounds, points),
    }
}

fn tracking_example(id: u8, dim: usize, alpha: f64, lambda: f64, bounds: BoxConstraint, points: Vec<Vec<f64>>) -> ExampleSpec {
    let state = if id == 1 {
        CurlField { dim, profile: Profile::SquaredBubble, scale: 0.5 }
    } else {
        CurlField { dim, profile: Profile::SquaredSine, scale: -1.0 / PI }
    };
    let (p, grad_p): (ScalarFn, Arc<dyn Fn(&[f64]) -> Vec3 + Send + Sync>) = if id == 1 {
        (Arc::new(|x: &[f64]| bubble2(x) - 1.0 / 36.0), Arc::new(bubble2_gradient))
    } else {
        (
            Arc::new(|x: &[f64]| x[0] * x[1] * x[2] - 0.125),
            Arc::new(|x: &[f64]| [x[1] * x[2], x[0] * x[2], x[0] * x[1]]),
        )
    };
    let adjoint = Arc::new(StokesletSum::unit(dim, points.clone()));
    let u: VectorFn = {
        let adjoint = adjoint.clone();
        let bounds = bounds.clone();
        Arc::new(move |x: &[f64]| bounds.project(&adjoint.velocity(x).map(|v| -v / lambda)))
    };
    let forcing: VectorFn = {
        let u = u.clone();
        Arc::new(move |x: &[f64]| {
            let lap = state.laplacian(x);
            let gp = grad_p(x);
            let uv = u(x);
            [0, 1, 2].map(|k| -lap[k] + gp[k] - uv[k])
        })
    };
    let targets = points
        .iter()
        .map(|t| {
            let y = state.value(t);
            let mut yt = y;
            yt[..dim].iter_mut().for_each(|v| *v -= 1.0);
            yt
        })
        .collect();
    let exact = ExactSolution {
        y: Arc::new(move |x: &[f64]| state.value(x)),
        grad_y: Arc::new(move |x: &[f64]| state.gradient(x)),
        p,
        z: {
            let a = adjoint.clone();
            Arc::new(move |x: &[f64]| a.velocity(x))
        },
        grad_z: {
            let a = adjoint.clone();
            Arc::new(move |x: &[f64]| a.velocity_gradient(x))
        },
        r: Arc::new(move |x: &[f64]| adjoint.pressure(x)),
        u: Some(u),
        amplitudes: None,
    };
    ExampleSpec {
        id,
        kind: ProblemKind::Tracking,
        dim,
        alpha,
        lambda,
        bounds,
        points,
        exact,
        forcing: Some(forcing),
        targets,
        desired: None,
    }
}

fn point_source_example(alpha: f64, lambda: f64, bounds: BoxConstraint, points: Vec<Vec<f64>>) -> Result<ExampleSpec> {
    let dim = 2;
    let adjoint = CurlField { dim, profile: Profile::SquaredBubble, scale: -4096.0 / 27.0 };
    let amplitudes: Vec<Vec3> = points
        .iter()
        .map(|t| bounds.project(&adjoint.value(t).map(|v| -v / lambda)))
        .collect();
    let state = Arc::new(StokesletSum::with_amplitudes(dim, points.clone(), amplitudes.clone())?);
    // -Δz - ∇r = y - y_d
    let desired: VectorFn = {
        let state = state.clone();
        Arc::new(move |x: &[f64]| {
            let y = state.velocity(x);
            let lap = adjoint.laplacian(x);
            let gr = bubble2_gradient(x);
            [0, 1, 2].map(|k| y[k] + lap[k] + gr[k])
        })
    };
    let exact = ExactSolution {
        y: {
            let s = state.clone();
            Arc::new(move |x: &[f64]| s.velocity(x))
        },
        grad_y: {
            let s = state.clone();
            Arc::new(move |x: &[f64]| s.velocity_gradient(x))
        },
        p: Arc::new(move |x: &[f64]| -state.pressure(x)),
        z: Arc::new(move |x: &[f64]| adjoint.value(x)),
        grad_z: Arc::new(move |x: &[f64]| adjoint.gradient(x)),
        r: Arc::new(|x: &[f64]| bubble2(x) - 1.0 / 36.0),
        u: None,
        amplitudes: Some(amplitudes),
    };
    Ok(ExampleSpec {
        id: 3,
        kind: ProblemKind::PointSource,
        dim,
        alpha,
        lambda,
        bounds,
        points,
        exact,
        forcing: None,
        targets: Vec::new(),
        desired: Some(desired),
    })
}

impl ExampleSpec {
    /// Discrete problem data for the tracking benchmarks; Dirichlet data for
    /// state and adjoint come from the exact fields.
    pub fn tracking_problem(&self) -> Result<TrackingProblem> {
        if self.kind != ProblemKind::Tracking {
            return Err(Error::InvalidConfig(format!("example {} is not a tracking problem", self.id)));
        }
        Ok(TrackingProblem {
            dim: self.dim,
            lambda: self.lambda,
            bounds: self.bounds.clone(),
            points: self.points.clone(),
            targets: self.targets.clone(),
            forcing: self.forcing.clone(),
            state_bc: Some(self.exact.y.clone()),
            adjoint_bc: Some(self.exact.z.clone()),
        })
    }

    pub fn point_source_problem(&self) -> Result<PointSourceProblem> {
        if self.kind != ProblemKind::PointSource {
            return Err(Error::InvalidConfig(format!("example {} is not a point-source problem", self.id)));
        }
        Ok(PointSourceProblem {
            dim: self.dim,
            lambda: self.lambda,
            bounds: self.bounds.clone(),
            points: self.points.clone(),
            desired: self.desired.clone().expect("point-source example has a desired state"),
            state_bc: Some(self.exact.y.clone()),
            adjoint_bc: Some(self.exact.z.clone()),
        })
    }
}
