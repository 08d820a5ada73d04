//! Weights, error norms and experimental orders of convergence.
//!
//! All integrals use the high-order rule; the L∞ norm is the maximum over
//! its points. Pressure errors are measured modulo constants.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::fe_spaces::{ControlField, FEFunction};
use crate::manufactured::{ExactSolution, GradientFn};
use crate::mesh::Mesh;
use crate::ocp::{Control, OCPSolution, QuadratureControl};
use crate::quadrature::QuadratureRule;
use crate::{Error, Result, Vec3};

/// `ρ(x) = |x - t|^α` within `d_E / 2` of a center `t`, `1` elsewhere; with a
/// single center the power is used everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightConfig {
    pub centers: Vec<Vec<f64>>,
    pub alpha: f64,
    pub d_e: f64,
}

impl WeightConfig {
    /// `d_E` is the smallest of the center-to-boundary distances of the unit
    /// box and the pairwise center distances.
    pub fn new(centers: Vec<Vec<f64>>, alpha: f64) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::DegenerateInput("weight without centers".into()));
        }
        let dim = centers[0].len();
        if !(dim as f64 - 2.0 < alpha && alpha < dim as f64) {
            return Err(Error::InvalidConfig(format!("alpha {alpha} outside ({}, {dim})", dim as f64 - 2.0)));
        }
        if alpha >= 2.0 {
            log::warn!("alpha {alpha} is outside (d-2, 2)");
        }
        let mut d_e = f64::INFINITY;
        for (i, t) in centers.iter().enumerate() {
            for &c in t {
                d_e = d_e.min(c).min(1.0 - c);
            }
            for s in &centers[i + 1..] {
                d_e = d_e.min(distance(t, s));
            }
        }
        if d_e <= 0.0 {
            return Err(Error::DegenerateInput("centers must be distinct interior points".into()));
        }
        Ok(WeightConfig { centers, alpha, d_e })
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub fn weight_rho(x: &[f64], cfg: &WeightConfig) -> f64 {
    if cfg.centers.len() == 1 {
        return distance(x, &cfg.centers[0]).powf(cfg.alpha);
    }
    for t in &cfg.centers {
        let r = distance(x, t);
        if r < 0.5 * cfg.d_e {
            return r.powf(cfg.alpha);
        }
    }
    1.0
}

/// Named error quantities reported by the experiments. Configuration files
/// may use either the snake-case name or the column label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    #[serde(alias = "e_y_L2")]
    L2Velocity,
    #[serde(alias = "e_y_Linf")]
    LinfVelocity,
    #[serde(alias = "e_p_L2")]
    L2Pressure,
    #[serde(alias = "e_y_H1_rho")]
    WeightedH1Velocity,
    #[serde(alias = "e_z_L2")]
    L2Adjoint,
    #[serde(alias = "e_z_Linf")]
    LinfAdjoint,
    #[serde(alias = "e_z_H1")]
    H1Adjoint,
    #[serde(alias = "e_z_H1_rho")]
    WeightedH1Adjoint,
    #[serde(alias = "e_r_L2")]
    L2AdjointPressure,
    #[serde(alias = "e_u_L2")]
    Control,
    #[serde(alias = "e_U")]
    Amplitude,
}

impl ErrorKind {
    pub const ALL: [ErrorKind; 11] = [
        ErrorKind::L2Velocity,
        ErrorKind::LinfVelocity,
        ErrorKind::L2Pressure,
        ErrorKind::WeightedH1Velocity,
        ErrorKind::L2Adjoint,
        ErrorKind::LinfAdjoint,
        ErrorKind::H1Adjoint,
        ErrorKind::WeightedH1Adjoint,
        ErrorKind::L2AdjointPressure,
        ErrorKind::Control,
        ErrorKind::Amplitude,
    ];

    /// Column label used in tables and file names.
    pub fn label(self) -> &'static str {
        match self {
            ErrorKind::L2Velocity => "e_y_L2",
            ErrorKind::LinfVelocity => "e_y_Linf",
            ErrorKind::L2Pressure => "e_p_L2",
            ErrorKind::WeightedH1Velocity => "e_y_H1_rho",
            ErrorKind::L2Adjoint => "e_z_L2",
            ErrorKind::LinfAdjoint => "e_z_Linf",
            ErrorKind::H1Adjoint => "e_z_H1",
            ErrorKind::WeightedH1Adjoint => "e_z_H1_rho",
            ErrorKind::L2AdjointPressure => "e_r_L2",
            ErrorKind::Control => "e_u_L2",
            ErrorKind::Amplitude => "e_U",
        }
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Accumulates L², L∞ and (weighted) H¹ errors of one vector field.
#[derive(Default, Clone, Copy)]
struct VectorErrors {
    l2: f64,
    linf: f64,
    h1: f64,
    h1w: f64,
}

struct PressureErrors {
    sq: f64,
    sum: f64,
    volume: f64,
}

impl PressureErrors {
    fn modulo_constants(&self) -> f64 {
        (self.sq - self.sum * self.sum / self.volume).max(0.0).sqrt()
    }
}

/// L² error of a velocity field.
pub fn l2_error_velocity(u: &FEFunction, exact: &dyn Fn(&[f64]) -> Vec3, rule: &QuadratureRule) -> f64 {
    vector_errors(u, exact, None, None, rule).l2.sqrt()
}

/// Maximum error over the points of `rule`.
pub fn linf_error_velocity(u: &FEFunction, exact: &dyn Fn(&[f64]) -> Vec3, rule: &QuadratureRule) -> f64 {
    vector_errors(u, exact, None, None, rule).linf
}

/// `(\int ρ |∇(u - u_h)|²)^{1/2}`; unweighted when `weight` is `None`.
pub fn h1_seminorm_error(
    u: &FEFunction,
    grad_exact: &GradientFn,
    weight: Option<&WeightConfig>,
    rule: &QuadratureRule,
) -> f64 {
    let zero = |_: &[f64]| [0.0; 3];
    let e = vector_errors(u, &zero, Some(grad_exact), weight, rule);
    if weight.is_some() {
        e.h1w.sqrt()
    } else {
        e.h1.sqrt()
    }
}

/// L² error modulo constants.
pub fn l2_error_pressure(p: &FEFunction, exact: &dyn Fn(&[f64]) -> f64, rule: &QuadratureRule) -> f64 {
    pressure_errors(p, exact, rule).modulo_constants()
}

fn vector_errors(
    u: &FEFunction,
    exact: &dyn Fn(&[f64]) -> Vec3,
    grad_exact: Option<&GradientFn>,
    weight: Option<&WeightConfig>,
    rule: &QuadratureRule,
) -> VectorErrors {
    let space = u.space();
    let mesh = space.mesh();
    let dim = space.dim();
    let mut acc = VectorErrors::default();
    for c in 0..mesh.n_cells() {
        let g = mesh.geometry(c);
        let bgrad = g.barycentric_gradients();
        let vol = g.det.abs();
        for q in 0..rule.len() {
            let x = g.to_physical(rule.point(q));
            let w = rule.weights()[q] * vol;
            let e = space.eval_basis_with(&bgrad, rule.point(q));
            let uh = u.velocity_in_cell(c, &e);
            let ue = exact(&x[..dim]);
            for k in 0..dim {
                let d = ue[k] - uh[k];
                acc.l2 += w * d * d;
                acc.linf = acc.linf.max(d.abs());
            }
            if let Some(ge) = grad_exact {
                let gh = u.velocity_gradient_in_cell(c, &e);
                let gx = ge(&x[..dim]);
                let mut s = 0.0;
                for k in 0..dim {
                    for m in 0..dim {
                        s += (gx[k][m] - gh[k][m]).powi(2);
                    }
                }
                acc.h1 += w * s;
                if let Some(cfg) = weight {
                    acc.h1w += w * weight_rho(&x[..dim], cfg) * s;
                }
            }
        }
    }
    acc
}

fn pressure_errors(p: &FEFunction, exact: &dyn Fn(&[f64]) -> f64, rule: &QuadratureRule) -> PressureErrors {
    let space = p.space();
    let mesh = space.mesh();
    let dim = space.dim();
    let mut acc = PressureErrors { sq: 0.0, sum: 0.0, volume: 0.0 };
    for c in 0..mesh.n_cells() {
        let g = mesh.geometry(c);
        let vol = g.det.abs();
        for q in 0..rule.len() {
            let x = g.to_physical(rule.point(q));
            let w = rule.weights()[q] * vol;
            let bary = rule.point(q);
            let ph: f64 = space.pressure_nodes(c).iter().zip(bary).map(|(&v, b)| b * p.coeffs[v]).sum();
            let d = exact(&x[..dim]) - ph;
            acc.sq += w * d * d;
            acc.sum += w * d;
            acc.volume += w;
        }
    }
    acc
}

/// `‖u - u_h‖_{L²}` for a piecewise-constant control.
pub fn control_error_cellwise(mesh: &Mesh, u: &ControlField, exact: &dyn Fn(&[f64]) -> Vec3, rule: &QuadratureRule) -> f64 {
    let dim = mesh.dim();
    let mut s = 0.0;
    for c in 0..mesh.n_cells() {
        let g = mesh.geometry(c);
        let vol = g.det.abs();
        let uc = u.value(c);
        for q in 0..rule.len() {
            let x = g.to_physical(rule.point(q));
            let ue = exact(&x[..dim]);
            s += rule.weights()[q] * vol * (0..dim).map(|k| (ue[k] - uc[k]).powi(2)).sum::<f64>();
        }
    }
    s.sqrt()
}

/// `‖u - q‖_{L²}` for a control known at quadrature points, using its own rule.
pub fn control_error_quadrature(mesh: &Mesh, q: &QuadratureControl, exact: &dyn Fn(&[f64]) -> Vec3) -> f64 {
    let dim = mesh.dim();
    let rule = &q.rule;
    let mut s = 0.0;
    for c in 0..mesh.n_cells() {
        let g = mesh.geometry(c);
        let vol = g.det.abs();
        for i in 0..rule.len() {
            let x = g.to_physical(rule.point(i));
            let ue = exact(&x[..dim]);
            let qv = q.value(c, i);
            s += rule.weights()[i] * vol * (0..dim).map(|k| (ue[k] - qv[k]).powi(2)).sum::<f64>();
        }
    }
    s.sqrt()
}

/// `(sum_t |u_t - v_t|²)^{1/2}`.
pub fn amplitude_error(exact: &[Vec3], approx: &[Vec3]) -> Result<f64> {
    if exact.len() != approx.len() {
        return Err(Error::MismatchedPoints);
    }
    Ok(exact
        .iter()
        .zip(approx)
        .map(|(a, b)| (0..3).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>())
        .sum::<f64>()
        .sqrt())
}

/// Requested error quantities of an optimal control solution.
pub fn error_norms(
    solution: &OCPSolution,
    exact: &ExactSolution,
    weight: Option<&WeightConfig>,
    rule: &QuadratureRule,
    which: &[ErrorKind],
) -> Result<Vec<(ErrorKind, f64)>> {
    let wants = |k: ErrorKind| which.contains(&k);
    let y = &solution.state.velocity;
    let z = &solution.adjoint.velocity;
    let mesh = y.space().mesh().clone();
    let state = if wants(ErrorKind::L2Velocity) || wants(ErrorKind::LinfVelocity) || wants(ErrorKind::WeightedH1Velocity) {
        let g = wants(ErrorKind::WeightedH1Velocity).then_some(&exact.grad_y);
        Some(vector_errors(y, &*exact.y, g, weight, rule))
    } else {
        None
    };
    let adjoint = if [ErrorKind::L2Adjoint, ErrorKind::LinfAdjoint, ErrorKind::H1Adjoint, ErrorKind::WeightedH1Adjoint]
        .iter()
        .any(|&k| wants(k))
    {
        let g = (wants(ErrorKind::H1Adjoint) || wants(ErrorKind::WeightedH1Adjoint)).then_some(&exact.grad_z);
        Some(vector_errors(z, &*exact.z, g, weight, rule))
    } else {
        None
    };
    let mut out = Vec::with_capacity(which.len());
    for &k in which {
        let v = match k {
            ErrorKind::L2Velocity => state.unwrap().l2.sqrt(),
            ErrorKind::LinfVelocity => state.unwrap().linf,
            ErrorKind::WeightedH1Velocity => {
                let s = state.unwrap();
                if weight.is_some() { s.h1w } else { s.h1 }.sqrt()
            }
            ErrorKind::L2Pressure => pressure_errors(&solution.state.pressure, &*exact.p, rule).modulo_constants(),
            ErrorKind::L2Adjoint => adjoint.unwrap().l2.sqrt(),
            ErrorKind::LinfAdjoint => adjoint.unwrap().linf,
            ErrorKind::H1Adjoint => adjoint.unwrap().h1.sqrt(),
            ErrorKind::WeightedH1Adjoint => {
                let s = adjoint.unwrap();
                if weight.is_some() { s.h1w } else { s.h1 }.sqrt()
            }
            ErrorKind::L2AdjointPressure => {
                pressure_errors(&solution.adjoint.pressure, &*exact.r, rule).modulo_constants()
            }
            ErrorKind::Control => {
                let u = exact
                    .u
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig("no distributed control in this problem".into()))?;
                match &solution.control {
                    Control::Cellwise(c) => control_error_cellwise(&mesh, c, &**u, rule),
                    Control::Quadrature(q) => control_error_quadrature(&mesh, q, &**u),
                    Control::Amplitudes(_) => return Err(Error::InvalidConfig("amplitude control has no L2 error".into())),
                }
            }
            ErrorKind::Amplitude => match (&solution.control, &exact.amplitudes) {
                (Control::Amplitudes(a), Some(e)) => amplitude_error(e, a)?,
                _ => return Err(Error::InvalidConfig("amplitude error needs a point-source problem".into())),
            },
        };
        out.push((k, v));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub level: usize,
    pub h: f64,
    pub ndof: usize,
    pub errors: Vec<f64>,
}

/// Rows of a convergence study with pairwise rates. `eoc_ndof[i][j]` is the
/// rate of error `j` between rows `i` and `i + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub names: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub eoc_ndof: Vec<Vec<f64>>,
    pub eoc_h: Vec<Vec<f64>>,
}

pub fn eoc(names: Vec<String>, rows: Vec<ReportRow>) -> Result<ConvergenceReport> {
    if rows.len() < 2 {
        return Err(Error::DegenerateInput("at least two rows are needed".into()));
    }
    for r in &rows {
        if r.errors.len() != names.len() {
            return Err(Error::DimensionMismatch("row length differs from the header".into()));
        }
        if r.errors.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(Error::DegenerateInput(format!("non-positive error on level {}", r.level)));
        }
    }
    for w in rows.windows(2) {
        if w[1].ndof <= w[0].ndof {
            return Err(Error::DegenerateInput("Ndof must increase from row to row".into()));
        }
    }
    let mut eoc_ndof = Vec::new();
    let mut eoc_h = Vec::new();
    for w in rows.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let ln_n = (b.ndof as f64 / a.ndof as f64).ln();
        let ln_h = (a.h / b.h).ln();
        eoc_ndof.push(a.errors.iter().zip(&b.errors).map(|(x, y)| (x / y).ln() / ln_n).collect());
        eoc_h.push(a.errors.iter().zip(&b.errors).map(|(x, y)| (x / y).ln() / ln_h).collect());
    }
    Ok(ConvergenceReport {
        names,
        rows,
        eoc_ndof,
        eoc_h,
    })
}

impl ConvergenceReport {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Least-squares slope `-d log e / d log Ndof` over all rows.
    pub fn fitted_rate_ndof(&self, name: &str) -> Option<f64> {
        let j = self.column(name)?;
        let xs: Vec<f64> = self.rows.iter().map(|r| (r.ndof as f64).ln()).collect();
        let ys: Vec<f64> = self.rows.iter().map(|r| r.errors[j].ln()).collect();
        Some(-least_squares_slope(&xs, &ys))
    }

    /// Least-squares slope `d log e / d log h` over all rows.
    pub fn fitted_rate_h(&self, name: &str) -> Option<f64> {
        let j = self.column(name)?;
        let xs: Vec<f64> = self.rows.iter().map(|r| r.h.ln()).collect();
        let ys: Vec<f64> = self.rows.iter().map(|r| r.errors[j].ln()).collect();
        Some(least_squares_slope(&xs, &ys))
    }
}

pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_values() {
        let single = WeightConfig::new(vec![vec![0.5, 0.5]], 1.5).unwrap();
        assert!((weight_rho(&[0.75, 0.5], &single) - 0.125).abs() < 1e-15);
        // a single center uses the power everywhere
        assert!((weight_rho(&[0.0, 0.5], &single) - 0.5f64.powf(1.5)).abs() < 1e-15);

        let four = WeightConfig::new(
            vec![vec![0.25, 0.25], vec![0.25, 0.75], vec![0.75, 0.25], vec![0.75, 0.75]],
            1.5,
        )
        .unwrap();
        assert_eq!(four.d_e, 0.25);
        assert_eq!(weight_rho(&[0.5, 0.5], &four), 1.0);
        let x = [0.25 + 0.1, 0.25];
        assert!((weight_rho(&x, &four) - 0.1f64.powf(1.5)).abs() < 1e-14);
        // the weight jumps across |x - t| = d_E / 2
        let inside = weight_rho(&[0.25 + 0.1249, 0.25], &four);
        let outside = weight_rho(&[0.25 + 0.1251, 0.25], &four);
        assert!((inside - 0.1249f64.powf(1.5)).abs() < 1e-14 && outside == 1.0);

        assert!(WeightConfig::new(vec![vec![0.5, 0.5]], 2.5).is_err());
        assert!(WeightConfig::new(vec![], 1.0).is_err());
    }

    #[test]
    fn amplitudes() {
        let z = [0.0; 3];
        assert_eq!(amplitude_error(&[z], &[z]).unwrap(), 0.0);
        assert_eq!(amplitude_error(&[[3.0, 4.0, 0.0]], &[z]).unwrap(), 5.0);
        let two = amplitude_error(&[[1.0, 0.0, 0.0]; 2], &[z; 2]).unwrap();
        assert!((two - 2f64.sqrt()).abs() < 1e-15);
        assert!(matches!(amplitude_error(&[z], &[]), Err(Error::MismatchedPoints)));
    }

    fn row(level: usize, h: f64, ndof: usize, e: f64) -> ReportRow {
        ReportRow { level, h, ndof, errors: vec![e] }
    }

    #[test]
    fn rates() {
        let r = eoc(vec!["e".into()], vec![row(0, 0.5, 10, 1e-1), row(1, 0.25, 40, 2.5e-2)]).unwrap();
        assert!((r.eoc_h[0][0] - 2.0).abs() < 1e-12);
        assert!((r.eoc_ndof[0][0] - 1.0).abs() < 1e-12);
        let flat = eoc(vec!["e".into()], vec![row(0, 0.5, 10, 0.3), row(1, 0.25, 40, 0.3)]).unwrap();
        assert_eq!(flat.eoc_ndof[0][0], 0.0);
        assert!(eoc(vec!["e".into()], vec![row(0, 0.5, 10, 0.0), row(1, 0.25, 40, 0.1)]).is_err());
        assert!(eoc(vec!["e".into()], vec![row(0, 0.5, 10, 0.1)]).is_err());
        let fit = eoc(
            vec!["e".into()],
            vec![row(0, 0.5, 10, 1.0), row(1, 0.25, 40, 0.5), row(2, 0.125, 160, 0.25)],
        )
        .unwrap();
        assert!((fit.fitted_rate_ndof("e").unwrap() - 0.5).abs() < 1e-12);
        assert!((fit.fitted_rate_h("e").unwrap() - 1.0).abs() < 1e-12);
    }
}
