//! Convergence studies over a range of uniformly refined meshes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::analysis::{eoc, error_norms, ConvergenceReport, ErrorKind, ReportRow, WeightConfig};
use crate::fe_spaces::ElementFamily;
use crate::manufactured::{example_spec_with, ExampleOverrides, ExampleSpec, ProblemKind};
use crate::mesh::Mesh;
use crate::ocp::{
    solve_point_source_ocp, solve_tracking_fully_discrete, solve_tracking_variational, OCPSolution, SolverOptions,
};
use crate::stokes::StokesSolver;
use crate::{Error, Result};

/// Environment variable holding the number of significant digits in output files.
pub const PRECISION_ENV: &str = "STOKES_OCP_PRECISION";
pub const DEFAULT_PRECISION: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "fd", alias = "fully_discrete")]
    FullyDiscrete,
    #[serde(rename = "vd", alias = "variational")]
    Variational,
}

impl Scheme {
    pub fn tag(self) -> &'static str {
        match self {
            Scheme::FullyDiscrete => "fd",
            Scheme::Variational => "vd",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fd" | "fully_discrete" => Ok(Scheme::FullyDiscrete),
            "vd" | "variational" => Ok(Scheme::Variational),
            other => Err(Error::InvalidConfig(format!("unknown scheme '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub example: u8,
    pub family: ElementFamily,
    pub min_level: usize,
    pub max_level: usize,
    pub scheme: Scheme,
    pub solver: SolverOptions,
    pub output_dir: Option<PathBuf>,
    /// Errors to report; the example's default set when absent.
    pub norms: Option<Vec<ErrorKind>>,
    pub overrides: ExampleOverrides,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            example: 1,
            family: ElementFamily::TaylorHood,
            min_level: 2,
            max_level: 5,
            scheme: Scheme::FullyDiscrete,
            solver: SolverOptions::default(),
            output_dir: None,
            norms: None,
            overrides: ExampleOverrides::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Check the configuration and build the example it refers to.
    pub fn validate(&self) -> Result<ExampleSpec> {
        let spec = example_spec_with(self.example, &self.overrides)?;
        let cap = if spec.dim == 2 { 8 } else { 4 };
        if self.min_level > self.max_level {
            return Err(Error::InvalidConfig(format!(
                "min level {} exceeds max level {}",
                self.min_level, self.max_level
            )));
        }
        if self.max_level > cap {
            return Err(Error::InvalidConfig(format!("level {} exceeds the {}D limit {cap}", self.max_level, spec.dim)));
        }
        if self.scheme == Scheme::Variational && spec.kind != ProblemKind::Tracking {
            return Err(Error::InvalidConfig("the variational scheme applies to tracking problems only".into()));
        }
        if !(self.solver.tol > 0.0 && self.solver.cg_tol > 0.0) || self.solver.max_iter == 0 {
            return Err(Error::InvalidConfig("solver tolerances must be positive".into()));
        }
        for k in self.norms() {
            let ok = match k {
                ErrorKind::Control => spec.kind == ProblemKind::Tracking,
                ErrorKind::Amplitude => spec.kind == ProblemKind::PointSource,
                _ => true,
            };
            if !ok {
                return Err(Error::InvalidConfig(format!("{k} is not defined for example {}", self.example)));
            }
        }
        Ok(spec)
    }

    pub fn norms(&self) -> Vec<ErrorKind> {
        if let Some(n) = &self.norms {
            return n.clone();
        }
        match self.example {
            3 => vec![
                ErrorKind::H1Adjoint,
                ErrorKind::L2AdjointPressure,
                ErrorKind::L2Velocity,
                ErrorKind::Amplitude,
                ErrorKind::WeightedH1Velocity,
            ],
            _ => vec![
                ErrorKind::L2Adjoint,
                ErrorKind::LinfVelocity,
                ErrorKind::L2Pressure,
                ErrorKind::Control,
                ErrorKind::WeightedH1Adjoint,
            ],
        }
    }

    /// File stem shared by all outputs of this configuration.
    pub fn stem(&self) -> String {
        let family = match self.family {
            ElementFamily::TaylorHood => "th",
            ElementFamily::Mini => "mini",
        };
        match self.example {
            3 => format!("example{}_{family}", self.example),
            _ => format!("example{}_{}_{family}", self.example, self.scheme.tag()),
        }
    }
}

/// Per-level solver diagnostics that are not part of the error table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: usize,
    pub h: f64,
    pub ndof: usize,
    pub errors: Vec<(ErrorKind, f64)>,
    pub iterations: usize,
    pub vi_residual: f64,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: ConvergenceReport,
    pub levels: Vec<LevelSummary>,
}

/// Total number of unknowns: both velocity fields, both pressures and the control.
pub fn ndof(solver: &StokesSolver, spec: &ExampleSpec, scheme: Scheme) -> usize {
    let space = solver.space();
    let base = 2 * space.n_velocity_dofs() + 2 * space.n_pressure_dofs();
    match (spec.kind, scheme) {
        (ProblemKind::PointSource, _) => base + spec.dim * spec.points.len(),
        (ProblemKind::Tracking, Scheme::FullyDiscrete) => base + spec.dim * space.mesh().n_cells(),
        (ProblemKind::Tracking, Scheme::Variational) => base,
    }
}

/// Solve the optimal control problem of `spec` on one mesh.
pub fn solve_example(solver: &StokesSolver, spec: &ExampleSpec, scheme: Scheme, opts: &SolverOptions) -> Result<OCPSolution> {
    match spec.kind {
        ProblemKind::Tracking => {
            let problem = spec.tracking_problem()?;
            match scheme {
                Scheme::FullyDiscrete => solve_tracking_fully_discrete(solver, &problem, opts),
                Scheme::Variational => solve_tracking_variational(solver, &problem, opts),
            }
        }
        ProblemKind::PointSource => solve_point_source_ocp(solver, &spec.point_source_problem()?, opts),
    }
}

pub fn run_level(config: &ExperimentConfig, spec: &ExampleSpec, mesh: Arc<Mesh>) -> Result<LevelSummary> {
    let level = mesh.level();
    let h = mesh.h_max();
    let solver = StokesSolver::new(mesh, config.family)?;
    let solution = solve_example(&solver, spec, config.scheme, &config.solver)?;
    let weight = WeightConfig::new(spec.points.clone(), spec.alpha)?;
    let errors = error_norms(&solution, &spec.exact, Some(&weight), solver.rule(), &config.norms())?;
    Ok(LevelSummary {
        level,
        h,
        ndof: ndof(&solver, spec, config.scheme),
        errors,
        iterations: solution.iterations,
        vi_residual: solution.vi_residual,
        objective: solution.objective,
    })
}

/// Run every level of the study, write the output files when an output
/// directory is configured, and return the report.
pub fn run(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let spec = config.validate()?;
    let norms = config.norms();
    let mut mesh = Mesh::unit(spec.dim, config.min_level)?;
    let mut levels = Vec::new();
    for level in config.min_level..=config.max_level {
        if level > config.min_level {
            mesh = mesh.refine_uniform();
        }
        let summary = run_level(config, &spec, Arc::new(mesh.clone()))
            .map_err(|e| Error::AtLevel { level, source: Box::new(e) })?;
        log::info!(
            "level {level}: ndof {} iterations {} vi residual {:.2e}",
            summary.ndof,
            summary.iterations,
            summary.vi_residual
        );
        levels.push(summary);
    }
    let names = norms.iter().map(|k| k.label().to_string()).collect();
    let rows = levels
        .iter()
        .map(|s| ReportRow {
            level: s.level,
            h: s.h,
            ndof: s.ndof,
            errors: s.errors.iter().map(|(_, e)| *e).collect(),
        })
        .collect();
    let report = eoc(names, rows)?;
    if let Some(dir) = &config.output_dir {
        write_outputs(&report, dir, &config.stem())?;
    }
    Ok(ExperimentOutput { report, levels })
}

/// Significant digits for output files, from [`PRECISION_ENV`].
pub fn output_precision() -> usize {
    std::env::var(PRECISION_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&p| (1..=17).contains(&p))
        .unwrap_or(DEFAULT_PRECISION)
}

fn sci(v: f64, digits: usize) -> String {
    format!("{:.*e}", digits - 1, v)
}

fn fixed(v: f64) -> String {
    format!("{v:.4}")
}

pub fn format_csv(report: &ConvergenceReport, digits: usize) -> String {
    let mut out = String::from("level,h,ndof");
    for n in &report.names {
        write!(out, ",{n}").unwrap();
    }
    for n in &report.names {
        write!(out, ",eoc_ndof_{n}").unwrap();
    }
    for n in &report.names {
        write!(out, ",eoc_h_{n}").unwrap();
    }
    out.push('\n');
    for (i, r) in report.rows.iter().enumerate() {
        write!(out, "{},{},{}", r.level, sci(r.h, digits), r.ndof).unwrap();
        for e in &r.errors {
            write!(out, ",{}", sci(*e, digits)).unwrap();
        }
        for table in [&report.eoc_ndof, &report.eoc_h] {
            for j in 0..report.names.len() {
                if i == 0 {
                    out.push(',');
                } else {
                    write!(out, ",{}", sci(table[i - 1][j], digits)).unwrap();
                }
            }
        }
        out.push('\n');
    }
    out
}

/// Aligned plain-text table with Ndof-based rates.
pub fn format_table(report: &ConvergenceReport) -> String {
    let mut header = vec!["level".to_string(), "h".into(), "Ndof".into()];
    for n in &report.names {
        header.push(n.clone());
        header.push("rate".into());
    }
    let mut rows = vec![header];
    for (i, r) in report.rows.iter().enumerate() {
        let mut row = vec![r.level.to_string(), format!("{:.4e}", r.h), r.ndof.to_string()];
        for (j, e) in r.errors.iter().enumerate() {
            row.push(format!("{e:.4e}"));
            row.push(if i == 0 { "-".into() } else { fixed(report.eoc_ndof[i - 1][j]) });
        }
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in &rows {
        let cells: Vec<String> = r.iter().zip(&widths).map(|(s, w)| format!("{s:>w$}")).collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Two columns `Ndof error` for log-log plotting.
pub fn format_dat(report: &ConvergenceReport, column: usize, digits: usize) -> String {
    let mut out = format!("# Ndof {}\n", report.names[column]);
    for r in &report.rows {
        writeln!(out, "{} {}", r.ndof, sci(r.errors[column], digits)).unwrap();
    }
    out
}

pub fn write_outputs(report: &ConvergenceReport, dir: &Path, stem: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let digits = output_precision();
    std::fs::write(dir.join(format!("{stem}.csv")), format_csv(report, digits))?;
    std::fs::write(dir.join(format!("{stem}.txt")), format_table(report))?;
    for (j, n) in report.names.iter().enumerate() {
        std::fs::write(dir.join(format!("{stem}_{n}.dat")), format_dat(report, j, digits))?;
    }
    Ok(())
}
