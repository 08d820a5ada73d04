//! Acceptance gate. Prints one PASS/FAIL line per criterion.
//!
//! The process exits with status 0 after reporting unless
//! `STOKES_OCP_ACCEPTANCE_STRICT=1` is set, in which case any FAIL line makes
//! it exit with status 1.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{dot, rng, stokeslet_residuals};
use rand::Rng;
use stokes_ocp::analysis::{eoc, error_norms, l2_error_velocity, least_squares_slope, ConvergenceReport, ErrorKind, ReportRow};
use stokes_ocp::experiment::{ndof, solve_example, Scheme};
use stokes_ocp::fe_spaces::ElementFamily;
use stokes_ocp::manufactured::{example_spec, ExampleSpec, StokesletSum};
use stokes_ocp::mesh::Mesh;
use stokes_ocp::ocp::{OCPSolution, SolverOptions};
use stokes_ocp::quadrature::QuadratureRule;
use stokes_ocp::stokes::StokesSolver;

type Outcome = Result<(bool, String), String>;

/// Diagnostics of one optimal control solve, for the solver robustness criterion.
struct SolveRecord {
    label: String,
    iterations: usize,
    vi_residual: f64,
    /// Smallest sampled directional derivative; `None` when the control is not
    /// an explicit finite-dimensional vector.
    certificate: Option<f64>,
}

struct Study {
    report: ConvergenceReport,
    amplitudes: Vec<Vec<f64>>,
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn fmt_rates(r: &[f64]) -> String {
    r.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(", ")
}

fn certificate(sol: &OCPSolution, spec: &ExampleSpec, seed: u64) -> f64 {
    let n = sol.control_values().len();
    let d = spec.dim;
    let mut r = rng(seed);
    (0..200)
        .map(|s| {
            let v: Vec<f64> = (0..n)
                .map(|i| {
                    let (a, b) = (spec.bounds.lower[i % d], spec.bounds.upper[i % d]);
                    if s % 2 == 0 {
                        r.gen_range(a..=b)
                    } else if r.gen_bool(0.5) {
                        a
                    } else {
                        b
                    }
                })
                .collect();
            sol.directional_derivative(&v)
        })
        .fold(f64::INFINITY, f64::min)
}

fn study(
    id: u8,
    scheme: Scheme,
    levels: std::ops::RangeInclusive<usize>,
    norms: &[ErrorKind],
    records: &mut Vec<SolveRecord>,
) -> Result<Study, String> {
    let spec = example_spec(id).map_err(|e| e.to_string())?;
    let opts = SolverOptions::default();
    let mut rows = Vec::new();
    let mut amplitudes = Vec::new();
    let mut mesh = Mesh::unit(spec.dim, *levels.start()).map_err(|e| e.to_string())?;
    for level in levels.clone() {
        if level > *levels.start() {
            mesh = mesh.refine_uniform();
        }
        let h = mesh.h_max();
        let solver = StokesSolver::new(Arc::new(mesh.clone()), ElementFamily::TaylorHood).map_err(|e| e.to_string())?;
        let sol = solve_example(&solver, &spec, scheme, &opts).map_err(|e| format!("example {id} level {level}: {e}"))?;
        let errors = error_norms(&sol, &spec.exact, None, solver.rule(), norms).map_err(|e| e.to_string())?;
        let cert = match scheme {
            Scheme::FullyDiscrete => Some(certificate(&sol, &spec, level as u64)),
            Scheme::Variational => None,
        };
        records.push(SolveRecord {
            label: format!("ex{id}/{}/L{level}", scheme.tag()),
            iterations: sol.iterations,
            vi_residual: sol.vi_residual,
            certificate: cert,
        });
        amplitudes.push(sol.control_values());
        rows.push(ReportRow {
            level,
            h,
            ndof: ndof(&solver, &spec, scheme),
            errors: errors.iter().map(|(_, e)| *e).collect(),
        });
    }
    let names = norms.iter().map(|k| k.label().to_string()).collect();
    Ok(Study {
        report: eoc(names, rows).map_err(|e| e.to_string())?,
        amplitudes,
    })
}

fn in_window(v: f64, lo: f64, hi: f64) -> bool {
    (lo..=hi).contains(&v)
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn quadrature_exactness() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let tri = QuadratureRule::high_order(2).map_err(|e| e.to_string())?;
    for a in 0..=19 {
        for b in 0..=19 - a {
            let exact = factorial(a) * factorial(b) / factorial(a + b + 2);
            let got = tri.integrate_reference(|x| x[0].powi(a as i32) * x[1].powi(b as i32));
            worst = worst.max((got - exact).abs() / exact);
        }
    }
    let tet = QuadratureRule::high_order(3).map_err(|e| e.to_string())?;
    for a in 0..=14 {
        for b in 0..=14 - a {
            for c in 0..=14 - a - b {
                let exact = factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 3);
                let got = tet.integrate_reference(|x| x[0].powi(a as i32) * x[1].powi(b as i32) * x[2].powi(c as i32));
                worst = worst.max((got - exact).abs() / exact);
            }
        }
    }
    let t = start.elapsed();
    Ok((
        worst <= 1e-12 && within(t, 1.0),
        format!("max relative error {worst:.2e} (degree 19 in 2D, 14 in 3D), {:.2} s", t.as_secs_f64()),
    ))
}

fn polynomial_reproduction() -> Outcome {
    let start = Instant::now();
    let solver = StokesSolver::new(Arc::new(Mesh::unit(2, 3).map_err(|e| e.to_string())?), ElementFamily::TaylorHood)
        .map_err(|e| e.to_string())?;
    let y = |x: &[f64]| [x[1] * x[1] + x[0], x[0] * x[0] - x[1], 0.0];
    // -Δy + ∇(2x₁ - x₂) = (0, -3)
    let load = solver.load_from_fn(|_| [0.0, -3.0, 0.0]);
    let bc = solver.boundary_from_fn(y);
    let sol = solver.solve(&load, Some(&bc)).map_err(|e| e.to_string())?;
    let interp = solver.space().interpolate_velocity(y);
    let diff: Vec<f64> = sol.velocity.coeffs.iter().zip(&interp.coeffs).map(|(a, b)| a - b).collect();
    let err = solver.system().m.inner(&diff, &diff).sqrt();
    let exact_err = l2_error_velocity(&sol.velocity, &y, solver.rule());
    let t = start.elapsed();
    Ok((
        err <= 1e-9 && exact_err <= 1e-9 && within(t, 5.0),
        format!("L2 error to interpolant {err:.2e}, to exact field {exact_err:.2e}, {:.2} s", t.as_secs_f64()),
    ))
}

fn dirac_rate() -> Outcome {
    let start = Instant::now();
    let sum = StokesletSum::unit(2, vec![vec![0.5, 0.5]]);
    let mut hs = Vec::new();
    let mut errs = Vec::new();
    let mut mesh = Mesh::unit(2, 2).map_err(|e| e.to_string())?;
    for level in 2..=6 {
        if level > 2 {
            mesh = mesh.refine_uniform();
        }
        hs.push(mesh.h_max());
        let solver = StokesSolver::new(Arc::new(mesh.clone()), ElementFamily::TaylorHood).map_err(|e| e.to_string())?;
        let load = solver.load_from_dirac(&sum.centers, &sum.amplitudes).map_err(|e| e.to_string())?;
        let bc = solver.boundary_from_fn(|x| sum.velocity(x));
        let sol = solver.solve(&load, Some(&bc)).map_err(|e| e.to_string())?;
        errs.push(l2_error_velocity(&sol.velocity, &|x| sum.velocity(x), solver.rule()));
    }
    let pairwise: Vec<f64> = (1..errs.len()).map(|i| (errs[i - 1] / errs[i]).ln() / (hs[i - 1] / hs[i]).ln()).collect();
    let lx: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ly: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let fitted = least_squares_slope(&lx, &ly);
    let t = start.elapsed();
    Ok((
        in_window(fitted, 0.85, 1.25) && within(t, 120.0),
        format!(
            "h-rate of the velocity L2 error {fitted:.3} in [0.85, 1.25] (pairwise {}), {:.1} s",
            fmt_rates(&pairwise),
            t.as_secs_f64()
        ),
    ))
}

fn example_one(records: &mut Vec<SolveRecord>, fd_control: &mut Vec<f64>) -> Outcome {
    let start = Instant::now();
    let norms = [ErrorKind::Control, ErrorKind::L2Adjoint, ErrorKind::L2Pressure, ErrorKind::LinfVelocity];
    let s = study(1, Scheme::FullyDiscrete, 2..=6, &norms, records)?;
    *fd_control = s.report.rows.iter().map(|r| r.errors[0]).collect();
    let t = start.elapsed();
    let mut ok = within(t, 600.0);
    let mut parts = Vec::new();
    for k in norms {
        let rate = s.report.fitted_rate_ndof(k.label()).unwrap();
        let good = in_window(rate, 0.4, 0.65);
        ok &= good;
        let col = s.report.column(k.label()).unwrap();
        let pairwise: Vec<f64> = s.report.eoc_ndof.iter().map(|r| r[col]).collect();
        parts.push(format!("{} {rate:.3}{} [{}]", k.label(), if good { "" } else { " (outside)" }, fmt_rates(&pairwise)));
    }
    Ok((ok, format!("Ndof slopes in [0.4, 0.65]: {}; {:.1} s", parts.join("; "), t.as_secs_f64())))
}

fn variational_vs_fully_discrete(records: &mut Vec<SolveRecord>, fd_control: &[f64]) -> Outcome {
    let start = Instant::now();
    if fd_control.len() != 5 {
        return Err("fully discrete study unavailable".into());
    }
    let s = study(1, Scheme::Variational, 2..=6, &[ErrorKind::Control], records)?;
    let t = start.elapsed();
    let ratios: Vec<f64> = s.report.rows.iter().zip(fd_control).map(|(r, fd)| r.errors[0] / fd).collect();
    let ok = ratios.iter().all(|&q| q <= 1.5) && within(t, 600.0);
    Ok((ok, format!("control error ratio VD/FD per level {} (limit 1.5), {:.1} s", fmt_rates(&ratios), t.as_secs_f64())))
}

fn example_three(records: &mut Vec<SolveRecord>) -> Outcome {
    let start = Instant::now();
    let norms = [ErrorKind::Amplitude, ErrorKind::L2Velocity];
    let s = study(3, Scheme::FullyDiscrete, 2..=6, &norms, records)?;
    let t = start.elapsed();
    let ru = s.report.fitted_rate_ndof("e_U").unwrap();
    let ry = s.report.fitted_rate_ndof("e_y_L2").unwrap();
    let errs: Vec<f64> = s.report.rows.iter().map(|r| r.errors[0]).collect();
    let decreasing = errs.windows(2).all(|w| w[1] < w[0]);
    let last = s.amplitudes.last().unwrap();
    let ok_u = in_window(ru, 0.8, 1.2);
    let ok_y = in_window(ry, 0.4, 0.65);
    let ok = ok_u && ok_y && decreasing && within(t, 300.0);
    Ok((
        ok,
        format!(
            "e_U slope {ru:.3}{} [{}]; e_y_L2 slope {ry:.3}{} [{}]; finest amplitude ({:.6}, {:.6}), errors decreasing: {decreasing}; {:.1} s",
            if ok_u { "" } else { " (outside [0.8, 1.2])" },
            fmt_rates(&s.report.eoc_ndof.iter().map(|r| r[0]).collect::<Vec<_>>()),
            if ok_y { "" } else { " (outside [0.4, 0.65])" },
            fmt_rates(&s.report.eoc_ndof.iter().map(|r| r[1]).collect::<Vec<_>>()),
            last[0],
            last[1],
            t.as_secs_f64()
        ),
    ))
}

fn example_two(records: &mut Vec<SolveRecord>) -> Outcome {
    let start = Instant::now();
    // the six-tetrahedron cube (level 0) has one interior Taylor-Hood node and
    // no stable pressure; the three coarsest admissible levels are used
    let s = study(2, Scheme::FullyDiscrete, 1..=3, &[ErrorKind::Control], records)?;
    let t = start.elapsed();
    let rate = s.report.fitted_rate_ndof("e_u_L2").unwrap();
    Ok((
        in_window(rate, 0.10, 0.30),
        format!(
            "levels 1-3: control Ndof slope {rate:.3} in [0.10, 0.30] (pairwise {}), {:.1} s",
            fmt_rates(&s.report.eoc_ndof.iter().map(|r| r[0]).collect::<Vec<_>>()),
            t.as_secs_f64()
        ),
    ))
}

fn solver_robustness(records: &[SolveRecord]) -> Outcome {
    if records.is_empty() {
        return Err("no optimal control solves recorded".into());
    }
    let mut bad = Vec::new();
    let mut worst_vi: f64 = 0.0;
    let mut worst_cert = f64::INFINITY;
    let mut max_it = 0;
    for r in records {
        max_it = max_it.max(r.iterations);
        worst_vi = worst_vi.max(r.vi_residual);
        if let Some(c) = r.certificate {
            worst_cert = worst_cert.min(c);
        }
        let fails = r.iterations > 50 || r.vi_residual > 1e-10 || r.certificate.is_some_and(|c| c < -1e-9);
        if fails {
            bad.push(r.label.clone());
        }
    }
    Ok((
        bad.is_empty(),
        format!(
            "{} solves: max iterations {max_it}, max VI residual {worst_vi:.2e}, min sampled derivative {worst_cert:.2e}{}",
            records.len(),
            if bad.is_empty() { String::new() } else { format!("; failing: {}", bad.join(", ")) }
        ),
    ))
}

fn stokeslet_check() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (seed, sum) in [
        StokesletSum::unit(2, vec![vec![0.25, 0.25], vec![0.25, 0.75], vec![0.75, 0.25], vec![0.75, 0.75]]),
        StokesletSum::unit(3, vec![vec![0.5, 0.5, 0.5]]),
    ]
    .into_iter()
    .enumerate()
    {
        let mut r = rng(900 + seed as u64);
        let mut n = 0;
        while n < 20 {
            let x: Vec<f64> = (0..sum.dim).map(|_| r.gen_range(0.0..1.0)).collect();
            let far = sum.centers.iter().all(|c| c.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() >= 0.1);
            if !far {
                continue;
            }
            let (m, d) = stokeslet_residuals(&sum, &x, 1e-4);
            worst = worst.max(m).max(d);
            n += 1;
            count += 1;
        }
    }
    Ok((worst <= 1e-5, format!("{count} points, max relative residual {worst:.2e} (step 1e-4)")))
}

fn duality() -> Outcome {
    let mut worst: f64 = 0.0;
    for level in 2..=4 {
        for family in [ElementFamily::TaylorHood, ElementFamily::Mini] {
            let solver = StokesSolver::new(Arc::new(Mesh::unit(2, level).map_err(|e| e.to_string())?), family)
                .map_err(|e| e.to_string())?;
            let n = solver.space().n_velocity_dofs();
            let mut r = rng(1000 + level as u64);
            let f: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
            let g: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
            let y = solver.solve(&f, None).map_err(|e| e.to_string())?;
            let z = solver.solve_adjoint(&g, None).map_err(|e| e.to_string())?;
            let a = dot(&f, &z.velocity.coeffs);
            let b = dot(&g, &y.velocity.coeffs);
            worst = worst.max((a - b).abs() / a.abs().max(b.abs()));
        }
    }
    Ok((worst <= 1e-8, format!("levels 2-4, both element pairs: max relative defect {worst:.2e}")))
}

fn report(n: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let (pass, detail) = match outcome {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    println!(
        "{} criterion {n:>2} {name}: {detail} [{:.1} s]",
        if pass { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64()
    );
    pass
}

fn main() {
    let strict = std::env::var("STOKES_OCP_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut records = Vec::new();
    let mut fd_control = Vec::new();
    let results = [
        report(1, "quadrature exactness", quadrature_exactness),
        report(2, "polynomial reproduction", polynomial_reproduction),
        report(3, "Dirac load convergence", dirac_rate),
        report(4, "example 1 fully discrete rates", || example_one(&mut records, &mut fd_control)),
        report(5, "variational discretization", || variational_vs_fully_discrete(&mut records, &fd_control)),
        report(6, "example 3 point sources", || example_three(&mut records)),
        report(7, "example 2 (3D) control rate", || example_two(&mut records)),
        report(8, "active set robustness", || solver_robustness(&records)),
        report(9, "Stokeslet residuals", stokeslet_check),
        report(10, "discrete adjoint identity", duality),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if strict && passed < results.len() {
        std::process::exit(1);
    }
}
