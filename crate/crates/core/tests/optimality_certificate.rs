mod common;

use std::sync::Arc;

use common::rng;
use rand::Rng;
use stokes_ocp::experiment::{solve_example, Scheme};
use stokes_ocp::fe_spaces::ElementFamily;
use stokes_ocp::manufactured::{example_spec_with, ExampleOverrides};
use stokes_ocp::mesh::Mesh;
use stokes_ocp::ocp::{OCPSolution, SolverOptions};
use stokes_ocp::stokes::StokesSolver;

/// Smallest `(λu + Πz, v - u)` over random admissible `v`, half of them box corners.
fn worst_direction(sol: &OCPSolution, lower: &[f64], upper: &[f64], seed: u64) -> f64 {
    let n = sol.control_values().len();
    let d = lower.len();
    let mut r = rng(seed);
    (0..200)
        .map(|s| {
            let v: Vec<f64> = (0..n)
                .map(|i| {
                    let (a, b) = (lower[i % d], upper[i % d]);
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

fn certify(id: u8, level: usize, overrides: ExampleOverrides) -> usize {
    let spec = example_spec_with(id, &overrides).unwrap();
    let solver = StokesSolver::new(Arc::new(Mesh::unit(spec.dim, level).unwrap()), ElementFamily::TaylorHood).unwrap();
    let sol = solve_example(&solver, &spec, Scheme::FullyDiscrete, &SolverOptions::default()).unwrap();
    assert!(sol.iterations <= 50);
    assert!(sol.vi_residual <= 1e-10, "{}", sol.vi_residual);
    let worst = worst_direction(&sol, &spec.bounds.lower[..spec.dim], &spec.bounds.upper[..spec.dim], id as u64);
    assert!(worst >= -1e-9, "example {id}: {worst}");
    let last = sol.active_history.last().unwrap();
    last.lower + last.upper
}

#[test]
fn benchmark_solutions_pass_the_certificate() {
    assert_eq!(certify(1, 3, ExampleOverrides::default()), 0);
    assert_eq!(certify(3, 3, ExampleOverrides::default()), 0);
}

#[test]
fn certificate_with_binding_bounds() {
    let tight = ExampleOverrides { lower: Some(vec![-0.5, -0.5]), upper: Some(vec![0.2, 0.5]), ..Default::default() };
    assert!(certify(1, 3, tight) > 0);
    let tight = ExampleOverrides { lower: Some(vec![0.0, 0.0]), upper: Some(vec![0.5, 2.0]), ..Default::default() };
    assert!(certify(3, 3, tight) > 0);
}
