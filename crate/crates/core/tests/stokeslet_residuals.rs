mod common;

use common::{central, laplacian, rng, stokeslet_residuals};
use rand::Rng;
use stokes_ocp::manufactured::{stokeslet_pressure, stokeslet_velocity, stokeslet_velocity_gradient, StokesletSum};

fn far_points(dim: usize, centers: &[Vec<f64>], n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    while out.len() < n {
        let x: Vec<f64> = (0..dim).map(|_| r.gen_range(0.0..1.0)).collect();
        let dmin = centers
            .iter()
            .map(|c| c.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt())
            .fold(f64::INFINITY, f64::min);
        if dmin >= 0.1 {
            out.push(x);
        }
    }
    out
}

#[test]
fn adjoint_pair_residuals_vanish() {
    let cases = [
        StokesletSum::unit(2, vec![vec![0.25, 0.25], vec![0.25, 0.75], vec![0.75, 0.25], vec![0.75, 0.75]]),
        StokesletSum::unit(2, vec![vec![0.5, 0.5]]),
        StokesletSum::unit(3, vec![vec![0.5, 0.5, 0.5]]),
    ];
    for (n, sum) in cases.iter().enumerate() {
        for x in far_points(sum.dim, &sum.centers, 20, 11 + n as u64) {
            let (m, d) = stokeslet_residuals(sum, &x, 1e-4);
            assert!(m <= 1e-5, "{}D momentum residual {m} at {x:?}", sum.dim);
            assert!(d <= 1e-5, "{}D divergence residual {d} at {x:?}", sum.dim);
        }
    }
}

#[test]
fn forward_sign_of_the_pressure_is_rejected() {
    // (Φ, ζ) with -ΔΦ + ∇ζ = 0 would make this residual small
    let sum = StokesletSum::unit(2, vec![vec![0.5, 0.5]]);
    let x = [0.8, 0.3];
    let worst = (0..2)
        .map(|i| {
            let lap = laplacian(|y| sum.velocity(y)[i], &x, 1e-4);
            let dz = central(|y| sum.pressure(y), &x, i, 1e-4);
            (-lap + dz).abs() / (lap.abs() + dz.abs())
        })
        .fold(0.0, f64::max);
    assert!(worst > 0.5, "{worst}");
}

#[test]
fn kernel_gradient_matches_central_differences() {
    for r in [vec![0.3, 0.4], vec![-0.2, 0.7], vec![0.3, 0.4, -0.5], vec![0.9, -0.1, 0.2]] {
        let g = stokeslet_velocity_gradient(&r).unwrap();
        let d = r.len();
        for i in 0..d {
            for j in 0..d {
                for m in 0..d {
                    let fd = central(|y| stokeslet_velocity(y).unwrap()[i][j], &r, m, 1e-6);
                    assert!((g[i][j][m] - fd).abs() < 1e-6, "{r:?} [{i}][{j}][{m}]");
                }
            }
        }
        // each column is divergence free
        for j in 0..d {
            let div: f64 = (0..d).map(|i| g[i][j][i]).sum();
            assert!(div.abs() < 1e-12);
        }
    }
}

#[test]
fn kernel_symmetry_and_scaling() {
    let r = [0.3, -0.4];
    let neg = [-0.3, 0.4];
    let a = stokeslet_velocity(&r).unwrap();
    let b = stokeslet_velocity(&neg).unwrap();
    let pa = stokeslet_pressure(&r).unwrap();
    let pb = stokeslet_pressure(&neg).unwrap();
    for i in 0..2 {
        assert!((pa[i] + pb[i]).abs() < 1e-15);
        for j in 0..2 {
            assert_eq!(a[i][j], a[j][i]);
            assert!((a[i][j] - b[i][j]).abs() < 1e-15);
        }
    }
    // 2D gradient is homogeneous of degree -1
    let g1 = stokeslet_velocity_gradient(&r).unwrap();
    let g2 = stokeslet_velocity_gradient(&[0.6, -0.8]).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            for m in 0..2 {
                assert!((g1[i][j][m] - 2.0 * g2[i][j][m]).abs() < 1e-14);
            }
        }
    }
    let t3 = stokeslet_velocity(&[0.2, 0.3, -0.6]).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert!((t3[i][j] - t3[j][i]).abs() < 1e-16);
        }
    }
}
