#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stokes_ocp::stokes::StokesSolver;
use stokes_ocp::Vec3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Central difference of `f` in direction `k`.
pub fn central<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], k: usize, h: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut xm = x.to_vec();
    xp[k] += h;
    xm[k] -= h;
    (f(&xp) - f(&xm)) / (2.0 * h)
}

/// Five-point (seven in 3D) Laplacian.
pub fn laplacian<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> f64 {
    let f0 = f(x);
    let mut acc = 0.0;
    for k in 0..x.len() {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[k] += h;
        xm[k] -= h;
        acc += (f(&xp) - 2.0 * f0 + f(&xm)) / (h * h);
    }
    acc
}

/// Velocity observations at `points` as affine function of the cellwise
/// control: `obs = offset + G u`, built column by column with forward solves.
pub struct DenseObservation {
    pub offset: Vec<f64>,
    pub g: Vec<Vec<f64>>,
}

pub fn dense_observation(
    solver: &StokesSolver,
    forcing_load: &[f64],
    points: &[Vec<f64>],
) -> DenseObservation {
    let dim = solver.space().dim();
    let observe = |load: &[f64]| -> Vec<f64> {
        let y = solver.solve(load, None).unwrap();
        points
            .iter()
            .flat_map(|t| y.velocity.eval_velocity(t).unwrap()[..dim].to_vec())
            .collect()
    };
    let offset = observe(forcing_load);
    let coupling = solver.control_coupling().unwrap();
    let n = coupling.ncols();
    let mut g = vec![vec![0.0; n]; offset.len()];
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = observe(&coupling.mul_vec(&e));
        for (i, v) in col.iter().enumerate() {
            g[i][j] = *v;
        }
    }
    DenseObservation { offset, g }
}

/// Minimize `½uᵀHu + c·u` over the box by projected gradient descent.
/// `h` is dense row-major symmetric positive definite.
pub fn box_qp(h: &[f64], c: &[f64], lower: &[f64], upper: &[f64], iters: usize) -> Vec<f64> {
    let n = c.len();
    let hu = |u: &[f64]| -> Vec<f64> { (0..n).map(|a| dot(&h[a * n..(a + 1) * n], u)).collect() };
    // Gershgorin bound for the step
    let lip = (0..n)
        .map(|a| h[a * n..(a + 1) * n].iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let step = 1.0 / lip;
    let mut u: Vec<f64> = (0..n).map(|i| 0.0f64.max(lower[i]).min(upper[i])).collect();
    for _ in 0..iters {
        let g = hu(&u);
        for i in 0..n {
            u[i] = (u[i] - step * (g[i] + c[i])).max(lower[i]).min(upper[i]);
        }
    }
    u
}

pub fn quad_value(h: &[f64], c: &[f64], u: &[f64]) -> f64 {
    let n = c.len();
    let hu: Vec<f64> = (0..n).map(|a| dot(&h[a * n..(a + 1) * n], u)).collect();
    0.5 * dot(u, &hu) + dot(c, u)
}

pub fn vec3(v: &[f64]) -> Vec3 {
    let mut out = [0.0; 3];
    out[..v.len()].copy_from_slice(v);
    out
}

/// Finite-difference residuals of `(Φ, ζ)` at `x`: momentum `-ΔΦ - ∇ζ`
/// relative to `|ΔΦ| + |∇ζ|`, and `div Φ` relative to `|∇Φ|`.
pub fn stokeslet_residuals(sum: &stokes_ocp::manufactured::StokesletSum, x: &[f64], h: f64) -> (f64, f64) {
    let d = sum.dim;
    let mut momentum: f64 = 0.0;
    let mut div = 0.0;
    let mut scale_m: f64 = 0.0;
    let mut scale_d: f64 = 0.0;
    for i in 0..d {
        let lap = laplacian(|y| sum.velocity(y)[i], x, h);
        let dz = central(|y| sum.pressure(y), x, i, h);
        momentum = momentum.max((-lap - dz).abs());
        scale_m = scale_m.max(lap.abs() + dz.abs());
        for m in 0..d {
            let dvi = central(|y| sum.velocity(y)[i], x, m, h);
            if m == i {
                div += dvi;
            }
            scale_d = scale_d.max(dvi.abs());
        }
    }
    (momentum / scale_m.max(1e-300), div.abs() / scale_d.max(1e-300))
}
