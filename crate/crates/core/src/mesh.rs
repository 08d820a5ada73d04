//! Conforming simplicial meshes of the unit square and the unit cube.
//!
//! The level-0 square is split by both diagonals into four triangles (the
//! crisscross pattern); the level-0 cube is split into the six Kuhn
//! tetrahedra sharing the main diagonal. Uniform refinement is red refinement
//! in 2D and Bey's eight-child rule in 3D, which keeps the Kuhn family
//! congruent so that `h_max / h_min` stays at one for every level.

use std::collections::HashMap;
use std::io::Write;

use crate::{Error, Result, Vec3};

/// Barycentric tolerance used by point location.
pub const LOCATE_TOL: f64 = 1e-10;

/// Affine map of one cell: `x = origin + jac * xi` with `xi` the reference
/// coordinates (barycentric coordinates `1..=d`).
#[derive(Debug, Clone, Copy)]
pub struct CellGeometry {
    pub dim: usize,
    pub origin: Vec3,
    pub jac: [[f64; 3]; 3],
    pub inv_jac: [[f64; 3]; 3],
    pub det: f64,
}

impl CellGeometry {
    pub fn volume(&self) -> f64 {
        let fact = if self.dim == 2 { 2.0 } else { 6.0 };
        self.det.abs() / fact
    }

    pub fn to_physical(&self, bary: &[f64]) -> Vec3 {
        let mut x = self.origin;
        for i in 0..self.dim {
            for (k, xk) in x.iter_mut().enumerate().take(self.dim) {
                *xk += self.jac[k][i] * bary[i + 1];
            }
        }
        x
    }

    pub fn barycentric(&self, x: &[f64]) -> [f64; 4] {
        let mut out = [0.0; 4];
        let mut sum = 0.0;
        for i in 0..self.dim {
            let mut xi = 0.0;
            for k in 0..self.dim {
                xi += self.inv_jac[i][k] * (x[k] - self.origin[k]);
            }
            out[i + 1] = xi;
            sum += xi;
        }
        out[0] = 1.0 - sum;
        out
    }

    /// Physical gradients of the barycentric coordinates (constant per cell).
    pub fn barycentric_gradients(&self) -> [Vec3; 4] {
        let mut g = [[0.0; 3]; 4];
        for i in 0..self.dim {
            for k in 0..self.dim {
                g[i + 1][k] = self.inv_jac[i][k];
                g[0][k] -= self.inv_jac[i][k];
            }
        }
        g
    }
}

#[derive(Debug, Clone)]
struct PointLocator {
    lo: Vec3,
    width: Vec3,
    n: usize,
    buckets: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    dim: usize,
    coords: Vec<f64>,
    cells: Vec<usize>,
    boundary_vertex: Vec<bool>,
    boundary_facets: Vec<usize>,
    h_max: f64,
    h_min: f64,
    level: usize,
    locator: PointLocator,
}

impl Mesh {
    /// Builds a mesh from raw vertex coordinates (stride `dim`) and cell
    /// connectivity (stride `dim + 1`).
    pub fn from_parts(dim: usize, coords: Vec<f64>, cells: Vec<usize>) -> Result<Mesh> {
        Self::with_level(dim, coords, cells, 0)
    }

    fn with_level(dim: usize, coords: Vec<f64>, cells: Vec<usize>, level: usize) -> Result<Mesh> {
        if dim != 2 && dim != 3 {
            return Err(Error::UnsupportedDimension(dim));
        }
        if coords.len() % dim != 0 || cells.len() % (dim + 1) != 0 {
            return Err(Error::DimensionMismatch(
                "coordinate or connectivity array has the wrong stride".into(),
            ));
        }
        let n_vertices = coords.len() / dim;
        if let Some(&bad) = cells.iter().find(|&&v| v >= n_vertices) {
            return Err(Error::DimensionMismatch(format!("cell references vertex {bad}")));
        }
        let mut mesh = Mesh {
            dim,
            coords,
            cells,
            boundary_vertex: vec![false; n_vertices],
            boundary_facets: Vec::new(),
            h_max: 0.0,
            h_min: f64::INFINITY,
            level,
            locator: PointLocator {
                lo: [0.0; 3],
                width: [1.0; 3],
                n: 1,
                buckets: Vec::new(),
            },
        };
        mesh.compute_boundary();
        mesh.compute_sizes();
        mesh.build_locator();
        Ok(mesh)
    }

    /// Level-`level` uniform refinement of the structured unit square/cube.
    pub fn unit(dim: usize, level: usize) -> Result<Mesh> {
        let mut mesh = match dim {
            2 => {
                let coords = vec![0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.5, 0.5];
                let cells = vec![0, 1, 4, 1, 2, 4, 2, 3, 4, 3, 0, 4];
                Mesh::from_parts(2, coords, cells)?
            }
            3 => {
                let mut coords = Vec::with_capacity(24);
                for v in 0..8usize {
                    coords.extend([(v & 1) as f64, ((v >> 1) & 1) as f64, ((v >> 2) & 1) as f64]);
                }
                let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
                let mut cells = Vec::with_capacity(24);
                for p in perms {
                    let mut v = 0usize;
                    cells.push(v);
                    for axis in p {
                        v |= 1 << axis;
                        cells.push(v);
                    }
                }
                Mesh::from_parts(3, coords, cells)?
            }
            d => return Err(Error::UnsupportedDimension(d)),
        };
        for _ in 0..level {
            mesh = mesh.refine_uniform();
        }
        Ok(mesh)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of uniform refinements applied since construction.
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn n_vertices(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len() / (self.dim + 1)
    }

    pub fn vertex(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vertex3(&self, i: usize) -> Vec3 {
        let mut p = [0.0; 3];
        p[..self.dim].copy_from_slice(self.vertex(i));
        p
    }

    pub fn cell(&self, c: usize) -> &[usize] {
        let n = self.dim + 1;
        &self.cells[c * n..(c + 1) * n]
    }

    pub fn is_boundary_vertex(&self, i: usize) -> bool {
        self.boundary_vertex[i]
    }

    /// Boundary facets as sorted vertex tuples, stride `dim`.
    pub fn boundary_facets(&self) -> impl Iterator<Item = &[usize]> {
        self.boundary_facets.chunks(self.dim)
    }

    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    pub fn h_min(&self) -> f64 {
        self.h_min
    }

    pub fn geometry(&self, c: usize) -> CellGeometry {
        let verts = self.cell(c);
        let origin = self.vertex3(verts[0]);
        let mut jac = [[0.0; 3]; 3];
        for i in 0..self.dim {
            let v = self.vertex3(verts[i + 1]);
            for k in 0..self.dim {
                jac[k][i] = v[k] - origin[k];
            }
        }
        let (det, inv_jac) = invert(self.dim, &jac);
        CellGeometry {
            dim: self.dim,
            origin,
            jac,
            inv_jac,
            det,
        }
    }

    pub fn cell_volume(&self, c: usize) -> f64 {
        self.geometry(c).volume()
    }

    pub fn cell_barycenter(&self, c: usize) -> Vec3 {
        let mut x = [0.0; 3];
        for &v in self.cell(c) {
            let p = self.vertex3(v);
            for k in 0..3 {
                x[k] += p[k];
            }
        }
        x.map(|xk| xk / (self.dim + 1) as f64)
    }

    pub fn cell_diameter(&self, c: usize) -> f64 {
        let verts = self.cell(c);
        let mut diam: f64 = 0.0;
        for i in 0..verts.len() {
            for j in i + 1..verts.len() {
                diam = diam.max(dist(self.vertex(verts[i]), self.vertex(verts[j])));
            }
        }
        diam
    }

    /// Euclidean distance to the boundary of the unit square/cube.
    pub fn distance_to_boundary(&self, x: &[f64]) -> f64 {
        x.iter()
            .take(self.dim)
            .map(|&xk| xk.min(1.0 - xk))
            .fold(f64::INFINITY, f64::min)
    }

    /// Subdivides every cell into `2^d` children through its edge midpoints.
    pub fn refine_uniform(&self) -> Mesh {
        let dim = self.dim;
        let mut coords = self.coords.clone();
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, coords: &mut Vec<f64>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                let idx = coords.len() / dim;
                for k in 0..dim {
                    let m = 0.5 * (coords[a * dim + k] + coords[b * dim + k]);
                    coords.push(m);
                }
                idx
            })
        };
        let mut cells = Vec::with_capacity(self.cells.len() * (1 << dim));
        for c in 0..self.n_cells() {
            let v = self.cell(c);
            if dim == 2 {
                let (a, b, cc) = (v[0], v[1], v[2]);
                let ab = mid(a, b, &mut coords);
                let bc = mid(b, cc, &mut coords);
                let ca = mid(cc, a, &mut coords);
                cells.extend([a, ab, ca, ab, b, bc, ca, bc, cc, ab, bc, ca]);
            } else {
                let x = [v[0], v[1], v[2], v[3]];
                let m01 = mid(x[0], x[1], &mut coords);
                let m02 = mid(x[0], x[2], &mut coords);
                let m03 = mid(x[0], x[3], &mut coords);
                let m12 = mid(x[1], x[2], &mut coords);
                let m13 = mid(x[1], x[3], &mut coords);
                let m23 = mid(x[2], x[3], &mut coords);
                // Bey's ordering: the interior octahedron is cut along m02-m13.
                cells.extend([
                    x[0], m01, m02, m03, //
                    m01, x[1], m12, m13, //
                    m02, m12, x[2], m23, //
                    m03, m13, m23, x[3], //
                    m01, m02, m03, m13, //
                    m01, m02, m12, m13, //
                    m02, m03, m13, m23, //
                    m02, m12, m13, m23,
                ]);
            }
        }
        Mesh::with_level(dim, coords, cells, self.level + 1)
            .expect("refinement of a valid mesh is valid")
    }

    /// Finds the lowest-index cell containing `x` (within [`LOCATE_TOL`]) and
    /// the barycentric coordinates of `x` in it.
    pub fn locate_point(&self, x: &[f64]) -> Result<(usize, [f64; 4])> {
        let loc = &self.locator;
        let mut flat = 0usize;
        let mut stride = 1usize;
        for k in 0..self.dim {
            let rel = (x[k] - loc.lo[k]) / loc.width[k];
            if !(-1e-9..=1.0 + 1e-9).contains(&rel) {
                return Err(Error::NotFound(x[..self.dim].to_vec()));
            }
            let idx = ((rel * loc.n as f64).floor() as isize).clamp(0, loc.n as isize - 1) as usize;
            flat += idx * stride;
            stride *= loc.n;
        }
        for &c in &loc.buckets[flat] {
            let g = self.geometry(c);
            let mut bary = g.barycentric(x);
            let min = bary[..=self.dim].iter().copied().fold(f64::INFINITY, f64::min);
            if min >= -LOCATE_TOL {
                let mut sum = 0.0;
                for b in bary[..=self.dim].iter_mut() {
                    *b = b.max(0.0);
                    sum += *b;
                }
                for b in bary[..=self.dim].iter_mut() {
                    *b /= sum;
                }
                return Ok((c, bary));
            }
        }
        Err(Error::NotFound(x[..self.dim].to_vec()))
    }

    /// Plain-text dump: a header line, one vertex per line, one cell per line.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{} {} {}", self.dim, self.n_vertices(), self.n_cells())?;
        for i in 0..self.n_vertices() {
            let line: Vec<String> = self.vertex(i).iter().map(|x| format!("{x:.17e}")).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        for c in 0..self.n_cells() {
            let line: Vec<String> = self.cell(c).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    fn compute_boundary(&mut self) {
        let dim = self.dim;
        let mut count: HashMap<[usize; 3], usize> = HashMap::new();
        for c in 0..self.n_cells() {
            let verts = self.cell(c);
            for skip in 0..=dim {
                let mut key = [usize::MAX; 3];
                let mut n = 0;
                for (j, &v) in verts.iter().enumerate() {
                    if j != skip {
                        key[n] = v;
                        n += 1;
                    }
                }
                key[..dim].sort_unstable();
                *count.entry(key).or_insert(0) += 1;
            }
        }
        let mut facets: Vec<[usize; 3]> = count
            .into_iter()
            .filter_map(|(k, n)| (n == 1).then_some(k))
            .collect();
        facets.sort_unstable();
        self.boundary_facets.clear();
        for f in &facets {
            for &v in &f[..dim] {
                self.boundary_vertex[v] = true;
            }
            self.boundary_facets.extend_from_slice(&f[..dim]);
        }
    }

    fn compute_sizes(&mut self) {
        for c in 0..self.n_cells() {
            let h = self.cell_diameter(c);
            self.h_max = self.h_max.max(h);
            self.h_min = self.h_min.min(h);
        }
    }

    fn build_locator(&mut self) {
        let dim = self.dim;
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for k in 0..dim {
            lo[k] = f64::INFINITY;
            hi[k] = f64::NEG_INFINITY;
        }
        for i in 0..self.n_vertices() {
            for (k, &x) in self.vertex(i).iter().enumerate() {
                lo[k] = lo[k].min(x);
                hi[k] = hi[k].max(x);
            }
        }
        let mut width = [1.0; 3];
        for k in 0..dim {
            width[k] = (hi[k] - lo[k]).max(f64::MIN_POSITIVE);
        }
        let n = ((self.n_cells() as f64).powf(1.0 / dim as f64) / 2.0).ceil().max(1.0) as usize;
        let mut buckets = vec![Vec::new(); n.pow(dim as u32)];
        let pad = 1e-9;
        for c in 0..self.n_cells() {
            let mut range = [(0usize, 0usize); 3];
            for (k, r) in range.iter_mut().enumerate().take(dim) {
                let (mut a, mut b) = (f64::INFINITY, f64::NEG_INFINITY);
                for &v in self.cell(c) {
                    let x = self.coords[v * dim + k];
                    a = a.min(x);
                    b = b.max(x);
                }
                let to_idx = |x: f64| {
                    (((x - lo[k]) / width[k] * n as f64).floor() as isize).clamp(0, n as isize - 1) as usize
                };
                *r = (to_idx(a - pad), to_idx(b + pad));
            }
            let (kr, jr) = (if dim == 3 { range[2] } else { (0, 0) }, range[1]);
            for kk in kr.0..=kr.1 {
                for jj in jr.0..=jr.1 {
                    for ii in range[0].0..=range[0].1 {
                        buckets[ii + n * (jj + n * kk)].push(c);
                    }
                }
            }
        }
        self.locator = PointLocator { lo, width, n, buckets };
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Determinant and inverse of the leading `dim x dim` block.
pub(crate) fn invert(dim: usize, m: &[[f64; 3]; 3]) -> (f64, [[f64; 3]; 3]) {
    let mut inv = [[0.0; 3]; 3];
    if dim == 2 {
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        inv[0][0] = m[1][1] / det;
        inv[0][1] = -m[0][1] / det;
        inv[1][0] = -m[1][0] / det;
        inv[1][1] = m[0][0] / det;
        (det, inv)
    } else {
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        for i in 0..3 {
            for j in 0..3 {
                let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
                let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
                inv[i][j] = (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) / det;
            }
        }
        (det, inv)
    }
}
