//! Velocity/pressure finite element pairs on a [`Mesh`].
//!
//! Scalar velocity nodes are numbered vertices first, then edge midpoints
//! (Taylor-Hood, ordered by their sorted vertex pair) or one bubble per cell
//! (mini). A vector velocity coefficient for component `k` at scalar node `n`
//! lives at index `k * n_scalar + n`. Pressure is continuous P1 on vertices.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::mesh::{CellGeometry, Mesh};
use crate::quadrature::QuadratureRule;
use crate::{Error, Result, Vec3};

/// Upper bound on the number of local scalar velocity shape functions.
pub const MAX_LOCAL: usize = 10;

const EDGES_2D: [(usize, usize); 3] = [(0, 1), (1, 2), (0, 2)];
const EDGES_3D: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

fn local_edges(dim: usize) -> &'static [(usize, usize)] {
    if dim == 2 {
        &EDGES_2D
    } else {
        &EDGES_3D
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElementFamily {
    #[serde(rename = "th", alias = "taylor_hood")]
    TaylorHood,
    #[serde(rename = "mini")]
    Mini,
}

impl std::str::FromStr for ElementFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "th" | "taylor-hood" | "taylor_hood" => Ok(ElementFamily::TaylorHood),
            "mini" => Ok(ElementFamily::Mini),
            other => Err(Error::InvalidConfig(format!("unknown element family '{other}'"))),
        }
    }
}

/// Shape function values and physical gradients at one point of one cell.
#[derive(Debug, Clone, Copy)]
pub struct BasisEval {
    pub n_velocity: usize,
    pub velocity: [f64; MAX_LOCAL],
    pub velocity_grad: [Vec3; MAX_LOCAL],
    pub n_pressure: usize,
    pub pressure: [f64; 4],
    pub pressure_grad: [Vec3; 4],
}

#[derive(Debug, Clone)]
pub struct VelocityPressureSpace {
    mesh: Arc<Mesh>,
    family: ElementFamily,
    n_local: usize,
    n_scalar: usize,
    cell_nodes: Vec<usize>,
    node_coords: Vec<Vec3>,
    is_bubble: Vec<bool>,
    boundary_node: Vec<bool>,
    boundary_velocity_dofs: Vec<usize>,
}

/// Dirichlet data: sorted velocity DOF indices with prescribed values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundaryValues {
    pub dofs: Vec<usize>,
    pub values: Vec<f64>,
}

impl BoundaryValues {
    pub fn zeros(dofs: &[usize]) -> Self {
        BoundaryValues {
            dofs: dofs.to_vec(),
            values: vec![0.0; dofs.len()],
        }
    }
}

impl VelocityPressureSpace {
    pub fn new(mesh: Arc<Mesh>, family: ElementFamily) -> Self {
        let dim = mesh.dim();
        let nv = mesh.n_vertices();
        let nc = mesh.n_cells();
        let edges = local_edges(dim);
        let n_local = match family {
            ElementFamily::TaylorHood => dim + 1 + edges.len(),
            ElementFamily::Mini => dim + 2,
        };
        let mut node_coords: Vec<Vec3> = (0..nv).map(|v| mesh.vertex3(v)).collect();
        let mut boundary_node: Vec<bool> = (0..nv).map(|v| mesh.is_boundary_vertex(v)).collect();
        let mut cell_nodes = Vec::with_capacity(nc * n_local);
        match family {
            ElementFamily::TaylorHood => {
                let mut keys = BTreeSet::new();
                for c in 0..nc {
                    let v = mesh.cell(c);
                    for &(i, j) in edges {
                        keys.insert((v[i].min(v[j]), v[i].max(v[j])));
                    }
                }
                let mut boundary_edges = HashSet::new();
                for f in mesh.boundary_facets() {
                    for i in 0..f.len() {
                        for j in i + 1..f.len() {
                            boundary_edges.insert((f[i].min(f[j]), f[i].max(f[j])));
                        }
                    }
                }
                let mut edge_index = BTreeMap::new();
                for (k, &(a, b)) in keys.iter().enumerate() {
                    edge_index.insert((a, b), nv + k);
                    let (pa, pb) = (mesh.vertex3(a), mesh.vertex3(b));
                    node_coords.push([0, 1, 2].map(|m| 0.5 * (pa[m] + pb[m])));
                    boundary_node.push(boundary_edges.contains(&(a, b)));
                }
                for c in 0..nc {
                    let v = mesh.cell(c);
                    cell_nodes.extend_from_slice(v);
                    for &(i, j) in edges {
                        cell_nodes.push(edge_index[&(v[i].min(v[j]), v[i].max(v[j]))]);
                    }
                }
            }
            ElementFamily::Mini => {
                for c in 0..nc {
                    cell_nodes.extend_from_slice(mesh.cell(c));
                    cell_nodes.push(nv + c);
                    node_coords.push(mesh.cell_barycenter(c));
                    boundary_node.push(false);
                }
            }
        }
        let n_scalar = node_coords.len();
        let mut is_bubble = vec![false; n_scalar];
        if family == ElementFamily::Mini {
            is_bubble[nv..].iter_mut().for_each(|b| *b = true);
        }
        let mut boundary_velocity_dofs = Vec::new();
        for k in 0..dim {
            for (n, &b) in boundary_node.iter().enumerate() {
                if b {
                    boundary_velocity_dofs.push(k * n_scalar + n);
                }
            }
        }
        VelocityPressureSpace {
            mesh,
            family,
            n_local,
            n_scalar,
            cell_nodes,
            node_coords,
            is_bubble,
            boundary_node,
            boundary_velocity_dofs,
        }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn dim(&self) -> usize {
        self.mesh.dim()
    }

    pub fn family(&self) -> ElementFamily {
        self.family
    }

    pub fn n_scalar_nodes(&self) -> usize {
        self.n_scalar
    }

    pub fn n_velocity_dofs(&self) -> usize {
        self.dim() * self.n_scalar
    }

    pub fn n_pressure_dofs(&self) -> usize {
        self.mesh.n_vertices()
    }

    pub fn n_local_velocity(&self) -> usize {
        self.n_local
    }

    /// Scalar velocity node of each local shape function of cell `c`.
    pub fn velocity_nodes(&self, c: usize) -> &[usize] {
        &self.cell_nodes[c * self.n_local..(c + 1) * self.n_local]
    }

    /// Global velocity DOF of component `k` at scalar node `n`.
    pub fn velocity_dof(&self, k: usize, node: usize) -> usize {
        k * self.n_scalar + node
    }

    pub fn pressure_nodes(&self, c: usize) -> &[usize] {
        self.mesh.cell(c)
    }

    pub fn node_coords(&self, n: usize) -> Vec3 {
        self.node_coords[n]
    }

    pub fn is_boundary_node(&self, n: usize) -> bool {
        self.boundary_node[n]
    }

    pub fn boundary_velocity_dofs(&self) -> &[usize] {
        &self.boundary_velocity_dofs
    }

    /// Shape functions of cell `c` at the point with barycentric coordinates `bary`.
    pub fn eval_basis(&self, c: usize, bary: &[f64]) -> BasisEval {
        let g = self.mesh.geometry(c);
        self.eval_basis_with(&g.barycentric_gradients(), bary)
    }

    /// Same as [`eval_basis`](Self::eval_basis) with precomputed barycentric gradients.
    pub fn eval_basis_with(&self, bgrad: &[Vec3; 4], bary: &[f64]) -> BasisEval {
        let dim = self.dim();
        let mut e = BasisEval {
            n_velocity: self.n_local,
            velocity: [0.0; MAX_LOCAL],
            velocity_grad: [[0.0; 3]; MAX_LOCAL],
            n_pressure: dim + 1,
            pressure: [0.0; 4],
            pressure_grad: [[0.0; 3]; 4],
        };
        for i in 0..=dim {
            e.pressure[i] = bary[i];
            e.pressure_grad[i] = bgrad[i];
        }
        match self.family {
            ElementFamily::TaylorHood => {
                for i in 0..=dim {
                    e.velocity[i] = bary[i] * (2.0 * bary[i] - 1.0);
                    e.velocity_grad[i] = scale(bgrad[i], 4.0 * bary[i] - 1.0);
                }
                for (m, &(i, j)) in local_edges(dim).iter().enumerate() {
                    let n = dim + 1 + m;
                    e.velocity[n] = 4.0 * bary[i] * bary[j];
                    for k in 0..3 {
                        e.velocity_grad[n][k] = 4.0 * (bary[j] * bgrad[i][k] + bary[i] * bgrad[j][k]);
                    }
                }
            }
            ElementFamily::Mini => {
                for i in 0..=dim {
                    e.velocity[i] = bary[i];
                    e.velocity_grad[i] = bgrad[i];
                }
                // normalized to one at the barycenter
                let norm = ((dim + 1) as f64).powi(dim as i32 + 1);
                let n = dim + 1;
                e.velocity[n] = norm * bary[..=dim].iter().product::<f64>();
                for i in 0..=dim {
                    let others: f64 = (0..=dim).filter(|&j| j != i).map(|j| bary[j]).product();
                    for k in 0..3 {
                        e.velocity_grad[n][k] += norm * others * bgrad[i][k];
                    }
                }
            }
        }
        e
    }

    /// Nodal interpolant of a vector field. Mini bubbles take the residual
    /// of the P1 part at the barycenter.
    pub fn interpolate_velocity(self: &Arc<Self>, g: impl Fn(&[f64]) -> Vec3) -> FEFunction {
        let dim = self.dim();
        let mut coeffs = vec![0.0; self.n_velocity_dofs()];
        for n in 0..self.n_scalar {
            if self.is_bubble[n] {
                continue;
            }
            let v = g(&self.node_coords[n][..dim]);
            for k in 0..dim {
                coeffs[k * self.n_scalar + n] = v[k];
            }
        }
        if self.family == ElementFamily::Mini {
            let nv = self.mesh.n_vertices();
            for c in 0..self.mesh.n_cells() {
                let b = nv + c;
                let v = g(&self.node_coords[b][..dim]);
                for k in 0..dim {
                    let avg: f64 = self.mesh.cell(c).iter().map(|&p| coeffs[k * self.n_scalar + p]).sum::<f64>()
                        / (dim + 1) as f64;
                    coeffs[k * self.n_scalar + b] = v[k] - avg;
                }
            }
        }
        FEFunction::new(self.clone(), FieldKind::Velocity, coeffs)
    }

    pub fn interpolate_pressure(self: &Arc<Self>, p: impl Fn(&[f64]) -> f64) -> FEFunction {
        let dim = self.dim();
        let coeffs = (0..self.n_pressure_dofs()).map(|v| p(self.mesh.vertex(v))).collect();
        let _ = dim;
        FEFunction::new(self.clone(), FieldKind::Pressure, coeffs)
    }

    /// Nodal values of `g` at the boundary velocity DOFs.
    pub fn interpolate_boundary(&self, g: impl Fn(&[f64]) -> Vec3) -> BoundaryValues {
        let dim = self.dim();
        let mut values = Vec::with_capacity(self.boundary_velocity_dofs.len());
        let mut cache: BTreeMap<usize, Vec3> = BTreeMap::new();
        for &dof in &self.boundary_velocity_dofs {
            let (k, n) = (dof / self.n_scalar, dof % self.n_scalar);
            let v = *cache.entry(n).or_insert_with(|| g(&self.node_coords[n][..dim]));
            values.push(v[k]);
        }
        BoundaryValues {
            dofs: self.boundary_velocity_dofs.clone(),
            values,
        }
    }

    pub fn zero_boundary(&self) -> BoundaryValues {
        BoundaryValues::zeros(&self.boundary_velocity_dofs)
    }
}

fn scale(v: Vec3, s: f64) -> Vec3 {
    [v[0] * s, v[1] * s, v[2] * s]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    Velocity,
    Pressure,
}

/// Coefficient vector bound to the velocity or pressure part of a space.
#[derive(Debug, Clone)]
pub struct FEFunction {
    space: Arc<VelocityPressureSpace>,
    kind: FieldKind,
    pub coeffs: Vec<f64>,
}

impl FEFunction {
    pub fn new(space: Arc<VelocityPressureSpace>, kind: FieldKind, coeffs: Vec<f64>) -> Self {
        let expected = match kind {
            FieldKind::Velocity => space.n_velocity_dofs(),
            FieldKind::Pressure => space.n_pressure_dofs(),
        };
        assert_eq!(coeffs.len(), expected, "coefficient vector has the wrong length");
        FEFunction { space, kind, coeffs }
    }

    pub fn zeros(space: Arc<VelocityPressureSpace>, kind: FieldKind) -> Self {
        let n = match kind {
            FieldKind::Velocity => space.n_velocity_dofs(),
            FieldKind::Pressure => space.n_pressure_dofs(),
        };
        FEFunction::new(space, kind, vec![0.0; n])
    }

    pub fn space(&self) -> &Arc<VelocityPressureSpace> {
        &self.space
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn velocity_in_cell(&self, c: usize, basis: &BasisEval) -> Vec3 {
        debug_assert_eq!(self.kind, FieldKind::Velocity);
        let s = &self.space;
        let mut v = [0.0; 3];
        for (i, &n) in s.velocity_nodes(c).iter().enumerate() {
            for (k, vk) in v.iter_mut().enumerate().take(s.dim()) {
                *vk += basis.velocity[i] * self.coeffs[k * s.n_scalar + n];
            }
        }
        v
    }

    /// `grad[k][m] = d u_k / d x_m`.
    pub fn velocity_gradient_in_cell(&self, c: usize, basis: &BasisEval) -> [Vec3; 3] {
        let s = &self.space;
        let mut g = [[0.0; 3]; 3];
        for (i, &n) in s.velocity_nodes(c).iter().enumerate() {
            for k in 0..s.dim() {
                let u = self.coeffs[k * s.n_scalar + n];
                for m in 0..s.dim() {
                    g[k][m] += u * basis.velocity_grad[i][m];
                }
            }
        }
        g
    }

    pub fn pressure_in_cell(&self, c: usize, basis: &BasisEval) -> f64 {
        debug_assert_eq!(self.kind, FieldKind::Pressure);
        self.space
            .pressure_nodes(c)
            .iter()
            .enumerate()
            .map(|(i, &v)| basis.pressure[i] * self.coeffs[v])
            .sum()
    }

    /// Velocity at an arbitrary point of the closed domain.
    pub fn eval_velocity(&self, x: &[f64]) -> Result<Vec3> {
        let (c, bary) = self.space.mesh.locate_point(x)?;
        Ok(self.velocity_in_cell(c, &self.space.eval_basis(c, &bary)))
    }

    pub fn eval_pressure(&self, x: &[f64]) -> Result<f64> {
        let (c, bary) = self.space.mesh.locate_point(x)?;
        Ok(self.pressure_in_cell(c, &self.space.eval_basis(c, &bary)))
    }

    pub fn scaled(&self, s: f64) -> FEFunction {
        let mut out = self.clone();
        out.coeffs.iter_mut().for_each(|c| *c *= s);
        out
    }
}

/// Piecewise-constant vector field, one value per cell (stride `dim`).
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    dim: usize,
    pub values: Vec<f64>,
}

impl ControlField {
    pub fn zeros(mesh: &Mesh) -> Self {
        ControlField {
            dim: mesh.dim(),
            values: vec![0.0; mesh.dim() * mesh.n_cells()],
        }
    }

    pub fn from_values(dim: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len() % dim, 0);
        ControlField { dim, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_cells(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn value(&self, c: usize) -> Vec3 {
        let mut v = [0.0; 3];
        v[..self.dim].copy_from_slice(&self.values[c * self.dim..(c + 1) * self.dim]);
        v
    }

    pub fn l2_norm(&self, mesh: &Mesh) -> f64 {
        (0..self.n_cells())
            .map(|c| {
                let v = self.value(c);
                mesh.cell_volume(c) * v.iter().map(|x| x * x).sum::<f64>()
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_within(&self, lower: &Vec3, upper: &Vec3) -> bool {
        self.values
            .iter()
            .enumerate()
            .all(|(i, &v)| v >= lower[i % self.dim] && v <= upper[i % self.dim])
    }
}

/// Cell averages `(1/|T|) \int_T f` computed with `rule`.
pub fn interpolate_cellwise_constant(
    mesh: &Mesh,
    f: impl Fn(&[f64]) -> Vec3,
    rule: &QuadratureRule,
) -> ControlField {
    let dim = mesh.dim();
    let mut values = Vec::with_capacity(dim * mesh.n_cells());
    let ref_volume: f64 = rule.weights().iter().sum();
    for c in 0..mesh.n_cells() {
        let g: CellGeometry = mesh.geometry(c);
        let mut acc = [0.0; 3];
        for q in 0..rule.len() {
            let x = g.to_physical(rule.point(q));
            let v = f(&x[..dim]);
            for k in 0..dim {
                acc[k] += rule.weights()[q] * v[k];
            }
        }
        values.extend(acc[..dim].iter().map(|a| a / ref_volume));
    }
    ControlField { dim, values }
}
