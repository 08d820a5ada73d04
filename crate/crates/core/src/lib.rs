//! Finite element tools for the Stokes system with Dirac-measure data and for
//! two box-constrained optimal control problems built on it:
//!
//! - **pointwise tracking**: a distributed control drives the velocity towards
//!   prescribed vectors at a finite set of observation points; the adjoint
//!   system then carries Dirac loads.
//! - **point-source control**: the control is a set of force amplitudes applied
//!   as Dirac loads at fixed points; the state itself is singular.
//!
//! The discretization uses Taylor-Hood (P2/P1) or mini (P1+bubble/P1) elements
//! on uniformly refined simplicial meshes of the unit square or cube, with a
//! sparse direct solver for the saddle-point systems and a primal-dual active
//! set iteration for the control constraints.
//!
//! # Modules
//!
//! - [`mesh`]: structured meshes, red refinement, point location
//! - [`quadrature`]: conical-product simplex rules
//! - [`fe_spaces`]: velocity/pressure spaces, interpolation, evaluation
//! - [`assembly`]: bilinear forms and load vectors
//! - [`saddle_solver`]: Dirichlet elimination and sparse LU factorization
//! - [`stokes`]: forward and adjoint solves
//! - [`manufactured`]: Stokeslets and the closed-form test problems
//! - [`ocp`]: optimal control solvers
//! - [`analysis`]: weights, error norms and convergence rates
//! - [`experiment`]: convergence-study driver used by the command line tool

pub mod analysis;
pub mod assembly;
pub mod error;
pub mod experiment;
pub mod fe_spaces;
pub mod manufactured;
pub mod mesh;
pub mod ocp;
pub mod quadrature;
pub mod saddle_solver;
pub mod sparse;
pub mod stokes;

pub use error::{Error, Result};

/// Points and vectors are stored in three slots; in 2D the last slot is zero.
pub type Vec3 = [f64; 3];

/// Vector-valued callback evaluated at a point with `dim` coordinates.
pub type VectorFn = std::sync::Arc<dyn Fn(&[f64]) -> Vec3 + Send + Sync>;

/// Scalar callback evaluated at a point with `dim` coordinates.
pub type ScalarFn = std::sync::Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
