//! FEM-BEM coupling for the Laplace transmission problem on the unit cube,
//! with hierarchical-matrix compression of the (stabilized) coupling
//! operators, H-arithmetic (inversion, LU), and block-diagonal H-LU
//! preconditioning of GMRES.
//!
//! The main pieces:
//! - [`mesh`]: Kuhn-subdivided cube mesh and dof tables,
//! - [`fem`] / [`bem`]: Galerkin blocks (stiffness, boundary mass, layer
//!   operators) and layer-potential evaluation,
//! - [`coupling`]: the Bielak-MacCamy, symmetric, and Johnson-Nedelec block
//!   systems, stabilization, dual bases,
//! - [`cluster`] / [`hmatrix`]: block cluster trees and truncated
//!   H-arithmetic,
//! - [`solver`]: full GMRES and the block-diagonal H-LU preconditioner,
//! - [`probe`]: interior-regularity ratio measurements,
//! - [`cli`]: the experiment driver behind the `hicoup` binary.

pub mod bem;
pub mod cli;
pub mod cluster;
pub mod coupling;
pub mod dense;
pub mod error;
pub mod fem;
pub mod hmatrix;
pub mod mesh;
pub mod probe;
pub mod solver;
pub mod sparse;
pub mod util;

pub use error::{Error, Result};
