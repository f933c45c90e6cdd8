//! P1 finite element assembly: stiffness with a constant SPD coefficient,
//! the FEM-BEM boundary mass coupling block, volume mass, and load vectors.

use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point};
use crate::sparse::{SparseMatrix, TripletBuffer};
use nalgebra::Matrix3;

/// Constant symmetric positive definite 3x3 coefficient.
#[derive(Clone, Copy, Debug)]
pub struct Coefficient {
    c: Matrix3<f64>,
    c_ell: f64,
}

impl Coefficient {
    pub fn identity() -> Self {
        Self {
            c: Matrix3::identity(),
            c_ell: 1.0,
        }
    }

    pub fn new(c: Matrix3<f64>) -> Result<Self> {
        let asym = (c - c.transpose()).abs().max();
        if asym > 1e-14 {
            return Err(Error::InvalidArgument(format!(
                "coefficient must be symmetric, |C - C^T|_max = {asym:.3e}"
            )));
        }
        let eig = c.symmetric_eigen();
        let c_ell = eig.eigenvalues.min();
        if c_ell <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "coefficient must be positive definite, min eig = {c_ell:.3e}"
            )));
        }
        Ok(Self { c, c_ell })
    }

    /// Smallest eigenvalue (the ellipticity constant).
    pub fn c_ell(&self) -> f64 {
        self.c_ell
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.c
    }
}

/// Constant P1 gradients on a tetrahedron, in vertex order, plus its volume.
pub fn tet_gradients(v: &[Point; 4]) -> Result<([Point; 4], f64)> {
    let j = Matrix3::from_columns(&[v[1] - v[0], v[2] - v[0], v[3] - v[0]]);
    let det = j.determinant();
    let vol = det / 6.0;
    if vol <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "degenerate or inverted tetrahedron, volume = {vol:.3e}"
        )));
    }
    let jinv_t = j
        .try_inverse()
        .ok_or_else(|| Error::Singular("tet Jacobian".into()))?
        .transpose();
    let g1 = jinv_t.column(0).into_owned();
    let g2 = jinv_t.column(1).into_owned();
    let g3 = jinv_t.column(2).into_owned();
    let g0 = -(g1 + g2 + g3);
    Ok(([g0, g1, g2, g3], vol))
}

/// 4x4 element stiffness for constant coefficient; exact (gradients constant).
pub fn element_stiffness(v: &[Point; 4], coeff: &Coefficient) -> Result<[[f64; 4]; 4]> {
    let (g, vol) = tet_gradients(v)?;
    let c = coeff.matrix();
    let mut k = [[0.0; 4]; 4];
    for a in 0..4 {
        let cga = c * g[a];
        for b in a..4 {
            let val = vol * cga.dot(&g[b]);
            k[a][b] = val;
            k[b][a] = val;
        }
    }
    Ok(k)
}

/// Stiffness matrix `A[i][j] = (C grad xi_j, grad xi_i)_{L2(Omega)}`, n x n.
pub fn assemble_stiffness(mesh: &Mesh, coeff: &Coefficient) -> Result<SparseMatrix> {
    let n = mesh.vertices.len();
    let mut buf = TripletBuffer::new(n, n);
    for t in 0..mesh.tets.len() {
        let verts = mesh.tet_vertices(t);
        let k = element_stiffness(&verts, coeff)?;
        let ids = mesh.tets[t];
        for a in 0..4 {
            for b in 0..4 {
                buf.push(ids[a], ids[b], k[a][b]);
            }
        }
    }
    Ok(buf.finalize())
}

/// Boundary mass `M[t][j] = (xi_j, chi_t)_{L2(Gamma)}`, m x n; each row has
/// exactly three nonzeros of value `area/3`.
pub fn assemble_boundary_mass(mesh: &Mesh) -> SparseMatrix {
    let n = mesh.vertices.len();
    let m = mesh.boundary_tris.len();
    let mut buf = TripletBuffer::new(m, n);
    for t in 0..m {
        let third = mesh.tri_area(t) / 3.0;
        for &v in &mesh.boundary_tris[t] {
            buf.push(t, v, third);
        }
    }
    buf.finalize()
}

/// Consistent P1 volume mass matrix, n x n; exact integration.
pub fn assemble_volume_mass(mesh: &Mesh) -> SparseMatrix {
    let n = mesh.vertices.len();
    let mut buf = TripletBuffer::new(n, n);
    for t in 0..mesh.tets.len() {
        let vol = mesh.tet_volume(t);
        let ids = mesh.tets[t];
        for a in 0..4 {
            for b in 0..4 {
                let w = if a == b { vol / 10.0 } else { vol / 20.0 };
                buf.push(ids[a], ids[b], w);
            }
        }
    }
    buf.finalize()
}

/// P1 mass matrix of the boundary triangulation over trace hat functions,
/// indexed by boundary-vertex position (n_Gamma x n_Gamma).
pub fn assemble_trace_mass(mesh: &Mesh) -> SparseMatrix {
    let nb = mesh.boundary_vertices.len();
    let mut buf = TripletBuffer::new(nb, nb);
    for t in 0..mesh.boundary_tris.len() {
        let area = mesh.tri_area(t);
        let ids = mesh.boundary_tris[t];
        for a in 0..3 {
            for b in 0..3 {
                let w = if a == b { area / 6.0 } else { area / 12.0 };
                let ia = mesh.boundary_vertex_index[ids[a]].unwrap();
                let ib = mesh.boundary_vertex_index[ids[b]].unwrap();
                buf.push(ia, ib, w);
            }
        }
    }
    buf.finalize()
}

/// Load vector `(f_h, xi_i)_{L2(Omega)}` for `f_h` given by P1 nodal
/// coefficients: `load = Mass * f`.
pub fn assemble_load(mesh: &Mesh, f: &[f64]) -> Result<Vec<f64>> {
    let n = mesh.vertices.len();
    if f.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "load data has length {}, expected {n}",
            f.len()
        )));
    }
    Ok(assemble_volume_mass(mesh).matvec(f))
}
