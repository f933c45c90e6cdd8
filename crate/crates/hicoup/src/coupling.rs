//! The three FEM-BEM coupling systems (Bielak-MacCamy, symmetric,
//! Johnson-Nedelec) as block operators over the combined index set, their
//! rank-one stabilization, right-hand sides, and the biorthogonal dual basis
//! with the exact inverse representation it affords.

use crate::bem::{
    assemble_k, assemble_v, assemble_w_from_single_layer, DoubleLayer, QuadratureConfig,
};
use crate::dense::{lu_dense, DenseMatrix};
use crate::error::{Error, Result};
use crate::fem::{assemble_boundary_mass, assemble_stiffness, assemble_volume_mass, Coefficient};
use crate::mesh::Mesh;
use crate::sparse::{SparseMatrix, TripletBuffer};
use crate::util::SplitMix64;
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CouplingKind {
    BielakMacCamy,
    Symmetric,
    JohnsonNedelec,
}

impl CouplingKind {
    pub fn name(&self) -> &'static str {
        match self {
            CouplingKind::BielakMacCamy => "bmc",
            CouplingKind::Symmetric => "sym",
            CouplingKind::JohnsonNedelec => "jn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bmc" => Ok(CouplingKind::BielakMacCamy),
            "sym" => Ok(CouplingKind::Symmetric),
            "jn" => Ok(CouplingKind::JohnsonNedelec),
            other => Err(Error::InvalidArgument(format!(
                "unknown coupling kind '{other}' (expected bmc, sym, jn)"
            ))),
        }
    }
}

/// Assembled coupling system: the shared blocks, the block operator of the
/// chosen kind, and the stabilization vector.
pub struct CouplingSystem {
    pub kind: CouplingKind,
    pub mesh: Mesh,
    pub coeff: Coefficient,
    pub n: usize,
    pub m: usize,
    /// stiffness, n x n
    pub a: SparseMatrix,
    /// volume mass, n x n (kept for right-hand sides)
    pub vol_mass: SparseMatrix,
    /// boundary mass M, m x n
    pub bd_mass: SparseMatrix,
    /// double layer K, m x nb (columns over boundary vertices)
    pub k: DenseMatrix,
    /// hypersingular W, nb x nb
    pub w: DenseMatrix,
    /// single layer V, m x m
    pub v: DenseMatrix,
    /// stabilization vector, length n + m
    pub s: Vec<f64>,
    /// column j of K / W <-> global vertex boundary_vertices[j]
    pub boundary_vertices: Vec<usize>,
}

/// Assemble all blocks and the stabilization vector for the given coupling.
pub fn assemble_coupling(
    kind: CouplingKind,
    mesh: &Mesh,
    coeff: &Coefficient,
    quad: &QuadratureConfig,
) -> Result<CouplingSystem> {
    if matches!(kind, CouplingKind::BielakMacCamy | CouplingKind::JohnsonNedelec)
        && coeff.c_ell() <= 0.25
    {
        return Err(Error::PreconditionViolated(format!(
            "{} coupling requires C_ell > 1/4, got {}",
            kind.name(),
            coeff.c_ell()
        )));
    }
    let a = assemble_stiffness(mesh, coeff)?;
    let vol_mass = assemble_volume_mass(mesh);
    let bd_mass = assemble_boundary_mass(mesh);
    let v = assemble_v(mesh, quad)?;
    let DoubleLayer {
        matrix: k,
        vertices: boundary_vertices,
        ..
    } = assemble_k(mesh, quad)?;
    let w = assemble_w_from_single_layer(mesh, &v.matrix).matrix;

    let n = mesh.vertices.len();
    let m = mesh.boundary_tris.len();
    // s_i = <1, (1/2 - K) xi_i> on FEM dofs (zero off the trace),
    // s_{n+p} = <1, V chi_p> on BEM dofs; all are column sums of the blocks.
    let mut s = vec![0.0; n + m];
    for p in 0..m {
        for (j, val) in bd_mass.row(p) {
            s[j] += 0.5 * val;
        }
    }
    for (b, &vertex) in boundary_vertices.iter().enumerate() {
        let mut col = 0.0;
        for p in 0..m {
            col += k.get(p, b);
        }
        s[vertex] -= col;
    }
    for q in 0..m {
        let mut col = 0.0;
        for p in 0..m {
            col += v.matrix.get(p, q);
        }
        s[n + q] = col;
    }

    Ok(CouplingSystem {
        kind,
        mesh: mesh.clone(),
        coeff: *coeff,
        n,
        m,
        a,
        vol_mass,
        bd_mass,
        k,
        w,
        v: v.matrix,
        s,
        boundary_vertices,
    })
}

impl CouplingSystem {
    pub fn dim(&self) -> usize {
        self.n + self.m
    }

    fn bvi(&self, vertex: usize) -> Option<usize> {
        self.mesh.boundary_vertex_index[vertex]
    }

    /// gather FEM coefficients onto boundary vertices
    fn gather_trace(&self, x_fem: &[f64]) -> Vec<f64> {
        self.boundary_vertices.iter().map(|&v| x_fem[v]).collect()
    }

    /// y_fem[boundary vertex] += vals
    fn scatter_trace(&self, vals: &[f64], y_fem: &mut [f64], alpha: f64) {
        for (b, &v) in self.boundary_vertices.iter().enumerate() {
            y_fem[v] += alpha * vals[b];
        }
    }

    /// Block matvec of the (unstabilized) coupling operator.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim());
        let (xf, xb) = x.split_at(self.n);
        let mut out = vec![0.0; self.dim()];
        let (yf, yb) = out.split_at_mut(self.n);

        self.a.matvec_add(xf, yf, 1.0);
        match self.kind {
            CouplingKind::BielakMacCamy => {
                // (1,2) = 1/2 M^T - K^T ; (2,1) = -M (the bilinear form has
                // -<u, zeta>; the second block row of the displayed matrix in
                // the source carries a sign typo)
                self.bd_mass.matvec_t_add(xb, yf, 0.5);
                let kt = self.k.matvec_t(xb);
                self.scatter_trace(&kt, yf, -1.0);
                self.bd_mass.matvec_add(xf, yb, -1.0);
            }
            CouplingKind::Symmetric => {
                // (1,1) += W ; (1,2) = K^T - 1/2 M^T ; (2,1) = 1/2 M - K
                let tr = self.gather_trace(xf);
                let wtr = self.w.matvec(&tr);
                self.scatter_trace(&wtr, yf, 1.0);
                self.bd_mass.matvec_t_add(xb, yf, -0.5);
                let kt = self.k.matvec_t(xb);
                self.scatter_trace(&kt, yf, 1.0);
                self.bd_mass.matvec_add(xf, yb, 0.5);
                self.k.matvec_add(&tr, yb, -1.0);
            }
            CouplingKind::JohnsonNedelec => {
                // (1,2) = -M^T ; (2,1) = 1/2 M - K
                self.bd_mass.matvec_t_add(xb, yf, -1.0);
                self.bd_mass.matvec_add(xf, yb, 0.5);
                let tr = self.gather_trace(xf);
                self.k.matvec_add(&tr, yb, -1.0);
            }
        }
        self.v.matvec_add(xb, yb, 1.0);
        out
    }

    /// Transpose matvec (needed by norm estimators).
    pub fn apply_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim());
        let (xf, xb) = x.split_at(self.n);
        let mut out = vec![0.0; self.dim()];
        let (yf, yb) = out.split_at_mut(self.n);

        self.a.matvec_t_add(xf, yf, 1.0);
        match self.kind {
            CouplingKind::BielakMacCamy => {
                self.bd_mass.matvec_t_add(xb, yf, -1.0);
                self.bd_mass.matvec_add(xf, yb, 0.5);
                let tr = self.gather_trace(xf);
                self.k.matvec_add(&tr, yb, -1.0);
            }
            CouplingKind::Symmetric => {
                let tr = self.gather_trace(xf);
                let wtr = self.w.matvec_t(&tr);
                self.scatter_trace(&wtr, yf, 1.0);
                self.bd_mass.matvec_t_add(xb, yf, 0.5);
                let kt = self.k.matvec_t(xb);
                self.scatter_trace(&kt, yf, -1.0);
                self.bd_mass.matvec_add(xf, yb, -0.5);
                let tr2 = self.gather_trace(xf);
                self.k.matvec_add(&tr2, yb, 1.0);
            }
            CouplingKind::JohnsonNedelec => {
                self.bd_mass.matvec_t_add(xb, yf, 0.5);
                let kt = self.k.matvec_t(xb);
                self.scatter_trace(&kt, yf, -1.0);
                self.bd_mass.matvec_add(xf, yb, -1.0);
            }
        }
        self.v.matvec_t_add(xb, yb, 1.0);
        out
    }

    /// `B x = A_kind x + s (s^T x)`.
    pub fn apply_stabilized(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.apply(x);
        let sx: f64 = self.s.iter().zip(x).map(|(a, b)| a * b).sum();
        for (o, &si) in out.iter_mut().zip(&self.s) {
            *o += si * sx;
        }
        out
    }

    pub fn apply_stabilized_transpose(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.apply_transpose(x);
        let sx: f64 = self.s.iter().zip(x).map(|(a, b)| a * b).sum();
        for (o, &si) in out.iter_mut().zip(&self.s) {
            *o += si * sx;
        }
        out
    }

    /// Entry of the (unstabilized) block operator.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let n = self.n;
        match (i < n, j < n) {
            (true, true) => {
                let mut val = self.a.get(i, j);
                if self.kind == CouplingKind::Symmetric {
                    if let (Some(bi), Some(bj)) = (self.bvi(i), self.bvi(j)) {
                        val += self.w.get(bi, bj);
                    }
                }
                val
            }
            (true, false) => {
                let q = j - n;
                match self.kind {
                    CouplingKind::BielakMacCamy => {
                        0.5 * self.bd_mass.get(q, i)
                            - self.bvi(i).map_or(0.0, |b| self.k.get(q, b))
                    }
                    CouplingKind::Symmetric => {
                        self.bvi(i).map_or(0.0, |b| self.k.get(q, b))
                            - 0.5 * self.bd_mass.get(q, i)
                    }
                    CouplingKind::JohnsonNedelec => -self.bd_mass.get(q, i),
                }
            }
            (false, true) => {
                let p = i - n;
                match self.kind {
                    CouplingKind::BielakMacCamy => -self.bd_mass.get(p, j),
                    CouplingKind::Symmetric | CouplingKind::JohnsonNedelec => {
                        0.5 * self.bd_mass.get(p, j)
                            - self.bvi(j).map_or(0.0, |b| self.k.get(p, b))
                    }
                }
            }
            (false, false) => self.v.get(i - n, j - n),
        }
    }

    /// Entry of the stabilized operator `B = A_kind + s s^T`.
    pub fn entry_stabilized(&self, i: usize, j: usize) -> f64 {
        self.entry(i, j) + self.s[i] * self.s[j]
    }

    /// Dense materialization (small levels / oracles).
    pub fn materialize(&self, stabilized: bool) -> DenseMatrix {
        let d = self.dim();
        DenseMatrix::from_fn(d, d, |i, j| {
            if stabilized {
                self.entry_stabilized(i, j)
            } else {
                self.entry(i, j)
            }
        })
    }
}

/// Data for the right-hand sides, represented in the discrete spaces:
/// `f` as P1 volume coefficients, `u0` as P1 coefficients on boundary
/// vertices, `phi0` as P0 coefficients.
#[derive(Clone, Debug)]
pub struct CouplingData {
    pub f: Vec<f64>,
    pub u0: Vec<f64>,
    pub phi0: Vec<f64>,
}

impl CouplingData {
    pub fn zero(system: &CouplingSystem) -> Self {
        Self {
            f: vec![0.0; system.n],
            u0: vec![0.0; system.boundary_vertices.len()],
            phi0: vec![0.0; system.m],
        }
    }
}

/// Right-hand side of the chosen coupling for the given data.
pub fn assemble_rhs(system: &CouplingSystem, data: &CouplingData) -> Result<Vec<f64>> {
    let (n, m) = (system.n, system.m);
    let nb = system.boundary_vertices.len();
    if data.f.len() != n || data.u0.len() != nb || data.phi0.len() != m {
        return Err(Error::DimensionMismatch(format!(
            "rhs data sizes ({}, {}, {}) do not match ({n}, {nb}, {m})",
            data.f.len(),
            data.u0.len(),
            data.phi0.len()
        )));
    }
    let mut rhs = vec![0.0; n + m];
    let (rf, rb) = rhs.split_at_mut(n);

    // <f, psi> for all kinds
    system.vol_mass.matvec_add(&data.f, rf, 1.0);
    // <phi0, psi> = M^T phi0 for all kinds
    system.bd_mass.matvec_t_add(&data.phi0, rf, 1.0);

    // u0 extended by zero to the volume dof set
    let mut u0_ext = vec![0.0; n];
    for (b, &vertex) in system.boundary_vertices.iter().enumerate() {
        u0_ext[vertex] = data.u0[b];
    }

    match system.kind {
        CouplingKind::BielakMacCamy => {
            // -<u0, zeta>
            system.bd_mass.matvec_add(&u0_ext, rb, -1.0);
        }
        CouplingKind::Symmetric => {
            // v0 = phi0 + W u0 paired with psi; w0 = (1/2 - K) u0 with zeta
            let wu0 = system.w.matvec(&data.u0);
            system.scatter_trace(&wu0, rf, 1.0);
            system.bd_mass.matvec_add(&u0_ext, rb, 0.5);
            system.k.matvec_add(&data.u0, rb, -1.0);
        }
        CouplingKind::JohnsonNedelec => {
            system.bd_mass.matvec_add(&u0_ext, rb, 0.5);
            system.k.matvec_add(&data.u0, rb, -1.0);
        }
    }
    Ok(rhs)
}

/// Biorthogonal dual basis: elementwise P1 duals on one adjacent tetrahedron
/// for interior vertex dofs, on one adjacent boundary triangle for trace
/// dofs, and the rescaled characteristic functions for P0 dofs.
pub struct DualBasis {
    /// per vertex: Some((tet, local index)) for interior vertices
    vol_dual: Vec<Option<(usize, usize)>>,
    /// per vertex: Some((boundary tri, local index)) for boundary vertices
    trace_dual: Vec<Option<(usize, usize)>>,
}

/// A member of `L2(Omega) x L2(Gamma) x L2(Gamma)` with piecewise-polynomial
/// components (the image of a coefficient vector under the dual map).
#[derive(Clone, Debug, Default)]
pub struct DualFunction {
    /// tet -> discontinuous P1 coefficients in the tet's vertex order
    pub vol: BTreeMap<usize, [f64; 4]>,
    /// boundary tri -> discontinuous P1 coefficients
    pub surf: BTreeMap<usize, [f64; 3]>,
    /// P0 coefficients per boundary triangle
    pub p0: Vec<f64>,
}

pub fn build_dual_basis(mesh: &Mesh) -> DualBasis {
    let n = mesh.vertices.len();
    let mut vol_dual = vec![None; n];
    let mut trace_dual = vec![None; n];
    let mut tris_of_vertex: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (t, tri) in mesh.boundary_tris.iter().enumerate() {
        for &v in tri {
            tris_of_vertex[v].push(t);
        }
    }
    for v in 0..n {
        if mesh.boundary_vertex_index[v].is_some() {
            let t = tris_of_vertex[v][0];
            let local = mesh.boundary_tris[t].iter().position(|&u| u == v).unwrap();
            trace_dual[v] = Some((t, local));
        } else {
            let t = mesh.vertex_tets[v][0];
            let local = mesh.tets[t].iter().position(|&u| u == v).unwrap();
            vol_dual[v] = Some((t, local));
        }
    }
    DualBasis {
        vol_dual,
        trace_dual,
    }
}

impl DualBasis {
    /// `Lambda x`: the dual-basis combination as an explicit function.
    pub fn lambda(&self, mesh: &Mesh, x: &[f64]) -> DualFunction {
        let n = mesh.vertices.len();
        let m = mesh.boundary_tris.len();
        assert_eq!(x.len(), n + m);
        let mut out = DualFunction {
            p0: vec![0.0; m],
            ..Default::default()
        };
        for v in 0..n {
            if x[v] == 0.0 {
                continue;
            }
            if let Some((tet, local)) = self.vol_dual[v] {
                // inverse tet mass row: (20/vol)(I - J/5)
                let vol = mesh.tet_volume(tet);
                let entry = out.vol.entry(tet).or_insert([0.0; 4]);
                for b in 0..4 {
                    let c = if b == local { 16.0 / vol } else { -4.0 / vol };
                    entry[b] += x[v] * c;
                }
            } else if let Some((tri, local)) = self.trace_dual[v] {
                // inverse tri mass row: (12/area)(I - J/4)
                let area = mesh.tri_area(tri);
                let entry = out.surf.entry(tri).or_insert([0.0; 3]);
                for b in 0..3 {
                    let c = if b == local { 9.0 / area } else { -3.0 / area };
                    entry[b] += x[v] * c;
                }
            }
        }
        for p in 0..m {
            out.p0[p] = x[n + p] / mesh.tri_area(p);
        }
        out
    }

    /// `Lambda^T` applied to a discrete coupled function given by its
    /// coefficients: volume pairing for interior duals, trace pairing for
    /// trace duals, boundary-L2 pairing for the P0 duals.
    pub fn lambda_t(&self, mesh: &Mesh, u: &[f64], phi: &[f64]) -> Vec<f64> {
        let n = mesh.vertices.len();
        let m = mesh.boundary_tris.len();
        assert_eq!(u.len(), n);
        assert_eq!(phi.len(), m);
        let mut out = vec![0.0; n + m];
        for v in 0..n {
            if let Some((tet, local)) = self.vol_dual[v] {
                let vol = mesh.tet_volume(tet);
                let ids = mesh.tets[tet];
                // (M_T u_loc) then dot with the dual row of M_T^{-1}
                let mut mu = [0.0; 4];
                for a in 0..4 {
                    for b in 0..4 {
                        let w = if a == b { vol / 10.0 } else { vol / 20.0 };
                        mu[a] += w * u[ids[b]];
                    }
                }
                let mut val = 0.0;
                for b in 0..4 {
                    let c = if b == local { 16.0 / vol } else { -4.0 / vol };
                    val += c * mu[b];
                }
                out[v] = val;
            } else if let Some((tri, local)) = self.trace_dual[v] {
                let area = mesh.tri_area(tri);
                let ids = mesh.boundary_tris[tri];
                let mut mu = [0.0; 3];
                for a in 0..3 {
                    for b in 0..3 {
                        let w = if a == b { area / 6.0 } else { area / 12.0 };
                        mu[a] += w * u[ids[b]];
                    }
                }
                let mut val = 0.0;
                for b in 0..3 {
                    let c = if b == local { 9.0 / area } else { -3.0 / area };
                    val += c * mu[b];
                }
                out[v] = val;
            }
        }
        for p in 0..m {
            // <phi, chi_p / ||chi_p||^2> = phi_p * area / area
            out[n + p] = phi[p] * mesh.tri_area(p) / mesh.tri_area(p);
        }
        out
    }

    /// Right-hand-side functionals `<F, phi_j>` of a dual function against
    /// the Galerkin basis (hat functions, their traces, characteristics).
    pub fn pair_with_basis(&self, mesh: &Mesh, f: &DualFunction) -> Vec<f64> {
        let n = mesh.vertices.len();
        let m = mesh.boundary_tris.len();
        let mut out = vec![0.0; n + m];
        for (&tet, coeffs) in &f.vol {
            let vol = mesh.tet_volume(tet);
            let ids = mesh.tets[tet];
            for a in 0..4 {
                let mut val = 0.0;
                for b in 0..4 {
                    let w = if a == b { vol / 10.0 } else { vol / 20.0 };
                    val += w * coeffs[b];
                }
                out[ids[a]] += val;
            }
        }
        for (&tri, coeffs) in &f.surf {
            let area = mesh.tri_area(tri);
            let ids = mesh.boundary_tris[tri];
            for a in 0..3 {
                let mut val = 0.0;
                for b in 0..3 {
                    let w = if a == b { area / 6.0 } else { area / 12.0 };
                    val += w * coeffs[b];
                }
                out[ids[a]] += val;
            }
        }
        for p in 0..m {
            out[n + p] += f.p0[p] * mesh.tri_area(p);
        }
        out
    }

    /// Pair a single basis function with a single dual function (tests).
    pub fn pair_single(&self, mesh: &Mesh, basis: usize, dual: usize) -> f64 {
        let n = mesh.vertices.len();
        let m = mesh.boundary_tris.len();
        let mut e = vec![0.0; n + m];
        e[dual] = 1.0;
        let f = self.lambda(mesh, &e);
        let b = self.pair_with_basis(mesh, &f);
        b[basis]
    }

    /// `||Lambda||` as the square root of the largest eigenvalue of the dual
    /// Gram matrix (duals only interact within a shared element).
    pub fn norm_bound(&self, mesh: &Mesh) -> f64 {
        let n = mesh.vertices.len();
        let m = mesh.boundary_tris.len();
        let mut gram = TripletBuffer::new(n + m, n + m);
        // group duals by host element
        let mut by_tet: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
        let mut by_tri: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
        for v in 0..n {
            if let Some((tet, local)) = self.vol_dual[v] {
                by_tet.entry(tet).or_default().push((v, local));
            }
            if let Some((tri, local)) = self.trace_dual[v] {
                by_tri.entry(tri).or_default().push((v, local));
            }
        }
        for (&tet, hosted) in &by_tet {
            let vol = mesh.tet_volume(tet);
            for &(vi, li) in hosted {
                for &(vj, lj) in hosted {
                    // c_i^T M c_j = (M^{-1})_{li,lj}
                    let val = if li == lj { 16.0 / vol } else { -4.0 / vol };
                    gram.push(vi, vj, val);
                }
            }
        }
        for (&tri, hosted) in &by_tri {
            let area = mesh.tri_area(tri);
            for &(vi, li) in hosted {
                for &(vj, lj) in hosted {
                    let val = if li == lj { 9.0 / area } else { -3.0 / area };
                    gram.push(vi, vj, val);
                }
            }
        }
        for p in 0..m {
            gram.push(n + p, n + p, 1.0 / mesh.tri_area(p));
        }
        let g = gram.finalize();
        // power iteration
        let mut rng = SplitMix64::new(0x5EED);
        let mut v = rng.unit_vector(n + m);
        let mut lam = 0.0f64;
        for _ in 0..500 {
            let mut w = vec![0.0; n + m];
            g.matvec_add(&v, &mut w, 1.0);
            let nw = crate::util::norm2(&w);
            if nw == 0.0 {
                return 0.0;
            }
            let next = crate::util::dot(&v, &w);
            let done = (next - lam).abs() <= 1e-11 * next.abs();
            lam = next;
            v = w.iter().map(|x| x / nw).collect();
            if done {
                break;
            }
        }
        lam.sqrt()
    }
}

/// End-to-end check of the inverse representation `A^{-1} x = Lambda^T S_N
/// Lambda x`: route (i) is a dense LU solve, route (ii) the full pipeline
/// through the dual map, honest right-hand-side pairing, Galerkin solve, and
/// the dual transpose. Returns the max relative discrepancy.
pub fn check_representation_formula(
    system: &CouplingSystem,
    dual: &DualBasis,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let d = system.dim();
    let dense = system.materialize(false);
    let lu = lu_dense(&dense)?;
    let mut rng = SplitMix64::new(seed);
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let x: Vec<f64> = if trial == 0 {
            let mut e = vec![0.0; d];
            e[0] = 1.0;
            e
        } else {
            (0..d).map(|_| rng.next_sym()).collect()
        };
        let direct = lu.solve_refined(&dense, &x);
        // pipeline: F = Lambda x; b_j = <F, phi_j>; solve; Lambda^T of it
        let f = dual.lambda(&system.mesh, &x);
        let b = dual.pair_with_basis(&system.mesh, &f);
        let y = lu.solve_refined(&dense, &b);
        let (yu, yphi) = y.split_at(system.n);
        let recovered = dual.lambda_t(&system.mesh, yu, yphi);
        let num: f64 = direct
            .iter()
            .zip(&recovered)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let den = crate::util::norm2(&x);
        worst = worst.max(num / den);
    }
    Ok(worst)
}
