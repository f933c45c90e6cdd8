//! Dense kernel used by every other module: column-major matrices, SVD,
//! low-rank truncation, LU with partial pivoting, triangular solves, and
//! power-iteration spectral-norm estimates.

use crate::error::{Error, Result};
use crate::util::{norm2, SplitMix64, NORM_SEED};
use nalgebra::DMatrix;

/// Column-major dense matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    m: DMatrix<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            m: DMatrix::zeros(rows, cols),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            m: DMatrix::identity(n, n),
        }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> f64) -> Self {
        Self {
            m: DMatrix::from_fn(rows, cols, f),
        }
    }

    /// Takes entries in column-major order.
    pub fn from_col_major(rows: usize, cols: usize, entries: Vec<f64>) -> Self {
        assert_eq!(entries.len(), rows * cols);
        Self {
            m: DMatrix::from_vec(rows, cols, entries),
        }
    }

    pub fn rows(&self) -> usize {
        self.m.nrows()
    }

    pub fn cols(&self) -> usize {
        self.m.ncols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.m[(i, j)] = v;
    }

    pub fn add_assign_at(&mut self, i: usize, j: usize, v: f64) {
        self.m[(i, j)] += v;
    }

    /// Column-major entry slice.
    pub fn as_slice(&self) -> &[f64] {
        self.m.as_slice()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.m.column(j).iter().copied().collect()
    }

    pub fn set_column(&mut self, j: usize, v: &[f64]) {
        assert_eq!(v.len(), self.rows());
        for (i, &x) in v.iter().enumerate() {
            self.m[(i, j)] = x;
        }
    }

    pub fn transpose(&self) -> Self {
        Self {
            m: self.m.transpose(),
        }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        Self {
            m: &self.m * &other.m,
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            m: &self.m + &other.m,
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            m: &self.m - &other.m,
        }
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self {
            m: &self.m * alpha,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols());
        let mut out = vec![0.0; self.rows()];
        self.matvec_add(x, &mut out, 1.0);
        out
    }

    /// out += alpha * A x
    pub fn matvec_add(&self, x: &[f64], out: &mut [f64], alpha: f64) {
        let (r, c) = (self.rows(), self.cols());
        let a = self.m.as_slice();
        for j in 0..c {
            let xj = alpha * x[j];
            if xj != 0.0 {
                let col = &a[j * r..(j + 1) * r];
                for i in 0..r {
                    out[i] += col[i] * xj;
                }
            }
        }
    }

    /// out += alpha * A^T x
    pub fn matvec_t_add(&self, x: &[f64], out: &mut [f64], alpha: f64) {
        let (r, c) = (self.rows(), self.cols());
        assert_eq!(x.len(), r);
        let a = self.m.as_slice();
        for j in 0..c {
            let col = &a[j * r..(j + 1) * r];
            let mut s = 0.0;
            for i in 0..r {
                s += col[i] * x[i];
            }
            out[j] += alpha * s;
        }
    }

    pub fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols()];
        self.matvec_t_add(x, &mut out, 1.0);
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.m.iter().fold(0.0f64, |acc, &v| acc.max(v.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.m.norm()
    }

    /// Spectral norm via full SVD; intended for small matrices and oracles.
    pub fn norm2_exact(&self) -> f64 {
        if self.rows() == 0 || self.cols() == 0 {
            return 0.0;
        }
        svd(self).map(|(_, s, _)| s.first().copied().unwrap_or(0.0)).unwrap_or(f64::NAN)
    }

    /// Eigenvalues of a symmetric matrix, ascending.
    pub fn sym_eigenvalues(&self) -> Vec<f64> {
        let es = self.m.clone().symmetric_eigen();
        let mut ev: Vec<f64> = es.eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ev
    }

    pub(crate) fn from_dmatrix(m: DMatrix<f64>) -> Self {
        Self { m }
    }

    pub(crate) fn dmatrix(&self) -> &DMatrix<f64> {
        &self.m
    }
}

/// Rank-`r` factorization `X * Y^T`.
#[derive(Clone, Debug)]
pub struct LowRank {
    pub x: DenseMatrix,
    pub y: DenseMatrix,
}

impl LowRank {
    pub fn zero(rows: usize, cols: usize) -> Self {
        Self {
            x: DenseMatrix::zeros(rows, 0),
            y: DenseMatrix::zeros(cols, 0),
        }
    }

    pub fn new(x: DenseMatrix, y: DenseMatrix) -> Self {
        assert_eq!(x.cols(), y.cols());
        Self { x, y }
    }

    pub fn rank(&self) -> usize {
        self.x.cols()
    }

    pub fn rows(&self) -> usize {
        self.x.rows()
    }

    pub fn cols(&self) -> usize {
        self.y.rows()
    }

    pub fn to_dense(&self) -> DenseMatrix {
        DenseMatrix::from_dmatrix(self.x.dmatrix() * self.y.dmatrix().transpose())
    }

    /// out += alpha * X Y^T x
    pub fn matvec_add(&self, x: &[f64], out: &mut [f64], alpha: f64) {
        let t = self.y.matvec_t(x);
        self.x.matvec_add(&t, out, alpha);
    }

    /// out += alpha * Y X^T x
    pub fn matvec_t_add(&self, x: &[f64], out: &mut [f64], alpha: f64) {
        let t = self.x.matvec_t(x);
        self.y.matvec_add(&t, out, alpha);
    }

    /// Best rank-`r` SVD approximation of a dense block.
    pub fn from_dense_truncated(a: &DenseMatrix, r: usize) -> Result<Self> {
        let (u, s, v) = svd(a)?;
        let keep = r.min(s.len()).min(effective_rank(&s));
        let mut x = DenseMatrix::zeros(a.rows(), keep);
        let mut y = DenseMatrix::zeros(a.cols(), keep);
        for k in 0..keep {
            for i in 0..a.rows() {
                x.set(i, k, u.get(i, k) * s[k]);
            }
            for j in 0..a.cols() {
                y.set(j, k, v.get(j, k));
            }
        }
        Ok(Self { x, y })
    }
}

fn effective_rank(s: &[f64]) -> usize {
    let s0 = s.first().copied().unwrap_or(0.0);
    if s0 == 0.0 {
        return 0;
    }
    s.iter().take_while(|&&v| v > 1e-300 * s0.max(1.0) && v > 0.0).count()
}

/// Full (thin) SVD `A = U diag(s) V^T` with singular values sorted
/// descending, by one-sided Jacobi rotations. Chosen over the implicit-QR
/// SVD of the linear-algebra backend, which loses several digits on some
/// small rank-deficient matrices; Jacobi delivers machine-precision singular
/// values, which the truncation contracts here rely on.
pub fn svd(a: &DenseMatrix) -> Result<(DenseMatrix, Vec<f64>, DenseMatrix)> {
    if a.rows() < a.cols() {
        let (u, s, v) = svd(&a.transpose())?;
        return Ok((v, s, u));
    }
    let (m, n) = (a.rows(), a.cols());
    // columns of g converge to  u_i * sigma_i; v accumulates the rotations
    let mut g: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let max_sweeps = 60;
    // rounding floor of the column inner products: below cos(theta) of this
    // size, rotations only chase dot-product noise and the sweep cannot end
    let tol = 8.0 * f64::EPSILON * (m as f64).sqrt();
    let mut sweeps = 0;
    loop {
        sweeps += 1;
        if sweeps > max_sweeps {
            return Err(Error::SvdNonConvergence {
                iterations: max_sweeps,
            });
        }
        let mut rotated = false;
        for i in 0..n {
            for j in i + 1..n {
                let alpha = crate::util::dot(&g[i], &g[i]);
                let beta = crate::util::dot(&g[j], &g[j]);
                let gamma = crate::util::dot(&g[i], &g[j]);
                // squared, underflow-guarded comparison: tiny columns must
                // not keep the sweep alive with denormal-scale rotations
                if gamma * gamma <= tol * tol * alpha * beta + f64::MIN_POSITIVE {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for row in 0..m {
                    let gi = g[i][row];
                    let gj = g[j][row];
                    g[i][row] = c * gi - s * gj;
                    g[j][row] = s * gi + c * gj;
                }
                for row in 0..n {
                    let vi = v[i][row];
                    let vj = v[j][row];
                    v[i][row] = c * vi - s * vj;
                    v[j][row] = s * vi + c * vj;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = g.iter().map(|col| crate::util::norm2(col)).collect();
    order.sort_by(|&p, &q| norms[q].partial_cmp(&norms[p]).unwrap());
    let mut u = DenseMatrix::zeros(m, n);
    let mut vm = DenseMatrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    for (k, &col) in order.iter().enumerate() {
        let sigma = norms[col];
        s.push(sigma);
        if sigma > 0.0 {
            let ucol: Vec<f64> = g[col].iter().map(|x| x / sigma).collect();
            u.set_column(k, &ucol);
        }
        vm.set_column(k, &v[col]);
    }
    Ok((u, s, vm))
}

/// Truncate a low-rank factorization to rank `r` (best rank-`r` approximation
/// of the represented product, via thin QR of both factors and an SVD of the
/// small core). `r >= rank` returns the input unchanged.
pub fn truncate(lr: &LowRank, r: usize) -> LowRank {
    let k = lr.rank();
    if r >= k {
        return lr.clone();
    }
    if r == 0 || k == 0 {
        return LowRank::zero(lr.rows(), lr.cols());
    }
    let qr_x = lr.x.dmatrix().clone().qr();
    let qr_y = lr.y.dmatrix().clone().qr();
    let core = DenseMatrix::from_dmatrix(qr_x.r() * qr_y.r().transpose());
    let (u, s, v) = svd(&core).expect("jacobi svd of the recompression core");
    let keep = r.min(s.len());
    let qx = qr_x.q();
    let qy = qr_y.q();
    let mut xs = DMatrix::zeros(qx.nrows(), keep);
    let mut ys = DMatrix::zeros(qy.nrows(), keep);
    for kcol in 0..keep {
        let ucol = nalgebra::DVector::from_vec(u.column(kcol)) * s[kcol];
        xs.set_column(kcol, &(&qx * ucol));
        let vcol = nalgebra::DVector::from_vec(v.column(kcol));
        ys.set_column(kcol, &(&qy * vcol));
    }
    LowRank {
        x: DenseMatrix::from_dmatrix(xs),
        y: DenseMatrix::from_dmatrix(ys),
    }
}

/// Recompress a low-rank sum without changing the represented product more
/// than `rel_tol` (drops trailing singular values); used to keep intermediate
/// ranks bounded before the final fixed-rank cut.
pub fn recompress(lr: &LowRank, rel_tol: f64) -> LowRank {
    let k = lr.rank();
    if k == 0 {
        return lr.clone();
    }
    let qr_x = lr.x.dmatrix().clone().qr();
    let qr_y = lr.y.dmatrix().clone().qr();
    let core = DenseMatrix::from_dmatrix(qr_x.r() * qr_y.r().transpose());
    let (u, s, v) = svd(&core).expect("jacobi svd of the recompression core");
    let s0 = s.iter().fold(0.0f64, |a, &b| a.max(b));
    let keep = s.iter().take_while(|&&x| x > rel_tol * s0).count();
    if keep >= k {
        return lr.clone();
    }
    let qx = qr_x.q();
    let qy = qr_y.q();
    let mut xs = DMatrix::zeros(qx.nrows(), keep);
    let mut ys = DMatrix::zeros(qy.nrows(), keep);
    for kcol in 0..keep {
        let ucol = nalgebra::DVector::from_vec(u.column(kcol)) * s[kcol];
        xs.set_column(kcol, &(&qx * ucol));
        let vcol = nalgebra::DVector::from_vec(v.column(kcol));
        ys.set_column(kcol, &(&qy * vcol));
    }
    LowRank {
        x: DenseMatrix::from_dmatrix(xs),
        y: DenseMatrix::from_dmatrix(ys),
    }
}

/// LU factors of a square matrix with partial pivoting: `P A = L U` with unit
/// lower-triangular `L`.
#[derive(Clone, Debug)]
pub struct LuFactors {
    /// Packed L (below diagonal, unit diagonal implicit) and U (upper).
    lu: DenseMatrix,
    /// Row permutation: `perm[i]` is the original row in position `i` of `PA`.
    pub perm: Vec<usize>,
}

impl LuFactors {
    pub fn dim(&self) -> usize {
        self.lu.rows()
    }

    pub fn l(&self) -> DenseMatrix {
        let n = self.dim();
        DenseMatrix::from_fn(n, n, |i, j| {
            if i == j {
                1.0
            } else if i > j {
                self.lu.get(i, j)
            } else {
                0.0
            }
        })
    }

    pub fn u(&self) -> DenseMatrix {
        let n = self.dim();
        DenseMatrix::from_fn(n, n, |i, j| if i <= j { self.lu.get(i, j) } else { 0.0 })
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(b.len(), n);
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        // forward: L y = Pb (unit diagonal)
        for i in 0..n {
            for j in 0..i {
                x[i] -= self.lu.get(i, j) * x[j];
            }
        }
        // backward: U x = y
        for i in (0..n).rev() {
            for j in i + 1..n {
                x[i] -= self.lu.get(i, j) * x[j];
            }
            x[i] /= self.lu.get(i, i);
        }
        x
    }

    /// Solve with one step of iterative refinement using a compensated
    /// residual, pushing the forward error down to the order of the
    /// condition-independent pipeline noise. `a` must be the matrix this
    /// factorization was computed from.
    pub fn solve_refined(&self, a: &DenseMatrix, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        assert_eq!(a.rows(), n);
        let mut x = self.solve(b);
        for _ in 0..2 {
            let r = compensated_residual(a, &x, b);
            let c = self.solve(&r);
            for (xi, ci) in x.iter_mut().zip(&c) {
                *xi += ci;
            }
        }
        x
    }

    /// Solve `A^T x = b` (`U^T L^T P x = b`).
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y = b.to_vec();
        // U^T z = b (lower-triangular with U's diagonal)
        for i in 0..n {
            for j in 0..i {
                y[i] -= self.lu.get(j, i) * y[j];
            }
            y[i] /= self.lu.get(i, i);
        }
        // L^T w = z (unit upper-triangular)
        for i in (0..n).rev() {
            for j in i + 1..n {
                y[i] -= self.lu.get(j, i) * y[j];
            }
        }
        // x = P^T w
        let mut x = vec![0.0; n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = y[i];
        }
        x
    }
}

/// `b - A x` accumulated with error-free transformations (two-sum and fma
/// two-product), so the residual is accurate to roughly eps^2 relative and a
/// single refinement step suffices even for badly conditioned systems.
fn compensated_residual(a: &DenseMatrix, x: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.rows();
    let mut sum = b.to_vec();
    let mut comp = vec![0.0; n];
    for j in 0..a.cols() {
        let xj = x[j];
        if xj == 0.0 {
            continue;
        }
        for i in 0..n {
            let aij = a.get(i, j);
            // two-product: p + e = -aij * xj exactly
            let p = -aij * xj;
            let e = (-aij).mul_add(xj, -p);
            // two-sum: sum + p
            let s = sum[i] + p;
            let bp = s - sum[i];
            let err = (sum[i] - (s - bp)) + (p - bp);
            sum[i] = s;
            comp[i] += err + e;
        }
    }
    for i in 0..n {
        sum[i] += comp[i];
    }
    sum
}

/// Dense LU with partial pivoting. Fails when a pivot falls below
/// `1e-14 * max|A|`.
pub fn lu_dense(a: &DenseMatrix) -> Result<LuFactors> {
    let n = a.rows();
    if n != a.cols() {
        return Err(Error::DimensionMismatch(format!(
            "lu_dense needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let threshold = 1e-14 * a.max_abs();
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let mut p = k;
        let mut best = lu.get(k, k).abs();
        for i in k + 1..n {
            let v = lu.get(i, k).abs();
            if v > best {
                best = v;
                p = i;
            }
        }
        if best <= threshold {
            return Err(Error::Singular(format!(
                "pivot {best:.3e} below threshold at column {k}"
            )));
        }
        if p != k {
            perm.swap(k, p);
            for j in 0..n {
                let t = lu.get(k, j);
                lu.set(k, j, lu.get(p, j));
                lu.set(p, j, t);
            }
        }
        let piv = lu.get(k, k);
        for i in k + 1..n {
            let m = lu.get(i, k) / piv;
            lu.set(i, k, m);
            if m != 0.0 {
                for j in k + 1..n {
                    let v = lu.get(i, j) - m * lu.get(k, j);
                    lu.set(i, j, v);
                }
            }
        }
    }
    Ok(LuFactors { lu, perm })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Triangle {
    Lower,
    Upper,
}

/// Solve `T x = b` for a triangular matrix `T` (explicit diagonal).
pub fn solve_triangular(t: &DenseMatrix, b: &[f64], shape: Triangle) -> Result<Vec<f64>> {
    let n = t.rows();
    if t.cols() != n || b.len() != n {
        return Err(Error::DimensionMismatch(
            "solve_triangular: shape mismatch".into(),
        ));
    }
    let mut x = b.to_vec();
    match shape {
        Triangle::Lower => {
            for i in 0..n {
                for j in 0..i {
                    x[i] -= t.get(i, j) * x[j];
                }
                let d = t.get(i, i);
                if d == 0.0 {
                    return Err(Error::Singular(format!("zero diagonal at {i}")));
                }
                x[i] /= d;
            }
        }
        Triangle::Upper => {
            for i in (0..n).rev() {
                for j in i + 1..n {
                    x[i] -= t.get(i, j) * x[j];
                }
                let d = t.get(i, i);
                if d == 0.0 {
                    return Err(Error::Singular(format!("zero diagonal at {i}")));
                }
                x[i] /= d;
            }
        }
    }
    Ok(x)
}

/// Spectral-norm estimate of the linear map `apply` via power iteration on
/// `M^T M`, with a deterministic start vector.
#[derive(Clone, Copy, Debug)]
pub struct NormEstimate {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

pub fn spectral_norm_estimate(
    apply: &dyn Fn(&[f64]) -> Vec<f64>,
    apply_transpose: &dyn Fn(&[f64]) -> Vec<f64>,
    dim: usize,
    max_iters: usize,
    tol: f64,
) -> NormEstimate {
    if dim == 0 {
        return NormEstimate {
            value: 0.0,
            converged: true,
            iterations: 0,
        };
    }
    let mut rng = SplitMix64::new(NORM_SEED);
    let mut v = rng.unit_vector(dim);
    let mut sigma = 0.0f64;
    for it in 1..=max_iters {
        let w = apply(&v);
        let nw = norm2(&w);
        if nw == 0.0 {
            return NormEstimate {
                value: 0.0,
                converged: true,
                iterations: it,
            };
        }
        let z = apply_transpose(&w);
        let nz = norm2(&z);
        if nz == 0.0 {
            return NormEstimate {
                value: nw,
                converged: true,
                iterations: it,
            };
        }
        let next = nw;
        let rel = (next - sigma).abs() / next.max(f64::MIN_POSITIVE);
        sigma = next;
        v = z.iter().map(|x| x / nz).collect();
        if it > 1 && rel <= tol {
            return NormEstimate {
                value: sigma,
                converged: true,
                iterations: it,
            };
        }
    }
    NormEstimate {
        value: sigma,
        converged: false,
        iterations: max_iters,
    }
}

/// Convenience wrapper estimating the spectral norm of a dense matrix.
pub fn spectral_norm_of(a: &DenseMatrix, max_iters: usize, tol: f64) -> NormEstimate {
    spectral_norm_estimate(
        &|x| a.matvec(x),
        &|x| a.matvec_t(x),
        a.cols(),
        max_iters,
        tol,
    )
}


impl DenseMatrix {
    /// Complex eigenvalues (re, im) of a general square matrix; oracle use.
    pub fn dmatrix_eigs(&self) -> Vec<(f64, f64)> {
        self.m
            .clone()
            .complex_eigenvalues()
            .iter()
            .map(|c| (c.re, c.im))
            .collect()
    }
}

impl DenseMatrix {
    /// Owned copy of the underlying storage (oracle/test use).
    pub fn dmatrix_clone(&self) -> DMatrix<f64> {
        self.m.clone()
    }
}
