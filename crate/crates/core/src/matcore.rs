//! Dense symmetric linear algebra: containers, norms, orthonormalization,
//! truncated eigendecomposition and the exact rank-r projection.

use nalgebra::{DMatrix, DMatrixView, DVector, SymmetricEigen};

use crate::error::{dim_err, Error, Result};
use crate::kernels::{gemm, matmul, Op};
use crate::rng;

/// Matrices up to this dimension get their spectral norm from a full
/// eigendecomposition; larger ones use power iteration.
pub const FULL_EIG_MAX_DIM: usize = 64;

/// Relative drop tolerance used by [`orthonormalize`].
pub const ORTHO_DROP_TOL: f64 = 1e-12;

/// Dense symmetric `p × p` matrix. Entries satisfy `a[i][j] == a[j][i]`
/// bit-for-bit.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    data: DMatrix<f64>,
}

impl SymMatrix {
    pub fn zeros(p: usize) -> Self {
        assert!(p >= 1, "SymMatrix dimension must be positive");
        Self { data: DMatrix::zeros(p, p) }
    }

    pub fn identity(p: usize) -> Self {
        assert!(p >= 1, "SymMatrix dimension must be positive");
        Self { data: DMatrix::identity(p, p) }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        assert!(!diag.is_empty(), "SymMatrix dimension must be positive");
        Self { data: DMatrix::from_diagonal(&DVector::from_column_slice(diag)) }
    }

    /// Rank-one `u uᵀ`.
    pub fn outer(u: &[f64]) -> Self {
        let v = DVector::from_column_slice(u);
        Self::from_symmetrized(&v * v.transpose())
    }

    /// Builds from row-major nested rows, symmetrizing.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.len();
        if rows.iter().any(|r| r.len() != p) {
            return dim_err("rows do not form a square matrix");
        }
        symmetrize(&DMatrix::from_fn(p, p, |i, j| rows[i][j]))
    }

    /// Symmetrizes an arbitrary square matrix that is known to be square and
    /// non-empty.
    pub(crate) fn from_symmetrized(a: DMatrix<f64>) -> Self {
        let mut a = a;
        let p = a.nrows();
        for j in 0..p {
            for i in (j + 1)..p {
                let v = 0.5 * (a[(i, j)] + a[(j, i)]);
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        Self { data: a }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[(i, j)]
    }

    pub fn fro_norm(&self) -> f64 {
        fro_norm(self)
    }

    pub fn trace(&self) -> f64 {
        trace(self)
    }

    pub fn spectral_norm(&self) -> f64 {
        spectral_norm(self)
    }

    /// Frobenius inner product `⟨self, other⟩ = Tr(selfᵀ other)`.
    pub fn inner(&self, other: &SymMatrix) -> f64 {
        self.data.dot(&other.data)
    }

    /// `a·self + b·other`; elementwise, so exact symmetry is preserved.
    pub fn lincomb(&self, a: f64, other: &SymMatrix, b: f64) -> Result<SymMatrix> {
        if self.dim() != other.dim() {
            return dim_err(format!("{} vs {}", self.dim(), other.dim()));
        }
        Ok(Self { data: self.data.zip_map(&other.data, |x, y| a * x + b * y) })
    }

    pub fn scaled(&self, s: f64) -> SymMatrix {
        Self { data: &self.data * s }
    }

    /// Adds `s` to every diagonal entry.
    pub fn shift_diagonal(&mut self, s: f64) {
        for i in 0..self.dim() {
            self.data[(i, i)] += s;
        }
    }

    /// Largest absolute asymmetry, relative to the largest entry.
    pub fn relative_asymmetry(a: &DMatrix<f64>) -> f64 {
        let scale = a.amax();
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for j in 0..a.ncols() {
            for i in (j + 1)..a.nrows() {
                worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
            }
        }
        worst / scale
    }
}

/// `(A + Aᵀ)/2`.
pub fn symmetrize(a: &DMatrix<f64>) -> Result<SymMatrix> {
    if a.nrows() != a.ncols() {
        return dim_err(format!("{}x{} is not square", a.nrows(), a.ncols()));
    }
    if a.nrows() == 0 {
        return dim_err("matrix must be at least 1x1");
    }
    Ok(SymMatrix::from_symmetrized(a.clone()))
}

pub fn fro_norm(a: &SymMatrix) -> f64 {
    a.data.norm()
}

pub fn trace(a: &SymMatrix) -> f64 {
    a.data.trace()
}

/// `max |λ|`. Exact eigendecomposition up to [`FULL_EIG_MAX_DIM`], power
/// iteration on `A²` above it.
pub fn spectral_norm(a: &SymMatrix) -> f64 {
    if a.data.amax() == 0.0 {
        return 0.0;
    }
    if a.dim() <= FULL_EIG_MAX_DIM {
        return symmetric_eigen(a.as_matrix()).0.amax();
    }
    power_spectral_norm(a)
}

pub(crate) fn power_spectral_norm(a: &SymMatrix) -> f64 {
    let p = a.dim();
    let mut v = rng::gaussian_matrix(p, 1, 0x5eed_0f_9a3e ^ p as u64);
    v /= v.norm();
    let mut w = DMatrix::zeros(p, 1);
    let mut rayleigh = 0.0f64;
    for _ in 0..10 * p {
        gemm(1.0, &a.data, Op::N, &v, Op::N, 0.0, &mut w);
        // vᵀA²v with ‖v‖ = 1.
        let next = w.norm_squared();
        if next == 0.0 {
            return 0.0;
        }
        v.copy_from(&w);
        v /= next.sqrt();
        let converged = (next - rayleigh).abs() <= 1e-15 * next;
        rayleigh = next;
        if converged {
            break;
        }
    }
    rayleigh.sqrt()
}

/// Full symmetric eigendecomposition, eigenpairs ordered by descending
/// `|λ|`. Ties keep the solver's order.
pub(crate) fn symmetric_eigen(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(a.clone());
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].abs().total_cmp(&eig.eigenvalues[i].abs()));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Orthonormal basis `p × k` of a subspace of `R^p`.
#[derive(Clone, Debug, PartialEq)]
pub struct Subspace {
    basis: DMatrix<f64>,
}

impl Subspace {
    /// Wraps a basis the caller guarantees to be orthonormal.
    pub(crate) fn from_orthonormal(basis: DMatrix<f64>) -> Self {
        Self { basis }
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn k(&self) -> usize {
        self.basis.ncols()
    }

    /// `V Vᵀ`.
    pub fn projector(&self) -> DMatrix<f64> {
        matmul(&self.basis, Op::N, &self.basis, Op::T)
    }

    /// `V Vᵀ A` (left projection).
    pub fn project_left(&self, a: &SymMatrix) -> Result<DMatrix<f64>> {
        if a.dim() != self.dim() {
            return dim_err(format!("subspace in R^{} vs matrix {}", self.dim(), a.dim()));
        }
        let vta = matmul(&self.basis, Op::T, a.as_matrix(), Op::N);
        Ok(matmul(&self.basis, Op::N, &vta, Op::N))
    }

    /// Largest entry of `|VᵀV − I|`.
    pub fn orthonormality_defect(&self) -> f64 {
        orthonormality_defect(&self.basis)
    }
}

pub(crate) fn orthonormality_defect(basis: &DMatrix<f64>) -> f64 {
    let g = matmul(basis, Op::T, basis, Op::N);
    let k = g.nrows();
    (g - DMatrix::<f64>::identity(k, k)).amax()
}

/// Incremental Gram–Schmidt with re-orthogonalization (CGS2). Columns whose
/// residual norm falls to `drop_tol` or below are discarded.
pub(crate) struct OrthoBuilder {
    p: usize,
    k: usize,
    data: Vec<f64>,
    drop_tol: f64,
}

impl OrthoBuilder {
    pub fn new(p: usize, drop_tol: f64) -> Self {
        Self { p, k: 0, data: Vec::new(), drop_tol }
    }

    /// Reserves room for `max_cols` columns up front, so growth never
    /// over-allocates.
    pub fn with_capacity(p: usize, drop_tol: f64, max_cols: usize) -> Self {
        Self { p, k: 0, data: Vec::with_capacity(p * max_cols.min(p)), drop_tol }
    }

    pub fn len(&self) -> usize {
        self.k
    }

    pub fn view(&self) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.data, self.p, self.k)
    }

    fn project_out(&self, block: &mut DMatrix<f64>) {
        if self.k == 0 {
            return;
        }
        let q = self.view();
        let mut coeffs = DMatrix::zeros(self.k, block.ncols());
        for _ in 0..2 {
            gemm(1.0, &q, Op::T, &*block, Op::N, 0.0, &mut coeffs);
            gemm(-1.0, &q, Op::N, &coeffs, Op::N, 1.0, block);
        }
    }

    /// Appends the part of `block`'s column span not already covered.
    /// Returns the number of columns kept.
    pub fn push_block(&mut self, block: &DMatrix<f64>) -> usize {
        assert_eq!(block.nrows(), self.p);
        let start = self.k;
        let mut rest = block.clone();
        self.project_out(&mut rest);
        for j in 0..rest.ncols() {
            let mut v = rest.column(j).into_owned();
            for _ in 0..2 {
                for c in start..self.k {
                    let q = &self.data[c * self.p..(c + 1) * self.p];
                    let dot: f64 = q.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
                    for (vi, qi) in v.iter_mut().zip(q) {
                        *vi -= dot * qi;
                    }
                }
            }
            let norm = v.norm();
            if norm > self.drop_tol && norm.is_finite() {
                self.data.extend(v.iter().map(|x| x / norm));
                self.k += 1;
            }
        }
        self.k - start
    }

    /// Adds columns from `candidates` until the basis has `target` columns.
    pub fn complete_with(&mut self, candidates: &DMatrix<f64>, target: usize) {
        for j in 0..candidates.ncols() {
            if self.k >= target {
                return;
            }
            let col = candidates.columns(j, 1).into_owned();
            self.push_block(&col);
        }
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        DMatrix::from_vec(self.p, self.k, self.data)
    }
}

/// Orthonormal basis for the column span of `b`. Numerically dependent
/// columns (residual below `1e-12·‖B‖_F`) are dropped, so `k` may shrink.
pub fn orthonormalize(b: &DMatrix<f64>) -> Result<Subspace> {
    let (p, k) = b.shape();
    if k > p {
        return dim_err(format!("{k} columns exceed dimension {p}"));
    }
    let mut builder = OrthoBuilder::new(p, ORTHO_DROP_TOL * b.norm());
    builder.push_block(b);
    Ok(Subspace::from_orthonormal(builder.into_matrix()))
}

/// Factorized symmetric matrix `U diag(s) Uᵀ` with orthonormal `U`.
/// The spectrum is signed and sorted by descending magnitude.
#[derive(Clone, Debug, PartialEq)]
pub struct LowRankFactors {
    basis: DMatrix<f64>,
    spectrum: DVector<f64>,
}

impl LowRankFactors {
    /// Validates orthonormality (1e-10 per entry) and sorts by `|s|`.
    pub fn new(basis: DMatrix<f64>, spectrum: Vec<f64>) -> Result<Self> {
        if basis.ncols() != spectrum.len() {
            return dim_err(format!(
                "basis has {} columns, spectrum has {} values",
                basis.ncols(),
                spectrum.len()
            ));
        }
        if basis.nrows() == 0 {
            return dim_err("basis must have at least one row");
        }
        let defect = orthonormality_defect(&basis);
        if defect > 1e-10 {
            return Err(Error::Validation(format!("basis not orthonormal (defect {defect:e})")));
        }
        let mut order: Vec<usize> = (0..spectrum.len()).collect();
        order.sort_by(|&i, &j| spectrum[j].abs().total_cmp(&spectrum[i].abs()));
        let basis = DMatrix::from_fn(basis.nrows(), order.len(), |r, c| basis[(r, order[c])]);
        let spectrum = DVector::from_iterator(order.len(), order.iter().map(|&i| spectrum[i]));
        Ok(Self { basis, spectrum })
    }

    pub(crate) fn from_sorted_parts(basis: DMatrix<f64>, spectrum: DVector<f64>) -> Self {
        debug_assert_eq!(basis.ncols(), spectrum.len());
        Self { basis, spectrum }
    }

    /// The zero matrix in `R^{p×p}` (rank 0).
    pub fn zero(p: usize) -> Self {
        Self { basis: DMatrix::zeros(p, 0), spectrum: DVector::zeros(0) }
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn rank(&self) -> usize {
        self.spectrum.len()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn spectrum(&self) -> &DVector<f64> {
        &self.spectrum
    }

    pub fn trace(&self) -> f64 {
        self.spectrum.sum()
    }

    pub fn spectral_norm(&self) -> f64 {
        self.spectrum.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// `U diag(s) Uᵀ`, symmetrized.
    pub fn reconstruct(&self) -> SymMatrix {
        let p = self.dim();
        let mut scaled = self.basis.clone();
        for (j, s) in self.spectrum.iter().enumerate() {
            scaled.column_mut(j).scale_mut(*s);
        }
        let mut out = DMatrix::zeros(p, p);
        gemm(1.0, &scaled, Op::N, &self.basis, Op::T, 0.0, &mut out);
        SymMatrix::from_symmetrized(out)
    }

    /// Applies `U diag(s) Uᵀ` to a block.
    pub fn apply(&self, g: &DMatrix<f64>) -> DMatrix<f64> {
        let mut coeffs = matmul(&self.basis, Op::T, g, Op::N);
        for (i, s) in self.spectrum.iter().enumerate() {
            coeffs.row_mut(i).scale_mut(*s);
        }
        matmul(&self.basis, Op::N, &coeffs, Op::N)
    }
}

/// Top-`rank` eigenpairs (by `|λ|`) of the symmetric matrix
/// `C K Cᵀ`, where `C` is an orthonormal `p × k` basis and `K` is `k × k`.
pub(crate) fn compress(basis: &DMatrix<f64>, core: &DMatrix<f64>, rank: usize) -> LowRankFactors {
    let k = core.nrows();
    if k == 0 {
        return LowRankFactors::zero(basis.nrows());
    }
    let core = SymMatrix::from_symmetrized(core.clone());
    let (values, vectors) = symmetric_eigen(core.as_matrix());
    let keep = rank.min(k);
    let top = vectors.columns(0, keep);
    let new_basis = matmul(basis, Op::N, &top, Op::N);
    LowRankFactors::from_sorted_parts(new_basis, values.rows(0, keep).into_owned())
}

/// Spectral and Frobenius norms of `a − b` computed on the joint column
/// space, without forming `p × p` matrices.
pub fn difference_norms(a: &LowRankFactors, b: &LowRankFactors) -> Result<(f64, f64)> {
    if a.dim() != b.dim() {
        return dim_err(format!("{} vs {}", a.dim(), b.dim()));
    }
    let p = a.dim();
    let joint = DMatrix::from_fn(p, a.rank() + b.rank(), |i, j| {
        if j < a.rank() {
            a.basis[(i, j)]
        } else {
            b.basis[(i, j - a.rank())]
        }
    });
    let mut builder = OrthoBuilder::new(p, ORTHO_DROP_TOL * joint.norm().max(1.0));
    builder.push_block(&joint);
    let c = builder.into_matrix();
    if c.ncols() == 0 {
        return Ok((0.0, 0.0));
    }
    let core = core_in_basis(&c, a) - core_in_basis(&c, b);
    let (values, _) = symmetric_eigen(&SymMatrix::from_symmetrized(core).into_matrix());
    Ok((values.amax(), values.norm()))
}

/// `Cᵀ U diag(s) Uᵀ C`.
pub(crate) fn core_in_basis(c: &DMatrix<f64>, f: &LowRankFactors) -> DMatrix<f64> {
    let mut cu = matmul(c, Op::T, &f.basis, Op::N);
    let plain = cu.clone();
    for (j, s) in f.spectrum.iter().enumerate() {
        cu.column_mut(j).scale_mut(*s);
    }
    matmul(&cu, Op::N, &plain, Op::T)
}

/// The `r` eigenpairs of largest `|λ|`, from a full eigendecomposition.
pub fn truncated_eig(a: &SymMatrix, r: usize) -> Result<LowRankFactors> {
    if r == 0 || r > a.dim() {
        return dim_err(format!("rank {r} outside 1..={}", a.dim()));
    }
    let (values, vectors) = symmetric_eigen(a.as_matrix());
    Ok(LowRankFactors::from_sorted_parts(
        vectors.columns(0, r).into_owned(),
        values.rows(0, r).into_owned(),
    ))
}

/// Frobenius-optimal rank-`r` approximation (keeps the `r` largest `|λ|`).
pub fn exact_rank_projection(a: &SymMatrix, r: usize) -> Result<SymMatrix> {
    Ok(truncated_eig(a, r)?.reconstruct())
}

/// Numerical rank with tolerance `rel_tol·‖A‖₂`.
pub fn numerical_rank(a: &SymMatrix, rel_tol: f64) -> usize {
    let (values, _) = symmetric_eigen(a.as_matrix());
    let top = values.amax();
    if top == 0.0 {
        return 0;
    }
    values.iter().filter(|v| v.abs() > rel_tol * top).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::gaussian_matrix;
    use proptest::prelude::*;

    fn random_sym(p: usize, seed: u64) -> SymMatrix {
        symmetrize(&gaussian_matrix(p, p, seed)).unwrap()
    }

    /// Independent oracle: cyclic Jacobi eigenvalue iteration.
    fn jacobi_eigenvalues(a: &SymMatrix) -> Vec<f64> {
        let mut m = a.as_matrix().clone();
        let n = m.nrows();
        for _ in 0..100 {
            let mut off = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        off += m[(i, j)] * m[(i, j)];
                    }
                }
            }
            if off < 1e-26 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    if m[(p, q)].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * m[(p, q)]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let mkp = m[(k, p)];
                        let mkq = m[(k, q)];
                        m[(k, p)] = c * mkp - s * mkq;
                        m[(k, q)] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let mpk = m[(p, k)];
                        let mqk = m[(q, k)];
                        m[(p, k)] = c * mpk - s * mqk;
                        m[(q, k)] = s * mpk + c * mqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| m[(i, i)]).collect();
        ev.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
        ev
    }

    #[test]
    fn symmetrize_examples() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 4.0, 3.0]);
        let s = symmetrize(&a).unwrap();
        assert_eq!(s.as_matrix(), &DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 3.0, 3.0]));
        let sym = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 3.0, 3.0]);
        assert_eq!(symmetrize(&sym).unwrap().as_matrix(), &sym);
        let anti = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert_eq!(symmetrize(&anti).unwrap().as_matrix(), &DMatrix::zeros(2, 2));
        assert!(matches!(symmetrize(&DMatrix::zeros(2, 3)), Err(Error::Dimension(_))));
    }

    #[test]
    fn norm_and_trace_examples() {
        assert_eq!(SymMatrix::identity(3).spectral_norm(), 1.0);
        assert!((SymMatrix::from_diagonal(&[3.0, -5.0, 1.0]).spectral_norm() - 5.0).abs() < 1e-12);
        assert_eq!(SymMatrix::identity(4).fro_norm(), 2.0);
        assert_eq!(SymMatrix::zeros(4).fro_norm(), 0.0);
        assert_eq!(SymMatrix::zeros(4).spectral_norm(), 0.0);
        let u = [1.0, 2.0, 2.0];
        let uu = SymMatrix::outer(&u);
        assert!((uu.fro_norm() - 9.0).abs() < 1e-12);
        assert!((uu.trace() - 9.0).abs() < 1e-12);
        assert_eq!(SymMatrix::identity(5).trace(), 5.0);
        assert_eq!(SymMatrix::zeros(5).trace(), 0.0);
    }

    #[test]
    fn spectral_norm_matches_jacobi_oracle() {
        let a = random_sym(8, 7);
        let oracle = jacobi_eigenvalues(&a)[0].abs();
        assert!((a.spectral_norm() - oracle).abs() <= 1e-8 * oracle);
    }

    #[test]
    fn power_iteration_path_matches_full_eig() {
        let a = random_sym(90, 21);
        let exact = symmetric_eigen(a.as_matrix()).0.amax();
        let power = power_spectral_norm(&a);
        assert!((power - exact).abs() <= 1e-8 * exact, "{power} vs {exact}");
        // ±λ tie at the top is harmless for power iteration on A².
        let mut d = vec![1.0; 100];
        d[3] = 7.0;
        d[50] = -7.0;
        let tie = SymMatrix::from_diagonal(&d);
        assert!((tie.spectral_norm() - 7.0).abs() < 1e-8 * 7.0);
    }

    #[test]
    fn orthonormalize_examples() {
        let e = DMatrix::<f64>::identity(5, 3);
        let s = orthonormalize(&e).unwrap();
        assert_eq!(s.k(), 3);
        assert!(s.orthonormality_defect() < 1e-10);
        assert!((s.projector() - &e * e.transpose()).abs().max() < 1e-12);

        let mut b = gaussian_matrix(6, 3, 4);
        let c0 = b.column(0).into_owned();
        b.set_column(2, &c0);
        assert_eq!(orthonormalize(&b).unwrap().k(), 2);

        assert!(matches!(orthonormalize(&DMatrix::zeros(3, 4)), Err(Error::Dimension(_))));
    }

    #[test]
    fn orthonormalize_matches_pseudoinverse_projector() {
        let b = gaussian_matrix(10, 3, 1);
        let pinv = b.clone().pseudo_inverse(1e-14).unwrap();
        let oracle = &b * pinv;
        let s = orthonormalize(&b).unwrap();
        assert!((s.projector() - oracle).abs().max() < 1e-8);
    }

    #[test]
    fn truncated_eig_examples() {
        let d = SymMatrix::from_diagonal(&[5.0, -4.0, 1.0]);
        let f = truncated_eig(&d, 2).unwrap();
        assert!((f.spectrum()[0] - 5.0).abs() < 1e-12);
        assert!((f.spectrum()[1] + 4.0).abs() < 1e-12);

        let f = truncated_eig(&SymMatrix::identity(3), 1).unwrap();
        assert!((f.spectrum()[0] - 1.0).abs() < 1e-12);
        assert!((f.basis().norm() - 1.0).abs() < 1e-12);

        assert!(truncated_eig(&d, 4).is_err());
        assert!(truncated_eig(&d, 0).is_err());
    }

    #[test]
    fn truncation_error_matches_oracle_tail() {
        let a = random_sym(12, 3);
        let oracle = jacobi_eigenvalues(&a);
        let tail = oracle[4..].iter().map(|x| x * x).sum::<f64>().sqrt();
        let pr = exact_rank_projection(&a, 4).unwrap();
        let err = a.lincomb(1.0, &pr, -1.0).unwrap().fro_norm();
        assert!((err - tail).abs() < 1e-9);
    }

    #[test]
    fn exact_projection_examples() {
        let d = SymMatrix::from_diagonal(&[5.0, -4.0, 1.0]);
        let pr = exact_rank_projection(&d, 2).unwrap();
        let want = SymMatrix::from_diagonal(&[5.0, -4.0, 0.0]);
        assert!((pr.as_matrix() - want.as_matrix()).abs().max() < 1e-12);

        let u = gaussian_matrix(7, 2, 5);
        let a = symmetrize(&(&u * DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, -1.5])) * u.transpose()))
            .unwrap();
        let pr = exact_rank_projection(&a, 2).unwrap();
        assert!((pr.as_matrix() - a.as_matrix()).abs().max() < 1e-10);
    }

    #[test]
    fn exact_projection_beats_random_rank3_competitors() {
        let a = random_sym(10, 8);
        let best = a.lincomb(1.0, &exact_rank_projection(&a, 3).unwrap(), -1.0).unwrap().fro_norm();
        for t in 0..100 {
            let u = gaussian_matrix(10, 3, 1000 + t);
            let s = gaussian_matrix(3, 1, 5000 + t);
            let core = DMatrix::from_diagonal(&s.column(0).into_owned());
            let b = symmetrize(&(&u * core * u.transpose())).unwrap();
            let err = a.lincomb(1.0, &b, -1.0).unwrap().fro_norm();
            assert!(best <= err);
        }
    }

    #[test]
    fn difference_norms_match_dense() {
        let a = truncated_eig(&random_sym(15, 1), 3).unwrap();
        let b = truncated_eig(&random_sym(15, 2), 2).unwrap();
        let (spec, fro) = difference_norms(&a, &b).unwrap();
        let dense = a.reconstruct().lincomb(1.0, &b.reconstruct(), -1.0).unwrap();
        assert!((spec - dense.spectral_norm()).abs() < 1e-10);
        assert!((fro - dense.fro_norm()).abs() < 1e-10);
        let (z, _) = difference_norms(&a, &a).unwrap();
        assert!(z < 1e-12);
    }

    #[test]
    fn low_rank_factors_validate_orthonormality() {
        let bad = DMatrix::from_element(3, 1, 1.0);
        assert!(matches!(LowRankFactors::new(bad, vec![1.0]), Err(Error::Validation(_))));
        let good = DMatrix::<f64>::identity(3, 2);
        let f = LowRankFactors::new(good, vec![1.0, -3.0]).unwrap();
        assert_eq!(f.spectrum()[0], -3.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn projection_rank_and_eckart_young(p in 2usize..=12, seed in 0u64..1000, r_frac in 0.0f64..1.0) {
            let r = 1 + ((p - 1) as f64 * r_frac) as usize;
            let a = random_sym(p, seed);
            let pr = exact_rank_projection(&a, r).unwrap();
            prop_assert!(numerical_rank(&pr, 1e-8) <= r);
            let oracle = jacobi_eigenvalues(&a);
            let tail = oracle[r..].iter().map(|x| x * x).sum::<f64>().sqrt();
            let err = a.lincomb(1.0, &pr, -1.0).unwrap().fro_norm();
            prop_assert!((err - tail).abs() < 1e-9);
            prop_assert!(pr.as_matrix() == &pr.as_matrix().transpose());
        }

        #[test]
        fn projector_is_idempotent(p in 3usize..=20, k in 1usize..=3, seed in 0u64..1000) {
            let b = gaussian_matrix(p, k.min(p), seed);
            let proj = orthonormalize(&b).unwrap().projector();
            prop_assert!((&proj * &proj - &proj).abs().max() < 1e-8);
        }

        #[test]
        fn norm_sandwich(p in 1usize..=70, seed in 0u64..1000) {
            let a = random_sym(p, seed);
            let s = a.spectral_norm();
            let f = a.fro_norm();
            prop_assert!(s <= f * (1.0 + 1e-12));
            prop_assert!(f <= (p as f64).sqrt() * s * (1.0 + 1e-12));
        }
    }
}
