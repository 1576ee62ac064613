//! Randomized block Krylov SVD for symmetric operators.
//!
//! One driver, [`block_krylov`], serves every operator: explicit matrices
//! ([`bksvd`]), factored low-rank matrices, and the implicit bias-corrected
//! gradient ([`mbksvd`]) whose products are formed sample by sample and never
//! touch a `p × p` buffer.
//!
//! The driver spans the Krylov space `A G, A³ G, …, A^{2q-1} G`, orthonormal
//! basis `Q` (CGS2 with column dropping), then runs Rayleigh–Ritz on
//! `Qᵀ A² Q = (AQ)ᵀ(AQ)` and returns the top `rank` Ritz vectors.
//!
//! Each new block is `A²` applied to the freshly orthonormalized columns of
//! the previous one rather than to the raw power. The span is the same, the
//! blocks stay well conditioned, and the intermediate `A·Q_j` is exactly the
//! slice of `AQ` that Rayleigh–Ritz needs, so the whole solve costs `2q`
//! block products. The loop stops early once a block adds no new direction
//! (the Krylov space has become invariant).

use nalgebra::DMatrix;

use crate::error::{dim_err, Error, Result};
use crate::kernels::{matmul, weighted_gram_apply, Op};
use crate::matcore::{symmetric_eigen, LowRankFactors, OrthoBuilder, Subspace, SymMatrix};
use crate::rng;
use crate::sensing::{apply_adjoint, RankOneEnsemble};

/// Extra columns beyond the target rank.
pub const BLOCK_OVERSAMPLE: usize = 5;

/// Drop tolerance for Krylov columns; every block has unit Frobenius norm.
const KRYLOV_DROP_TOL: f64 = 1e-12;

/// A symmetric linear operator on `R^p` applied to blocks of vectors.
pub trait SymOperator {
    fn dim(&self) -> usize;
    /// `A·G` for `G` of shape `p × b`.
    fn apply_block(&self, g: &DMatrix<f64>) -> Result<DMatrix<f64>>;
}

impl SymOperator for SymMatrix {
    fn dim(&self) -> usize {
        SymMatrix::dim(self)
    }

    fn apply_block(&self, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if g.nrows() != self.dim() {
            return dim_err(format!("block has {} rows, operator is {}", g.nrows(), self.dim()));
        }
        Ok(matmul(self.as_matrix(), Op::N, g, Op::N))
    }
}

impl SymOperator for LowRankFactors {
    fn dim(&self) -> usize {
        LowRankFactors::dim(self)
    }

    fn apply_block(&self, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if g.nrows() != self.dim() {
            return dim_err(format!("block has {} rows, operator is {}", g.nrows(), self.dim()));
        }
        Ok(self.apply(g))
    }
}

/// `C K Cᵀ` with orthonormal `C` (`p × k`) and symmetric `K` (`k × k`).
#[derive(Clone, Debug)]
pub struct FactoredSym {
    pub basis: DMatrix<f64>,
    pub core: DMatrix<f64>,
}

impl SymOperator for FactoredSym {
    fn dim(&self) -> usize {
        self.basis.nrows()
    }

    fn apply_block(&self, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if g.nrows() != self.dim() {
            return dim_err(format!("block has {} rows, operator is {}", g.nrows(), self.dim()));
        }
        let cg = matmul(&self.basis, Op::T, g, Op::N);
        let kcg = matmul(&self.core, Op::N, &cg, Op::N);
        Ok(matmul(&self.basis, Op::N, &kcg, Op::N))
    }
}

/// Block Krylov parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct KrylovParams {
    pub rank: usize,
    pub block: usize,
    pub accuracy: f64,
    pub depth: usize,
    pub seed: u64,
}

/// `max(2, ⌈C·ln p / √ϑ⌉)`.
pub fn default_depth(p: usize, accuracy: f64, c: f64) -> usize {
    let q = (c * (p.max(2) as f64).ln() / accuracy.sqrt()).ceil();
    (q as usize).max(2)
}

impl KrylovParams {
    /// `block = rank + 5`, depth from [`default_depth`] with `C = 1`.
    pub fn new(p: usize, rank: usize, accuracy: f64, seed: u64) -> Result<Self> {
        if !(accuracy > 0.0 && accuracy < 1.0) {
            return Err(Error::InvalidArgument(format!("accuracy {accuracy} outside (0, 1)")));
        }
        if rank == 0 {
            return Err(Error::InvalidArgument("rank must be positive".into()));
        }
        Ok(Self { rank, block: rank + BLOCK_OVERSAMPLE, accuracy, depth: default_depth(p, accuracy, 1.0), seed })
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = depth;
        self
    }

    fn validate(&self, p: usize) -> Result<()> {
        if self.rank == 0 || self.rank > p {
            return dim_err(format!("rank {} outside 1..={p}", self.rank));
        }
        if self.block <= self.rank {
            return Err(Error::InvalidArgument(format!("block {} must exceed rank {}", self.block, self.rank)));
        }
        if self.depth == 0 {
            return Err(Error::InvalidArgument("depth must be at least 1".into()));
        }
        if !(self.accuracy > 0.0 && self.accuracy < 1.0) {
            return Err(Error::InvalidArgument(format!("accuracy {} outside (0, 1)", self.accuracy)));
        }
        Ok(())
    }
}

/// The bias-corrected gradient
/// `Δ = (1/m) Σ d_i x_i x_iᵀ − c·I`, kept implicit.
#[derive(Clone, Debug)]
pub struct ImplicitGradient<'a> {
    pub ensemble: &'a RankOneEnsemble,
    pub residuals: Vec<f64>,
    pub shift: f64,
}

impl<'a> ImplicitGradient<'a> {
    pub fn new(ensemble: &'a RankOneEnsemble, residuals: Vec<f64>, shift: f64) -> Result<Self> {
        if residuals.len() != ensemble.count() {
            return dim_err(format!("{} residuals for {} samples", residuals.len(), ensemble.count()));
        }
        Ok(Self { ensemble, residuals, shift })
    }
}

/// `Δ·G = (1/m) Σ_j d_j x_j (x_jᵀ G) − c·G`. The per-sample terms are
/// accumulated over all `m` samples, then the shift is applied once.
/// Memory beyond the output is `O(p·b)` scratch.
pub fn implicit_apply(delta: &ImplicitGradient<'_>, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let e = delta.ensemble;
    if g.nrows() != e.dim() {
        return dim_err(format!("block has {} rows, ensemble dimension is {}", g.nrows(), e.dim()));
    }
    let b = g.ncols();
    let mut acc = DMatrix::zeros(e.dim(), b);
    let p = e.dim();
    e.for_each_slice(|start, x| {
        let c = x.len() / p;
        weighted_gram_apply(x, p, &delta.residuals[start..start + c], g, &mut acc);
    });
    let m = e.count() as f64;
    acc.zip_apply(g, |a, gi| *a = *a / m - delta.shift * gi);
    Ok(acc)
}

impl SymOperator for ImplicitGradient<'_> {
    fn dim(&self) -> usize {
        self.ensemble.dim()
    }

    fn apply_block(&self, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        implicit_apply(self, g)
    }
}

/// Dense `Δ`, symmetrized. `O(m p²)`.
pub fn materialize_gradient(delta: &ImplicitGradient<'_>) -> Result<SymMatrix> {
    let m = delta.ensemble.count() as f64;
    let mut dense = apply_adjoint(delta.ensemble, &delta.residuals)?.scaled(1.0 / m);
    dense.shift_diagonal(-delta.shift);
    Ok(dense)
}

fn rescale(block: &mut DMatrix<f64>) {
    let n = block.norm();
    if n > 0.0 && n.is_finite() {
        *block /= n;
    }
}

/// Randomized block Krylov on any symmetric operator. Returns an
/// orthonormal `p × rank` basis approximating the top-`rank` singular
/// subspace.
pub fn block_krylov<A: SymOperator + ?Sized>(op: &A, params: &KrylovParams) -> Result<Subspace> {
    Ok(block_krylov_image(op, params)?.0)
}

/// [`block_krylov`] together with `A·Z`, which falls out of the
/// Rayleigh–Ritz step at no extra operator cost.
pub fn block_krylov_image<A: SymOperator + ?Sized>(op: &A, params: &KrylovParams) -> Result<(Subspace, DMatrix<f64>)> {
    let p = op.dim();
    params.validate(p)?;
    let start = rng::gaussian_matrix(p, params.block, params.seed);

    let mut builder = OrthoBuilder::with_capacity(p, KRYLOV_DROP_TOL, params.depth * params.block);
    let mut next = op.apply_block(&start)?;
    rescale(&mut next);
    builder.push_block(&next);
    // A·Q, filled block by block as the Krylov loop produces it.
    let mut aq = DMatrix::zeros(p, 0);
    for _ in 2..=params.depth {
        let done = aq.ncols();
        if builder.len() == p || builder.len() == done {
            break;
        }
        let fresh = builder.view().columns(done, builder.len() - done).into_owned();
        let half = op.apply_block(&fresh)?;
        next = op.apply_block(&half)?;
        aq = append_columns(aq, &half);
        rescale(&mut next);
        if builder.push_block(&next) == 0 {
            break;
        }
    }
    if builder.len() < params.rank {
        // Degenerate operator (e.g. zero); any orthonormal completion works.
        builder.complete_with(&start, params.rank);
        builder.complete_with(&DMatrix::identity(p, p), params.rank);
    }
    let done = aq.ncols();
    if builder.len() > done {
        let rest = builder.view().columns(done, builder.len() - done).into_owned();
        aq = append_columns(aq, &op.apply_block(&rest)?);
    }
    let q = builder.into_matrix();

    // Rayleigh–Ritz on Qᵀ A² Q.
    let ritz = matmul(&aq, Op::T, &aq, Op::N);
    let (_, vectors) = symmetric_eigen(&SymMatrix::from_symmetrized(ritz).into_matrix());
    let top = vectors.columns(0, params.rank);
    let z = matmul(&q, Op::N, &top, Op::N);
    let az = matmul(&aq, Op::N, &top, Op::N);
    Ok((Subspace::from_orthonormal(z), az))
}

fn append_columns(a: DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let k = a.ncols();
    let mut out = a.resize_horizontally(k + b.ncols(), 0.0);
    out.columns_mut(k, b.ncols()).copy_from(b);
    out
}

/// Block Krylov SVD of an explicit symmetric matrix.
pub fn bksvd(a: &SymMatrix, params: &KrylovParams) -> Result<Subspace> {
    block_krylov(a, params)
}

/// Block Krylov SVD of the implicit gradient; every product goes through
/// [`implicit_apply`].
pub fn mbksvd(delta: &ImplicitGradient<'_>, params: &KrylovParams) -> Result<Subspace> {
    block_krylov(delta, params)
}

/// Approximate tail projection: `sym(Z Zᵀ A)` with `Z = bksvd(A)`.
pub fn tail_project(a: &SymMatrix, rank: usize, accuracy: f64, seed: u64) -> Result<SymMatrix> {
    let params = KrylovParams::new(a.dim(), rank, accuracy, seed)?;
    let z = bksvd(a, &params)?;
    let zta = matmul(z.basis(), Op::T, a.as_matrix(), Op::N);
    Ok(SymMatrix::from_symmetrized(matmul(z.basis(), Op::N, &zta, Op::N)))
}

/// Approximate head projection: the Krylov subspace itself.
pub fn head_project(a: &SymMatrix, rank: usize, accuracy: f64, seed: u64) -> Result<Subspace> {
    let params = KrylovParams::new(a.dim(), rank, accuracy, seed)?;
    bksvd(a, &params)
}
