//! The rank-one measurement ensemble `x_i ~ N(0, I_p)`, the operator
//! `A(L) = (x_iᵀ L x_i)_i`, its adjoint `A*(d) = Σ d_i x_i x_iᵀ`, noisy
//! observations and synthetic ground truth.
//!
//! Sample `i` is drawn from ChaCha8 stream `i` of the ensemble seed, so any
//! row can be regenerated independently. All reductions over samples walk
//! fixed blocks of [`BLOCK_SAMPLES`] in index order, which makes results
//! identical between stored and streaming ensembles.

use std::io::Write;

use nalgebra::{DMatrix, DMatrixView, DVector};

use crate::error::{dim_err, Error, Result};
use crate::kernels::{gemm, matmul, Op};
use crate::matcore::{orthonormalize, LowRankFactors, SymMatrix};
use crate::rng::{self, standard_normal, stream_rng};

/// Samples per reduction block.
pub const BLOCK_SAMPLES: usize = 256;

#[derive(Clone, Debug)]
enum Storage {
    /// `p × m`, column `i` is `x_i`.
    Stored(DMatrix<f64>),
    /// Regenerated block-wise from the seed on every pass.
    Streaming,
}

/// The `m` sensing vectors that define `A` and `A*`.
#[derive(Clone, Debug)]
pub struct RankOneEnsemble {
    dim: usize,
    count: usize,
    seed: u64,
    storage: Storage,
}

fn fill_sample(seed: u64, index: usize, out: &mut [f64]) {
    let mut rng = stream_rng(seed, index as u64);
    for v in out {
        *v = standard_normal(&mut rng);
    }
}

fn check_sizes(p: usize, m: usize) -> Result<()> {
    if p == 0 || m == 0 {
        return Err(Error::InvalidArgument(format!("ensemble needs p, m >= 1 (got p={p}, m={m})")));
    }
    Ok(())
}

impl RankOneEnsemble {
    /// Draws and stores `m·p` standard normals.
    pub fn sample(p: usize, m: usize, seed: u64) -> Result<Self> {
        check_sizes(p, m)?;
        let mut data = vec![0.0; p * m];
        for (i, col) in data.chunks_exact_mut(p).enumerate() {
            fill_sample(seed, i, col);
        }
        Ok(Self { dim: p, count: m, seed, storage: Storage::Stored(DMatrix::from_vec(p, m, data)) })
    }

    /// Same vectors as [`RankOneEnsemble::sample`], regenerated on demand so
    /// that only one block is resident at a time.
    pub fn streaming(p: usize, m: usize, seed: u64) -> Result<Self> {
        check_sizes(p, m)?;
        Ok(Self { dim: p, count: m, seed, storage: Storage::Streaming })
    }

    /// Wraps explicit vectors given as rows of an `m × p` matrix.
    pub fn from_rows(rows: &DMatrix<f64>, seed: u64) -> Result<Self> {
        let (m, p) = rows.shape();
        check_sizes(p, m)?;
        Ok(Self { dim: p, count: m, seed, storage: Storage::Stored(rows.transpose()) })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_streaming(&self) -> bool {
        matches!(self.storage, Storage::Streaming)
    }

    /// `x_i`.
    pub fn vector(&self, i: usize) -> DVector<f64> {
        assert!(i < self.count, "sample index out of range");
        match &self.storage {
            Storage::Stored(x) => x.column(i).into_owned(),
            Storage::Streaming => {
                let mut v = DVector::zeros(self.dim);
                fill_sample(self.seed, i, v.as_mut_slice());
                v
            }
        }
    }

    /// The `m × p` matrix whose row `i` is `x_iᵀ`.
    pub fn to_rows(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.count, self.dim);
        self.for_each_block(|start, block| {
            for c in 0..block.ncols() {
                out.row_mut(start + c).copy_from(&block.column(c).transpose());
            }
        });
        out
    }

    /// Visits samples in fixed blocks, in order. `block` is `p × c` with
    /// one sample per column; `start` is the index of its first sample.
    pub fn for_each_block<F: FnMut(usize, DMatrixView<'_, f64>)>(&self, mut f: F) {
        let p = self.dim;
        self.for_each_slice(|start, data| f(start, DMatrixView::from_slice(data, p, data.len() / p.max(1))));
    }

    /// As [`for_each_block`](Self::for_each_block), with the block as a
    /// column-major slice of length `p·c`.
    pub fn for_each_slice<F: FnMut(usize, &[f64])>(&self, mut f: F) {
        if self.dim == 0 {
            return;
        }
        match &self.storage {
            Storage::Stored(x) => {
                let data = x.as_slice();
                let mut start = 0;
                while start < self.count {
                    let c = BLOCK_SAMPLES.min(self.count - start);
                    f(start, &data[start * self.dim..(start + c) * self.dim]);
                    start += c;
                }
            }
            Storage::Streaming => {
                let mut buf = vec![0.0; self.dim * BLOCK_SAMPLES];
                let mut start = 0;
                while start < self.count {
                    let c = BLOCK_SAMPLES.min(self.count - start);
                    for (j, col) in buf[..self.dim * c].chunks_exact_mut(self.dim).enumerate() {
                        fill_sample(self.seed, start + j, col);
                    }
                    f(start, &buf[..self.dim * c]);
                    start += c;
                }
            }
        }
    }
}

/// Measurements `y` with the noise level and ensemble seed they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Observations {
    pub y: Vec<f64>,
    pub noise_std: f64,
    pub ensemble_seed: u64,
}

impl Observations {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// CSV with header `index,y`. Values use Rust's shortest round-trip
    /// formatting.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "index,y")?;
        for (i, y) in self.y.iter().enumerate() {
            writeln!(w, "{i},{y:?}")?;
        }
        Ok(())
    }

    /// Parses the `index,y` CSV written by [`Observations::write_csv`].
    /// Lines starting with `#` are ignored; indices must be `0, 1, 2, ...`.
    pub fn parse_csv(text: &str, noise_std: f64, ensemble_seed: u64) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim_start().starts_with('#'));
        match lines.next() {
            Some(h) if h.trim() == "index,y" => {}
            Some(h) => return Err(Error::Format(format!("unexpected header {h:?}"))),
            None => return Err(Error::Format("missing header".into())),
        }
        let mut y = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (idx, val) = line
                .split_once(',')
                .ok_or_else(|| Error::Format(format!("line {}: expected two fields", n + 2)))?;
            let idx: usize = idx
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("line {}: bad index {idx:?}", n + 2)))?;
            if idx != y.len() {
                return Err(Error::Format(format!("line {}: index {idx} out of sequence", n + 2)));
            }
            let val: f64 = val
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("line {}: bad value {val:?}", n + 2)))?;
            y.push(val);
        }
        Ok(Self { y, noise_std, ensemble_seed })
    }
}

/// Planted PSD rank-`r` matrix with geometric spectrum from `κ` down to 1.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub matrix: SymMatrix,
    pub factors: LowRankFactors,
    pub condition_number: f64,
}

impl GroundTruth {
    /// Wraps an imported matrix; its rank-`r` factors come from an exact
    /// eigendecomposition and must be strictly positive.
    pub fn from_matrix(matrix: SymMatrix, r: usize) -> Result<Self> {
        let factors = crate::matcore::truncated_eig(&matrix, r)?;
        let s = factors.spectrum();
        let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
        if min <= 0.0 {
            return Err(Error::Validation("ground truth must be positive semidefinite with rank r".into()));
        }
        let condition_number = s.max() / min;
        Ok(Self { matrix, factors, condition_number })
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn rank(&self) -> usize {
        self.factors.rank()
    }
}

/// `p × r` Gaussian → orthonormal basis; spectrum `κ^{(r-1-j)/(r-1)}`.
pub fn generate_instance(p: usize, r: usize, condition_number: f64, seed: u64) -> Result<GroundTruth> {
    if r == 0 || r > p {
        return dim_err(format!("rank {r} outside 1..={p}"));
    }
    if !(condition_number >= 1.0) || !condition_number.is_finite() {
        return Err(Error::InvalidArgument(format!("condition number {condition_number} must be >= 1")));
    }
    if r == 1 && condition_number != 1.0 {
        return Err(Error::InvalidArgument("a rank-1 instance has condition number 1".into()));
    }
    let gauss = rng::gaussian_matrix(p, r, seed);
    let basis = orthonormalize(&gauss)?;
    if basis.k() != r {
        return Err(Error::Validation("sampled basis is rank deficient".into()));
    }
    let spectrum: Vec<f64> = (0..r)
        .map(|j| {
            if r == 1 {
                1.0
            } else {
                condition_number.powf((r - 1 - j) as f64 / (r - 1) as f64)
            }
        })
        .collect();
    let factors = LowRankFactors::new(basis.basis().clone(), spectrum)?;
    let matrix = factors.reconstruct();
    Ok(GroundTruth { matrix, factors, condition_number })
}

pub fn sample_ensemble(p: usize, m: usize, seed: u64) -> Result<RankOneEnsemble> {
    RankOneEnsemble::sample(p, m, seed)
}

/// `y_i = x_iᵀ L x_i` for a dense `L`.
pub fn apply_operator(e: &RankOneEnsemble, l: &SymMatrix) -> Result<Vec<f64>> {
    if l.dim() != e.dim() {
        return dim_err(format!("matrix {} vs ensemble dimension {}", l.dim(), e.dim()));
    }
    let mut y = vec![0.0; e.count()];
    let mut lx = DMatrix::zeros(e.dim(), BLOCK_SAMPLES);
    e.for_each_block(|start, block| {
        let c = block.ncols();
        if lx.ncols() != c {
            lx = DMatrix::zeros(e.dim(), c);
        }
        gemm(1.0, l.as_matrix(), Op::N, &block, Op::N, 0.0, &mut lx);
        for j in 0..c {
            y[start + j] = block.column(j).dot(&lx.column(j));
        }
    });
    Ok(y)
}

/// `y_i = Σ_j s_j (u_jᵀ x_i)²`, `O(pr)` per sample.
pub fn apply_operator_factored(e: &RankOneEnsemble, l: &LowRankFactors) -> Result<Vec<f64>> {
    if l.dim() != e.dim() {
        return dim_err(format!("factors {} vs ensemble dimension {}", l.dim(), e.dim()));
    }
    let mut y = vec![0.0; e.count()];
    if l.rank() == 0 {
        return Ok(y);
    }
    let s = l.spectrum();
    e.for_each_block(|start, block| {
        let v = matmul(l.basis(), Op::T, &block, Op::N);
        for j in 0..block.ncols() {
            y[start + j] = v.column(j).iter().zip(s.iter()).map(|(vi, si)| si * vi * vi).sum();
        }
    });
    Ok(y)
}

/// `Σ_i d_i x_i x_iᵀ`, symmetrized. No `1/m` factor.
pub fn apply_adjoint(e: &RankOneEnsemble, d: &[f64]) -> Result<SymMatrix> {
    if d.len() != e.count() {
        return dim_err(format!("{} weights for {} samples", d.len(), e.count()));
    }
    let p = e.dim();
    let mut acc = DMatrix::zeros(p, p);
    let mut scaled = DMatrix::zeros(p, BLOCK_SAMPLES);
    e.for_each_block(|start, block| {
        let c = block.ncols();
        if scaled.ncols() != c {
            scaled = DMatrix::zeros(p, c);
        }
        for j in 0..c {
            let w = d[start + j];
            for (o, x) in scaled.column_mut(j).iter_mut().zip(block.column(j).iter()) {
                *o = w * x;
            }
        }
        gemm(1.0, &scaled, Op::N, &block, Op::T, 1.0, &mut acc);
    });
    Ok(SymMatrix::from_symmetrized(acc))
}

/// `y = A(L_*) + σ g` with `g` from the noise seed's own stream.
pub fn observe(e: &RankOneEnsemble, truth: &GroundTruth, noise_std: f64, noise_seed: u64) -> Result<Observations> {
    if !(noise_std >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise std {noise_std} must be >= 0")));
    }
    let mut y = apply_operator_factored(e, &truth.factors)?;
    if noise_std > 0.0 {
        let mut rng = stream_rng(noise_seed, 0);
        for v in &mut y {
            *v += noise_std * standard_normal(&mut rng);
        }
    }
    Ok(Observations { y, noise_std, ensemble_seed: e.seed() })
}

/// `ȳ = (1/m) Σ y_i`.
pub fn mean_observation(obs: &Observations) -> Result<f64> {
    if obs.y.is_empty() {
        return Err(Error::Empty("observations"));
    }
    Ok(obs.y.iter().sum::<f64>() / obs.y.len() as f64)
}

/// Covariance sketch of a sample stream: `y_i = (1/T) Σ_t (x_iᵀ s_t)²`.
/// Keeps `m` running sums; the `p × p` empirical covariance is never formed.
pub fn sketch_stream<I, S>(samples: I, e: &RankOneEnsemble) -> Result<Observations>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[f64]>,
{
    let mut sums = vec![0.0; e.count()];
    let mut seen = 0usize;
    let mut batch: Vec<f64> = Vec::new();
    let p = e.dim();
    let flush = |batch: &mut Vec<f64>, sums: &mut Vec<f64>| {
        if batch.is_empty() {
            return;
        }
        let s = DMatrixView::from_slice(batch, p, batch.len() / p);
        e.for_each_block(|start, block| {
            let z = matmul(&block, Op::T, &s, Op::N);
            for j in 0..block.ncols() {
                sums[start + j] += z.row(j).iter().map(|v| v * v).sum::<f64>();
            }
        });
        batch.clear();
    };
    for sample in samples {
        let s = sample.as_ref();
        if s.len() != p {
            return dim_err(format!("sample of length {} for dimension {p}", s.len()));
        }
        batch.extend_from_slice(s);
        seen += 1;
        if seen % BLOCK_SAMPLES == 0 {
            flush(&mut batch, &mut sums);
        }
    }
    flush(&mut batch, &mut sums);
    if seen == 0 {
        return Err(Error::Empty("sample stream"));
    }
    let t = seen as f64;
    Ok(Observations { y: sums.into_iter().map(|v| v / t).collect(), noise_std: 0.0, ensemble_seed: e.seed() })
}
