//! Strided GEMM on nalgebra storage, backed by `matrixmultiply`.
//!
//! The kernels are single-threaded and therefore bitwise deterministic.

use nalgebra::{DMatrix, Dim, Matrix, RawStorage};

/// Operand orientation for [`gemm`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    N,
    T,
}

fn shape<R: Dim, C: Dim, S: RawStorage<f64, R, C>>(
    a: &Matrix<f64, R, C, S>,
    op: Op,
) -> (usize, usize, isize, isize) {
    let (r, c) = a.shape();
    let (rs, cs) = a.strides();
    match op {
        Op::N => (r, c, rs as isize, cs as isize),
        Op::T => (c, r, cs as isize, rs as isize),
    }
}

/// `c ← alpha·op(a)·op(b) + beta·c`. When `beta == 0`, `c` is not read.
pub fn gemm<R1, C1, S1, R2, C2, S2>(
    alpha: f64,
    a: &Matrix<f64, R1, C1, S1>,
    opa: Op,
    b: &Matrix<f64, R2, C2, S2>,
    opb: Op,
    beta: f64,
    c: &mut DMatrix<f64>,
) where
    R1: Dim,
    C1: Dim,
    S1: RawStorage<f64, R1, C1>,
    R2: Dim,
    C2: Dim,
    S2: RawStorage<f64, R2, C2>,
{
    let (m, k, rsa, csa) = shape(a, opa);
    let (k2, n, rsb, csb) = shape(b, opb);
    assert_eq!(k, k2, "gemm inner dimension mismatch");
    assert_eq!(c.shape(), (m, n), "gemm output shape mismatch");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            c.fill(0.0);
        } else {
            *c *= beta;
        }
        return;
    }
    let rsc = 1isize;
    let csc = m as isize;
    // SAFETY: shapes and strides come from live nalgebra storage and were
    // checked against each other above; `c` is contiguous column-major.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.ptr(),
            rsa,
            csa,
            b.data.ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

/// Allocating `op(a)·op(b)`.
pub fn matmul<R1, C1, S1, R2, C2, S2>(
    a: &Matrix<f64, R1, C1, S1>,
    opa: Op,
    b: &Matrix<f64, R2, C2, S2>,
    opb: Op,
) -> DMatrix<f64>
where
    R1: Dim,
    C1: Dim,
    S1: RawStorage<f64, R1, C1>,
    R2: Dim,
    C2: Dim,
    S2: RawStorage<f64, R2, C2>,
{
    let m = if opa == Op::N { a.nrows() } else { a.ncols() };
    let n = if opb == Op::N { b.ncols() } else { b.nrows() };
    let mut c = DMatrix::zeros(m, n);
    gemm(1.0, a, opa, b, opb, 0.0, &mut c);
    c
}


/// Columns per register tile in [`weighted_gram_apply`].
const TILE: usize = 8;

/// `acc ← acc + X diag(w) Xᵀ G` where `X` is `p × c` with contiguous
/// columns (one sample each) and `acc`, `G` are `p × b`.
///
/// Samples are processed in small groups that stay in L1 while both the
/// projection `w_s·x_sᵀG` and the accumulation `Σ_s x_s (…)` are formed, so
/// `X` is streamed from memory once. Dispatches at runtime to AVX-512 or
/// AVX2+FMA code; other targets use two GEMMs.
pub fn weighted_gram_apply(x: &[f64], p: usize, weights: &[f64], g: &DMatrix<f64>, acc: &mut DMatrix<f64>) {
    let c = weights.len();
    assert_eq!(x.len(), p * c);
    assert_eq!(g.nrows(), p);
    assert_eq!(acc.shape(), g.shape());
    let b = g.ncols();
    if p == 0 || b == 0 || c == 0 {
        return;
    }
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx512f") {
            let (gt, mut at) = (pack_tiles(g), pack_tiles(acc));
            // SAFETY: the feature was detected at runtime.
            unsafe { fused_avx512(x, p, weights, &gt, &mut at) };
            unpack_tiles(&at, acc);
            return;
        }
        if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
            let (gt, mut at) = (pack_tiles(g), pack_tiles(acc));
            // SAFETY: the features were detected at runtime.
            unsafe { fused_avx2(x, p, weights, &gt, &mut at) };
            unpack_tiles(&at, acc);
            return;
        }
    }
    weighted_gram_gemm(x, p, weights, g, acc);
}

/// Portable two-GEMM form of [`weighted_gram_apply`].
pub fn weighted_gram_gemm(x: &[f64], p: usize, weights: &[f64], g: &DMatrix<f64>, acc: &mut DMatrix<f64>) {
    let c = weights.len();
    let xv = nalgebra::DMatrixView::from_slice(x, p, c);
    let mut proj = matmul(&xv, Op::T, g, Op::N);
    for (j, mut row) in proj.row_iter_mut().enumerate() {
        row *= weights[j];
    }
    gemm(1.0, &xv, Op::N, &proj, Op::N, 1.0, acc);
}

/// Row-major tiles of `TILE` columns, zero padded: `tiles[t][i]` holds
/// row `i`, columns `t·TILE .. t·TILE+TILE`.
fn pack_tiles(m: &DMatrix<f64>) -> Vec<Vec<[f64; TILE]>> {
    let (p, b) = m.shape();
    (0..b.div_ceil(TILE))
        .map(|t| {
            (0..p)
                .map(|i| {
                    let mut row = [0.0; TILE];
                    for (k, v) in row.iter_mut().enumerate() {
                        let col = t * TILE + k;
                        if col < b {
                            *v = m[(i, col)];
                        }
                    }
                    row
                })
                .collect()
        })
        .collect()
}

fn unpack_tiles(tiles: &[Vec<[f64; TILE]>], m: &mut DMatrix<f64>) {
    let (p, b) = m.shape();
    for (t, tile) in tiles.iter().enumerate() {
        for (k, col) in (t * TILE..(t * TILE + TILE).min(b)).enumerate() {
            for i in 0..p {
                m[(i, col)] = tile[i][k];
            }
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn fused_avx512(x: &[f64], p: usize, weights: &[f64], gt: &[Vec<[f64; TILE]>], at: &mut [Vec<[f64; TILE]>]) {
    fused512::<8>(x, p, weights, gt, at)
}
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn fused512<const S: usize>(x: &[f64], p: usize, weights: &[f64], gt: &[Vec<[f64; TILE]>], at: &mut [Vec<[f64; TILE]>]) {
    use std::arch::x86_64::*;
    let zero = vec![0.0; p];
    let c = weights.len();
    let mut start = 0;
    while start < c {
        let n = S.min(c - start);
        let mut xs = [zero.as_ptr(); S];
        let mut w = [0.0; S];
        for s in 0..n {
            xs[s] = x.as_ptr().add((start + s) * p);
            w[s] = weights[start + s];
        }
        let mut t = 0;
        while t < gt.len() {
            // Two tiles (16 columns) at a time when available.
            let pair = t + 1 < gt.len();
            let g0 = gt[t].as_ptr() as *const f64;
            let g1 = if pair { gt[t + 1].as_ptr() as *const f64 } else { g0 };
            let mut p0 = [_mm512_setzero_pd(); S];
            let mut p1 = [_mm512_setzero_pd(); S];
            for i in 0..p {
                let a0 = _mm512_loadu_pd(g0.add(i * TILE));
                let a1 = _mm512_loadu_pd(g1.add(i * TILE));
                for s in 0..S {
                    let xv = _mm512_set1_pd(*xs[s].add(i));
                    p0[s] = _mm512_fmadd_pd(xv, a0, p0[s]);
                    p1[s] = _mm512_fmadd_pd(xv, a1, p1[s]);
                }
            }
            for s in 0..S {
                let ws = _mm512_set1_pd(w[s]);
                p0[s] = _mm512_mul_pd(p0[s], ws);
                p1[s] = _mm512_mul_pd(p1[s], ws);
            }
            let (lo, hi) = at.split_at_mut(t + 1);
            let c0 = lo[t].as_mut_ptr() as *mut f64;
            let c1 = if pair { hi[0].as_mut_ptr() as *mut f64 } else { std::ptr::null_mut() };
            for i in 0..p {
                let mut a0 = _mm512_loadu_pd(c0.add(i * TILE));
                let mut a1 = if pair { _mm512_loadu_pd(c1.add(i * TILE)) } else { _mm512_setzero_pd() };
                for s in 0..S {
                    let xv = _mm512_set1_pd(*xs[s].add(i));
                    a0 = _mm512_fmadd_pd(xv, p0[s], a0);
                    a1 = _mm512_fmadd_pd(xv, p1[s], a1);
                }
                _mm512_storeu_pd(c0.add(i * TILE), a0);
                if pair {
                    _mm512_storeu_pd(c1.add(i * TILE), a1);
                }
            }
            t += if pair { 2 } else { 1 };
        }
        start += n;
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn fused_avx2(x: &[f64], p: usize, weights: &[f64], gt: &[Vec<[f64; TILE]>], at: &mut [Vec<[f64; TILE]>]) {
    use std::arch::x86_64::*;
    const S: usize = 6;
    let zero = vec![0.0; p];
    let c = weights.len();
    let mut start = 0;
    while start < c {
        let n = S.min(c - start);
        let mut xs = [zero.as_ptr(); S];
        let mut w = [0.0; S];
        for s in 0..n {
            xs[s] = x.as_ptr().add((start + s) * p);
            w[s] = weights[start + s];
        }
        for (g, acc) in gt.iter().zip(at.iter_mut()) {
            let g = g.as_ptr() as *const f64;
            let mut lo = [_mm256_setzero_pd(); S];
            let mut hi = [_mm256_setzero_pd(); S];
            for i in 0..p {
                let g0 = _mm256_loadu_pd(g.add(i * TILE));
                let g1 = _mm256_loadu_pd(g.add(i * TILE + 4));
                for s in 0..S {
                    let xv = _mm256_broadcast_sd(&*xs[s].add(i));
                    lo[s] = _mm256_fmadd_pd(xv, g0, lo[s]);
                    hi[s] = _mm256_fmadd_pd(xv, g1, hi[s]);
                }
            }
            for s in 0..S {
                let ws = _mm256_set1_pd(w[s]);
                lo[s] = _mm256_mul_pd(lo[s], ws);
                hi[s] = _mm256_mul_pd(hi[s], ws);
            }
            let a = acc.as_mut_ptr() as *mut f64;
            for i in 0..p {
                let mut a0 = _mm256_loadu_pd(a.add(i * TILE));
                let mut a1 = _mm256_loadu_pd(a.add(i * TILE + 4));
                for s in 0..S {
                    let xv = _mm256_broadcast_sd(&*xs[s].add(i));
                    a0 = _mm256_fmadd_pd(xv, lo[s], a0);
                    a1 = _mm256_fmadd_pd(xv, hi[s], a1);
                }
                _mm256_storeu_pd(a.add(i * TILE), a0);
                _mm256_storeu_pd(a.add(i * TILE + 4), a1);
            }
        }
        start += n;
    }
}
