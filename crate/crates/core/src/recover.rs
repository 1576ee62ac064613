//! Bias-corrected projected gradient solvers.
//!
//! Both solvers start from `L₀ = 0` and step along
//! `Δ = (1/m) Σ (x_iᵀ L_t x_i − y_i) x_i x_iᵀ − (Tr L_t − ȳ) I`.
//!
//! * EP-ROM materializes `Δ` and projects `L_t − ηΔ` onto rank `r` with a
//!   full eigendecomposition.
//! * AP-ROM finds a head subspace `V` of `Δ` (rank `2r` by default), replaces
//!   `Δ` by `P_V Δ P_V`, and applies a tail projection at rank `r` to the
//!   resulting rank-`≤ 3r` matrix, which is held as an orthonormal basis and
//!   a small core. In MBK-SVD mode the gradient is only ever applied to
//!   blocks.

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;

use crate::error::{dim_err, Error, Result};
use crate::kernels::{matmul, Op};
use crate::krylov::{
    block_krylov, block_krylov_image, materialize_gradient, FactoredSym, ImplicitGradient, KrylovParams,
};
use crate::matcore::{compress, core_in_basis, difference_norms, truncated_eig, LowRankFactors, OrthoBuilder, SymMatrix};
use crate::rng::derive_seed;
use crate::sensing::{
    apply_operator_factored, mean_observation, observe, GroundTruth, Observations, RankOneEnsemble,
};

/// Iterations over which the relative objective improvement is measured.
pub const STALL_WINDOW: usize = 5;
/// Relative objective improvement below which a run counts as stalled.
pub const STALL_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplingMode {
    /// A new ensemble and observations every iteration.
    Fresh,
    /// One fixed ensemble and observation vector for the whole run.
    Reuse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProjectionMode {
    /// EP-ROM: materialized gradient, full eigendecomposition.
    Exact,
    /// AP-ROM, BK-SVD head on the materialized gradient.
    LanczosFreeBksvd,
    /// AP-ROM, MBK-SVD head on the implicit gradient.
    Mbksvd,
    /// AP-ROM with exact head and tail projections. Reference only.
    ExactHeadTail,
}

impl ProjectionMode {
    pub fn is_approximate(self) -> bool {
        self != ProjectionMode::Exact
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Seeds {
    pub ensemble: u64,
    pub noise: u64,
    pub krylov: u64,
}

impl Seeds {
    pub fn from_master(seed: u64) -> Self {
        Self {
            ensemble: derive_seed(seed, "ensemble", 0),
            noise: derive_seed(seed, "noise", 0),
            krylov: derive_seed(seed, "krylov", 0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryConfig {
    pub rank: usize,
    pub step_size: f64,
    pub max_iters: usize,
    /// Stop once the relative spectral error is at most this.
    pub tolerance: f64,
    pub sampling: SamplingMode,
    pub projection: ProjectionMode,
    pub head_rank: usize,
    pub accuracy: f64,
    /// Krylov depth override; `None` uses the default depth.
    pub depth: Option<usize>,
    /// Stop when the objective has not improved over the stall window.
    /// Off, a run continues to `max_iters` unless the tolerance is met.
    pub stall_stop: bool,
    pub seeds: Seeds,
}

impl RecoveryConfig {
    /// η = 0.5, K = 200, tolerance 1e-6, reuse sampling, head rank `2r`,
    /// ϑ = 0.1.
    pub fn new(rank: usize, projection: ProjectionMode) -> Self {
        Self {
            rank,
            step_size: 0.5,
            max_iters: 200,
            tolerance: 1e-6,
            sampling: SamplingMode::Reuse,
            projection,
            head_rank: 2 * rank,
            accuracy: 0.1,
            depth: None,
            stall_stop: true,
            seeds: Seeds::from_master(0),
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.rank == 0 || self.rank > p {
            return bad(format!("rank {} outside 1..={p}", self.rank));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad(format!("step size {} must be positive", self.step_size));
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1".into());
        }
        if !(self.tolerance >= 0.0) {
            return bad(format!("tolerance {} must be >= 0", self.tolerance));
        }
        if self.projection.is_approximate() {
            if self.head_rank < self.rank || self.head_rank > p {
                return bad(format!("head rank {} outside {}..={p}", self.head_rank, self.rank));
            }
            if !(self.accuracy > 0.0 && self.accuracy < 1.0) {
                return bad(format!("accuracy {} outside (0, 1)", self.accuracy));
            }
            if self.depth == Some(0) {
                return bad("depth must be at least 1".into());
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationRecord {
    /// Number of completed updates.
    pub iter: usize,
    /// `F(L) = ‖A(L) − y‖² / 2m` on the iteration's measurements.
    pub objective: f64,
    pub rel_spec_err: Option<f64>,
    pub fro_err: Option<f64>,
    pub trace: f64,
    pub grad_ms: f64,
    pub head_ms: f64,
    pub tail_ms: f64,
    pub samples_used: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    /// The gradient at the current iterate is exactly zero.
    Stationary,
    /// Error tolerance met, or zero objective.
    Converged,
    Stalled,
    MaxIters,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecoveryTrace {
    pub records: Vec<IterationRecord>,
    pub stop: StopReason,
}

impl RecoveryTrace {
    pub const HEADER: &'static str = "iter,objective,rel_spec_err,trace_Lt,grad_ms,head_ms,tail_ms,samples_used";

    pub fn final_error(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.rel_spec_err)
    }

    /// One row per record. `rel_spec_err` is empty when no ground truth
    /// was supplied.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::HEADER)?;
        for r in &self.records {
            let err = r.rel_spec_err.map(|e| e.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{:.3},{:.3},{:.3},{}",
                r.iter, r.objective, err, r.trace, r.grad_ms, r.head_ms, r.tail_ms, r.samples_used
            )?;
        }
        Ok(())
    }
}

/// Where measurements come from.
#[derive(Clone, Copy, Debug)]
pub enum Measurements<'a> {
    /// A fixed ensemble and observation vector (reuse mode only).
    Fixed { ensemble: &'a RankOneEnsemble, observations: &'a Observations },
    /// Drawn from the ground truth with the configured seeds.
    Generated { count: usize, noise_std: f64, streaming: bool },
}

#[derive(Clone, Copy, Debug)]
pub struct Problem<'a> {
    pub measurements: Measurements<'a>,
    /// Needed for generated measurements and for error tracking.
    pub truth: Option<&'a GroundTruth>,
}

impl<'a> Problem<'a> {
    pub fn fixed(ensemble: &'a RankOneEnsemble, observations: &'a Observations, truth: Option<&'a GroundTruth>) -> Self {
        Self { measurements: Measurements::Fixed { ensemble, observations }, truth }
    }

    pub fn generated(truth: &'a GroundTruth, count: usize, noise_std: f64) -> Self {
        Self { measurements: Measurements::Generated { count, noise_std, streaming: false }, truth: Some(truth) }
    }

    pub fn dim(&self) -> Result<usize> {
        match (&self.measurements, self.truth) {
            (Measurements::Fixed { ensemble, .. }, _) => Ok(ensemble.dim()),
            (Measurements::Generated { .. }, Some(t)) => Ok(t.dim()),
            (Measurements::Generated { .. }, None) => {
                Err(Error::Config("generated measurements need a ground truth".into()))
            }
        }
    }

    fn validate(&self, config: &RecoveryConfig) -> Result<usize> {
        let p = self.dim()?;
        config.validate(p)?;
        if let Some(t) = self.truth {
            if t.dim() != p {
                return dim_err(format!("ground truth {} vs ensemble dimension {p}", t.dim()));
            }
        }
        match self.measurements {
            Measurements::Fixed { ensemble, observations } => {
                if config.sampling == SamplingMode::Fresh {
                    return Err(Error::Config("fresh sampling needs a ground-truth generator".into()));
                }
                if observations.len() != ensemble.count() {
                    return dim_err(format!(
                        "{} observations for {} samples",
                        observations.len(),
                        ensemble.count()
                    ));
                }
            }
            Measurements::Generated { count, noise_std, .. } => {
                if count == 0 {
                    return Err(Error::Config("measurement count must be positive".into()));
                }
                if !(noise_std >= 0.0) {
                    return Err(Error::Config(format!("noise std {noise_std} must be >= 0")));
                }
            }
        }
        Ok(p)
    }
}

/// `d_i = x_iᵀ L x_i − y_i` through the factored path.
pub fn residuals(e: &RankOneEnsemble, obs: &Observations, l: &LowRankFactors) -> Result<Vec<f64>> {
    if obs.len() != e.count() {
        return dim_err(format!("{} observations for {} samples", obs.len(), e.count()));
    }
    let mut d = apply_operator_factored(e, l)?;
    for (di, yi) in d.iter_mut().zip(&obs.y) {
        *di -= yi;
    }
    Ok(d)
}

fn objective_of(d: &[f64]) -> f64 {
    d.iter().map(|v| v * v).sum::<f64>() / (2.0 * d.len() as f64)
}

/// `F(L) = (1/2m) Σ (y_i − x_iᵀ L x_i)²`.
pub fn objective(e: &RankOneEnsemble, obs: &Observations, l: &LowRankFactors) -> Result<f64> {
    Ok(objective_of(&residuals(e, obs, l)?))
}

/// The implicit bias-corrected gradient at `L_t`.
pub fn bias_corrected_gradient<'a>(
    e: &'a RankOneEnsemble,
    obs: &Observations,
    y_bar: f64,
    l: &LowRankFactors,
) -> Result<ImplicitGradient<'a>> {
    let d = residuals(e, obs, l)?;
    ImplicitGradient::new(e, d, l.trace() - y_bar)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualMetrics {
    pub rel_spec_err: f64,
    pub fro_err: f64,
    pub objective: f64,
}

/// Dense error metrics of an estimate. The spectral error is absolute when
/// `L_*` is zero.
pub fn residual_metrics(
    estimate: &LowRankFactors,
    truth: &SymMatrix,
    e: &RankOneEnsemble,
    obs: &Observations,
) -> Result<ResidualMetrics> {
    if estimate.dim() != truth.dim() {
        return dim_err(format!("estimate {} vs truth {}", estimate.dim(), truth.dim()));
    }
    let diff = estimate.reconstruct().lincomb(1.0, truth, -1.0)?;
    let scale = truth.spectral_norm();
    let spec = diff.spectral_norm();
    Ok(ResidualMetrics {
        rel_spec_err: if scale > 0.0 { spec / scale } else { spec },
        fro_err: diff.fro_norm(),
        objective: objective(e, obs, estimate)?,
    })
}

enum Batch<'a> {
    Borrowed(&'a RankOneEnsemble, &'a Observations),
    Owned(RankOneEnsemble, Observations),
}

impl Batch<'_> {
    fn parts(&self) -> (&RankOneEnsemble, &Observations) {
        match self {
            Batch::Borrowed(e, o) => (e, o),
            Batch::Owned(e, o) => (e, o),
        }
    }
}

fn draw<'a>(problem: &Problem<'a>, p: usize, ensemble_seed: u64, noise_seed: u64) -> Result<Batch<'a>> {
    match problem.measurements {
        Measurements::Fixed { ensemble, observations } => Ok(Batch::Borrowed(ensemble, observations)),
        Measurements::Generated { count, noise_std, streaming } => {
            let truth = problem.truth.ok_or_else(|| Error::Config("generated measurements need a ground truth".into()))?;
            let e = if streaming {
                RankOneEnsemble::streaming(p, count, ensemble_seed)?
            } else {
                RankOneEnsemble::sample(p, count, ensemble_seed)?
            };
            let obs = observe(&e, truth, noise_std, noise_seed)?;
            Ok(Batch::Owned(e, obs))
        }
    }
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

fn krylov_params(config: &RecoveryConfig, p: usize, rank: usize, seed: u64) -> Result<KrylovParams> {
    let params = KrylovParams::new(p, rank, config.accuracy, seed)?;
    Ok(match config.depth {
        Some(q) => params.with_depth(q),
        None => params,
    })
}

/// EP-ROM. Requires `ProjectionMode::Exact`.
pub fn eprom_run(problem: &Problem<'_>, config: &RecoveryConfig) -> Result<(LowRankFactors, RecoveryTrace)> {
    if config.projection != ProjectionMode::Exact {
        return Err(Error::Config("EP-ROM requires exact projection".into()));
    }
    run(problem, config)
}

/// AP-ROM. Requires an approximate projection mode.
pub fn aprom_run(problem: &Problem<'_>, config: &RecoveryConfig) -> Result<(LowRankFactors, RecoveryTrace)> {
    if !config.projection.is_approximate() {
        return Err(Error::Config("AP-ROM requires a head/tail projection mode".into()));
    }
    run(problem, config)
}

/// Runs the solver selected by `config.projection` from `L₀ = 0`.
pub fn run(problem: &Problem<'_>, config: &RecoveryConfig) -> Result<(LowRankFactors, RecoveryTrace)> {
    let p = problem.validate(config)?;
    run_from(problem, config, LowRankFactors::zero(p))
}

/// As [`run`], from a given starting iterate.
pub fn run_from(
    problem: &Problem<'_>,
    config: &RecoveryConfig,
    start: LowRankFactors,
) -> Result<(LowRankFactors, RecoveryTrace)> {
    let p = problem.validate(config)?;
    if start.dim() != p {
        return dim_err(format!("start iterate {} vs dimension {p}", start.dim()));
    }
    let truth_norm = problem.truth.map(|t| t.factors.spectral_norm());
    let reuse = config.sampling == SamplingMode::Reuse;
    let fixed = if reuse { Some(draw(problem, p, config.seeds.ensemble, config.seeds.noise)?) } else { None };
    let fixed_mean = match &fixed {
        Some(b) => Some(mean_observation(b.parts().1)?),
        None => None,
    };

    let mut l = start;
    let mut records: Vec<IterationRecord> = Vec::new();
    let mut samples_used = 0usize;
    let mut carried: Option<Vec<f64>> = None;
    let mut stop = StopReason::MaxIters;

    for t in 0..config.max_iters {
        let grad_start = Instant::now();
        let fresh;
        let (e, obs, y_bar) = match (&fixed, fixed_mean) {
            (Some(b), Some(mean)) => {
                let (e, o) = b.parts();
                (e, o, mean)
            }
            _ => {
                let es = derive_seed(config.seeds.ensemble, "ensemble", t as u64);
                let ns = derive_seed(config.seeds.noise, "noise", t as u64);
                fresh = draw(problem, p, es, ns)?;
                let (e, o) = fresh.parts();
                (e, o, mean_observation(o)?)
            }
        };
        samples_used = if reuse { e.count() } else { samples_used + e.count() };

        let d = match carried.take() {
            Some(d) => d,
            None => residuals(e, obs, &l)?,
        };
        let shift = l.trace() - y_bar;
        if shift == 0.0 && d.iter().all(|v| *v == 0.0) {
            stop = StopReason::Stationary;
            break;
        }
        let delta = ImplicitGradient::new(e, d, shift)?;
        let (next, mut grad_ms, head_ms, tail_ms) = step(&delta, &l, config, p, t as u64, grad_start)?;
        l = next;

        let post = Instant::now();
        let d_next = residuals(e, obs, &l)?;
        let objective = objective_of(&d_next);
        if reuse {
            carried = Some(d_next);
        }
        grad_ms += ms(post);

        let (rel_spec_err, fro_err) = match (problem.truth, truth_norm) {
            (Some(truth), Some(norm)) => {
                let (spec, fro) = difference_norms(&l, &truth.factors)?;
                (Some(if norm > 0.0 { spec / norm } else { spec }), Some(fro))
            }
            _ => (None, None),
        };
        records.push(IterationRecord {
            iter: t + 1,
            objective,
            rel_spec_err,
            fro_err,
            trace: l.trace(),
            grad_ms,
            head_ms,
            tail_ms,
            samples_used,
        });

        if rel_spec_err.is_some_and(|e| e <= config.tolerance) || objective == 0.0 {
            stop = StopReason::Converged;
            break;
        }
        if config.stall_stop && records.len() > STALL_WINDOW {
            let before = records[records.len() - 1 - STALL_WINDOW].objective;
            if before > 0.0 && (before - objective) / before < STALL_TOL {
                stop = StopReason::Stalled;
                break;
            }
        }
    }
    Ok((l, RecoveryTrace { records, stop }))
}

/// One projected update. Returns the new iterate and the gradient, head
/// and tail phase times in milliseconds.
fn step(
    delta: &ImplicitGradient<'_>,
    l: &LowRankFactors,
    config: &RecoveryConfig,
    p: usize,
    t: u64,
    grad_start: Instant,
) -> Result<(LowRankFactors, f64, f64, f64)> {
    let eta = config.step_size;
    let head_seed = derive_seed(config.seeds.krylov, "head", t);
    let h = config.head_rank;

    let (v, dv, grad_ms, head_start) = match config.projection {
        ProjectionMode::Exact => {
            let g = materialize_gradient(delta)?;
            let grad_ms = ms(grad_start);
            let tail_start = Instant::now();
            let moved = l.reconstruct().lincomb(1.0, &g, -eta)?;
            let next = truncated_eig(&moved, config.rank)?;
            return Ok((next, grad_ms, 0.0, ms(tail_start)));
        }
        ProjectionMode::Mbksvd => {
            let grad_ms = ms(grad_start);
            let head_start = Instant::now();
            let (v, dv) = block_krylov_image(delta, &krylov_params(config, p, h, head_seed)?)?;
            (v.basis().clone(), dv, grad_ms, head_start)
        }
        ProjectionMode::LanczosFreeBksvd => {
            let g = materialize_gradient(delta)?;
            let grad_ms = ms(grad_start);
            let head_start = Instant::now();
            let (v, dv) = block_krylov_image(&g, &krylov_params(config, p, h, head_seed)?)?;
            (v.basis().clone(), dv, grad_ms, head_start)
        }
        ProjectionMode::ExactHeadTail => {
            let g = materialize_gradient(delta)?;
            let grad_ms = ms(grad_start);
            let head_start = Instant::now();
            let v = truncated_eig(&g, h)?.basis().clone();
            let dv = matmul(g.as_matrix(), Op::N, &v, Op::N);
            (v, dv, grad_ms, head_start)
        }
    };
    // P_V Δ P_V = V (VᵀΔV) Vᵀ.
    let head_core = SymMatrix::from_symmetrized(matmul(&v, Op::T, &dv, Op::N)).into_matrix();
    let head_ms = ms(head_start);

    let tail_start = Instant::now();
    // L_t − η P_V Δ P_V on the joint basis C of [U_t, V].
    let joint = DMatrix::from_fn(p, l.rank() + v.ncols(), |i, j| {
        if j < l.rank() {
            l.basis()[(i, j)]
        } else {
            v[(i, j - l.rank())]
        }
    });
    let mut builder = OrthoBuilder::new(p, 1e-12 * joint.norm().max(1.0));
    builder.push_block(&joint);
    let c = builder.into_matrix();
    let ctv = matmul(&c, Op::T, &v, Op::N);
    let moved = matmul(&ctv, Op::N, &head_core, Op::N);
    let core = core_in_basis(&c, l) - matmul(&moved, Op::N, &ctv, Op::T) * eta;

    let next = match config.projection {
        ProjectionMode::ExactHeadTail => compress(&c, &core, config.rank),
        _ => {
            let tail_seed = derive_seed(config.seeds.krylov, "tail", t);
            let op = FactoredSym { basis: c, core };
            let z = block_krylov(&op, &krylov_params(config, p, config.rank, tail_seed)?)?;
            let z = z.basis();
            let ctz = matmul(&op.basis, Op::T, z, Op::N);
            let kz = matmul(&op.core, Op::N, &ctz, Op::N);
            compress(z, &matmul(&ctz, Op::T, &kz, Op::N), config.rank)
        }
    };
    Ok((next, grad_ms, head_ms, ms(tail_start)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::numerical_rank;
    use crate::sensing::{apply_operator, generate_instance, sample_ensemble};

    fn instance(p: usize, r: usize, m: usize, sigma: f64, seed: u64) -> (GroundTruth, RankOneEnsemble, Observations) {
        let truth = generate_instance(p, r, 1.0, seed).unwrap();
        let e = sample_ensemble(p, m, seed + 100).unwrap();
        let obs = observe(&e, &truth, sigma, seed + 200).unwrap();
        (truth, e, obs)
    }

    fn dense_objective(e: &RankOneEnsemble, obs: &Observations, l: &SymMatrix) -> f64 {
        let a = apply_operator(e, l).unwrap();
        a.iter().zip(&obs.y).map(|(ai, yi)| (ai - yi) * (ai - yi)).sum::<f64>() / (2.0 * obs.len() as f64)
    }

    #[test]
    fn gradient_at_zero() {
        let (_, e, obs) = instance(8, 2, 40, 0.1, 1);
        let y_bar = mean_observation(&obs).unwrap();
        let g = bias_corrected_gradient(&e, &obs, y_bar, &LowRankFactors::zero(8)).unwrap();
        let neg: Vec<f64> = obs.y.iter().map(|v| -v).collect();
        assert_eq!(g.residuals, neg);
        assert_eq!(g.shift, -y_bar);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = 10;
        let (_, e, obs) = instance(p, 2, 200, 0.1, 3);
        let y_bar = mean_observation(&obs).unwrap();
        let l = generate_instance(p, 3, 4.0, 77).unwrap().factors;
        let delta = bias_corrected_gradient(&e, &obs, y_bar, &l).unwrap();
        let full = materialize_gradient(&delta).unwrap();
        let plain = materialize_gradient(&ImplicitGradient::new(&e, delta.residuals.clone(), 0.0).unwrap()).unwrap();

        // Least-squares part against central differences of F along
        // symmetric coordinate directions.
        let base = l.reconstruct();
        let h = 1e-3;
        for i in 0..p {
            for j in i..p {
                let mut dir = nalgebra::DMatrix::zeros(p, p);
                dir[(i, j)] += 0.5;
                dir[(j, i)] += 0.5;
                let dir = SymMatrix::from_symmetrized(dir);
                let plus = base.lincomb(1.0, &dir, h).unwrap();
                let minus = base.lincomb(1.0, &dir, -h).unwrap();
                let fd = (dense_objective(&e, &obs, &plus) - dense_objective(&e, &obs, &minus)) / (2.0 * h);
                assert!((fd - plain.get(i, j)).abs() < 1e-6, "({i},{j}): {fd} vs {}", plain.get(i, j));
            }
        }
        // Trace correction: exactly −(Tr L − ȳ) I.
        let c = l.trace() - y_bar;
        let corr = full.lincomb(1.0, &plain, -1.0).unwrap();
        for i in 0..p {
            for j in 0..p {
                let want = if i == j { -c } else { 0.0 };
                assert!((corr.get(i, j) - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn gradient_at_truth_is_pure_trace_bias() {
        let (truth, e, obs) = instance(12, 2, 300, 0.0, 5);
        let y_bar = mean_observation(&obs).unwrap();
        let g = bias_corrected_gradient(&e, &obs, y_bar, &truth.factors).unwrap();
        assert!(g.residuals.iter().all(|d| *d == 0.0));
        // ȳ is a sample mean of Tr-unbiased quadratic forms, not Tr(L_*).
        let c = truth.factors.trace() - y_bar;
        assert_eq!(g.shift, c);
        assert!(c != 0.0);
        let dense = materialize_gradient(&g).unwrap();
        assert!(dense.lincomb(1.0, &SymMatrix::identity(12), c).unwrap().fro_norm() < 1e-12);
    }

    #[test]
    fn ep_steps_converge_with_exact_mean() {
        // With ȳ replaced by Tr(L_*) the bias vanishes and L_* is a fixed
        // point; the projected iteration then converges to it.
        let (truth, e, obs) = instance(30, 2, 1500, 0.0, 11);
        let y_bar = truth.factors.trace();
        let mut l = LowRankFactors::zero(30);
        let mut err = f64::INFINITY;
        for _ in 0..100 {
            let g = materialize_gradient(&bias_corrected_gradient(&e, &obs, y_bar, &l).unwrap()).unwrap();
            l = truncated_eig(&l.reconstruct().lincomb(1.0, &g, -0.5).unwrap(), 2).unwrap();
            err = difference_norms(&l, &truth.factors).unwrap().0;
            if err < 1e-4 {
                break;
            }
        }
        assert!(err < 1e-4, "{err}");
    }

    /// `|Tr L_* − ȳ| / 2`: the error floor of the reuse iteration.
    fn bias_floor(truth: &GroundTruth, obs: &Observations) -> f64 {
        (truth.factors.trace() - mean_observation(obs).unwrap()).abs() / 2.0
    }

    #[test]
    fn eprom_settles_at_bias_floor() {
        for seed in [11, 12, 13] {
            let (truth, e, obs) = instance(30, 2, 1500, 0.0, seed);
            let floor = bias_floor(&truth, &obs);
            let mut cfg = RecoveryConfig::new(2, ProjectionMode::Exact);
            cfg.max_iters = 100;
            let (l, trace) = eprom_run(&Problem::fixed(&e, &obs, Some(&truth)), &cfg).unwrap();
            let err = trace.final_error().unwrap();
            assert!(err < 3.0 * floor + 1e-3, "seed {seed}: {err} vs floor {floor}");
            assert!(err > 0.5 * floor, "seed {seed}: {err} vs floor {floor}");
            assert!(l.rank() <= 2);
        }
    }

    #[test]
    fn one_step_from_truth_moves_by_bias() {
        let (truth, e, obs) = instance(20, 2, 800, 0.0, 5);
        let c = truth.factors.trace() - mean_observation(&obs).unwrap();
        let mut cfg = RecoveryConfig::new(2, ProjectionMode::Exact);
        cfg.max_iters = 1;
        cfg.tolerance = 0.0;
        let problem = Problem::fixed(&e, &obs, Some(&truth));
        let (l, _) = run_from(&problem, &cfg, truth.factors.clone()).unwrap();
        // P_r(L_* + ηcI) = L_* + ηc·P_U.
        let (spec, _) = difference_norms(&l, &truth.factors).unwrap();
        assert!((spec - 0.5 * c.abs()).abs() < 1e-10, "{spec} vs {}", 0.5 * c.abs());

        cfg.projection = ProjectionMode::Mbksvd;
        let (l, _) = run_from(&problem, &cfg, truth.factors.clone()).unwrap();
        let (spec, _) = difference_norms(&l, &truth.factors).unwrap();
        assert!(spec <= c.abs() + 1e-10, "{spec} vs {}", c.abs());
    }

    #[test]
    fn zero_truth_stops_immediately() {
        let p = 6;
        let truth = GroundTruth {
            matrix: SymMatrix::zeros(p),
            factors: LowRankFactors::zero(p),
            condition_number: 1.0,
        };
        let e = sample_ensemble(p, 50, 1).unwrap();
        let obs = observe(&e, &truth, 0.0, 2).unwrap();
        let cfg = RecoveryConfig::new(1, ProjectionMode::Exact);
        let (l, trace) = eprom_run(&Problem::fixed(&e, &obs, Some(&truth)), &cfg).unwrap();
        assert_eq!(trace.stop, StopReason::Stationary);
        assert!(trace.records.is_empty());
        assert_eq!(l.rank(), 0);
        let (spec, fro) = difference_norms(&l, &truth.factors).unwrap();
        assert_eq!((spec, fro), (0.0, 0.0));
    }

    #[test]
    fn fresh_sampling_needs_generator() {
        let (truth, e, obs) = instance(6, 1, 40, 0.0, 1);
        let mut cfg = RecoveryConfig::new(1, ProjectionMode::Exact);
        cfg.sampling = SamplingMode::Fresh;
        let err = eprom_run(&Problem::fixed(&e, &obs, Some(&truth)), &cfg).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let no_truth = Problem { measurements: Measurements::Generated { count: 10, noise_std: 0.0, streaming: false }, truth: None };
        assert!(matches!(eprom_run(&no_truth, &cfg).unwrap_err(), Error::Config(_)));
    }

    #[test]
    fn mode_guards() {
        let (truth, e, obs) = instance(6, 1, 40, 0.0, 1);
        let problem = Problem::fixed(&e, &obs, Some(&truth));
        assert!(eprom_run(&problem, &RecoveryConfig::new(1, ProjectionMode::Mbksvd)).is_err());
        assert!(aprom_run(&problem, &RecoveryConfig::new(1, ProjectionMode::Exact)).is_err());
    }

    #[test]
    fn config_validation() {
        let ok = RecoveryConfig::new(2, ProjectionMode::Mbksvd);
        assert!(ok.validate(10).is_ok());
        let mut c = ok.clone();
        c.step_size = 0.0;
        assert!(c.validate(10).is_err());
        let mut c = ok.clone();
        c.max_iters = 0;
        assert!(c.validate(10).is_err());
        let mut c = ok.clone();
        c.head_rank = 1;
        assert!(c.validate(10).is_err());
        let mut c = ok.clone();
        c.rank = 11;
        assert!(c.validate(10).is_err());
        let mut c = ok;
        c.accuracy = 1.0;
        assert!(c.validate(10).is_err());
    }

    #[test]
    fn exact_head_tail_tracks_eprom() {
        let (truth, e, obs) = instance(20, 2, 600, 0.0, 21);
        let problem = Problem::fixed(&e, &obs, Some(&truth));
        let mut ep = RecoveryConfig::new(2, ProjectionMode::Exact);
        ep.max_iters = 10;
        ep.tolerance = 0.0;
        let mut ap = ep.clone();
        ap.projection = ProjectionMode::ExactHeadTail;
        ap.head_rank = 20;
        for k in 1..=10 {
            ep.max_iters = k;
            ap.max_iters = k;
            let (le, te) = run(&problem, &ep).unwrap();
            let (la, ta) = run(&problem, &ap).unwrap();
            let (spec, _) = difference_norms(&le, &la).unwrap();
            assert!(spec < 1e-6, "iteration {k}: {spec}");
            assert_eq!(te.records.len(), ta.records.len());
        }
    }

    #[test]
    fn aprom_modes_converge_small() {
        let (truth, e, obs) = instance(30, 2, 6000, 0.0, 13);
        let floor = bias_floor(&truth, &obs);
        let problem = Problem::fixed(&e, &obs, Some(&truth));
        for mode in [ProjectionMode::Mbksvd, ProjectionMode::LanczosFreeBksvd, ProjectionMode::ExactHeadTail] {
            let mut cfg = RecoveryConfig::new(2, mode);
            cfg.max_iters = 150;
            let (l, trace) = aprom_run(&problem, &cfg).unwrap();
            let err = trace.final_error().unwrap();
            assert!(err < 0.05 && err < 4.0 * floor + 1e-3, "{mode:?}: {err} vs floor {floor}");
            assert!(l.rank() <= 2);
        }
    }

    #[test]
    fn iterates_stay_symmetric_and_low_rank() {
        let (truth, e, obs) = instance(16, 2, 500, 0.05, 31);
        let problem = Problem::fixed(&e, &obs, Some(&truth));
        for mode in [ProjectionMode::Exact, ProjectionMode::Mbksvd] {
            for k in [1, 3, 7] {
                let mut cfg = RecoveryConfig::new(2, mode);
                cfg.max_iters = k;
                let (l, _) = run(&problem, &cfg).unwrap();
                let dense = l.reconstruct();
                let m = dense.as_matrix();
                assert_eq!(m, &m.transpose());
                assert!(numerical_rank(&dense, 1e-8) <= 2);
            }
        }
    }

    #[test]
    fn fresh_sampling_counts_samples_and_is_reproducible() {
        let truth = generate_instance(20, 2, 1.0, 4).unwrap();
        let mut cfg = RecoveryConfig::new(2, ProjectionMode::Exact);
        cfg.sampling = SamplingMode::Fresh;
        cfg.max_iters = 6;
        cfg.tolerance = 0.0;
        cfg.seeds = Seeds::from_master(9);
        let problem = Problem::generated(&truth, 800, 0.0);
        let (a, ta) = run(&problem, &cfg).unwrap();
        let (b, tb) = run(&problem, &cfg).unwrap();
        assert_eq!(a, b);
        let used: Vec<usize> = ta.records.iter().map(|r| r.samples_used).collect();
        assert_eq!(used, (1..=ta.records.len()).map(|k| 800 * k).collect::<Vec<_>>());
        let errs = |t: &RecoveryTrace| t.records.iter().map(|r| r.rel_spec_err).collect::<Vec<_>>();
        assert_eq!(errs(&ta), errs(&tb));
        assert!(ta.final_error().unwrap() < 0.5);
    }

    #[test]
    fn streaming_generation_matches_stored() {
        let truth = generate_instance(15, 2, 2.0, 8).unwrap();
        let mut cfg = RecoveryConfig::new(2, ProjectionMode::Mbksvd);
        cfg.max_iters = 5;
        let stored = Problem::generated(&truth, 600, 0.1);
        let mut streaming = stored;
        streaming.measurements = Measurements::Generated { count: 600, noise_std: 0.1, streaming: true };
        let (a, _) = run(&stored, &cfg).unwrap();
        let (b, _) = run(&streaming, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn trace_csv_shape() {
        let (truth, e, obs) = instance(10, 1, 300, 0.0, 2);
        let mut cfg = RecoveryConfig::new(1, ProjectionMode::Exact);
        cfg.max_iters = 4;
        cfg.tolerance = 0.0;
        let (_, trace) = run(&Problem::fixed(&e, &obs, Some(&truth)), &cfg).unwrap();
        assert_eq!(trace.records.len(), 4);
        let mut out = Vec::new();
        trace.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], RecoveryTrace::HEADER);
        assert_eq!(lines.len(), 5);
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 8));
        assert!(lines[1].starts_with("1,"));
    }

    #[test]
    fn metrics_examples() {
        let (truth, e, obs) = instance(10, 2, 200, 0.1, 6);
        let at_truth = residual_metrics(&truth.factors, &truth.matrix, &e, &obs).unwrap();
        assert!(at_truth.rel_spec_err < 1e-12 && at_truth.fro_err < 1e-12);
        let noise: f64 = {
            let clean = apply_operator_factored(&e, &truth.factors).unwrap();
            clean.iter().zip(&obs.y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 400.0
        };
        assert!((at_truth.objective - noise).abs() < 1e-12);
        let at_zero = residual_metrics(&LowRankFactors::zero(10), &truth.matrix, &e, &obs).unwrap();
        assert!((at_zero.rel_spec_err - 1.0).abs() < 1e-10);

        let other = generate_instance(10, 3, 5.0, 19).unwrap().factors;
        let got = residual_metrics(&other, &truth.matrix, &e, &obs).unwrap();
        let diff = other.reconstruct().into_matrix() - truth.matrix.as_matrix();
        let eig = diff.clone().symmetric_eigen().eigenvalues;
        let spec = eig.amax() / truth.matrix.as_matrix().clone().symmetric_eigen().eigenvalues.amax();
        assert!((got.rel_spec_err - spec).abs() < 1e-9);
        assert!((got.fro_err - diff.norm()).abs() < 1e-9);
        assert!((got.objective - dense_objective(&e, &obs, &other.reconstruct())).abs() < 1e-9);
    }
}
