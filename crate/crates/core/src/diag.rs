//! Monte-Carlo probes of the statistical identities behind the solvers.
//!
//! Tail-bound constants are unknowable, so the probes check mean identities
//! directly and decay rates through ratio tests on geometric grids.

use std::fmt::Write as _;
use std::io::Write;

use crate::error::{dim_err, Error, Result};
use crate::matcore::SymMatrix;
use crate::rng::{derive_seed, stream_rng, standard_normal};
use crate::sensing::{apply_adjoint, apply_operator, apply_operator_factored, sample_ensemble, GroundTruth};

/// Accepted band for the ratio of a `1/√n` statistic at `n` and `4n`.
pub const RATE_BAND: (f64, f64) = (1.5, 2.7);
/// Accepted band for the `p → 2p` growth relative to `√(p log p)`.
pub const GROWTH_BAND: (f64, f64) = (0.5, 2.0);
/// Relative tolerance of the expectation identity.
pub const EXPECTATION_TOL: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    pub probe: String,
    pub params: Vec<(String, String)>,
    pub measured: f64,
    pub predicted: f64,
    pub pass: bool,
    pub seed: u64,
}

impl ProbeReport {
    pub const HEADER: &'static str = "probe,param_json,measured,predicted,pass,seed";

    fn new(probe: &str, seed: u64) -> Self {
        Self { probe: probe.into(), params: Vec::new(), measured: 0.0, predicted: 0.0, pass: false, seed }
    }

    fn param(mut self, key: &str, value: impl ToString) -> Self {
        self.params.push((key.into(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.params.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// `k=v;k=v`.
    pub fn param_string(&self) -> String {
        let mut out = String::new();
        for (i, (k, v)) in self.params.iter().enumerate() {
            if i > 0 {
                out.push(';');
            }
            let _ = write!(out, "{k}={v}");
        }
        out
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.probe,
            self.param_string(),
            self.measured,
            self.predicted,
            self.pass,
            self.seed
        )
    }

    pub fn write_csv<W: Write>(reports: &[ProbeReport], mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::HEADER)?;
        for r in reports {
            writeln!(w, "{}", r.csv_row())?;
        }
        Ok(())
    }
}

/// Parses a `k=v;k=v` parameter string. Keys are `[A-Za-z0-9_]+`; values
/// may not contain `;`, `,`, `=` or newlines. The empty string is no
/// parameters.
pub fn parse_params(s: &str) -> Result<Vec<(String, String)>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|item| {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("parameter {item:?} has no '='")))?;
            if k.is_empty() || !k.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(Error::Format(format!("bad parameter key {k:?}")));
            }
            if v.contains([',', '\n', '\r', '=']) {
                return Err(Error::Format(format!("bad parameter value {v:?}")));
            }
            Ok((k.to_string(), v.to_string()))
        })
        .collect()
}

fn check_trials(trials: usize) -> Result<()> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be positive".into()));
    }
    Ok(())
}

fn in_band(x: f64, band: (f64, f64)) -> bool {
    x >= band.0 && x <= band.1
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

/// `‖avg_t (1/m) A_t*A_t(M) − (2M + Tr(M) I)‖₂` over `trials` fresh
/// ensembles.
fn expectation_deviation(m_mat: &SymMatrix, m: usize, trials: usize, seed: u64) -> Result<f64> {
    let p = m_mat.dim();
    let mut acc = SymMatrix::zeros(p);
    for t in 0..trials {
        let e = sample_ensemble(p, m, derive_seed(seed, "trial", t as u64))?;
        let a = apply_operator(&e, m_mat)?;
        acc = acc.lincomb(1.0, &apply_adjoint(&e, &a)?, 1.0)?;
    }
    let avg = acc.scaled(1.0 / (m * trials) as f64);
    let mut target = m_mat.scaled(2.0);
    target.shift_diagonal(m_mat.trace());
    Ok(avg.lincomb(1.0, &target, -1.0)?.spectral_norm())
}

/// Deviation of the Monte-Carlo mean of `(1/m)A*A(M)` from `2M + Tr(M)I`.
/// Passes when the deviation is at most `0.05·(2‖M‖₂ + Tr M)`.
pub fn probe_expectation_identity(p: usize, m: usize, m_mat: &SymMatrix, trials: usize, seed: u64) -> Result<ProbeReport> {
    check_trials(trials)?;
    if m_mat.dim() != p {
        return dim_err(format!("matrix {} vs p = {p}", m_mat.dim()));
    }
    let dev = expectation_deviation(m_mat, m, trials, seed)?;
    let bound = EXPECTATION_TOL * (2.0 * m_mat.spectral_norm() + m_mat.trace());
    let mut r = ProbeReport::new("expectation_identity", seed)
        .param("p", p)
        .param("m", m)
        .param("trials", trials)
        .param("ref_scale", 1.0 / ((m * trials) as f64).sqrt());
    r.measured = dev;
    r.predicted = bound;
    r.pass = dev <= bound;
    Ok(r)
}

/// Ratio of the RMS deviation (over `replicates`) at budget `m·trials` to
/// that at four times the budget. Predicted 2.
pub fn probe_expectation_rate(
    p: usize,
    m: usize,
    m_mat: &SymMatrix,
    trials: usize,
    replicates: usize,
    seed: u64,
) -> Result<ProbeReport> {
    check_trials(trials)?;
    check_trials(replicates)?;
    if m_mat.dim() != p {
        return dim_err(format!("matrix {} vs p = {p}", m_mat.dim()));
    }
    let mut small = Vec::with_capacity(replicates);
    let mut large = Vec::with_capacity(replicates);
    for k in 0..replicates {
        small.push(expectation_deviation(m_mat, m, trials, derive_seed(seed, "budget1", k as u64))?);
        large.push(expectation_deviation(m_mat, m, 4 * trials, derive_seed(seed, "budget4", k as u64))?);
    }
    let ratio = rms(&small) / rms(&large);
    let mut r = ProbeReport::new("expectation_rate", seed)
        .param("p", p)
        .param("m", m)
        .param("trials", trials)
        .param("replicates", replicates)
        .param("dev_b", rms(&small))
        .param("dev_4b", rms(&large));
    r.measured = ratio;
    r.predicted = 2.0;
    r.pass = in_band(ratio, RATE_BAND);
    Ok(r)
}

/// `|ȳ − Tr(L_*)|` per trial, noiseless.
fn mean_deviations(truth: &GroundTruth, m: usize, trials: usize, seed: u64) -> Result<Vec<f64>> {
    let tr = truth.factors.trace();
    (0..trials)
        .map(|t| {
            let e = sample_ensemble(truth.dim(), m, derive_seed(seed, "trial", t as u64))?;
            let y = apply_operator_factored(&e, &truth.factors)?;
            Ok((y.iter().sum::<f64>() / m as f64 - tr).abs())
        })
        .collect()
}

/// Concentration of `ȳ` around `Tr(L_*)`. `x'Lx` has variance `2‖L‖_F²`,
/// so the mean absolute deviation is `√(2/π)·√(2/m)·‖L‖_F`. Passes when
/// the `m` vs `4m` ratio of mean deviations is in [1.5, 2.7] and no trial
/// exceeds five standard deviations.
pub fn probe_mean_observation(truth: &GroundTruth, m: usize, trials: usize, seed: u64) -> Result<ProbeReport> {
    check_trials(trials)?;
    if m == 0 {
        return Err(Error::InvalidArgument("m must be positive".into()));
    }
    let sd = (2.0 / m as f64).sqrt() * truth.matrix.fro_norm();
    let here = mean_deviations(truth, m, trials, derive_seed(seed, "m", 1))?;
    let four = mean_deviations(truth, 4 * m, trials, derive_seed(seed, "m", 4))?;
    let (mean_m, mean_4m) = (mean(&here), mean(&four));
    let max = here.iter().cloned().fold(0.0, f64::max);
    let predicted = (2.0 / std::f64::consts::PI).sqrt() * sd;
    let (ratio, pass) = if sd == 0.0 {
        (1.0, mean_m == 0.0 && mean_4m == 0.0)
    } else {
        let ratio = mean_m / mean_4m;
        (ratio, in_band(ratio, RATE_BAND) && max <= 5.0 * sd)
    };
    let mut r = ProbeReport::new("mean_observation", seed)
        .param("p", truth.dim())
        .param("r", truth.rank())
        .param("m", m)
        .param("trials", trials)
        .param("max", max)
        .param("ratio_m_4m", ratio)
        .param("fitted_c", if truth.factors.trace() > 0.0 { mean_m * (m as f64).sqrt() / truth.factors.trace() } else { 0.0 });
    r.measured = mean_m;
    r.predicted = predicted;
    r.pass = pass;
    Ok(r)
}

/// `‖(1/m) A*e‖₂` for Gaussian `e` of standard deviation σ, per trial.
fn noise_norms(p: usize, m: usize, sigma: f64, trials: usize, seed: u64) -> Result<Vec<f64>> {
    (0..trials)
        .map(|t| {
            let e = sample_ensemble(p, m, derive_seed(seed, "ensemble", t as u64))?;
            let mut rng = stream_rng(derive_seed(seed, "noise", t as u64), 0);
            let noise: Vec<f64> = (0..m).map(|_| sigma * standard_normal(&mut rng)).collect();
            Ok(apply_adjoint(&e, &noise)?.scaled(1.0 / m as f64).spectral_norm())
        })
        .collect()
}

/// Size of the noise term `(1/m)A*e`. Reference `σ√(p log p / m)`; passes
/// when the `m` vs `4m` ratio is in [1.5, 2.7] and the `p → 2p` growth
/// divided by the `√(p log p)` growth is in [0.5, 2]. σ = 0 must give 0.
pub fn probe_statistical_error(p: usize, m: usize, sigma: f64, trials: usize, seed: u64) -> Result<ProbeReport> {
    check_trials(trials)?;
    if p < 2 || m == 0 {
        return Err(Error::InvalidArgument("need p >= 2 and m >= 1".into()));
    }
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise std {sigma} must be >= 0")));
    }
    let base = mean(&noise_norms(p, m, sigma, trials, derive_seed(seed, "base", 0))?);
    let reference = |p: usize, m: usize| sigma * ((p as f64) * (p as f64).ln() / m as f64).sqrt();
    let mut r = ProbeReport::new("statistical_error", seed)
        .param("p", p)
        .param("m", m)
        .param("sigma", sigma)
        .param("trials", trials);
    r.measured = base;
    r.predicted = reference(p, m);
    if sigma == 0.0 {
        r.pass = base == 0.0;
        return Ok(r);
    }
    let four_m = mean(&noise_norms(p, 4 * m, sigma, trials, derive_seed(seed, "four_m", 0))?);
    let two_p = mean(&noise_norms(2 * p, m, sigma, trials, derive_seed(seed, "two_p", 0))?);
    let m_ratio = base / four_m;
    let growth = (two_p / base) / (reference(2 * p, m) / reference(p, m));
    r.pass = in_band(m_ratio, RATE_BAND) && in_band(growth, GROWTH_BAND);
    Ok(r.param("ratio_m_4m", m_ratio).param("growth_p_2p", growth))
}

/// Empirical CU-RIP left side
/// `‖D − ρ((1/m)A*A(D) − (Tr L₁ − ȳ)I)‖₂`, `D = L₁ − L₂`, `y = A(L₂)`,
/// divided by `‖D‖₂` (absolute when `D = 0`), averaged over trials for
/// each `m` in the grid. The expected operator maps `D` to `2D`, so the
/// ratio tends to `|1 − 2ρ|`. Passes when the ratio is nonincreasing in `m`.
pub fn probe_curip(
    l1: &SymMatrix,
    l2: &SymMatrix,
    m_grid: &[usize],
    rho: f64,
    trials: usize,
    seed: u64,
) -> Result<ProbeReport> {
    check_trials(trials)?;
    if l1.dim() != l2.dim() {
        return dim_err(format!("{} vs {}", l1.dim(), l2.dim()));
    }
    if m_grid.is_empty() || m_grid.contains(&0) {
        return Err(Error::InvalidArgument("m grid must be non-empty and positive".into()));
    }
    let p = l1.dim();
    let d = l1.lincomb(1.0, l2, -1.0)?;
    let d_norm = d.spectral_norm();
    let mut ratios = Vec::with_capacity(m_grid.len());
    for (k, &m) in m_grid.iter().enumerate() {
        let mut vals = Vec::with_capacity(trials);
        for t in 0..trials {
            let e = sample_ensemble(p, m, derive_seed(seed, "curip", (k * trials + t) as u64))?;
            let y = apply_operator(&e, l2)?;
            let y_bar = y.iter().sum::<f64>() / m as f64;
            let ad = apply_operator(&e, &d)?;
            let mut inner = apply_adjoint(&e, &ad)?.scaled(1.0 / m as f64);
            inner.shift_diagonal(-(l1.trace() - y_bar));
            let lhs = d.lincomb(1.0, &inner, -rho)?.spectral_norm();
            vals.push(if d_norm > 0.0 { lhs / d_norm } else { lhs });
        }
        ratios.push(mean(&vals));
    }
    let nonincreasing = ratios.windows(2).all(|w| w[1] <= w[0]);
    let grid: Vec<String> = m_grid.iter().map(|m| m.to_string()).collect();
    let values: Vec<String> = ratios.iter().map(|v| v.to_string()).collect();
    let mut r = ProbeReport::new("curip", seed)
        .param("p", p)
        .param("m_grid", grid.join(":"))
        .param("rho", rho)
        .param("trials", trials)
        .param("ratios", values.join(":"));
    r.measured = *ratios.last().expect("non-empty grid");
    r.predicted = (1.0 - 2.0 * rho).abs();
    r.pass = nonincreasing;
    Ok(r)
}
