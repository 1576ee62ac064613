//! Experiment drivers behind the CLI subcommands. Each returns the CSV
//! text plus diagnostic notes; nothing here touches stdout.

use std::fmt::Write as _;
use std::fs;

use rayon::prelude::*;
use romrec_core::diag::{self, ProbeReport};
use romrec_core::recover::{self, Measurements, Problem, RecoveryConfig, RecoveryTrace, Seeds};
use romrec_core::rng::derive_seed;
use romrec_core::sensing::{generate_instance, observe, GroundTruth, Observations, RankOneEnsemble};
use romrec_core::{rom1, Error, Result};

use crate::cli::{Algo, CommonArgs, Sampling};
use crate::grid::{parse_f64_grid, parse_usize_grid};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Run,
    Phase,
    Condnum,
    Scaling,
    Probes,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Run => "run",
            Kind::Phase => "phase",
            Kind::Condnum => "condnum",
            Kind::Scaling => "scaling",
            Kind::Probes => "probes",
        }
    }
}

/// Everything needed to replay an experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub kind: Kind,
    pub p_grid: Vec<usize>,
    pub rank: usize,
    pub m_grid: Vec<usize>,
    pub kappa_grid: Vec<f64>,
    pub noise_std: f64,
    pub algos: Vec<Algo>,
    /// Trials per cell; for probes an override of every probe's default.
    pub trials: Option<usize>,
    pub seed: u64,
    pub eta: f64,
    pub iters: usize,
    pub tol: f64,
    pub threshold: f64,
    pub sampling: Sampling,
    pub theta: f64,
    pub depth: Option<usize>,
    pub head_rank: Option<usize>,
    pub streaming: bool,
    pub stall_stop: bool,
    pub timing_iters: usize,
    pub threads: Option<usize>,
}

/// Default trials per phase/condnum cell.
pub const DEFAULT_TRIALS: usize = 10;

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

impl ExperimentSpec {
    /// Applies the per-command defaults and validates.
    pub fn from_args(kind: Kind, a: &CommonArgs) -> Result<Self> {
        let usize_grid = |grid: &Option<String>, single: Option<usize>, default: &str| -> Result<Vec<usize>> {
            match (grid, single) {
                (Some(g), _) => parse_usize_grid(g),
                (None, Some(v)) => Ok(vec![v]),
                (None, None) => parse_usize_grid(default),
            }
        };
        let (p_grid, m_grid) = match kind {
            Kind::Scaling => (usize_grid(&a.p_grid, a.p, "250,500,1000")?, usize_grid(&None, a.m, "20000")?),
            Kind::Phase => (usize_grid(&None, a.p, "100")?, usize_grid(&a.m_grid, a.m, "1000:8000:1000")?),
            Kind::Condnum => (usize_grid(&None, a.p, "100")?, usize_grid(&None, a.m, "6000")?),
            Kind::Run | Kind::Probes => (usize_grid(&None, a.p, "100")?, usize_grid(&None, a.m, "5000")?),
        };
        let kappa_grid = match (kind, &a.kappa_grid, a.kappa) {
            (Kind::Condnum, Some(g), _) => parse_f64_grid(g)?,
            (Kind::Condnum, None, None) => vec![1.0, 10.0, 100.0],
            (_, _, Some(k)) => vec![k],
            _ => vec![1.0],
        };
        let algos = if !a.algo.is_empty() {
            a.algo.clone()
        } else if kind == Kind::Run {
            vec![Algo::Eprom]
        } else {
            vec![Algo::Eprom, Algo::ApromMbksvd]
        };
        let spec = Self {
            kind,
            p_grid,
            rank: a.r.unwrap_or(5),
            m_grid,
            kappa_grid,
            noise_std: a.noise_std,
            algos,
            trials: a.trials,
            seed: a.seed,
            eta: a.eta,
            iters: a.iters,
            tol: a.tol,
            threshold: a.threshold,
            sampling: a.sampling,
            theta: a.theta,
            depth: a.depth,
            head_rank: a.head_rank,
            streaming: a.streaming,
            stall_stop: !a.no_stall_stop,
            timing_iters: a.timing_iters,
            threads: a.threads,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p_grid.is_empty() || self.m_grid.is_empty() || self.kappa_grid.is_empty() || self.algos.is_empty() {
            return Err(usage("grids must be non-empty"));
        }
        if self.p_grid.contains(&0) {
            return Err(usage("p must be positive"));
        }
        if self.m_grid.contains(&0) {
            return Err(usage("m must be positive"));
        }
        if self.rank == 0 || self.p_grid.iter().any(|&p| self.rank > p) {
            return Err(usage(format!("rank {} must be in 1..=p", self.rank)));
        }
        if self.kappa_grid.iter().any(|k| !(*k >= 1.0 && k.is_finite())) {
            return Err(usage("condition numbers must be finite and >= 1"));
        }
        if self.trials == Some(0) {
            return Err(usage("trials must be at least 1"));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(usage("eta must be positive"));
        }
        if self.iters == 0 {
            return Err(usage("iters must be at least 1"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(usage("noise-std must be >= 0"));
        }
        if !(self.tol >= 0.0) {
            return Err(usage("tol must be >= 0"));
        }
        if !(self.threshold > 0.0) {
            return Err(usage("threshold must be positive"));
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(usage("theta must be in (0, 1)"));
        }
        if self.depth == Some(0) {
            return Err(usage("depth must be at least 1"));
        }
        if self.timing_iters == 0 {
            return Err(usage("timing-iters must be at least 1"));
        }
        if self.threads == Some(0) {
            return Err(usage("threads must be at least 1"));
        }
        if self.kind == Kind::Run && self.algos.len() != 1 {
            return Err(usage("run takes exactly one --algo"));
        }
        Ok(())
    }

    pub fn cell_trials(&self) -> usize {
        self.trials.unwrap_or(DEFAULT_TRIALS)
    }

    /// Flat `k=v;k=v` replay record.
    pub fn config_line(&self) -> String {
        fn join<T: ToString>(v: &[T]) -> String {
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        }
        let algos: Vec<&str> = self.algos.iter().map(|a| a.name()).collect();
        let opt = |v: Option<usize>| v.map_or("auto".to_string(), |v| v.to_string());
        let trials = match (self.kind, self.trials) {
            (Kind::Probes, None) => "default".to_string(),
            _ => self.cell_trials().to_string(),
        };
        format!(
            "cmd={};p={};r={};m={};kappa={};algo={};eta={};iters={};tol={};noise_std={};trials={};threshold={};sampling={};theta={};depth={};head_rank={};streaming={};stall_stop={};timing_iters={}",
            self.kind.name(),
            join(&self.p_grid),
            self.rank,
            join(&self.m_grid),
            join(&self.kappa_grid),
            algos.join(","),
            self.eta,
            self.iters,
            self.tol,
            self.noise_std,
            trials,
            self.threshold,
            self.sampling.name(),
            self.theta,
            opt(self.depth),
            opt(self.head_rank),
            self.streaming,
            self.stall_stop,
            self.timing_iters,
        )
    }

    pub fn recovery_config(&self, algo: Algo, seed: u64) -> RecoveryConfig {
        let mut c = RecoveryConfig::new(self.rank, algo.projection());
        c.step_size = self.eta;
        c.max_iters = self.iters;
        c.tolerance = self.tol;
        c.sampling = self.sampling.mode();
        c.head_rank = self.head_rank.unwrap_or(2 * self.rank);
        c.accuracy = self.theta;
        c.depth = self.depth;
        c.stall_stop = self.stall_stop;
        c.seeds = Seeds::from_master(seed);
        c
    }

    fn header(&self) -> String {
        format!("# seed={}\n# config={}\n", self.seed, self.config_line())
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads.unwrap_or(0))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))
    }
}

/// CSV text and human-readable notes for stderr.
#[derive(Clone, Debug, Default)]
pub struct Report {
    pub csv: String,
    pub notes: Vec<String>,
    /// Set by `probes` when any probe fails.
    pub probe_failed: bool,
}

pub fn trial_seed(master: u64, trial: usize) -> u64 {
    derive_seed(master, "trial", trial as u64)
}

/// Planted instance of a trial; shared by every algorithm and m in a sweep.
pub fn trial_instance(p: usize, r: usize, kappa: f64, seed: u64) -> Result<GroundTruth> {
    generate_instance(p, r, kappa, derive_seed(seed, "truth", 0))
}

#[derive(Clone, Debug)]
pub struct TrialOutcome {
    pub final_error: f64,
    pub trace: RecoveryTrace,
}

/// One solver run on the planted instance of `trial`.
pub fn run_trial(spec: &ExperimentSpec, algo: Algo, p: usize, m: usize, kappa: f64, trial: usize) -> Result<TrialOutcome> {
    let seed = trial_seed(spec.seed, trial);
    let truth = trial_instance(p, spec.rank, kappa, seed)?;
    let problem = Problem {
        measurements: Measurements::Generated { count: m, noise_std: spec.noise_std, streaming: spec.streaming },
        truth: Some(&truth),
    };
    let (_, trace) = recover::run(&problem, &spec.recovery_config(algo, seed))?;
    let final_error = trace.final_error().unwrap_or(f64::INFINITY);
    Ok(TrialOutcome { final_error, trace })
}

/// Successes among `trials` seeds: final relative spectral error strictly
/// below the threshold (non-finite errors fail).
pub fn success_count(spec: &ExperimentSpec, algo: Algo, p: usize, m: usize, kappa: f64) -> Result<usize> {
    let pool = spec.pool()?;
    let outcomes: Vec<Result<bool>> = pool.install(|| {
        (0..spec.cell_trials())
            .into_par_iter()
            .map(|t| run_trial(spec, algo, p, m, kappa, t).map(|o| o.final_error < spec.threshold))
            .collect()
    });
    let mut n = 0;
    for o in outcomes {
        n += o? as usize;
    }
    Ok(n)
}

pub fn cmd_phase(spec: &ExperimentSpec) -> Result<Report> {
    let mut csv = spec.header();
    csv.push_str("algo,p,r,m,trials,successes,prob\n");
    let (p, kappa, trials) = (spec.p_grid[0], spec.kappa_grid[0], spec.cell_trials());
    for &algo in &spec.algos {
        for &m in &spec.m_grid {
            let s = success_count(spec, algo, p, m, kappa)?;
            let _ = writeln!(csv, "{},{p},{},{m},{trials},{s},{}", algo.name(), spec.rank, s as f64 / trials as f64);
        }
    }
    Ok(Report { csv, ..Default::default() })
}

pub fn cmd_condnum(spec: &ExperimentSpec) -> Result<Report> {
    let mut csv = spec.header();
    csv.push_str("algo,p,r,m,kappa,trials,successes,prob\n");
    let (p, m, trials) = (spec.p_grid[0], spec.m_grid[0], spec.cell_trials());
    for &algo in &spec.algos {
        for &kappa in &spec.kappa_grid {
            let s = success_count(spec, algo, p, m, kappa)?;
            let _ = writeln!(
                csv,
                "{},{p},{},{m},{kappa},{trials},{s},{}",
                algo.name(),
                spec.rank,
                s as f64 / trials as f64
            );
        }
    }
    Ok(Report { csv, ..Default::default() })
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => s[n / 2],
        _ => 0.5 * (s[n / 2 - 1] + s[n / 2]),
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_exponent(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Timing {
    pub iter_ms: f64,
    pub grad_ms: f64,
    pub head_ms: f64,
    pub tail_ms: f64,
}

/// Median phase timings over `spec.timing_iters` iterations after one
/// warm-up iteration. Convergence stops are disabled.
pub fn time_cell(spec: &ExperimentSpec, algo: Algo, p: usize, m: usize) -> Result<Timing> {
    let truth = generate_instance(p, spec.rank, spec.kappa_grid[0], derive_seed(spec.seed, "truth", p as u64))?;
    let problem = Problem {
        measurements: Measurements::Generated { count: m, noise_std: spec.noise_std, streaming: spec.streaming },
        truth: Some(&truth),
    };
    let mut config = spec.recovery_config(algo, derive_seed(spec.seed, "scaling", p as u64));
    config.max_iters = 1 + spec.timing_iters;
    config.tolerance = 0.0;
    let (_, trace) = recover::run(&problem, &config)?;
    let timed = trace.records.get(1..).unwrap_or(&[]);
    if timed.is_empty() {
        return Err(Error::Config(format!("{} stopped before the timed iterations ({:?})", algo.name(), trace.stop)));
    }
    let col = |f: fn(&recover::IterationRecord) -> f64| median(&timed.iter().map(f).collect::<Vec<_>>());
    Ok(Timing {
        iter_ms: col(|r| r.grad_ms + r.head_ms + r.tail_ms),
        grad_ms: col(|r| r.grad_ms),
        head_ms: col(|r| r.head_ms),
        tail_ms: col(|r| r.tail_ms),
    })
}

/// Timings run one cell at a time on the calling thread.
pub fn cmd_scaling(spec: &ExperimentSpec) -> Result<Report> {
    let mut csv = spec.header();
    csv.push_str("algo,p,r,m,iter_ms,grad_ms,head_ms,tail_ms\n");
    let m = spec.m_grid[0];
    let mut notes = Vec::new();
    for &algo in &spec.algos {
        let mut rows = Vec::new();
        for &p in &spec.p_grid {
            let t = time_cell(spec, algo, p, m)?;
            let _ = writeln!(
                csv,
                "{},{p},{},{m},{:.3},{:.3},{:.3},{:.3}",
                algo.name(),
                spec.rank,
                t.iter_ms,
                t.grad_ms,
                t.head_ms,
                t.tail_ms
            );
            rows.push((p as f64, t));
        }
        if rows.len() >= 2 {
            let ps: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let fit = |f: fn(&Timing) -> f64| fit_exponent(&ps, &rows.iter().map(|r| f(&r.1)).collect::<Vec<_>>());
            notes.push(format!(
                "fit algo={} exponent iter={:.2} grad={:.2} head={:.2} tail={:.2}",
                algo.name(),
                fit(|t| t.iter_ms),
                fit(|t| t.grad_ms),
                fit(|t| t.head_ms),
                fit(|t| t.tail_ms)
            ));
        }
    }
    Ok(Report { csv, notes, probe_failed: false })
}

/// The probe battery at desk sizes; `trials` overrides every probe's
/// default trial count.
pub fn run_probes(seed: u64, trials: Option<usize>, threads: Option<usize>) -> Result<Vec<ProbeReport>> {
    let t = |default: usize| trials.unwrap_or(default);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let probe = |k: usize| -> Result<ProbeReport> {
        match k {
            0 | 1 => {
                let m_mat = generate_instance(20, 3, 2.0, derive_seed(seed, "matrix", 0))?.matrix;
                if k == 0 {
                    diag::probe_expectation_identity(20, 2000, &m_mat, t(100), derive_seed(seed, "expectation", 0))
                } else {
                    diag::probe_expectation_rate(20, 2000, &m_mat, t(100), 4, derive_seed(seed, "expectation_rate", 0))
                }
            }
            2 => {
                let truth = generate_instance(20, 2, 1.0, derive_seed(seed, "truth", 0))?;
                diag::probe_mean_observation(&truth, 10_000, t(200), derive_seed(seed, "mean_observation", 0))
            }
            3 => diag::probe_statistical_error(30, 3000, 0.1, t(50), derive_seed(seed, "statistical_error", 0)),
            _ => {
                let l1 = generate_instance(30, 3, 1.0, derive_seed(seed, "l1", 0))?.matrix;
                let l2 = generate_instance(30, 3, 1.0, derive_seed(seed, "l2", 0))?.matrix;
                diag::probe_curip(&l1, &l2, &[1_000, 10_000], 0.5, t(10), derive_seed(seed, "curip", 0))
            }
        }
    };
    let out: Vec<Result<ProbeReport>> = pool.install(|| (0..5).into_par_iter().map(probe).collect());
    out.into_iter().collect()
}

pub fn cmd_probes(spec: &ExperimentSpec) -> Result<Report> {
    let reports = run_probes(spec.seed, spec.trials, spec.threads)?;
    let mut buf = spec.header().into_bytes();
    ProbeReport::write_csv(&reports, &mut buf)?;
    let failed: Vec<&str> = reports.iter().filter(|r| !r.pass).map(|r| r.probe.as_str()).collect();
    let notes = if failed.is_empty() { vec![] } else { vec![format!("failed probes: {}", failed.join(", "))] };
    Ok(Report {
        csv: String::from_utf8(buf).expect("CSV is UTF-8"),
        notes,
        probe_failed: !failed.is_empty(),
    })
}

/// `run`, including the matrix and observation import/export flags.
pub fn cmd_run(spec: &ExperimentSpec, args: &CommonArgs) -> Result<Report> {
    let mut spec = spec.clone();
    let algo = spec.algos[0];
    let seeds = Seeds::from_master(spec.seed);
    let truth = match &args.truth {
        Some(path) => Some(GroundTruth::from_matrix(rom1::load(path)?, spec.rank)?),
        None if args.obs.is_some() => None,
        None => Some(generate_instance(spec.p_grid[0], spec.rank, spec.kappa_grid[0], derive_seed(spec.seed, "truth", 0))?),
    };
    if let Some(t) = &truth {
        spec.p_grid = vec![t.dim()];
    }
    let p = spec.p_grid[0];
    let fresh = spec.sampling == Sampling::Fresh;
    if fresh && (args.obs.is_some() || args.save_obs.is_some()) {
        return Err(usage("observation files need --sampling reuse"));
    }

    let imported = match &args.obs {
        Some(path) => {
            let obs = Observations::parse_csv(&fs::read_to_string(path)?, spec.noise_std, seeds.ensemble)?;
            if obs.is_empty() {
                return Err(Error::Format("observation file has no rows".into()));
            }
            spec.m_grid = vec![obs.len()];
            let e = if spec.streaming {
                RankOneEnsemble::streaming(p, obs.len(), seeds.ensemble)?
            } else {
                RankOneEnsemble::sample(p, obs.len(), seeds.ensemble)?
            };
            Some((e, obs))
        }
        None => None,
    };
    let m = spec.m_grid[0];

    if let Some(path) = &args.save_truth {
        let t = truth.as_ref().ok_or_else(|| usage("--save-truth needs a ground truth"))?;
        rom1::save(&t.matrix, path)?;
    }
    if let Some(path) = &args.save_obs {
        let t = truth.as_ref().ok_or_else(|| usage("--save-obs needs a ground truth"))?;
        let e = RankOneEnsemble::sample(p, m, seeds.ensemble)?;
        let obs = observe(&e, t, spec.noise_std, seeds.noise)?;
        let mut buf = spec.header().into_bytes();
        obs.write_csv(&mut buf)?;
        fs::write(path, buf)?;
    }

    let problem = match &imported {
        Some((e, obs)) => Problem::fixed(e, obs, truth.as_ref()),
        None => Problem {
            measurements: Measurements::Generated { count: m, noise_std: spec.noise_std, streaming: spec.streaming },
            truth: truth.as_ref(),
        },
    };
    let (estimate, trace) = recover::run(&problem, &spec.recovery_config(algo, spec.seed))?;
    if let Some(path) = &args.save_estimate {
        rom1::save(&estimate.reconstruct(), path)?;
    }

    let mut buf = spec.header().into_bytes();
    trace.write_csv(&mut buf)?;
    let note = format!(
        "{}: stop={:?} iterations={} final_rel_err={}",
        algo.name(),
        trace.stop,
        trace.records.len(),
        trace.final_error().map_or("n/a".to_string(), |e| format!("{e:.6}"))
    );
    Ok(Report { csv: String::from_utf8(buf).expect("CSV is UTF-8"), notes: vec![note], probe_failed: false })
}
