use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use romrec_core::recover::{ProjectionMode, SamplingMode};

#[derive(Parser, Debug)]
#[command(name = "romrec", version, about = "Low-rank recovery from rank-one projections: experiments and benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// One recovery run; writes the per-iteration trace.
    Run(CommonArgs),
    /// Success probability over an m grid.
    Phase(CommonArgs),
    /// Success probability over a condition-number grid.
    Condnum(CommonArgs),
    /// Per-iteration phase timings over a p grid.
    Scaling(CommonArgs),
    /// Monte-Carlo probes of the statistical identities.
    Probes(CommonArgs),
}

impl Command {
    pub fn args(&self) -> &CommonArgs {
        match self {
            Command::Run(a) | Command::Phase(a) | Command::Condnum(a) | Command::Scaling(a) | Command::Probes(a) => a,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Algo {
    Eprom,
    ApromBksvd,
    ApromMbksvd,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Eprom => "eprom",
            Algo::ApromBksvd => "aprom-bksvd",
            Algo::ApromMbksvd => "aprom-mbksvd",
        }
    }

    pub fn projection(self) -> ProjectionMode {
        match self {
            Algo::Eprom => ProjectionMode::Exact,
            Algo::ApromBksvd => ProjectionMode::LanczosFreeBksvd,
            Algo::ApromMbksvd => ProjectionMode::Mbksvd,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Sampling {
    Reuse,
    Fresh,
}

impl Sampling {
    pub fn name(self) -> &'static str {
        match self {
            Sampling::Reuse => "reuse",
            Sampling::Fresh => "fresh",
        }
    }

    pub fn mode(self) -> SamplingMode {
        match self {
            Sampling::Reuse => SamplingMode::Reuse,
            Sampling::Fresh => SamplingMode::Fresh,
        }
    }
}

#[derive(Args, Clone, Debug)]
pub struct CommonArgs {
    /// Dimension p.
    #[arg(long)]
    pub p: Option<usize>,
    /// p grid (scaling): `a,b,c` or `start:end:step`.
    #[arg(long)]
    pub p_grid: Option<String>,
    /// Rank r.
    #[arg(long)]
    pub r: Option<usize>,
    /// Number of measurements m.
    #[arg(long)]
    pub m: Option<usize>,
    /// m grid (phase): `a,b,c` or `start:end:step`.
    #[arg(long)]
    pub m_grid: Option<String>,
    /// Condition number of the planted matrix.
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Condition-number grid (condnum).
    #[arg(long)]
    pub kappa_grid: Option<String>,
    /// Solver(s); comma-separated for the sweeps.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub algo: Vec<Algo>,
    /// Step size η.
    #[arg(long, default_value_t = 0.5)]
    pub eta: f64,
    /// Maximum iterations K.
    #[arg(long, default_value_t = 200)]
    pub iters: usize,
    /// Stop once the relative spectral error reaches this.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Standard deviation of the additive Gaussian noise.
    #[arg(long, default_value_t = 0.0)]
    pub noise_std: f64,
    /// Master seed.
    #[arg(long, env = "ROMREC_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Trials per grid cell (phase, condnum) or per probe (probes).
    #[arg(long)]
    pub trials: Option<usize>,
    /// Success threshold on the relative spectral error.
    #[arg(long, default_value_t = 0.05)]
    pub threshold: f64,
    #[arg(long, value_enum, default_value_t = Sampling::Reuse)]
    pub sampling: Sampling,
    /// Krylov accuracy ϑ.
    #[arg(long, default_value_t = 0.1)]
    pub theta: f64,
    /// Krylov depth override.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Head rank (default 2r).
    #[arg(long)]
    pub head_rank: Option<usize>,
    /// Worker threads for independent trials (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Run all --iters iterations even when the objective stalls.
    #[arg(long)]
    pub no_stall_stop: bool,
    /// Regenerate sensing vectors on demand instead of storing them.
    #[arg(long)]
    pub streaming: bool,
    /// Timed iterations per cell after one warm-up (scaling).
    #[arg(long, default_value_t = 3)]
    pub timing_iters: usize,
    /// Output CSV (default stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Ground truth to load (ROM1) instead of generating one (run).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Observations to load (`index,y` CSV); the ensemble is regenerated
    /// from --seed (run, reuse).
    #[arg(long)]
    pub obs: Option<PathBuf>,
    /// Write the ground truth (ROM1) (run).
    #[arg(long)]
    pub save_truth: Option<PathBuf>,
    /// Write the observations (run, reuse).
    #[arg(long)]
    pub save_obs: Option<PathBuf>,
    /// Write the final estimate (ROM1) (run).
    #[arg(long)]
    pub save_estimate: Option<PathBuf>,
}
