//! Sweep orchestration: estimator families evaluated over a grid of
//! spectrum indices, batch sizes, and trials, with bias/variance/MSE
//! aggregation and bootstrap confidence intervals.
//!
//! Trials are independent work units and run in parallel (capped by the
//! `SOPE_THREADS` environment variable; 0 or unset means one worker per
//! core). Output is schedule-independent: rows are stably sorted before
//! aggregation, and every random stream is derived deterministically from
//! the base seed.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::envs::{build_graph_env, build_toy_mc_env, make_static_policy, TOY_MC_HORIZON};
use crate::error::{Error, Result};
use crate::estimators::{
    DrNextAction, EstimatorFamily, EstimatorSpec, RatioWindowMode,
};
use crate::mdp::{StaticPolicy, TabularMdp};
use crate::occupancy::exact_j;
use crate::qvalue::{exact_q, perturbed_q, HorizonMode, QTable};
use crate::ratio::{
    estimate_model, estimate_ratio, estimate_ratio_truncated, oracle_ratio, RatioKind,
    RatioMethod, RatioTable, MODEL_SMOOTHING,
};
use crate::sampling::{sample_dataset, Dataset, RNG_ALGORITHM};

/// Stride between dataset seed blocks; documented in run metadata.
pub const SEED_STRIDE: u64 = 1_000_003;

/// Number of bootstrap resamples behind each MSE confidence interval.
pub const BOOTSTRAP_RESAMPLES: usize = 1000;

/// Which benchmark environment a sweep runs on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnvSpec {
    Graph { chain_len: usize, gamma: f64 },
    ToyMc { gamma: f64 },
}

impl EnvSpec {
    pub fn build(&self) -> Result<TabularMdp> {
        match *self {
            EnvSpec::Graph { chain_len, gamma } => build_graph_env(chain_len, gamma),
            EnvSpec::ToyMc { gamma } => build_toy_mc_env(gamma),
        }
    }

    pub fn horizon(&self) -> usize {
        match *self {
            EnvSpec::Graph { chain_len, .. } => chain_len,
            EnvSpec::ToyMc { .. } => TOY_MC_HORIZON,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnvSpec::Graph { .. } => "graph",
            EnvSpec::ToyMc { .. } => "toy_mc",
        }
    }
}

/// Where the correction ratio fed to SIS and the spectrum families comes
/// from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatioSelect {
    /// Exact DP ratio on the true environment.
    Oracle,
    /// Estimated from each dataset via a fitted model.
    ModelBased,
    /// Estimated from each dataset via the tabular stationarity solve.
    MinmaxTabular,
}

impl RatioSelect {
    pub fn name(&self) -> &'static str {
        match self {
            RatioSelect::Oracle => "oracle",
            RatioSelect::ModelBased => "model-based",
            RatioSelect::MinmaxTabular => "minmax-tabular",
        }
    }
}

/// Where the doubly-robust q function comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QSource {
    /// Exact q on the true environment.
    Exact,
    /// Exact q on a transition-perturbed copy of the environment.
    Perturbed { epsilon: f64 },
    /// q evaluated on a model fit from each dataset.
    Estimated,
}

/// Full description of one sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub pi_e_p: f64,
    pub pi_b_p: f64,
    /// Spectrum indices to evaluate; `None` means every n from 0 to the
    /// horizon.
    pub n_values: Option<Vec<usize>>,
    pub batch_sizes: Vec<usize>,
    pub trials: usize,
    pub base_seed: u64,
    pub families: Vec<EstimatorFamily>,
    pub ratio_method: RatioSelect,
    pub ratio_mode: RatioWindowMode,
    pub dr_q_source: QSource,
}

impl ExperimentConfig {
    /// The fast built-in preset: a short graph chain, two small batch
    /// sizes, eight trials. Exercises the full pipeline in well under ten
    /// seconds.
    pub fn demo() -> Self {
        ExperimentConfig {
            env: EnvSpec::Graph { chain_len: 6, gamma: 0.98 },
            pi_e_p: 0.9,
            pi_b_p: 0.5,
            n_values: None,
            batch_sizes: vec![64, 128],
            trials: 8,
            base_seed: 7,
            families: vec![EstimatorFamily::Sope, EstimatorFamily::Wsope],
            ratio_method: RatioSelect::ModelBased,
            ratio_mode: RatioWindowMode::Average,
            dr_q_source: QSource::Exact,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let horizon = self.env.horizon();
        if !(0.0..=1.0).contains(&self.pi_e_p) || !(0.0..=1.0).contains(&self.pi_b_p) {
            return Err(Error::Config("policy probabilities must lie in [0, 1]".into()));
        }
        if self.trials < 2 {
            return Err(Error::Config("trials must be at least 2 for variance estimates".into()));
        }
        if self.batch_sizes.is_empty() || self.batch_sizes.iter().any(|&b| b == 0) {
            return Err(Error::Config("batch_sizes must be nonempty and positive".into()));
        }
        if self.families.is_empty() {
            return Err(Error::Config("at least one estimator family is required".into()));
        }
        if let Some(ns) = &self.n_values {
            if ns.is_empty() {
                return Err(Error::Config("n_values must be nonempty when given".into()));
            }
            if let Some(&bad) = ns.iter().find(|&&n| n > horizon) {
                return Err(Error::Config(format!(
                    "n value {bad} exceeds the environment horizon {horizon}"
                )));
            }
        }
        if let QSource::Perturbed { epsilon } = self.dr_q_source {
            if !(0.0..=1.0).contains(&epsilon) {
                return Err(Error::Config(format!(
                    "q perturbation epsilon must lie in [0, 1], got {epsilon}"
                )));
            }
        }
        self.env.build()?;
        Ok(())
    }

    /// The spectrum indices a family contributes rows for.
    fn ns_for(&self, family: EstimatorFamily, horizon: usize) -> Vec<usize> {
        if family.is_spectrum() {
            match &self.n_values {
                Some(ns) => {
                    let mut ns = ns.clone();
                    ns.sort_unstable();
                    ns.dedup();
                    ns
                }
                None => (0..=horizon).collect(),
            }
        } else {
            // Fixed families sit at one point of the spectrum: SIS at 0,
            // the trajectory-product families at the horizon.
            match family {
                EstimatorFamily::Sis => vec![0],
                _ => vec![horizon],
            }
        }
    }
}

/// One estimate from one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub family: EstimatorFamily,
    pub n: usize,
    pub batch_size: usize,
    pub trial: usize,
    pub estimate: f64,
}

/// Per-cell aggregate across trials.
#[derive(Debug, Clone, PartialEq)]
pub struct AggRow {
    pub family: EstimatorFamily,
    pub n: usize,
    pub batch_size: usize,
    pub bias: f64,
    pub variance: f64,
    pub mse: f64,
    pub mse_ci_lo: f64,
    pub mse_ci_hi: f64,
}

/// Reproducibility record attached to every sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepMetadata {
    pub version: String,
    pub rng_algorithm: String,
    /// Formula mapping (batch index, trial) to a dataset seed.
    pub seed_derivation: String,
    pub ratio_method: String,
    pub bootstrap: String,
    pub wall_clock_secs: f64,
}

/// Everything a sweep produces.
#[derive(Debug, Clone)]
pub struct SweepReport {
    pub true_j: f64,
    pub rows: Vec<RawRow>,
    pub aggregates: Vec<AggRow>,
    pub metadata: SweepMetadata,
    pub config: ExperimentConfig,
}

/// Seed for the dataset drawn at (batch index, trial). Blocks are spaced
/// `SEED_STRIDE` apart so per-trajectory seeds (dataset seed + index) never
/// overlap across cells.
pub fn dataset_seed(base_seed: u64, batch_index: usize, trials: usize, trial: usize) -> u64 {
    base_seed.wrapping_add(SEED_STRIDE.wrapping_mul((batch_index * trials + trial) as u64))
}

fn mix_seed(base: u64, parts: &[u64]) -> u64 {
    let mut h = base ^ 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h ^= h >> 27;
    }
    h
}

/// Builds the worker pool, honoring `SOPE_THREADS` (0 = one per core).
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var("SOPE_THREADS") {
        Err(_) => 0,
        Ok(raw) => raw.parse::<usize>().map_err(|_| {
            Error::InvalidArgument(format!(
                "SOPE_THREADS must be a nonnegative integer, got `{raw}`"
            ))
        })?,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("failed to build worker pool: {e}")))
}

struct SharedInputs {
    mdp: TabularMdp,
    pi_b: StaticPolicy,
    pi_e: StaticPolicy,
    /// Oracle ratios, when the config asks for them: the full-horizon
    /// average plus any truncated windows needed.
    oracle_avg: Option<RatioTable>,
    oracle_trunc: Vec<(usize, RatioTable)>,
    /// q for the doubly-robust family, unless it is per-dataset estimated.
    fixed_q: Option<QTable>,
}

/// Which window lengths truncated-mode spectrum runs will ask for.
fn truncation_windows(config: &ExperimentConfig, horizon: usize) -> Vec<usize> {
    if config.ratio_mode != RatioWindowMode::Truncated {
        return Vec::new();
    }
    let mut windows: Vec<usize> = config
        .families
        .iter()
        .filter(|f| f.is_spectrum())
        .flat_map(|&f| config.ns_for(f, horizon))
        .filter(|&n| n < horizon)
        .map(|n| horizon - n)
        .collect();
    windows.sort_unstable();
    windows.dedup();
    windows
}

fn prepare_shared(config: &ExperimentConfig) -> Result<SharedInputs> {
    let mdp = config.env.build()?;
    let pi_b = make_static_policy(mdp.n_states(), config.pi_b_p)?;
    let pi_e = make_static_policy(mdp.n_states(), config.pi_e_p)?;
    let needs_ratio = config.families.iter().any(|f| {
        f.is_spectrum() || matches!(f, EstimatorFamily::Sis)
    });
    let mut oracle_avg = None;
    let mut oracle_trunc = Vec::new();
    if needs_ratio && config.ratio_method == RatioSelect::Oracle {
        oracle_avg = Some(oracle_ratio(&mdp, &pi_e, &pi_b, RatioKind::OracleAverage)?);
        for window in truncation_windows(config, mdp.horizon()) {
            let table = oracle_ratio(&mdp, &pi_e, &pi_b, RatioKind::OracleTruncated(window))?;
            oracle_trunc.push((window, table));
        }
    }
    let fixed_q = if config.families.contains(&EstimatorFamily::Drsope) {
        match config.dr_q_source {
            QSource::Exact => Some(exact_q(&mdp, &pi_e, HorizonMode::Infinite)?),
            QSource::Perturbed { epsilon } => {
                Some(perturbed_q(&mdp, &pi_e, epsilon, HorizonMode::Infinite)?)
            }
            QSource::Estimated => None,
        }
    } else {
        None
    };
    Ok(SharedInputs { mdp, pi_b, pi_e, oracle_avg, oracle_trunc, fixed_q })
}

/// Per-dataset ratio tables: the full-horizon table plus any truncated
/// windows, estimated once and shared across every family and n evaluated
/// on that dataset.
struct CellInputs {
    ratio_avg: Option<RatioTable>,
    ratio_trunc: Vec<(usize, RatioTable)>,
    q: Option<QTable>,
}

fn prepare_cell(
    config: &ExperimentConfig,
    shared: &SharedInputs,
    dataset: &Dataset,
) -> Result<CellInputs> {
    let horizon = dataset.horizon();
    let needs_ratio = config.families.iter().any(|f| {
        f.is_spectrum() || matches!(f, EstimatorFamily::Sis)
    });
    let method = match config.ratio_method {
        RatioSelect::Oracle => None,
        RatioSelect::ModelBased => Some(RatioMethod::ModelBased),
        RatioSelect::MinmaxTabular => Some(RatioMethod::MinmaxTabular),
    };
    let (ratio_avg, ratio_trunc) = match (needs_ratio, method) {
        (false, _) => (None, Vec::new()),
        (true, None) => (shared.oracle_avg.clone(), shared.oracle_trunc.clone()),
        (true, Some(method)) => {
            let avg = estimate_ratio(dataset, method)?;
            let mut trunc = Vec::new();
            for window in truncation_windows(config, horizon) {
                trunc.push((window, estimate_ratio_truncated(dataset, method, window)?));
            }
            (Some(avg), trunc)
        }
    };
    let q = if config.families.contains(&EstimatorFamily::Drsope) {
        match config.dr_q_source {
            QSource::Estimated => {
                let model = estimate_model(dataset, MODEL_SMOOTHING)?;
                Some(exact_q(&model.mdp, &dataset.pi_e, HorizonMode::Infinite)?)
            }
            _ => shared.fixed_q.clone(),
        }
    } else {
        None
    };
    Ok(CellInputs { ratio_avg, ratio_trunc, q })
}

fn ratio_for(inputs: &CellInputs, mode: RatioWindowMode, horizon: usize, n: usize) -> Option<&RatioTable> {
    match mode {
        RatioWindowMode::Average => inputs.ratio_avg.as_ref(),
        RatioWindowMode::Truncated => {
            if n >= horizon {
                // The ratio is unused at the PDIS endpoint; hand back the
                // average table if there is one so the call site stays
                // uniform.
                inputs.ratio_avg.as_ref()
            } else {
                let window = horizon - n;
                inputs.ratio_trunc.iter().find(|(w, _)| *w == window).map(|(_, t)| t)
            }
        }
    }
}

fn run_cell(
    config: &ExperimentConfig,
    shared: &SharedInputs,
    batch_index: usize,
    batch_size: usize,
    trial: usize,
) -> Result<Vec<RawRow>> {
    let seed = dataset_seed(config.base_seed, batch_index, config.trials, trial);
    let dataset = sample_dataset(&shared.mdp, &shared.pi_b, &shared.pi_e, batch_size, seed)?;
    let inputs = prepare_cell(config, shared, &dataset)?;
    let horizon = dataset.horizon();
    let mut rows = Vec::new();
    for &family in &config.families {
        for n in config.ns_for(family, horizon) {
            // SIS always reads the full-horizon table; spectrum families
            // follow the configured window mode.
            let ratio = if family == EstimatorFamily::Sis {
                inputs.ratio_avg.as_ref()
            } else if family.is_spectrum() {
                ratio_for(&inputs, config.ratio_mode, horizon, n)
            } else {
                None
            };
            let spec = EstimatorSpec {
                family,
                n,
                ratio_mode: config.ratio_mode,
                dr_next_action: DrNextAction::Expectation,
            };
            let estimate =
                spec.evaluate(&dataset, ratio, inputs.q.as_ref()).map_err(|e| Error::Estimator {
                    family: family.name().to_string(),
                    n,
                    batch_size,
                    trial,
                    source: Box::new(e),
                })?;
            rows.push(RawRow { family, n, batch_size, trial, estimate: estimate.value });
        }
    }
    Ok(rows)
}

/// Runs the full sweep described by `config`.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepReport> {
    config.validate()?;
    let started = Instant::now();
    let shared = prepare_shared(config)?;
    let true_j = exact_j(&shared.mdp, &shared.pi_e)?;

    let cells: Vec<(usize, usize, usize)> = config
        .batch_sizes
        .iter()
        .enumerate()
        .flat_map(|(bi, &bs)| (0..config.trials).map(move |t| (bi, bs, t)))
        .collect();

    let pool = worker_pool()?;
    let results: Vec<Result<Vec<RawRow>>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(bi, bs, trial)| run_cell(config, &shared, bi, bs, trial))
            .collect()
    });

    let mut rows = Vec::new();
    for cell in results {
        rows.extend(cell?);
    }
    rows.sort_by(|x, y| {
        (x.family, x.n, x.batch_size, x.trial).cmp(&(y.family, y.n, y.batch_size, y.trial))
    });
    let aggregates = aggregate(&rows, true_j, config.base_seed)?;

    Ok(SweepReport {
        true_j,
        rows,
        aggregates,
        metadata: SweepMetadata {
            version: env!("CARGO_PKG_VERSION").to_string(),
            rng_algorithm: RNG_ALGORITHM.to_string(),
            seed_derivation: format!(
                "dataset_seed = base_seed + {SEED_STRIDE} * (batch_index * trials + trial); \
                 trajectory_seed = dataset_seed + trajectory_index"
            ),
            ratio_method: config.ratio_method.name().to_string(),
            bootstrap: format!("percentile, {BOOTSTRAP_RESAMPLES} resamples, seeded"),
            wall_clock_secs: started.elapsed().as_secs_f64(),
        },
        config: config.clone(),
    })
}

/// Collapses raw rows into per-(family, n, batch size) aggregates: bias,
/// Bessel-corrected sample variance, mean squared error against `true_j`,
/// and a seeded percentile-bootstrap confidence interval on the MSE.
///
/// Rows must already be sorted by (family, n, batch_size, trial); every
/// cell needs at least two trials.
pub fn aggregate(rows: &[RawRow], true_j: f64, base_seed: u64) -> Result<Vec<AggRow>> {
    let mut aggregates = Vec::new();
    let mut i = 0;
    while i < rows.len() {
        let key = (rows[i].family, rows[i].n, rows[i].batch_size);
        let mut estimates = Vec::new();
        while i < rows.len() && (rows[i].family, rows[i].n, rows[i].batch_size) == key {
            estimates.push(rows[i].estimate);
            i += 1;
        }
        let k = estimates.len();
        if k < 2 {
            return Err(Error::InvalidArgument(format!(
                "cell {}/n={}/batch={} has {k} trial(s); variance needs at least 2",
                key.0, key.1, key.2
            )));
        }
        let mean = estimates.iter().sum::<f64>() / k as f64;
        let bias = mean - true_j;
        let variance =
            estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
        let sq_errors: Vec<f64> = estimates.iter().map(|e| (e - true_j).powi(2)).collect();
        let mse = sq_errors.iter().sum::<f64>() / k as f64;
        let (mse_ci_lo, mse_ci_hi) = bootstrap_mean_ci(
            &sq_errors,
            mix_seed(base_seed, &[key.0 as u64, key.1 as u64, key.2 as u64]),
        );
        aggregates.push(AggRow {
            family: key.0,
            n: key.1,
            batch_size: key.2,
            bias,
            variance,
            mse,
            mse_ci_lo,
            mse_ci_hi,
        });
    }
    Ok(aggregates)
}

/// Percentile bootstrap CI (2.5%, 97.5%) for the mean of `values`.
pub fn bootstrap_mean_ci(values: &[f64], seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = values.len();
    let mut means = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let mut acc = 0.0;
        for _ in 0..k {
            acc += values[rng.random_range(0..k)];
        }
        means.push(acc / k as f64);
    }
    means.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let take = |q: f64| means[(q * (BOOTSTRAP_RESAMPLES - 1) as f64).round() as usize];
    (take(0.025), take(0.975))
}
