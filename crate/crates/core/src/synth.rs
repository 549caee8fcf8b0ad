//! Synthetic spatial environments, analytic and Monte-Carlo ATE oracles,
//! and the replication benchmark harness.
//!
//! Outcomes follow `Y_it = 3·O_it·sin(l_x + l_y + s·(A_it + 0.5·Ā_it)) + e_it`
//! with `Ā_it` the neighbor-average treatment (0 for isolated regions) and
//! residual rows drawn from a zero-mean Gaussian with the configured spatial
//! covariance. Treatment coins, covariates and noise use separate derived
//! RNG streams per repetition index, so two environments with the same seed
//! produce identical covariates and noise regardless of the designs they
//! are sampled under — the common-random-numbers device the benchmark
//! relies on.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::cgc::{run_cgc, run_with_known_covariance, BatchSource, CgcConfig};
use crate::covariance::{factorize_for_sampling, CovarianceMatrix};
use crate::error::{Error, Result};
use crate::estimator::{dr_estimate, fit_outcome_model, ExperimentBatch, RegressionSpec};
use crate::graph::{Clustering, RegionGraph};
use crate::seed::{derive, stream};
use crate::spectral::{default_m_max, kmeans, laplacian, spectral_embed, SpectralConfig};

/// Default repetition count for the Monte-Carlo ATE oracle.
pub const DEFAULT_MC_REPS: usize = 1000;

/// Covariate distribution, iid across regions and repetitions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CovariateLaw {
    Uniform { low: f64, high: f64 },
    Constant(f64),
}

impl Default for CovariateLaw {
    fn default() -> Self {
        CovariateLaw::Uniform { low: 0.5, high: 1.5 }
    }
}

impl CovariateLaw {
    pub fn mean(&self) -> f64 {
        match *self {
            CovariateLaw::Uniform { low, high } => 0.5 * (low + high),
            CovariateLaw::Constant(c) => c,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            CovariateLaw::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            CovariateLaw::Constant(c) => c,
        }
    }
}

/// Data generator over a region graph with fixed covariance and signal
/// strength. Stateful only through the repetition counter.
#[derive(Clone, Debug)]
pub struct SyntheticEnv {
    graph: RegionGraph,
    covariance: CovarianceMatrix,
    noise_factor: DMatrix<f64>,
    signal_strength: f64,
    covariate_law: CovariateLaw,
    seed: u64,
    next_rep: usize,
}

impl SyntheticEnv {
    pub fn new(
        graph: RegionGraph,
        covariance: CovarianceMatrix,
        signal_strength: f64,
        covariate_law: CovariateLaw,
        seed: u64,
    ) -> Result<Self> {
        if covariance.dim() != graph.region_count() {
            return Err(Error::Dimension(format!(
                "covariance is {}x{} but graph has {} regions",
                covariance.dim(),
                covariance.dim(),
                graph.region_count()
            )));
        }
        if signal_strength <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "signal strength must be positive, got {signal_strength}"
            )));
        }
        if let CovariateLaw::Uniform { low, high } = covariate_law {
            if low >= high {
                return Err(Error::InvalidArgument(format!(
                    "uniform covariate law needs low < high, got [{low}, {high}]"
                )));
            }
        }
        let noise_factor = factorize_for_sampling(&covariance);
        Ok(SyntheticEnv {
            graph,
            covariance,
            noise_factor,
            signal_strength,
            covariate_law,
            seed,
            next_rep: 0,
        })
    }

    pub fn graph(&self) -> &RegionGraph {
        &self.graph
    }

    pub fn covariance(&self) -> &CovarianceMatrix {
        &self.covariance
    }

    pub fn signal_strength(&self) -> f64 {
        self.signal_strength
    }

    /// Rewind the repetition counter; the next batch replays the stream.
    pub fn reset(&mut self) {
        self.next_rep = 0;
    }

    fn outcome(&self, i: usize, o: f64, a: f64, a_bar: f64, noise: f64) -> f64 {
        let (lx, ly) = self.graph.coord(i);
        3.0 * o * (lx + ly + self.signal_strength * (a + 0.5 * a_bar)).sin() + noise
    }

    fn noise_row(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let r = self.graph.region_count();
        let z = DVector::from_fn(r, |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.noise_factor * z
    }

    /// Draw `n` repetitions under `design`: independent Bernoulli(0.5)
    /// cluster coins, iid covariates, correlated Gaussian noise.
    pub fn sample_batch(&mut self, design: &Clustering, n: usize) -> Result<ExperimentBatch> {
        if design.len() != self.graph.region_count() {
            return Err(Error::Dimension(format!(
                "design covers {} regions but graph has {}",
                design.len(),
                self.graph.region_count()
            )));
        }
        let r = self.graph.region_count();
        let mut covariates = DMatrix::zeros(n, r);
        let mut treatments = DMatrix::zeros(n, r);
        let mut outcomes = DMatrix::zeros(n, r);
        for t in 0..n {
            let rep = (self.next_rep + t) as u64;
            let mut rng_a = ChaCha8Rng::seed_from_u64(derive(self.seed, stream::TREATMENT, rep));
            let mut rng_o = ChaCha8Rng::seed_from_u64(derive(self.seed, stream::COVARIATE, rep));
            let mut rng_e = ChaCha8Rng::seed_from_u64(derive(self.seed, stream::NOISE, rep));
            let coins: Vec<u8> = (0..design.cluster_count())
                .map(|_| u8::from(rng_a.random_bool(0.5)))
                .collect();
            let noise = self.noise_row(&mut rng_e);
            for i in 0..r {
                treatments[(t, i)] = coins[design.label(i)];
                covariates[(t, i)] = self.covariate_law.sample(&mut rng_o);
            }
            for i in 0..r {
                let a = f64::from(treatments[(t, i)]);
                let a_bar = neighbor_avg(&self.graph, i, &treatments, t);
                outcomes[(t, i)] = self.outcome(i, covariates[(t, i)], a, a_bar, noise[i]);
            }
        }
        self.next_rep += n;
        ExperimentBatch::new(covariates, treatments, outcomes, design.clone())
    }

    /// Analytic ATE. Under the all-treated arm the sinusoid argument gains
    /// `s·1.5` for regions with neighbors and `s·1` for isolated ones.
    pub fn true_ate(&self) -> f64 {
        let mu = self.covariate_law.mean();
        (0..self.graph.region_count())
            .map(|i| {
                let (lx, ly) = self.graph.coord(i);
                let bump = if self.graph.degree(i) > 0 { 1.5 } else { 1.0 };
                3.0 * mu
                    * ((lx + ly + self.signal_strength * bump).sin() - (lx + ly).sin())
            })
            .sum()
    }

    /// Monte-Carlo ATE oracle: paired all-treated / all-control repetitions
    /// with common random numbers for covariates and noise. Returns the
    /// mean difference and its standard error (zero when `n_mc` = 1).
    pub fn mc_ate(&self, n_mc: usize) -> Result<(f64, f64)> {
        if n_mc == 0 {
            return Err(Error::InvalidArgument("mc_ate needs at least one repetition".into()));
        }
        let r = self.graph.region_count();
        let mut diffs = Vec::with_capacity(n_mc);
        for t in 0..n_mc {
            let mut rng_o =
                ChaCha8Rng::seed_from_u64(derive(self.seed, stream::MC_ORACLE, t as u64));
            let mut rng_e =
                ChaCha8Rng::seed_from_u64(derive(self.seed, stream::MC_PAIRED, t as u64));
            let noise = self.noise_row(&mut rng_e);
            let mut diff = 0.0;
            for i in 0..r {
                let o = self.covariate_law.sample(&mut rng_o);
                let a_bar_treated = if self.graph.degree(i) > 0 { 1.0 } else { 0.0 };
                let y1 = self.outcome(i, o, 1.0, a_bar_treated, noise[i]);
                let y0 = self.outcome(i, o, 0.0, 0.0, noise[i]);
                diff += y1 - y0;
            }
            diffs.push(diff);
        }
        let mean = diffs.iter().sum::<f64>() / n_mc as f64;
        let se = if n_mc > 1 {
            let var =
                diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n_mc - 1) as f64;
            (var / n_mc as f64).sqrt()
        } else {
            0.0
        };
        Ok((mean, se))
    }
}

fn neighbor_avg(g: &RegionGraph, i: usize, treatments: &DMatrix<u8>, t: usize) -> f64 {
    let nbhd = g.neighborhood(i);
    if nbhd.len() <= 1 {
        return 0.0;
    }
    let sum: f64 = nbhd
        .iter()
        .filter(|&&j| j != i)
        .map(|&j| f64::from(treatments[(t, j)]))
        .sum();
    sum / (nbhd.len() - 1) as f64
}

impl BatchSource for SyntheticEnv {
    fn graph(&self) -> &RegionGraph {
        &self.graph
    }

    fn sample_batch(&mut self, design: &Clustering, n: usize) -> Result<ExperimentBatch> {
        SyntheticEnv::sample_batch(self, design, n)
    }
}

/// Replication-averaged squared estimation error, normalized by the squared
/// true value.
pub fn relative_mse(estimates: &[f64], truth: f64) -> Result<f64> {
    if estimates.is_empty() {
        return Err(Error::InvalidArgument("relative MSE needs at least one estimate".into()));
    }
    if truth == 0.0 {
        return Err(Error::InvalidArgument("relative MSE undefined at zero truth".into()));
    }
    Ok(estimates.iter().map(|e| ((e - truth) / truth).powi(2)).sum::<f64>()
        / estimates.len() as f64)
}

/// Design-selection methods compared by the benchmark.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// Iterative causal graph cut with estimated covariance.
    Cgc,
    /// Graph cut from the true covariance.
    Ocgc,
    /// Global design (one cluster).
    Global,
    /// Individual design (all singletons).
    Individual,
    /// Fixed square tiling with this many tiles per side.
    Tiling(usize),
    /// Spectral clustering of the raw adjacency into `⌈R^{2/3}⌉` clusters —
    /// a proxy for external spectral-clustering baselines.
    AdjacencySpectral,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Cgc => write!(f, "CGC"),
            Method::Ocgc => write!(f, "OCGC"),
            Method::Global => write!(f, "GD"),
            Method::Individual => write!(f, "ID"),
            Method::Tiling(k) => write!(f, "tiling({k})"),
            Method::AdjacencySpectral => write!(f, "adjacency-spectral"),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "CGC" | "cgc" => Ok(Method::Cgc),
            "OCGC" | "ocgc" => Ok(Method::Ocgc),
            "GD" | "gd" => Ok(Method::Global),
            "ID" | "id" => Ok(Method::Individual),
            "adjacency-spectral" => Ok(Method::AdjacencySpectral),
            other => {
                if let Some(inner) = other
                    .strip_prefix("tiling(")
                    .and_then(|rest| rest.strip_suffix(')'))
                {
                    let k = inner.parse::<usize>().map_err(|_| {
                        Error::Parse(format!("bad tiling parameter '{inner}'"))
                    })?;
                    return Ok(Method::Tiling(k));
                }
                Err(Error::Parse(format!("unknown method '{other}'")))
            }
        }
    }
}

/// Environment parameter swept by a benchmark.
#[derive(Clone, Debug)]
pub enum Sweep {
    /// Vary the covariance parameter ρ at a fixed repetition budget.
    Rho { values: Vec<f64>, n_reps: usize },
    /// Vary the repetition budget at a fixed ρ.
    Reps { values: Vec<usize>, rho: f64 },
}

/// Everything a benchmark run needs besides the environment family.
#[derive(Clone, Debug)]
pub struct BenchmarkConfig {
    pub replications: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub regression: RegressionSpec,
    pub shrinkage: f64,
    pub covariance_mode: crate::cgc::CovarianceMode,
    pub m_max: Option<usize>,
    pub spectral: SpectralConfig,
    pub signal_strength: f64,
    pub covariate_law: CovariateLaw,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            replications: 50,
            batch_size: 20,
            seed: 0,
            regression: RegressionSpec::PooledRidge { penalty: 1e-3 },
            shrinkage: 0.1,
            covariance_mode: crate::cgc::CovarianceMode::Cumulative,
            m_max: None,
            spectral: SpectralConfig::default(),
            signal_strength: 0.025,
            covariate_law: CovariateLaw::default(),
        }
    }
}

/// One aggregated benchmark row. `rel_mse` and `se` are NaN when no
/// replication produced a defined estimate (the undefined flag).
#[derive(Clone, Debug)]
pub struct BenchmarkRow {
    pub method: Method,
    pub param_name: &'static str,
    pub param_value: f64,
    pub rel_mse: f64,
    pub se: f64,
    /// Number of replications with a defined estimate.
    pub replications: usize,
    pub wall_ms: u128,
}

#[derive(Clone, Debug, Default)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchmarkRow>,
}

/// Covariance constructor for a sweep point: maps ρ to the environment
/// covariance (typically one of the model structures).
pub type CovarianceBuilder<'a> = dyn Fn(f64) -> Result<CovarianceMatrix> + Sync + 'a;

/// Run every method at every sweep point with common random numbers: all
/// methods at a point consume identical per-replication environment seeds,
/// and covariate/noise streams do not depend on the design.
pub fn benchmark(
    graph: &RegionGraph,
    make_covariance: &CovarianceBuilder<'_>,
    sweep: &Sweep,
    methods: &[Method],
    cfg: &BenchmarkConfig,
) -> Result<BenchmarkReport> {
    if cfg.replications == 0 {
        return Err(Error::InvalidArgument("benchmark needs at least one replication".into()));
    }
    let points: Vec<(f64, usize)> = match sweep {
        Sweep::Rho { values, n_reps } => values.iter().map(|&r| (r, *n_reps)).collect(),
        Sweep::Reps { values, rho } => values.iter().map(|&n| (*rho, n)).collect(),
    };
    if methods.contains(&Method::Cgc) {
        for &(_, n_reps) in &points {
            let eff = cfg.batch_size.min(n_reps).max(1);
            if n_reps % eff != 0 {
                return Err(Error::InvalidArgument(format!(
                    "batch size {eff} must divide the repetition budget {n_reps} for CGC"
                )));
            }
        }
    }
    let param_name = match sweep {
        Sweep::Rho { .. } => "rho",
        Sweep::Reps { .. } => "n",
    };
    let mut rows = Vec::new();
    for (point_idx, &(rho, n_reps)) in points.iter().enumerate() {
        let sigma = make_covariance(rho)?;
        for &method in methods {
            let start = Instant::now();
            let estimates: Vec<Option<f64>> = (0..cfg.replications)
                .into_par_iter()
                .map(|rep| {
                    let env_seed =
                        derive(cfg.seed, stream::REPLICATION, (point_idx * 1_000_003 + rep) as u64);
                    run_method(graph, &sigma, method, n_reps, env_seed, cfg)
                })
                .collect::<Result<_>>()?;
            let defined: Vec<f64> = estimates.iter().flatten().copied().collect();
            let env = SyntheticEnv::new(
                graph.clone(),
                sigma.clone(),
                cfg.signal_strength,
                cfg.covariate_law,
                cfg.seed,
            )?;
            let truth = env.true_ate();
            let (rel, se) = if defined.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                let sq: Vec<f64> =
                    defined.iter().map(|e| ((e - truth) / truth).powi(2)).collect();
                let mean = sq.iter().sum::<f64>() / sq.len() as f64;
                let se = if sq.len() > 1 {
                    let var = sq.iter().map(|x| (x - mean).powi(2)).sum::<f64>()
                        / (sq.len() - 1) as f64;
                    (var / sq.len() as f64).sqrt()
                } else {
                    0.0
                };
                (mean, se)
            };
            rows.push(BenchmarkRow {
                method,
                param_name,
                param_value: match sweep {
                    Sweep::Rho { .. } => rho,
                    Sweep::Reps { .. } => n_reps as f64,
                },
                rel_mse: rel,
                se,
                replications: defined.len(),
                wall_ms: start.elapsed().as_millis(),
            });
        }
    }
    Ok(BenchmarkReport { rows })
}

/// One replication of one method: pick a design, collect data, estimate.
/// Returns `None` when the estimate is undefined (global design without
/// both arms observed).
fn run_method(
    graph: &RegionGraph,
    sigma: &CovarianceMatrix,
    method: Method,
    n_reps: usize,
    env_seed: u64,
    cfg: &BenchmarkConfig,
) -> Result<Option<f64>> {
    let mut env = SyntheticEnv::new(
        graph.clone(),
        sigma.clone(),
        cfg.signal_strength,
        cfg.covariate_law,
        env_seed,
    )?;
    let r = graph.region_count();
    let fixed_design = match method {
        Method::Cgc => {
            // Start the loop from the global design: an individual-design
            // first round carries its full variance penalty into the final
            // averaged estimate on positively correlated environments.
            let cgc_cfg = CgcConfig {
                batch_size: cfg.batch_size.min(n_reps).max(1),
                total_repetitions: n_reps,
                initial_design: Some(Clustering::global(r)),
                covariance_mode: cfg.covariance_mode,
                shrinkage: cfg.shrinkage,
                regression: cfg.regression,
                m_max: cfg.m_max,
                crossfit_folds: None,
                spectral: SpectralConfig { rng_seed: env_seed, ..cfg.spectral.clone() },
                seed: env_seed,
            };
            let trace = run_cgc(&mut env, &cgc_cfg)?;
            return Ok(Some(trace.final_ate));
        }
        Method::Ocgc => {
            let spectral = SpectralConfig { rng_seed: env_seed, ..cfg.spectral.clone() };
            run_with_known_covariance(graph, sigma, n_reps, cfg.m_max, &spectral)?.clustering
        }
        Method::Global => Clustering::global(r),
        Method::Individual => Clustering::individual(r),
        Method::Tiling(k) => crate::graph::tiling_partition(graph, k)?,
        Method::AdjacencySpectral => {
            let m = default_m_max(r).min(r).max(2);
            let w = DMatrix::from_fn(r, r, |i, j| {
                if i != j && graph.adjacent(i, j) {
                    1.0
                } else {
                    0.0
                }
            });
            let l = laplacian(&w)?;
            let spectral = SpectralConfig { rng_seed: env_seed, ..cfg.spectral.clone() };
            let embedding = spectral_embed(&l, m, &spectral)?;
            kmeans(&embedding, m, &spectral)?
        }
    };
    let batch = env.sample_batch(&fixed_design, n_reps)?;
    if method == Method::Global {
        let any_treated = (0..n_reps).any(|t| batch.treatments[(t, 0)] == 1);
        let any_control = (0..n_reps).any(|t| batch.treatments[(t, 0)] == 0);
        if n_reps < 2 || !any_treated || !any_control {
            return Ok(None);
        }
    }
    let model = fit_outcome_model(graph, std::slice::from_ref(&batch), cfg.regression)?;
    Ok(Some(dr_estimate(graph, &batch, &model)?))
}
