//! The iterative causal-graph-cut driver: alternate between collecting a
//! batch under the current design, re-estimating the residual covariance,
//! and re-selecting the design; plus the oracle (known covariance) and
//! single-experiment entry points.

use crate::covariance::{empirical_covariance, CovarianceMatrix};
use crate::error::{Error, Result};
use crate::estimator::{
    crossfit_dr, dr_estimate, fit_outcome_model, residuals, ExperimentBatch, RegressionSpec,
};
use crate::graph::{Clustering, RegionGraph};
use crate::mse::sigma1_squared;
use crate::spectral::{select_design, select_design_constrained, DesignSelection, SpectralConfig};

/// Whether the covariance is re-estimated from all residuals collected so
/// far or from the latest batch only.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CovarianceMode {
    Cumulative,
    SingleBatch,
}

/// Configuration of one CGC run.
#[derive(Clone, Debug)]
pub struct CgcConfig {
    /// Repetitions collected per round.
    pub batch_size: usize,
    /// Total repetitions; must be a multiple of `batch_size`.
    pub total_repetitions: usize,
    /// Design governing round 1; defaults to the individual design.
    pub initial_design: Option<Clustering>,
    pub covariance_mode: CovarianceMode,
    /// Diagonal shrinkage applied to the empirical covariance.
    pub shrinkage: f64,
    pub regression: RegressionSpec,
    /// Sweep bound override; defaults to `⌈R^{2/3}⌉`.
    pub m_max: Option<usize>,
    /// Cross-fit the per-round ATE with this many folds; `None` uses the
    /// plain DR estimate with the full-data model.
    pub crossfit_folds: Option<usize>,
    pub spectral: SpectralConfig,
    pub seed: u64,
}

impl Default for CgcConfig {
    fn default() -> Self {
        CgcConfig {
            batch_size: 10,
            total_repetitions: 100,
            initial_design: None,
            covariance_mode: CovarianceMode::Cumulative,
            shrinkage: 0.1,
            regression: RegressionSpec::PooledRidge { penalty: 1e-3 },
            m_max: None,
            crossfit_folds: None,
            spectral: SpectralConfig::default(),
            seed: 0,
        }
    }
}

/// Anything that can produce experiment batches under a requested design: a
/// synthetic environment or a recorded data stream.
pub trait BatchSource {
    fn graph(&self) -> &RegionGraph;
    fn sample_batch(&mut self, design: &Clustering, n: usize) -> Result<ExperimentBatch>;
}

/// One round of the loop.
#[derive(Clone, Debug)]
pub struct RoundRecord {
    /// 1-based round index.
    pub round: usize,
    /// Design the batch of this round was collected under.
    pub design: Clustering,
    /// FNV-1a hash of the covariance snapshot used for selection.
    pub sigma_hash: u64,
    /// Residual rows behind that snapshot.
    pub covariance_rows: usize,
    /// Score table of the selection performed after this round's batch.
    pub per_m_mse: Vec<(usize, f64)>,
    /// Cluster count selected for the next round.
    pub chosen_m: usize,
    /// DR estimate on this round's batch alone.
    pub ate: f64,
}

/// Full trace of a CGC run. The final estimate is the arithmetic mean of
/// the per-round estimates.
#[derive(Clone, Debug)]
pub struct CgcTrace {
    pub rounds: Vec<RoundRecord>,
    pub final_ate: f64,
}

fn fnv1a_matrix(m: &nalgebra::DMatrix<f64>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    eat(&(m.nrows() as u64).to_le_bytes());
    for v in m.iter() {
        eat(&v.to_bits().to_le_bytes());
    }
    h
}

/// Run the iterative loop: `total/batch` rounds of collect → refit → re-estimate
/// covariance → re-select design, estimating each round's ATE on that
/// round's batch with the design it was actually deployed under.
pub fn run_cgc(source: &mut dyn BatchSource, cfg: &CgcConfig) -> Result<CgcTrace> {
    if cfg.batch_size == 0 || cfg.total_repetitions == 0 {
        return Err(Error::InvalidArgument("batch size and total repetitions must be positive".into()));
    }
    if !cfg.total_repetitions.is_multiple_of(cfg.batch_size) {
        return Err(Error::InvalidArgument(format!(
            "batch size {} must divide total repetitions {}",
            cfg.batch_size, cfg.total_repetitions
        )));
    }
    if let Some(k) = cfg.crossfit_folds {
        if k < 2 || k > cfg.batch_size {
            return Err(Error::InvalidArgument(format!(
                "crossfit folds {k} must lie in [2, batch size {}]",
                cfg.batch_size
            )));
        }
    }
    let graph = source.graph().clone();
    let r = graph.region_count();
    if let Some(initial) = &cfg.initial_design {
        if initial.len() != r {
            return Err(Error::Dimension(format!(
                "initial design covers {} regions but graph has {r}",
                initial.len()
            )));
        }
    }
    let rounds = cfg.total_repetitions / cfg.batch_size;
    let mut design = cfg
        .initial_design
        .clone()
        .unwrap_or_else(|| Clustering::individual(r));
    let mut collected: Vec<ExperimentBatch> = Vec::with_capacity(rounds);
    let mut trace = Vec::with_capacity(rounds);
    for round in 1..=rounds {
        let batch = source.sample_batch(&design, cfg.batch_size)?;
        collected.push(batch);
        let model = fit_outcome_model(&graph, &collected, cfg.regression)?;
        let resid_batches: &[ExperimentBatch] = match cfg.covariance_mode {
            CovarianceMode::Cumulative => &collected,
            CovarianceMode::SingleBatch => std::slice::from_ref(collected.last().unwrap()),
        };
        let mut rows = Vec::new();
        for b in resid_batches {
            let res = residuals(&graph, b, &model);
            for t in 0..res.nrows() {
                rows.extend(res.row(t).iter().copied());
            }
        }
        let n_rows = rows.len() / r;
        let resid = nalgebra::DMatrix::from_row_slice(n_rows, r, &rows);
        let sigma_hat = empirical_covariance(&resid, cfg.shrinkage)?;
        let selection = select_design(
            &graph,
            &sigma_hat,
            cfg.total_repetitions,
            cfg.m_max,
            &cfg.spectral,
        )?;
        let last = collected.last().unwrap();
        let ate = match cfg.crossfit_folds {
            Some(k) => crossfit_dr(&graph, std::slice::from_ref(last), k, cfg.regression)?,
            None => dr_estimate(&graph, last, &model)?,
        };
        trace.push(RoundRecord {
            round,
            design: design.clone(),
            sigma_hash: fnv1a_matrix(sigma_hat.values()),
            covariance_rows: n_rows,
            per_m_mse: selection.per_m_mse.clone(),
            chosen_m: selection.chosen_m,
            ate,
        });
        design = selection.clustering;
    }
    let final_ate = trace.iter().map(|r| r.ate).sum::<f64>() / rounds as f64;
    Ok(CgcTrace { rounds: trace, final_ate })
}

/// Oracle variant: select the design directly from a known covariance.
pub fn run_with_known_covariance(
    g: &RegionGraph,
    sigma: &CovarianceMatrix,
    n_reps: usize,
    m_max: Option<usize>,
    spectral: &SpectralConfig,
) -> Result<DesignSelection> {
    select_design(g, sigma, n_reps, m_max, spectral)
}

/// Outcome of single-experiment design selection.
#[derive(Clone, Debug)]
pub struct SingleExperimentOutcome {
    pub selection: DesignSelection,
    /// Exact σ₁² the chosen design attains under a caller-supplied
    /// reference covariance (N = 1).
    pub reference_mse: Option<f64>,
}

/// Select a design for a single experiment from a (possibly noisy) prior
/// covariance. The global design is excluded from the candidates: one
/// all-same-treatment experiment cannot identify the ATE. A warning is
/// logged when the exclusion was binding.
pub fn run_single_experiment(
    g: &RegionGraph,
    sigma_prior: &CovarianceMatrix,
    m_max: Option<usize>,
    spectral: &SpectralConfig,
    reference: Option<&CovarianceMatrix>,
) -> Result<SingleExperimentOutcome> {
    let selection =
        select_design_constrained(g, sigma_prior, 1, m_max, spectral, false)?;
    let global_score = sigma1_squared(g, &Clustering::global(g.region_count()), sigma_prior, 1, 0.5)?;
    let best = selection
        .per_m_mse
        .iter()
        .map(|(_, v)| *v)
        .fold(f64::INFINITY, f64::min);
    if global_score < best {
        log::warn!(
            "global design excluded from single-experiment selection despite the lowest prior score \
             ({global_score} < {best}): the ATE is unidentifiable from one all-same-treatment experiment"
        );
    }
    let reference_mse = match reference {
        Some(sigma) => Some(sigma1_squared(g, &selection.clustering, sigma, 1, 0.5)?),
        None => None,
    };
    Ok(SingleExperimentOutcome { selection, reference_mse })
}
