//! IS and DR treatment-effect estimators over experiment batches, exposure
//! probabilities under cluster randomization, pooled outcome regression,
//! residual extraction, and K-fold cross-fitting.
//!
//! The exposure indicator `T_{i,t}(a)` fires when every region of the
//! closed neighborhood `N_i` received arm `a` in repetition `t`; since the
//! design randomizes whole clusters with independent fair coins, its
//! expectation has the closed form `p^{c_i}` (treated arm) respectively
//! `(1−p)^{c_i}` (control arm), with `c_i` the number of clusters touching
//! `N_i`. The DR estimator augments the inverse-exposure-weighted contrast
//! with an outcome model and stays unbiased even when that model is wrong,
//! because the exposure probabilities are known by design.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::graph::{cluster_touch_count, Clustering, RegionGraph};

/// The two exposure events of interest: entire neighborhood treated or
/// entire neighborhood under control.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arm {
    Treated,
    Control,
}

/// `n` repetitions of (covariates, treatments, outcomes) over all regions,
/// collected under one cluster-randomized design.
#[derive(Clone, Debug)]
pub struct ExperimentBatch {
    /// `n × R` covariates (one scalar per region).
    pub covariates: DMatrix<f64>,
    /// `n × R` binary treatments.
    pub treatments: DMatrix<u8>,
    /// `n × R` outcomes.
    pub outcomes: DMatrix<f64>,
    /// The design the treatments were drawn under.
    pub design: Clustering,
}

impl ExperimentBatch {
    pub fn new(
        covariates: DMatrix<f64>,
        treatments: DMatrix<u8>,
        outcomes: DMatrix<f64>,
        design: Clustering,
    ) -> Result<Self> {
        let batch = ExperimentBatch { covariates, treatments, outcomes, design };
        batch.validate()?;
        Ok(batch)
    }

    /// Check matrix shapes and the within-cluster-constant treatment invariant.
    pub fn validate(&self) -> Result<()> {
        let (n, r) = (self.covariates.nrows(), self.covariates.ncols());
        if self.treatments.shape() != (n, r) || self.outcomes.shape() != (n, r) {
            return Err(Error::Dimension(format!(
                "batch matrices disagree: O {:?}, A {:?}, Y {:?}",
                self.covariates.shape(),
                self.treatments.shape(),
                self.outcomes.shape()
            )));
        }
        if self.design.len() != r {
            return Err(Error::Dimension(format!(
                "design covers {} regions but batch has {r}",
                self.design.len()
            )));
        }
        for t in 0..n {
            let mut cluster_arm = vec![u8::MAX; self.design.cluster_count()];
            for i in 0..r {
                let a = self.treatments[(t, i)];
                if a > 1 {
                    return Err(Error::InvalidArgument(format!(
                        "treatment must be binary, got {a} at ({t}, {i})"
                    )));
                }
                let label = self.design.label(i);
                if cluster_arm[label] == u8::MAX {
                    cluster_arm[label] = a;
                } else if cluster_arm[label] != a {
                    return Err(Error::DesignViolation(format!(
                        "repetition {t}: cluster {label} mixes treatment arms"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn n_reps(&self) -> usize {
        self.covariates.nrows()
    }

    pub fn region_count(&self) -> usize {
        self.covariates.ncols()
    }
}

/// 1 iff every region of `N_i` carries arm `a` in repetition `t`.
pub fn exposure_indicator(
    g: &RegionGraph,
    batch: &ExperimentBatch,
    i: usize,
    t: usize,
    arm: Arm,
) -> u8 {
    let want = match arm {
        Arm::Treated => 1,
        Arm::Control => 0,
    };
    let all = g
        .neighborhood(i)
        .iter()
        .all(|&j| batch.treatments[(t, j)] == want);
    u8::from(all)
}

/// Closed-form exposure probability under independent Bernoulli(p) cluster
/// coins: `p^{c_i}` for the treated arm, `(1−p)^{c_i}` for control.
pub fn exposure_probability(
    g: &RegionGraph,
    c: &Clustering,
    i: usize,
    arm: Arm,
    p: f64,
) -> f64 {
    let touches = cluster_touch_count(g, c, i) as i32;
    match arm {
        Arm::Treated => p.powi(touches),
        Arm::Control => (1.0 - p).powi(touches),
    }
}

/// Importance-sampling ATE estimate:
/// `(1/n) Σ_t Σ_i [T_{i,t}(1)/E T_{i,t}(1) − T_{i,t}(0)/E T_{i,t}(0)] · Y_{i,t}`.
pub fn is_estimate(g: &RegionGraph, batch: &ExperimentBatch) -> f64 {
    let n = batch.n_reps();
    let r = batch.region_count();
    let p = 0.5;
    let e1: Vec<f64> = (0..r)
        .map(|i| exposure_probability(g, &batch.design, i, Arm::Treated, p))
        .collect();
    let e0: Vec<f64> = (0..r)
        .map(|i| exposure_probability(g, &batch.design, i, Arm::Control, p))
        .collect();
    let mut acc = 0.0;
    for t in 0..n {
        for i in 0..r {
            let t1 = f64::from(exposure_indicator(g, batch, i, t, Arm::Treated));
            let t0 = f64::from(exposure_indicator(g, batch, i, t, Arm::Control));
            acc += (t1 / e1[i] - t0 / e0[i]) * batch.outcomes[(t, i)];
        }
    }
    acc / n as f64
}

/// Regression family for the outcome model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RegressionSpec {
    /// The zero model; DR degenerates to IS.
    Zero,
    /// Pooled ridge over all (region, repetition) rows with the trig feature map.
    PooledRidge { penalty: f64 },
}

/// Feature map identifier recorded with fitted ridge models.
pub const FEATURE_MAP_ID: &str = "pooled-trig-v1";
const NUM_FEATURES: usize = 10;

/// A fitted (or fixed) outcome model `ĝ_i(a, O)`.
///
/// Predictions read treatments and covariates only through the closed
/// neighborhood `N_i`, so they respect neighborhood interference by
/// construction.
#[derive(Clone, Debug)]
pub enum OutcomeModel {
    /// Predicts 0 everywhere.
    Zero,
    /// Pooled ridge fit over the trig feature map.
    PooledRidge { coeffs: Vec<f64>, penalty: f64, feature_map: &'static str },
    /// The synthetic-environment truth `3·O_i·sin(l_x + l_y + s·(A_i + 0.5·Ā_i))`.
    Oracle { signal_strength: f64 },
}

impl OutcomeModel {
    /// Predict region `i`'s outcome from full treatment and covariate rows.
    /// Only entries inside `N_i` are read.
    pub fn predict(&self, g: &RegionGraph, i: usize, treatments: &[u8], covariates: &[f64]) -> f64 {
        match self {
            OutcomeModel::Zero => 0.0,
            OutcomeModel::PooledRidge { coeffs, .. } => {
                let phi = features(g, i, treatments, covariates);
                phi.iter().zip(coeffs).map(|(x, b)| x * b).sum()
            }
            OutcomeModel::Oracle { signal_strength } => {
                let (lx, ly) = g.coord(i);
                let a_i = f64::from(treatments[i]);
                let a_bar = neighbor_average(g, i, treatments);
                3.0 * covariates[i] * (lx + ly + signal_strength * (a_i + 0.5 * a_bar)).sin()
            }
        }
    }
}

/// Average treatment over `N_i \ {i}`, or 0 for isolated regions.
fn neighbor_average(g: &RegionGraph, i: usize, treatments: &[u8]) -> f64 {
    let nbhd = g.neighborhood(i);
    if nbhd.len() <= 1 {
        return 0.0;
    }
    let sum: f64 = nbhd.iter().filter(|&&j| j != i).map(|&j| f64::from(treatments[j])).sum();
    sum / (nbhd.len() - 1) as f64
}

fn features(g: &RegionGraph, i: usize, treatments: &[u8], covariates: &[f64]) -> [f64; NUM_FEATURES] {
    let (lx, ly) = g.coord(i);
    let o = covariates[i];
    let a = f64::from(treatments[i]);
    let a_bar = neighbor_average(g, i, treatments);
    let angle = lx + ly;
    [
        1.0,
        o,
        a,
        a_bar,
        o * a,
        o * a_bar,
        lx,
        ly,
        o * angle.sin(),
        o * angle.cos(),
    ]
}

/// Doubly-robust ATE estimate with outcome model `model` (Eq. form:
/// `ν_{i,t}(a) = ĝ_i(a, O_t) + T_{i,t}(a)/E[T_{i,t}(a)] · (Y_{i,t} − ĝ_i(a, O_t))`).
///
/// Rejects batches whose treatments are not constant within design clusters.
pub fn dr_estimate(g: &RegionGraph, batch: &ExperimentBatch, model: &OutcomeModel) -> Result<f64> {
    batch.validate()?;
    let n = batch.n_reps();
    let r = batch.region_count();
    if g.region_count() != r {
        return Err(Error::Dimension(format!(
            "graph has {} regions but batch has {r}",
            g.region_count()
        )));
    }
    let p = 0.5;
    let e1: Vec<f64> = (0..r)
        .map(|i| exposure_probability(g, &batch.design, i, Arm::Treated, p))
        .collect();
    let e0: Vec<f64> = (0..r)
        .map(|i| exposure_probability(g, &batch.design, i, Arm::Control, p))
        .collect();
    let ones = vec![1u8; r];
    let zeros = vec![0u8; r];
    let mut acc = 0.0;
    for t in 0..n {
        let o_row: Vec<f64> = batch.covariates.row(t).iter().copied().collect();
        for i in 0..r {
            let g1 = model.predict(g, i, &ones, &o_row);
            let g0 = model.predict(g, i, &zeros, &o_row);
            let t1 = f64::from(exposure_indicator(g, batch, i, t, Arm::Treated));
            let t0 = f64::from(exposure_indicator(g, batch, i, t, Arm::Control));
            let y = batch.outcomes[(t, i)];
            let nu1 = g1 + t1 / e1[i] * (y - g1);
            let nu0 = g0 + t0 / e0[i] * (y - g0);
            acc += nu1 - nu0;
        }
    }
    Ok(acc / n as f64)
}

/// Fit an outcome model on pooled rows from all batches.
pub fn fit_outcome_model(
    g: &RegionGraph,
    batches: &[ExperimentBatch],
    spec: RegressionSpec,
) -> Result<OutcomeModel> {
    match spec {
        RegressionSpec::Zero => Ok(OutcomeModel::Zero),
        RegressionSpec::PooledRidge { penalty } => {
            fit_ridge(g, batches, penalty, |_batch, _t| true)
        }
    }
}

/// Ridge fit over rows `(batch, repetition, region)` passing `keep`.
fn fit_ridge(
    g: &RegionGraph,
    batches: &[ExperimentBatch],
    penalty: f64,
    keep: impl Fn(usize, usize) -> bool,
) -> Result<OutcomeModel> {
    if penalty <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "ridge penalty must be positive, got {penalty}"
        )));
    }
    let mut xtx = DMatrix::<f64>::zeros(NUM_FEATURES, NUM_FEATURES);
    let mut xty = DVector::<f64>::zeros(NUM_FEATURES);
    let mut rows = 0usize;
    for (b, batch) in batches.iter().enumerate() {
        let r = batch.region_count();
        let mut a_row = vec![0u8; r];
        let mut o_row = vec![0.0f64; r];
        for t in 0..batch.n_reps() {
            if !keep(b, t) {
                continue;
            }
            for i in 0..r {
                a_row[i] = batch.treatments[(t, i)];
                o_row[i] = batch.covariates[(t, i)];
            }
            for i in 0..r {
                let phi = features(g, i, &a_row, &o_row);
                let y = batch.outcomes[(t, i)];
                for a in 0..NUM_FEATURES {
                    xty[a] += phi[a] * y;
                    for b2 in a..NUM_FEATURES {
                        xtx[(a, b2)] += phi[a] * phi[b2];
                    }
                }
                rows += 1;
            }
        }
    }
    if rows == 0 {
        return Err(Error::InvalidArgument("ridge fit needs at least one repetition".into()));
    }
    // Penalize the mean-squared-error objective, not the raw sum: the fit
    // is then invariant to duplicating the data.
    let scale = 1.0 / rows as f64;
    xtx *= scale;
    xty *= scale;
    for a in 0..NUM_FEATURES {
        for b in 0..a {
            xtx[(a, b)] = xtx[(b, a)];
        }
        xtx[(a, a)] += penalty;
    }
    let coeffs = match xtx.clone().cholesky() {
        Some(ch) => ch.solve(&xty),
        None => xtx
            .lu()
            .solve(&xty)
            .ok_or_else(|| Error::InvalidMatrix("degenerate ridge normal equations".into()))?,
    };
    Ok(OutcomeModel::PooledRidge {
        coeffs: coeffs.iter().copied().collect(),
        penalty,
        feature_map: FEATURE_MAP_ID,
    })
}

/// Residual matrix `ê_{it} = Y_{it} − ĝ_i(A_t, O_t)` at observed treatments.
pub fn residuals(g: &RegionGraph, batch: &ExperimentBatch, model: &OutcomeModel) -> DMatrix<f64> {
    let n = batch.n_reps();
    let r = batch.region_count();
    let mut out = DMatrix::zeros(n, r);
    let mut a_row = vec![0u8; r];
    let mut o_row = vec![0.0f64; r];
    for t in 0..n {
        for i in 0..r {
            a_row[i] = batch.treatments[(t, i)];
            o_row[i] = batch.covariates[(t, i)];
        }
        for i in 0..r {
            out[(t, i)] = batch.outcomes[(t, i)] - model.predict(g, i, &a_row, &o_row);
        }
    }
    out
}

/// K-fold cross-fitted DR estimate over pooled repetitions from `batches`.
///
/// Repetitions are indexed globally in batch order and assigned to folds by
/// index modulo `k_folds`; each fold is scored with a model fitted on the
/// other folds. Every repetition keeps the exposure probabilities of its own
/// batch's design.
pub fn crossfit_dr(
    g: &RegionGraph,
    batches: &[ExperimentBatch],
    k_folds: usize,
    spec: RegressionSpec,
) -> Result<f64> {
    let total: usize = batches.iter().map(ExperimentBatch::n_reps).sum();
    if k_folds < 2 {
        return Err(Error::InvalidArgument(format!("cross-fitting needs K >= 2, got {k_folds}")));
    }
    if total < k_folds {
        return Err(Error::InvalidArgument(format!(
            "cross-fitting needs at least K = {k_folds} repetitions, got {total}"
        )));
    }
    for batch in batches {
        batch.validate()?;
        if batch.region_count() != g.region_count() {
            return Err(Error::Dimension(format!(
                "graph has {} regions but a batch has {}",
                g.region_count(),
                batch.region_count()
            )));
        }
    }
    // global repetition index of the first repetition of each batch
    let mut offsets = Vec::with_capacity(batches.len());
    let mut acc_off = 0usize;
    for batch in batches {
        offsets.push(acc_off);
        acc_off += batch.n_reps();
    }
    let p = 0.5;
    let ones = vec![1u8; g.region_count()];
    let zeros = vec![0u8; g.region_count()];
    let mut acc = 0.0;
    for fold in 0..k_folds {
        let model = match spec {
            RegressionSpec::Zero => OutcomeModel::Zero,
            RegressionSpec::PooledRidge { penalty } => fit_ridge(g, batches, penalty, |b, t| {
                (offsets[b] + t) % k_folds != fold
            })?,
        };
        for (b, batch) in batches.iter().enumerate() {
            let r = batch.region_count();
            let e1: Vec<f64> = (0..r)
                .map(|i| exposure_probability(g, &batch.design, i, Arm::Treated, p))
                .collect();
            let e0: Vec<f64> = (0..r)
                .map(|i| exposure_probability(g, &batch.design, i, Arm::Control, p))
                .collect();
            for t in 0..batch.n_reps() {
                if (offsets[b] + t) % k_folds != fold {
                    continue;
                }
                let o_row: Vec<f64> = batch.covariates.row(t).iter().copied().collect();
                for i in 0..r {
                    let g1 = model.predict(g, i, &ones, &o_row);
                    let g0 = model.predict(g, i, &zeros, &o_row);
                    let t1 = f64::from(exposure_indicator(g, batch, i, t, Arm::Treated));
                    let t0 = f64::from(exposure_indicator(g, batch, i, t, Arm::Control));
                    let y = batch.outcomes[(t, i)];
                    acc += (g1 + t1 / e1[i] * (y - g1)) - (g0 + t0 / e0[i] * (y - g0));
                }
            }
        }
    }
    Ok(acc / total as f64)
}
