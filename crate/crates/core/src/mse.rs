//! Exact MSE of the doubly-robust ATE estimator under a cluster-randomized
//! design, its term-by-term decomposition, the graph-cut surrogate
//! objective, and a brute-force variance oracle.
//!
//! The randomization variance is driven by the shared-cluster counts
//! `m_{ii'}` — the number of clusters touched by both closed neighborhoods
//! `N_i` and `N_{i'}`:
//!
//! ```text
//! σ₁² = (1/N) Σ_{i,i'} (p^{-m_{ii'}} + (1-p)^{-m_{ii'}}) Σ_{ii'} I(m_{ii'} > 0)
//! ```
//!
//! At the balanced probability p = 0.5, σ₁² splits exactly into a
//! within-cluster spatial-correlation term SC, a first-order boundary
//! interference term I₁, and three second-order boundary terms J₁, J₂, J₃.
//! All quantities are linear in Σ, so indefinite (e.g. noise-perturbed)
//! covariance inputs are evaluated as given.

use nalgebra::DMatrix;

use crate::covariance::{positive_part, CovarianceMatrix};
use crate::error::{Error, Result};
use crate::estimator::OutcomeModel;
use crate::graph::{
    boundary_regions, check_graph_clustering, touched_clusters, Clustering, RegionGraph,
};

/// Exact MSE components of the DR estimator for one (graph, clustering, Σ, N).
///
/// `sigma1_sq = sc + i1 + j1 + j2 + j3` holds as an identity; `total`
/// is `da + sigma1_sq`. The design-agnostic term `da` is zero unless an
/// outcome model and covariate samples were supplied.
#[derive(Clone, Debug, PartialEq)]
pub struct MseBreakdown {
    pub da: f64,
    pub sc: f64,
    pub i1: f64,
    pub j1: f64,
    pub j2: f64,
    pub j3: f64,
    pub sigma1_sq: f64,
    pub total: f64,
}

impl MseBreakdown {
    /// Attach an externally computed design-agnostic term.
    pub fn with_da(mut self, da: f64) -> Self {
        self.da = da;
        self.total = da + self.sigma1_sq;
        self
    }
}

fn check_inputs(g: &RegionGraph, c: &Clustering, sigma: &CovarianceMatrix) -> Result<()> {
    check_graph_clustering(g, c)?;
    if sigma.dim() != g.region_count() {
        return Err(Error::Dimension(format!(
            "covariance is {}x{} but graph has {} regions",
            sigma.dim(),
            sigma.dim(),
            g.region_count()
        )));
    }
    Ok(())
}

/// Exact randomization variance of the DR estimator with known outcome
/// functions, scaled by `1/n_reps`. Valid for any treatment probability
/// `0 < p < 1`; all shipped workflows fix `p = 0.5`.
pub fn sigma1_squared(
    g: &RegionGraph,
    c: &Clustering,
    sigma: &CovarianceMatrix,
    n_reps: usize,
    p: f64,
) -> Result<f64> {
    check_inputs(g, c, sigma)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!("p must lie in (0, 1), got {p}")));
    }
    if n_reps == 0 {
        return Err(Error::InvalidArgument("n_reps must be positive".into()));
    }
    let touched = touched_clusters(g, c);
    let r = g.region_count();
    let inv_p = 1.0 / p;
    let inv_q = 1.0 / (1.0 - p);
    let mut acc = 0.0;
    for i in 0..r {
        for i2 in 0..r {
            let m = touched[i].intersection_count(&touched[i2]);
            if m > 0 {
                acc += (inv_p.powi(m as i32) + inv_q.powi(m as i32)) * sigma.get(i, i2);
            }
        }
    }
    Ok(acc / n_reps as f64)
}

/// Term-by-term decomposition of σ₁² at p = 0.5, with `da = 0`.
pub fn decompose(
    g: &RegionGraph,
    c: &Clustering,
    sigma: &CovarianceMatrix,
    n_reps: usize,
) -> Result<MseBreakdown> {
    check_inputs(g, c, sigma)?;
    if n_reps == 0 {
        return Err(Error::InvalidArgument("n_reps must be positive".into()));
    }
    let p: f64 = 0.5;
    let n = n_reps as f64;
    let touched = touched_clusters(g, c);
    let members = c.members();
    let boundaries: Vec<Vec<usize>> = (0..c.cluster_count())
        .map(|j| boundary_regions(g, c, j))
        .collect::<Result<_>>()?;
    let m_pair = |i: usize, i2: usize| touched[i].intersection_count(&touched[i2]);

    // SC: within-cluster covariance over ordered pairs, diagonal included.
    let mut sc = 0.0;
    for cluster in &members {
        for &i in cluster {
            for &i2 in cluster {
                sc += sigma.get(i, i2);
            }
        }
    }
    sc *= 4.0 / n;

    // I1: cluster j against the boundary of every other cluster k, gated on
    // the boundary region actually touching cluster j.
    let mut i1 = 0.0;
    for (j, cluster_j) in members.iter().enumerate() {
        for (k, boundary_k) in boundaries.iter().enumerate() {
            if j == k {
                continue;
            }
            for &i2 in boundary_k {
                if !touched[i2].contains(j) {
                    continue;
                }
                for &i in cluster_j {
                    i1 += sigma.get(i, i2);
                }
            }
        }
    }
    i1 *= 8.0 / n;

    // J1: within-boundary pairs of the same cluster.
    let mut j1 = 0.0;
    for boundary in &boundaries {
        for &i in boundary {
            for &i2 in boundary {
                let m = m_pair(i, i2) as i32;
                j1 += sigma.get(i, i2) * (1.0 - p.powi(m - 1)) / p.powi(1 + m);
            }
        }
    }
    j1 /= n;

    // J2 and J3: cross-cluster boundary-boundary pairs.
    let mut j2 = 0.0;
    let mut j3 = 0.0;
    for (j, boundary_j) in boundaries.iter().enumerate() {
        for (k, boundary_k) in boundaries.iter().enumerate() {
            if j == k {
                continue;
            }
            for &i in boundary_j {
                for &i2 in boundary_k {
                    let m = m_pair(i, i2);
                    let touches_j = touched[i2].contains(j);
                    let s = sigma.get(i, i2);
                    if touches_j {
                        j2 += s * (1.0 / p.powi(m as i32 + 1) - 2.0 / (p * p));
                    }
                    if m > 0 && !touches_j {
                        j3 += s / p.powi(m as i32 + 1);
                    }
                }
            }
        }
    }
    j2 /= n;
    j3 /= n;

    let sigma1_sq = sigma1_squared(g, c, sigma, n_reps, p)?;
    Ok(MseBreakdown {
        da: 0.0,
        sc,
        i1,
        j1,
        j2,
        j3,
        sigma1_sq,
        total: sigma1_sq,
    })
}

/// Brute-force per-experiment variance (`n_reps · σ₁²`) by enumerating all
/// `2^m` cluster treatment assignments. Limited to `m ≤ 20`.
pub fn exact_variance_oracle(
    g: &RegionGraph,
    c: &Clustering,
    sigma: &CovarianceMatrix,
    p: f64,
) -> Result<f64> {
    check_inputs(g, c, sigma)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!("p must lie in (0, 1), got {p}")));
    }
    let m = c.cluster_count();
    if m > 20 {
        return Err(Error::InvalidArgument(format!(
            "oracle enumeration limited to 20 clusters, got {m}"
        )));
    }
    let r = g.region_count();
    let touched = touched_clusters(g, c);
    // per-region mask of touched clusters; popcount gives the exposure exponent
    let masks: Vec<u32> = (0..r)
        .map(|i| {
            let mut mask = 0u32;
            for j in 0..m {
                if touched[i].contains(j) {
                    mask |= 1 << j;
                }
            }
            mask
        })
        .collect();
    let counts: Vec<i32> = masks.iter().map(|mask| mask.count_ones() as i32).collect();

    let mut variance = 0.0;
    let mut q = vec![0.0; r];
    for assignment in 0u32..(1 << m) {
        let treated = assignment.count_ones() as i32;
        let prob = p.powi(treated) * (1.0 - p).powi(m as i32 - treated);
        for i in 0..r {
            let all_treated = assignment & masks[i] == masks[i];
            let none_treated = assignment & masks[i] == 0;
            let mut qi = 0.0;
            if all_treated {
                qi += 1.0 / p.powi(counts[i]);
            }
            if none_treated {
                qi -= 1.0 / (1.0 - p).powi(counts[i]);
            }
            q[i] = qi;
        }
        let mut quad = 0.0;
        for i in 0..r {
            if q[i] == 0.0 {
                continue;
            }
            for i2 in 0..r {
                quad += q[i] * q[i2] * sigma.get(i, i2);
            }
        }
        variance += prob * quad;
    }
    Ok(variance)
}

/// Two-cluster surrogate objective:
/// `(8R/N)·Σ_cross W Σ⁺ − (8/N)·Σ_cross Σ` over unordered cross pairs.
pub fn surrogate_two(
    g: &RegionGraph,
    sigma: &CovarianceMatrix,
    c: &Clustering,
    n_reps: usize,
) -> Result<f64> {
    if c.cluster_count() != 2 {
        return Err(Error::InvalidArgument(format!(
            "two-cluster surrogate needs exactly 2 clusters, got {}",
            c.cluster_count()
        )));
    }
    check_inputs(g, c, sigma)?;
    let r = g.region_count() as f64;
    let n = n_reps as f64;
    let plus = positive_part(sigma);
    let mut interference = 0.0;
    let mut correlation = 0.0;
    for i in 0..g.region_count() {
        if c.label(i) != 0 {
            continue;
        }
        for i2 in 0..g.region_count() {
            if c.label(i2) != 1 {
                continue;
            }
            if g.adjacent(i, i2) {
                interference += plus[(i, i2)];
            }
            correlation += sigma.get(i, i2);
        }
    }
    Ok((8.0 * r / n) * interference - (8.0 / n) * correlation)
}

/// General-m surrogate: cross-cluster pairs weighted `(2R/m)·Σ⁺W − Σ`,
/// scaled by `8/N` so the m = 2 case equals [`surrogate_two`]. Zero for the
/// global design (no cross pairs).
pub fn surrogate_general(
    g: &RegionGraph,
    sigma: &CovarianceMatrix,
    c: &Clustering,
    n_reps: usize,
) -> Result<f64> {
    check_inputs(g, c, sigma)?;
    let m = c.cluster_count();
    if m == 1 {
        return Ok(0.0);
    }
    let r = g.region_count();
    let n = n_reps as f64;
    let scale = 2.0 * r as f64 / m as f64;
    let plus = positive_part(sigma);
    let mut acc = 0.0;
    for i in 0..r {
        for i2 in (i + 1)..r {
            if c.label(i) == c.label(i2) {
                continue;
            }
            let w = if g.adjacent(i, i2) { 1.0 } else { 0.0 };
            acc += scale * plus[(i, i2)] * w - sigma.get(i, i2);
        }
    }
    Ok(8.0 / n * acc)
}

/// Pairwise weight matrix `ω_{ii'} = (2R/m)·W_{ii'}Σ⁺_{ii'} − Σ_{ii'}` with
/// zero diagonal (self pairs never cross a cut). Requires `m ≥ 2`.
pub fn weight_matrix(g: &RegionGraph, sigma: &CovarianceMatrix, m: usize) -> Result<DMatrix<f64>> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!("weight matrix needs m >= 2, got {m}")));
    }
    let r = g.region_count();
    if sigma.dim() != r {
        return Err(Error::Dimension(format!(
            "covariance is {}x{} but graph has {r} regions",
            sigma.dim(),
            sigma.dim()
        )));
    }
    let scale = 2.0 * r as f64 / m as f64;
    let plus = positive_part(sigma);
    Ok(DMatrix::from_fn(r, r, |i, j| {
        if i == j {
            0.0
        } else if g.adjacent(i, j) {
            scale * plus[(i, j)] - sigma.get(i, j)
        } else {
            -sigma.get(i, j)
        }
    }))
}

/// Design-agnostic term: `(1/N)` times the unbiased sample variance of
/// `CATE(O_t) = Σ_i [ĝ_i(1, O_t) − ĝ_i(0, O_t)]` over covariate sample rows.
/// Reported for diagnostics only; never used in design selection.
pub fn da_term(
    g: &RegionGraph,
    model: &OutcomeModel,
    covariate_samples: &DMatrix<f64>,
    n_reps: usize,
) -> Result<f64> {
    let s = covariate_samples.nrows();
    if s < 2 {
        return Err(Error::InvalidArgument(format!(
            "design-agnostic term needs at least 2 covariate samples, got {s}"
        )));
    }
    if covariate_samples.ncols() != g.region_count() {
        return Err(Error::Dimension(format!(
            "covariate samples have {} columns but graph has {} regions",
            covariate_samples.ncols(),
            g.region_count()
        )));
    }
    if n_reps == 0 {
        return Err(Error::InvalidArgument("n_reps must be positive".into()));
    }
    let r = g.region_count();
    let ones = vec![1u8; r];
    let zeros = vec![0u8; r];
    let cates: Vec<f64> = (0..s)
        .map(|t| {
            let row: Vec<f64> = covariate_samples.row(t).iter().copied().collect();
            (0..r)
                .map(|i| model.predict(g, i, &ones, &row) - model.predict(g, i, &zeros, &row))
                .sum()
        })
        .collect();
    let mean = cates.iter().sum::<f64>() / s as f64;
    let var = cates.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (s - 1) as f64;
    Ok(var / n_reps as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{build_model_covariance, CovModel, CovarianceOrigin};
    use crate::graph::{build_grid, GridShape};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn identity_cov(r: usize) -> CovarianceMatrix {
        CovarianceMatrix::new(DMatrix::identity(r, r), CovarianceOrigin::External).unwrap()
    }

    /// Graph with no edges (SUTVA: every neighborhood is the region itself).
    fn sutva_graph(r: usize) -> RegionGraph {
        RegionGraph::from_parts((0..r).map(|i| (i as f64, 0.0)).collect(), &[]).unwrap()
    }

    fn left_right_split_3x3() -> (RegionGraph, Clustering) {
        let g = build_grid(&GridShape::Square { side: 3 }).unwrap();
        let c = Clustering::new((0..9).map(|i| usize::from(i % 3 == 2)).collect()).unwrap();
        (g, c)
    }

    #[test]
    fn sigma1_sutva_individual_identity() {
        let g = sutva_graph(5);
        let c = Clustering::individual(5);
        let s = identity_cov(5);
        let v = sigma1_squared(&g, &c, &s, 1, 0.5).unwrap();
        assert_relative_eq!(v, 4.0 * 5.0);
    }

    #[test]
    fn sigma1_global_identity_r4() {
        let g = build_grid(&GridShape::Square { side: 2 }).unwrap();
        let c = Clustering::global(4);
        let s = identity_cov(4);
        let v = sigma1_squared(&g, &c, &s, 1, 0.5).unwrap();
        assert_relative_eq!(v, 16.0);
    }

    #[test]
    fn sigma1_matches_oracle_on_3x3_split() {
        let (g, c) = left_right_split_3x3();
        let s = build_model_covariance(CovModel::Exponential, 0.5, 9).unwrap();
        let formula = sigma1_squared(&g, &c, &s, 1, 0.5).unwrap();
        let oracle = exact_variance_oracle(&g, &c, &s, 0.5).unwrap();
        assert_relative_eq!(formula, oracle, max_relative = 1e-10);
    }

    #[test]
    fn oracle_global_two_regions() {
        let g = RegionGraph::from_lattice_cells(vec![(0, 0), (1, 0)]).unwrap();
        let c = Clustering::global(2);
        let s = identity_cov(2);
        assert_relative_eq!(exact_variance_oracle(&g, &c, &s, 0.5).unwrap(), 8.0);
    }

    #[test]
    fn oracle_sutva_individual_r3() {
        let g = sutva_graph(3);
        let c = Clustering::individual(3);
        let s = identity_cov(3);
        assert_relative_eq!(exact_variance_oracle(&g, &c, &s, 0.5).unwrap(), 12.0);
    }

    #[test]
    fn oracle_matches_formula_2x2_split() {
        let g = build_grid(&GridShape::Square { side: 2 }).unwrap();
        let c = Clustering::new(vec![0, 0, 1, 1]).unwrap();
        let s = build_model_covariance(CovModel::Exponential, 0.7, 4).unwrap();
        let oracle = exact_variance_oracle(&g, &c, &s, 0.5).unwrap();
        let formula = sigma1_squared(&g, &c, &s, 3, 0.5).unwrap();
        assert_relative_eq!(oracle, formula * 3.0, max_relative = 1e-10);
    }

    #[test]
    fn oracle_rejects_large_m() {
        let g = sutva_graph(21);
        let c = Clustering::individual(21);
        let s = identity_cov(21);
        assert!(exact_variance_oracle(&g, &c, &s, 0.5).is_err());
    }

    #[test]
    fn decompose_global_design() {
        let g = build_grid(&GridShape::Square { side: 3 }).unwrap();
        let s = build_model_covariance(CovModel::Exponential, 0.5, 9).unwrap();
        let c = Clustering::global(9);
        let b = decompose(&g, &c, &s, 2).unwrap();
        assert_eq!(b.i1, 0.0);
        assert_eq!(b.j1, 0.0);
        assert_eq!(b.j2, 0.0);
        assert_eq!(b.j3, 0.0);
        let all: f64 = (0..9).flat_map(|i| (0..9).map(move |j| (i, j))).map(|(i, j)| s.get(i, j)).sum();
        assert_relative_eq!(b.sc, 4.0 / 2.0 * all);
        assert_relative_eq!(b.sigma1_sq, b.sc, max_relative = 1e-12);
    }

    #[test]
    fn decompose_sutva_reduces_to_sc() {
        let g = sutva_graph(6);
        let c = Clustering::new(vec![0, 0, 1, 1, 2, 2]).unwrap();
        let s = build_model_covariance(CovModel::Constant, 0.6, 6).unwrap();
        let b = decompose(&g, &c, &s, 1).unwrap();
        assert_eq!(b.i1, 0.0);
        assert_eq!(b.j1, 0.0);
        assert_eq!(b.j2, 0.0);
        assert_eq!(b.j3, 0.0);
        assert_relative_eq!(b.sigma1_sq, b.sc, max_relative = 1e-12);
    }

    #[test]
    fn decompose_identity_on_3x3_split() {
        let (g, c) = left_right_split_3x3();
        let s = build_model_covariance(CovModel::Exponential, 0.5, 9).unwrap();
        let b = decompose(&g, &c, &s, 1).unwrap();
        assert_relative_eq!(
            b.sc + b.i1 + b.j1 + b.j2 + b.j3,
            b.sigma1_sq,
            max_relative = 1e-10
        );
        assert_eq!(b.total, b.sigma1_sq);
        let with_da = b.with_da(0.25);
        assert_relative_eq!(with_da.total, with_da.sigma1_sq + 0.25);
    }

    #[test]
    fn surrogate_two_adjacent_pair() {
        let g = RegionGraph::from_lattice_cells(vec![(0, 0), (1, 0)]).unwrap();
        let rho = 0.3;
        let s = build_model_covariance(CovModel::Exponential, rho, 2).unwrap();
        let c = Clustering::individual(2);
        let v = surrogate_two(&g, &s, &c, 1).unwrap();
        assert_relative_eq!(v, 8.0 * rho);
    }

    #[test]
    fn surrogate_two_requires_two_clusters() {
        let g = RegionGraph::from_lattice_cells(vec![(0, 0), (1, 0)]).unwrap();
        let s = identity_cov(2);
        assert!(surrogate_two(&g, &s, &Clustering::global(2), 1).is_err());
    }

    #[test]
    fn surrogate_two_first_term_bounds_i1_on_3x3() {
        let (g, c) = left_right_split_3x3();
        let s = build_model_covariance(CovModel::Exponential, 0.5, 9).unwrap();
        let plus = positive_part(&s);
        let mut first = 0.0;
        for i in 0..9 {
            for j in 0..9 {
                if c.label(i) == 0 && c.label(j) == 1 && g.adjacent(i, j) {
                    first += plus[(i, j)];
                }
            }
        }
        first *= 8.0 * 9.0;
        let b = decompose(&g, &c, &s, 1).unwrap();
        assert!(first >= b.i1, "first term {first} < i1 {}", b.i1);
    }

    #[test]
    fn surrogate_general_matches_two_and_global() {
        let (g, c) = left_right_split_3x3();
        let s = build_model_covariance(CovModel::Exponential, 0.5, 9).unwrap();
        let a = surrogate_two(&g, &s, &c, 4).unwrap();
        let b = surrogate_general(&g, &s, &c, 4).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-12);
        assert_eq!(surrogate_general(&g, &s, &Clustering::global(9), 4).unwrap(), 0.0);
    }

    #[test]
    fn surrogate_general_individual_sutva_minimum() {
        // W = 0 and nonnegative sigma: the individual design minimizes the
        // surrogate over all partitions (exhaustive scan, R = 5)
        let g = sutva_graph(5);
        let s = build_model_covariance(CovModel::Constant, 0.4, 5).unwrap();
        let individual = Clustering::individual(5);
        let v_ind = surrogate_general(&g, &s, &individual, 1).unwrap();
        let mut sum_upper = 0.0;
        for i in 0..5 {
            for j in (i + 1)..5 {
                sum_upper += s.get(i, j);
            }
        }
        assert_relative_eq!(v_ind, -8.0 * sum_upper, max_relative = 1e-12);
        for labels in all_partitions(5) {
            let c = Clustering::new(labels).unwrap();
            let v = surrogate_general(&g, &s, &c, 1).unwrap();
            assert!(v >= v_ind - 1e-12);
        }
    }

    #[test]
    fn weight_matrix_entries() {
        let g = build_grid(&GridShape::Square { side: 2 }).unwrap();
        let mut v = DMatrix::identity(4, 4);
        // 0 and 3 are diagonal cells of the 2x2 grid: not adjacent
        v[(0, 3)] = 0.3;
        v[(3, 0)] = 0.3;
        v[(0, 1)] = 0.5;
        v[(1, 0)] = 0.5;
        let s = CovarianceMatrix::new(v, CovarianceOrigin::External).unwrap();
        let w = weight_matrix(&g, &s, 2).unwrap();
        assert_relative_eq!(w[(0, 3)], -0.3);
        assert_relative_eq!(w[(0, 1)], 4.0 * 0.5 - 0.5);
        assert_eq!(w[(0, 0)], 0.0);
        assert!(weight_matrix(&g, &s, 1).is_err());
    }

    #[test]
    fn weight_matrix_cut_loss_matches_surrogate() {
        let g = build_grid(&GridShape::Square { side: 3 }).unwrap();
        let s = build_model_covariance(CovModel::Exponential, 0.6, 9).unwrap();
        for (m, labels) in [
            (2, vec![0, 0, 1, 0, 0, 1, 1, 1, 0]),
            (3, vec![0, 1, 2, 0, 1, 2, 0, 1, 2]),
            (4, vec![0, 1, 1, 2, 3, 1, 2, 2, 3]),
        ] {
            let c = Clustering::new(labels).unwrap();
            assert_eq!(c.cluster_count(), m);
            let w = weight_matrix(&g, &s, m).unwrap();
            let mut cut = 0.0;
            for i in 0..9 {
                for j in (i + 1)..9 {
                    if c.label(i) != c.label(j) {
                        cut += w[(i, j)];
                    }
                }
            }
            let n_reps = 2;
            let surrogate = surrogate_general(&g, &s, &c, n_reps).unwrap();
            assert_relative_eq!(cut, n_reps as f64 / 8.0 * surrogate, max_relative = 1e-10);
        }
    }

    #[test]
    fn da_term_examples() {
        let g = sutva_graph(1);
        // constant CATE across samples -> zero variance
        let model = OutcomeModel::Oracle { signal_strength: 0.025 };
        let samples = DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 1.0]);
        assert_relative_eq!(da_term(&g, &model, &samples, 1).unwrap(), 0.0);
        // deterministic covariates in a synthetic env -> zero
        let samples = DMatrix::from_row_slice(2, 1, &[0.7, 0.7]);
        assert_relative_eq!(da_term(&g, &model, &samples, 1).unwrap(), 0.0);
        // CATE samples {0, 2} have unbiased variance 2; the oracle model at
        // (0,0) with no neighbors gives CATE = 3*O*sin(s); choose O to hit 0 and 2
        let s = 0.025f64;
        let o = 2.0 / (3.0 * s.sin());
        let samples = DMatrix::from_row_slice(2, 1, &[0.0, o]);
        assert_relative_eq!(da_term(&g, &model, &samples, 1).unwrap(), 2.0, max_relative = 1e-12);
        assert!(da_term(&g, &model, &DMatrix::from_row_slice(1, 1, &[1.0]), 1).is_err());
    }

    #[test]
    fn everything_linear_in_sigma() {
        let (g, c) = left_right_split_3x3();
        let s = build_model_covariance(CovModel::Exponential, 0.5, 9).unwrap();
        let alpha = 3.25;
        let scaled =
            CovarianceMatrix::new(s.values() * alpha, CovarianceOrigin::External).unwrap();
        let b1 = decompose(&g, &c, &s, 1).unwrap();
        let b2 = decompose(&g, &c, &scaled, 1).unwrap();
        for (x, y) in [
            (b1.sc, b2.sc),
            (b1.i1, b2.i1),
            (b1.j1, b2.j1),
            (b1.j2, b2.j2),
            (b1.j3, b2.j3),
            (b1.sigma1_sq, b2.sigma1_sq),
        ] {
            assert_relative_eq!(x * alpha, y, max_relative = 1e-10);
        }
        let s1 = surrogate_general(&g, &s, &c, 1).unwrap();
        let s2 = surrogate_general(&g, &scaled, &c, 1).unwrap();
        assert_relative_eq!(s1 * alpha, s2, max_relative = 1e-10);
    }

    /// All set partitions of {0..n} as dense label vectors.
    fn all_partitions(n: usize) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut labels = vec![0usize; n];
        fn rec(i: usize, max_used: usize, labels: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if i == labels.len() {
                out.push(labels.clone());
                return;
            }
            for l in 0..=max_used + 1 {
                labels[i] = l;
                rec(i + 1, max_used.max(l), labels, out);
            }
        }
        if n > 0 {
            rec(1, 0, &mut labels, &mut out);
        }
        out
    }

    #[test]
    fn partition_count_is_bell_number() {
        assert_eq!(all_partitions(4).len(), 15);
    }
}
