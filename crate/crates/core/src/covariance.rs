//! Residual covariance matrices: model-generated structures, empirical
//! estimation from regression residuals, and the positive-part and
//! decaying-covariance utilities the surrogate objective relies on.
//!
//! All model structures measure distance as row-major region *index*
//! distance `|i - j|`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graph::RegionGraph;

/// Symmetry tolerance enforced at construction.
const SYMMETRY_TOL: f64 = 1e-12;

/// The three model covariance structures.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CovModel {
    /// `Σ_ij = ρ^{I(i≠j)}`.
    Constant,
    /// Unit diagonal; `Σ_ij = (ρ − |i−j|/R)·I(|i−j| ≤ ρR)` off it.
    TruncatedConstant,
    /// `Σ_ij = ρ^{|i−j|}`.
    Exponential,
}

impl std::fmt::Display for CovModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CovModel::Constant => "constant",
            CovModel::TruncatedConstant => "truncated-constant",
            CovModel::Exponential => "exponential",
        })
    }
}

impl std::str::FromStr for CovModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(CovModel::Constant),
            "truncated-constant" => Ok(CovModel::TruncatedConstant),
            "exponential" => Ok(CovModel::Exponential),
            other => Err(Error::Parse(format!("unknown covariance model '{other}'"))),
        }
    }
}

/// Where a covariance matrix came from.
#[derive(Clone, Debug, PartialEq)]
pub enum CovarianceOrigin {
    Model { model: CovModel, rho: f64 },
    Empirical { samples: usize, shrinkage: f64 },
    /// Loaded from a file or assembled by the caller.
    External,
}

/// Symmetric `R × R` residual covariance with a strictly positive diagonal.
#[derive(Clone, Debug)]
pub struct CovarianceMatrix {
    values: DMatrix<f64>,
    origin: CovarianceOrigin,
}

impl CovarianceMatrix {
    pub fn new(values: DMatrix<f64>, origin: CovarianceOrigin) -> Result<Self> {
        if values.nrows() != values.ncols() || values.nrows() == 0 {
            return Err(Error::InvalidMatrix(format!(
                "covariance must be square and non-empty, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        for i in 0..values.nrows() {
            if values[(i, i)] <= 0.0 {
                return Err(Error::InvalidMatrix(format!(
                    "non-positive diagonal entry {} at region {i}",
                    values[(i, i)]
                )));
            }
            for j in (i + 1)..values.ncols() {
                if (values[(i, j)] - values[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(Error::InvalidMatrix(format!(
                        "asymmetry at ({i}, {j}): {} vs {}",
                        values[(i, j)],
                        values[(j, i)]
                    )));
                }
            }
        }
        Ok(CovarianceMatrix { values, origin })
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn origin(&self) -> &CovarianceOrigin {
        &self.origin
    }
}

/// Build one of the three model structures for `r` regions.
/// Requires `0 < ρ ≤ 1`; constant and exponential are positive definite
/// only for `ρ < 1`.
pub fn build_model_covariance(model: CovModel, rho: f64, r: usize) -> Result<CovarianceMatrix> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidArgument(format!("rho must lie in (0, 1], got {rho}")));
    }
    if r == 0 {
        return Err(Error::InvalidArgument("covariance needs at least one region".into()));
    }
    let values = DMatrix::from_fn(r, r, |i, j| {
        let d = i.abs_diff(j) as f64;
        match model {
            CovModel::Constant => {
                if i == j {
                    1.0
                } else {
                    rho
                }
            }
            CovModel::TruncatedConstant => {
                if i == j {
                    1.0
                } else if d <= rho * r as f64 {
                    rho - d / r as f64
                } else {
                    0.0
                }
            }
            CovModel::Exponential => rho.powf(d),
        }
    });
    CovarianceMatrix::new(values, CovarianceOrigin::Model { model, rho })
}

/// Entrywise `max(Σ_ii', 0)`.
pub fn positive_part(sigma: &CovarianceMatrix) -> DMatrix<f64> {
    sigma.values().map(|v| v.max(0.0))
}

/// Empirical covariance of mean-zero residual rows with diagonal shrinkage:
/// `(1−λ)·Σ̂ + λ·diag(Σ̂)` where `Σ̂ = (1/n) Σ_t ê_t ê_tᵀ`.
///
/// Residuals are not re-centered: they are mean zero by construction.
pub fn empirical_covariance(residuals: &DMatrix<f64>, shrinkage: f64) -> Result<CovarianceMatrix> {
    let n = residuals.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("empirical covariance needs at least one sample".into()));
    }
    if !(0.0..=1.0).contains(&shrinkage) {
        return Err(Error::InvalidArgument(format!(
            "shrinkage must lie in [0, 1], got {shrinkage}"
        )));
    }
    let r = residuals.ncols();
    let mut raw = DMatrix::<f64>::zeros(r, r);
    for t in 0..n {
        let row = residuals.row(t);
        for i in 0..r {
            for j in i..r {
                raw[(i, j)] += row[i] * row[j];
            }
        }
    }
    let mut values = DMatrix::<f64>::zeros(r, r);
    for i in 0..r {
        for j in i..r {
            let v = raw[(i, j)] / n as f64;
            let shrunk = if i == j { v } else { (1.0 - shrinkage) * v };
            values[(i, j)] = shrunk;
            values[(j, i)] = shrunk;
        }
    }
    CovarianceMatrix::new(values, CovarianceOrigin::Empirical { samples: n, shrinkage })
}

/// Decaying-covariance check: for every triple of distinct regions
/// `(i1, i2, i3)` where `i1, i2` are neighbors and `i3` is not a neighbor
/// of `i1`, require `Σ_{i1 i2} ≥ Σ_{i1 i3}`. Whether `i2` and `i3` are
/// neighbors is irrelevant: the surrogate's upper bound on the first-order
/// interference term compares a non-neighbor pair against an adjacent pair
/// sharing one endpoint, regardless of the third edge.
pub fn check_decaying(g: &RegionGraph, sigma: &CovarianceMatrix) -> Result<bool> {
    let r = g.region_count();
    if sigma.dim() != r {
        return Err(Error::Dimension(format!(
            "covariance is {}x{} but graph has {r} regions",
            sigma.dim(),
            sigma.dim()
        )));
    }
    for i1 in 0..r {
        for i2 in 0..r {
            if !g.adjacent(i1, i2) {
                continue;
            }
            for i3 in 0..r {
                if i3 == i1 || i3 == i2 || g.adjacent(i1, i3) {
                    continue;
                }
                if sigma.get(i1, i2) < sigma.get(i1, i3) {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// Factor `F` with `F·Fᵀ = Σ_psd`, where `Σ_psd` clips negative eigenvalues
/// to zero. Exact (up to roundoff) when `Σ` is already PSD. `F` is always
/// `R × R`, so a length-`R` standard normal vector drives sampling
/// regardless of rank.
pub fn factorize_for_sampling(sigma: &CovarianceMatrix) -> DMatrix<f64> {
    let eig = sigma.values().clone().symmetric_eigen();
    let r = sigma.dim();
    let mut f = DMatrix::zeros(r, r);
    for k in 0..r {
        let lambda = eig.eigenvalues[k].max(0.0);
        let scale = lambda.sqrt();
        for i in 0..r {
            f[(i, k)] = eig.eigenvectors[(i, k)] * scale;
        }
    }
    f
}
