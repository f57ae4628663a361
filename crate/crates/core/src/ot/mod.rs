//! Histogram descriptors and transport distances between them.
//!
//! [`sinkhorn`] is the entropic transport distance used for training and
//! evaluation. [`emd_exact`] solves the unregularized transportation LP and
//! serves as an oracle. [`sinkhorn_barycenter`] provides class centroids for
//! FCNN.

mod barycenter;
mod emd;
pub mod sinkhorn;

pub use barycenter::{sinkhorn_barycenter, Barycenter};
pub use emd::{emd_exact, transport_lp, TransportPlan};
pub use sinkhorn::{sinkhorn, sinkhorn_grad_dual, SinkhornSolution, SinkhornSolver};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Entries below this are clamped before Sinkhorn scaling.
pub const CLAMP_EPS: f64 = 1e-10;

/// Tolerance on `Σ mass = 1`.
const MASS_TOL: f64 = 1e-9;

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Histogram {
    mass: Vec<f64>,
}

impl Histogram {
    pub fn new(mass: Vec<f64>) -> Result<Self> {
        if mass.is_empty() {
            return Err(Error::EmptyInput);
        }
        if mass.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        if let Some(v) = mass.iter().find(|&&v| v < 0.0) {
            return Err(Error::InvalidHistogram(format!("negative entry {v}")));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidHistogram(format!("mass sums to {total}")));
        }
        Ok(Self { mass })
    }

    /// Normalizes a nonnegative vector with positive total mass.
    pub fn from_unnormalized(mut v: Vec<f64>) -> Result<Self> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        if v.iter().any(|&x| x < 0.0) {
            return Err(Error::InvalidHistogram("negative entry".into()));
        }
        let total: f64 = v.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidHistogram("zero total mass".into()));
        }
        v.iter_mut().for_each(|x| *x /= total);
        Self::new(v)
    }

    pub fn uniform(dim: usize) -> Self {
        Self { mass: vec![1.0 / dim as f64; dim] }
    }

    pub(crate) fn new_unchecked(mass: Vec<f64>) -> Self {
        Self { mass }
    }

    pub fn dim(&self) -> usize {
        self.mass.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.mass
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.mass
    }

    /// Entries below `eps` raised to `eps`, then renormalized.
    pub fn clamped(&self, eps: f64) -> Vec<f64> {
        clamp_normalize(&self.mass, eps)
    }
}

impl TryFrom<Vec<f64>> for Histogram {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Histogram::new(v)
    }
}

impl From<Histogram> for Vec<f64> {
    fn from(h: Histogram) -> Self {
        h.mass
    }
}

pub(crate) fn clamp_normalize(mass: &[f64], eps: f64) -> Vec<f64> {
    let mut out: Vec<f64> = mass.iter().map(|&v| v.max(eps)).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    out
}

/// Bin-to-bin cost matrix, row-major, nonnegative and symmetric with a zero
/// diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundMetric {
    dim: usize,
    cost: Vec<f64>,
}

impl GroundMetric {
    pub fn new(dim: usize, cost: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::EmptyInput);
        }
        if cost.len() != dim * dim {
            return Err(Error::DimensionMismatch { expected: dim * dim, got: cost.len() });
        }
        for i in 0..dim {
            if cost[i * dim + i] != 0.0 {
                return Err(Error::InvalidGroundMetric(format!("nonzero diagonal at {i}")));
            }
            for j in 0..dim {
                let c = cost[i * dim + j];
                if !c.is_finite() || c < 0.0 {
                    return Err(Error::InvalidGroundMetric(format!("bad entry {c} at ({i}, {j})")));
                }
                let t = cost[j * dim + i];
                if (c - t).abs() > 1e-12 * c.abs().max(1.0) {
                    return Err(Error::InvalidGroundMetric(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { dim, cost })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let mut cost = Vec::with_capacity(dim * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: r.len() });
            }
            cost.extend_from_slice(r);
        }
        Self::new(dim, cost)
    }

    /// `M_ij = |i - j|`.
    pub fn line(dim: usize) -> Self {
        let cost = (0..dim * dim)
            .map(|k| ((k / dim) as f64 - (k % dim) as f64).abs())
            .collect();
        Self { dim, cost }
    }

    /// Euclidean distances between codewords.
    pub fn euclidean(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.len();
        let mut cost = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                if points[i].len() != points[j].len() {
                    return Err(Error::DimensionMismatch {
                        expected: points[i].len(),
                        got: points[j].len(),
                    });
                }
                if i != j {
                    cost[i * dim + j] = points[i]
                        .iter()
                        .zip(&points[j])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                }
            }
        }
        Self::new(dim, cost)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.cost[i * self.dim + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.cost
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.cost.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    pub fn max(&self) -> f64 {
        self.cost.iter().copied().fold(0.0, f64::max)
    }

    /// Median of the off-diagonal entries (0 for `dim == 1`).
    pub fn median_off_diagonal(&self) -> f64 {
        let mut v: Vec<f64> = (0..self.dim * self.dim)
            .filter(|k| k / self.dim != k % self.dim)
            .map(|k| self.cost[k])
            .collect();
        if v.is_empty() {
            return 0.0;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }

    /// Default entropic sharpness, `10 / median(M)`.
    pub fn default_lambda(&self) -> f64 {
        let med = self.median_off_diagonal();
        if med > 0.0 {
            10.0 / med
        } else {
            10.0
        }
    }
}

pub(crate) fn check_dims(h: usize, hp: usize, metric: &GroundMetric) -> Result<()> {
    if h != metric.dim() {
        return Err(Error::DimensionMismatch { expected: metric.dim(), got: h });
    }
    if hp != metric.dim() {
        return Err(Error::DimensionMismatch { expected: metric.dim(), got: hp });
    }
    Ok(())
}
