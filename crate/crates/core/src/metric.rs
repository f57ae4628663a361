//! Dissimilarities as pluggable objects, so kNN evaluation and the
//! reduction baselines run unchanged on either descriptor family.

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::ot::{emd_exact, GroundMetric, Histogram, SinkhornSolver};
use crate::spd::{airm, jbld, SpdMatrix};

pub trait Metric<T: ?Sized>: Sync {
    fn distance(&self, a: &T, b: &T) -> Result<f64>;
}

impl<T: ?Sized, F> Metric<T> for F
where
    F: Fn(&T, &T) -> Result<f64> + Sync,
{
    fn distance(&self, a: &T, b: &T) -> Result<f64> {
        self(a, b)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Jbld;

impl Metric<SpdMatrix> for Jbld {
    fn distance(&self, a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
        jbld(a, b)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Airm;

impl Metric<SpdMatrix> for Airm {
    fn distance(&self, a: &SpdMatrix, b: &SpdMatrix) -> Result<f64> {
        airm(a, b)
    }
}

/// Sinkhorn distance with a fixed ground metric and λ.
#[derive(Debug, Clone)]
pub struct Sinkhorn {
    solver: SinkhornSolver,
}

impl Sinkhorn {
    pub fn new(metric: &GroundMetric, lambda: f64) -> Result<Self> {
        Ok(Self { solver: SinkhornSolver::with_defaults(metric, lambda)? })
    }

    pub fn from_solver(solver: SinkhornSolver) -> Self {
        Self { solver }
    }

    pub fn solver(&self) -> &SinkhornSolver {
        &self.solver
    }
}

impl Metric<Histogram> for Sinkhorn {
    fn distance(&self, a: &Histogram, b: &Histogram) -> Result<f64> {
        let sol = self.solver.solve(a, b)?;
        if !sol.converged {
            log::debug!("sinkhorn: not converged after {} iterations", sol.iterations);
        }
        Ok(sol.distance)
    }
}

/// Exact earth mover's distance.
#[derive(Debug, Clone)]
pub struct Emd {
    metric: GroundMetric,
}

impl Emd {
    pub fn new(metric: GroundMetric) -> Self {
        Self { metric }
    }
}

impl Metric<Histogram> for Emd {
    fn distance(&self, a: &Histogram, b: &Histogram) -> Result<f64> {
        emd_exact(a, b, &self.metric)
    }
}

/// Which dissimilarity to use for a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    /// JBLD for covariances, Sinkhorn for histograms.
    #[default]
    Auto,
    Jbld,
    Airm,
    Sinkhorn,
    Emd,
}

/// Dissimilarity resolved against a concrete dataset.
#[derive(Debug, Clone)]
pub enum DatasetMetric {
    Jbld,
    Airm,
    Sinkhorn(Sinkhorn),
    Emd(Emd),
}

impl DatasetMetric {
    /// `lambda = None` uses the ground metric's default.
    pub fn for_dataset(ds: &LabeledDataset, kind: MetricKind, lambda: Option<f64>) -> Result<Self> {
        use crate::dataset::Family;
        match (ds.family(), kind) {
            (Family::Covariance, MetricKind::Auto | MetricKind::Jbld) => Ok(Self::Jbld),
            (Family::Covariance, MetricKind::Airm) => Ok(Self::Airm),
            (Family::Histogram, MetricKind::Auto | MetricKind::Sinkhorn) => {
                let (_, m) = ds.histograms()?;
                let lambda = lambda.unwrap_or_else(|| m.default_lambda());
                Ok(Self::Sinkhorn(Sinkhorn::new(m, lambda)?))
            }
            (Family::Histogram, MetricKind::Emd) => {
                let (_, m) = ds.histograms()?;
                Ok(Self::Emd(Emd::new(m.clone())))
            }
            (family, kind) => {
                Err(Error::FamilyMismatch(format!("metric {kind:?} does not apply to {family} data")))
            }
        }
    }

    pub fn as_spd(&self) -> Option<&dyn Metric<SpdMatrix>> {
        match self {
            Self::Jbld => Some(&Jbld),
            Self::Airm => Some(&Airm),
            _ => None,
        }
    }

    pub fn as_histogram(&self) -> Option<&dyn Metric<Histogram>> {
        match self {
            Self::Sinkhorn(s) => Some(s),
            Self::Emd(e) => Some(e),
            _ => None,
        }
    }
}

/// Row-major `queries.len() × refs.len()` distance matrix.
pub fn cross_distances<T, M: Metric<T> + ?Sized>(queries: &[T], refs: &[T], metric: &M) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(queries.len() * refs.len());
    for q in queries {
        for r in refs {
            out.push(metric.distance(q, r)?);
        }
    }
    Ok(out)
}

/// Symmetric `n × n` distance matrix; only `d(i, j)` with `i < j` is
/// evaluated and the diagonal is zero.
pub fn pairwise_distances<T, M: Metric<T> + ?Sized>(items: &[T], metric: &M) -> Result<Vec<f64>> {
    let n = items.len();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = metric.distance(&items[i], &items[j])?;
            out[i * n + j] = d;
            out[j * n + i] = d;
        }
    }
    Ok(out)
}
