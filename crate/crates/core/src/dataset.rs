//! Labeled descriptor sets: in-memory representation, JSON file format,
//! descriptor construction from raw features, synthetic generators and
//! stratified sampling.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ot::{GroundMetric, Histogram};
use crate::spd::{chol_upper, SpdMatrix};

/// Relative jitter added to rank-deficient sample covariances.
pub const COVARIANCE_JITTER: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Covariance,
    Histogram,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Family::Covariance => "covariance",
            Family::Histogram => "histogram",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Descriptors {
    Covariance(Vec<SpdMatrix>),
    Histogram { members: Vec<Histogram>, metric: GroundMetric },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub descriptors: Descriptors,
    pub labels: Vec<usize>,
    pub meta: Metadata,
}

impl LabeledDataset {
    pub fn covariance(members: Vec<SpdMatrix>, labels: Vec<usize>) -> Result<Self> {
        Self::from_parts(Descriptors::Covariance(members), labels, Metadata::default())
    }

    pub fn histogram(members: Vec<Histogram>, metric: GroundMetric, labels: Vec<usize>) -> Result<Self> {
        Self::from_parts(Descriptors::Histogram { members, metric }, labels, Metadata::default())
    }

    pub fn from_parts(descriptors: Descriptors, labels: Vec<usize>, meta: Metadata) -> Result<Self> {
        let ds = Self { descriptors, labels, meta };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.labels.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: self.labels.len() });
        }
        let d = self.dim();
        match &self.descriptors {
            Descriptors::Covariance(ms) => {
                if let Some(x) = ms.iter().find(|x| x.dim() != d) {
                    return Err(Error::DimensionMismatch { expected: d, got: x.dim() });
                }
            }
            Descriptors::Histogram { members, metric } => {
                if let Some(h) = members.iter().find(|h| h.dim() != metric.dim()) {
                    return Err(Error::DimensionMismatch { expected: metric.dim(), got: h.dim() });
                }
            }
        }
        Ok(())
    }

    pub fn family(&self) -> Family {
        match self.descriptors {
            Descriptors::Covariance(_) => Family::Covariance,
            Descriptors::Histogram { .. } => Family::Histogram,
        }
    }

    pub fn len(&self) -> usize {
        match &self.descriptors {
            Descriptors::Covariance(ms) => ms.len(),
            Descriptors::Histogram { members, .. } => members.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        match &self.descriptors {
            Descriptors::Covariance(ms) => ms.first().map_or(0, SpdMatrix::dim),
            Descriptors::Histogram { metric, .. } => metric.dim(),
        }
    }

    /// `1 + max label`, or 0 when empty.
    pub fn classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |&c| c + 1)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        class_counts(&self.labels)
    }

    pub fn covariances(&self) -> Result<&[SpdMatrix]> {
        match &self.descriptors {
            Descriptors::Covariance(ms) => Ok(ms),
            _ => Err(Error::FamilyMismatch("expected a covariance dataset".into())),
        }
    }

    pub fn histograms(&self) -> Result<(&[Histogram], &GroundMetric)> {
        match &self.descriptors {
            Descriptors::Histogram { members, metric } => Ok((members, metric)),
            _ => Err(Error::FamilyMismatch("expected a histogram dataset".into())),
        }
    }

    /// Members at `indices`, in that order, with the same metadata.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::BadParameters(format!("index {i} out of range")));
        }
        let descriptors = match &self.descriptors {
            Descriptors::Covariance(ms) => {
                Descriptors::Covariance(indices.iter().map(|&i| ms[i].clone()).collect())
            }
            Descriptors::Histogram { members, metric } => Descriptors::Histogram {
                members: indices.iter().map(|&i| members[i].clone()).collect(),
                metric: metric.clone(),
            },
        };
        Ok(Self {
            descriptors,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            meta: self.meta.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let header = Header {
            family: self.family(),
            dim: self.dim(),
            n: self.len(),
            classes: self.classes(),
            seed: self.meta.seed,
            name: self.meta.name.clone(),
            params: self.meta.params.clone(),
        };
        let (members, ground_metric) = match &self.descriptors {
            Descriptors::Covariance(ms) => (ms.iter().map(SpdMatrix::to_row_major).collect(), None),
            Descriptors::Histogram { members, metric } => (
                members.iter().map(|h| h.as_slice().to_vec()).collect(),
                Some(metric.rows()),
            ),
        };
        let file = DatasetFile { header, labels: self.labels.clone(), members, ground_metric };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DatasetFile = serde_json::from_str(text)?;
        let h = file.header;
        if file.members.len() != h.n {
            return Err(Error::Format(format!("header says n = {} but {} members", h.n, file.members.len())));
        }
        let descriptors = match h.family {
            Family::Covariance => {
                if file.ground_metric.is_some() {
                    return Err(Error::Format("covariance dataset with a ground metric".into()));
                }
                let ms = file
                    .members
                    .iter()
                    .map(|row| SpdMatrix::from_row_slice(h.dim, row))
                    .collect::<Result<Vec<_>>>()?;
                Descriptors::Covariance(ms)
            }
            Family::Histogram => {
                let rows = file
                    .ground_metric
                    .ok_or_else(|| Error::Format("histogram dataset without ground_metric".into()))?;
                let metric = GroundMetric::from_rows(&rows)?;
                if metric.dim() != h.dim {
                    return Err(Error::DimensionMismatch { expected: h.dim, got: metric.dim() });
                }
                let members = file.members.into_iter().map(Histogram::new).collect::<Result<Vec<_>>>()?;
                Descriptors::Histogram { members, metric }
            }
        };
        let meta = Metadata { name: h.name, seed: h.seed, params: h.params };
        let ds = Self::from_parts(descriptors, file.labels, meta)?;
        if ds.classes() > h.classes {
            return Err(Error::Format(format!("label {} exceeds class count {}", ds.classes() - 1, h.classes)));
        }
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    family: Family,
    dim: usize,
    n: usize,
    classes: usize,
    seed: Option<u64>,
    #[serde(default)]
    name: String,
    #[serde(default)]
    params: BTreeMap<String, f64>,
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    header: Header,
    labels: Vec<usize>,
    members: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ground_metric: Option<Vec<Vec<f64>>>,
}

pub fn class_counts(labels: &[usize]) -> Vec<usize> {
    let c = labels.iter().max().map_or(0, |&c| c + 1);
    let mut counts = vec![0; c];
    for &y in labels {
        counts[y] += 1;
    }
    counts
}

/// Sample covariance `1/(|F|-1) Σ (x_r - μ)(x_r - μ)ᵀ` of `features`.
///
/// When the result is not safely positive definite, `1e-8 · tr/d · I` is
/// added, or `1e-8 · I` when the trace vanishes.
pub fn covariance_descriptor(features: &[Vec<f64>]) -> Result<SpdMatrix> {
    let n = features.len();
    if n < 2 {
        return Err(Error::TooFewFeatures(n));
    }
    let d = features[0].len();
    if d == 0 {
        return Err(Error::EmptyInput);
    }
    if let Some(f) = features.iter().find(|f| f.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: f.len() });
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let mut mean = DVector::zeros(d);
    for f in features {
        mean += DVector::from_column_slice(f);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(d, d);
    for f in features {
        let c = DVector::from_column_slice(f) - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    cov /= (n - 1) as f64;
    let cov = (&cov + cov.transpose()) * 0.5;
    if well_conditioned(&cov) {
        return Ok(SpdMatrix::new_unchecked(cov));
    }
    let trace = cov.trace();
    let eps = if trace > 0.0 { COVARIANCE_JITTER * trace / d as f64 } else { COVARIANCE_JITTER };
    SpdMatrix::new(cov + DMatrix::identity(d, d) * eps)
}

/// Cholesky succeeds and the squared pivot ratio is above `1e-14`.
fn well_conditioned(a: &DMatrix<f64>) -> bool {
    let Ok(b) = chol_upper(a) else { return false };
    let diag: Vec<f64> = (0..a.nrows()).map(|i| b[(i, i)]).collect();
    let hi = diag.iter().copied().fold(0.0, f64::max);
    let lo = diag.iter().copied().fold(f64::INFINITY, f64::min);
    (lo / hi).powi(2) >= 1e-14
}

/// Normalized counts of nearest codewords (Euclidean, lowest index on
/// ties).
pub fn bow_histogram(features: &[Vec<f64>], codebook: &[Vec<f64>]) -> Result<Histogram> {
    if features.is_empty() || codebook.is_empty() {
        return Err(Error::EmptyInput);
    }
    let dim = codebook[0].len();
    if let Some(v) = codebook.iter().chain(features).find(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: v.len() });
    }
    let mut counts = vec![0.0; codebook.len()];
    for f in features {
        let mut best = (f64::INFINITY, 0);
        for (k, c) in codebook.iter().enumerate() {
            let dist: f64 = f.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            if dist < best.0 {
                best = (dist, k);
            }
        }
        counts[best.1] += 1.0;
    }
    Histogram::from_unnormalized(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CovarianceGenerator {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub wishart_dof: usize,
    /// AIRM distance of each class prototype from the identity.
    pub separation: f64,
}

impl Default for CovarianceGenerator {
    fn default() -> Self {
        Self { classes: 3, per_class: 200, dim: 5, wishart_dof: 10, separation: 1.0 }
    }
}

impl CovarianceGenerator {
    pub fn generate(&self, seed: u64) -> Result<LabeledDataset> {
        gen_covariance_dataset(self, seed)
    }
}

/// Per class a prototype `P_c = exp(separation · S_c)` with `S_c` a random
/// symmetric matrix of unit Frobenius norm; members are averages of
/// `wishart_dof` outer products of `N(0, P_c)` draws. Members are ordered by
/// class.
pub fn gen_covariance_dataset(g: &CovarianceGenerator, seed: u64) -> Result<LabeledDataset> {
    if g.classes == 0 || g.per_class == 0 || g.dim == 0 {
        return Err(Error::BadParameters("classes, per_class and dim must be positive".into()));
    }
    if g.wishart_dof < g.dim {
        return Err(Error::BadParameters(format!(
            "wishart_dof {} must be at least dim {}",
            g.wishart_dof, g.dim
        )));
    }
    if !(g.separation >= 0.0) || !g.separation.is_finite() {
        return Err(Error::BadParameters(format!("bad separation {}", g.separation)));
    }
    let d = g.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut members = Vec::with_capacity(g.classes * g.per_class);
    let mut labels = Vec::with_capacity(g.classes * g.per_class);
    for c in 0..g.classes {
        let mut s = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        s = (&s + s.transpose()) * 0.5;
        let norm = s.norm();
        if norm > 0.0 {
            s /= norm;
        }
        let eig = (s * g.separation).symmetric_eigen();
        let exp_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::exp));
        let proto = &eig.eigenvectors * exp_diag * eig.eigenvectors.transpose();
        let proto = (&proto + proto.transpose()) * 0.5;
        let lower = proto
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite { pivot: 0, value: 0.0 })?
            .l();
        for _ in 0..g.per_class {
            let mut acc = DMatrix::zeros(d, d);
            for _ in 0..g.wishart_dof {
                let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                let x = &lower * z;
                acc.ger(1.0, &x, &x, 1.0);
            }
            acc /= g.wishart_dof as f64;
            let acc = (&acc + acc.transpose()) * 0.5;
            members.push(if well_conditioned(&acc) {
                SpdMatrix::new_unchecked(acc)
            } else {
                let eps = COVARIANCE_JITTER * acc.trace() / d as f64;
                SpdMatrix::new(acc + DMatrix::identity(d, d) * eps)?
            });
            labels.push(c);
        }
    }
    let params = BTreeMap::from([
        ("classes".to_string(), g.classes as f64),
        ("per_class".to_string(), g.per_class as f64),
        ("dim".to_string(), g.dim as f64),
        ("wishart_dof".to_string(), g.wishart_dof as f64),
        ("separation".to_string(), g.separation),
    ]);
    let meta = Metadata { name: "synthetic-wishart".into(), seed: Some(seed), params };
    LabeledDataset::from_parts(Descriptors::Covariance(members), labels, meta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HistogramGenerator {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub concentration: f64,
}

impl Default for HistogramGenerator {
    fn default() -> Self {
        Self { classes: 3, per_class: 200, dim: 20, concentration: 20.0 }
    }
}

impl HistogramGenerator {
    pub fn generate(&self, seed: u64) -> Result<LabeledDataset> {
        gen_histogram_dataset(self, seed)
    }
}

/// Smallest Dirichlet parameter used when drawing members.
const MIN_DIRICHLET_ALPHA: f64 = 1e-2;

/// Codewords are uniform points in the unit square and the ground metric is
/// their Euclidean distance matrix. Class prototypes are `Dirichlet(1)`
/// draws; members are `Dirichlet(max(concentration · p_c, 0.01))` draws.
pub fn gen_histogram_dataset(g: &HistogramGenerator, seed: u64) -> Result<LabeledDataset> {
    if g.classes == 0 || g.per_class == 0 || g.dim == 0 {
        return Err(Error::BadParameters("classes, per_class and dim must be positive".into()));
    }
    if !(g.concentration > 0.0) || !g.concentration.is_finite() {
        return Err(Error::BadParameters(format!("concentration must be > 0, got {}", g.concentration)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let codewords: Vec<Vec<f64>> = (0..g.dim).map(|_| vec![rng.random(), rng.random()]).collect();
    let metric = GroundMetric::euclidean(&codewords)?;
    let mut members = Vec::with_capacity(g.classes * g.per_class);
    let mut labels = Vec::with_capacity(g.classes * g.per_class);
    for c in 0..g.classes {
        let proto = dirichlet(&vec![1.0; g.dim], &mut rng)?;
        let alpha: Vec<f64> = proto.iter().map(|p| (g.concentration * p).max(MIN_DIRICHLET_ALPHA)).collect();
        for _ in 0..g.per_class {
            members.push(Histogram::from_unnormalized(dirichlet(&alpha, &mut rng)?)?);
            labels.push(c);
        }
    }
    let params = BTreeMap::from([
        ("classes".to_string(), g.classes as f64),
        ("per_class".to_string(), g.per_class as f64),
        ("dim".to_string(), g.dim as f64),
        ("concentration".to_string(), g.concentration),
    ]);
    let meta = Metadata { name: "synthetic-dirichlet".into(), seed: Some(seed), params };
    LabeledDataset::from_parts(Descriptors::Histogram { members, metric }, labels, meta)
}

/// Normalized independent Gamma draws; redrawn if every draw underflows.
fn dirichlet(alpha: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let dists = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).map_err(|e| Error::BadParameters(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    loop {
        let v: Vec<f64> = dists.iter().map(|g| g.sample(rng)).collect();
        let total: f64 = v.iter().sum();
        if total > 0.0 && total.is_finite() {
            return Ok(v.into_iter().map(|x| x / total).collect());
        }
    }
}

/// Per-class sample sizes for a total of `m`: proportional allocation with
/// largest-remainder rounding and at least one per nonempty class. With
/// fewer slots than classes, the largest classes get one each. Ties go to
/// the lower class index.
pub fn stratified_allocation(counts: &[usize], m: usize) -> Result<Vec<usize>> {
    let priority: Vec<usize> = (0..counts.len()).collect();
    allocation_with_priority(counts, m, &priority)
}

/// As [`stratified_allocation`], with ties going to the smaller
/// `priority[c]`.
fn allocation_with_priority(counts: &[usize], m: usize, priority: &[usize]) -> Result<Vec<usize>> {
    let n: usize = counts.iter().sum();
    if m > n {
        return Err(Error::TooFewInputs { needed: m, have: n });
    }
    let nonempty: Vec<usize> = (0..counts.len()).filter(|&c| counts[c] > 0).collect();
    let mut alloc = vec![0; counts.len()];
    if m == 0 {
        return Ok(alloc);
    }
    if m < nonempty.len() {
        log::warn!("{} slots for {} classes; the smallest classes get none", m, nonempty.len());
        let mut order = nonempty;
        order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(priority[a].cmp(&priority[b])));
        for &c in order.iter().take(m) {
            alloc[c] = 1;
        }
        return Ok(alloc);
    }
    let mut remainders = Vec::with_capacity(counts.len());
    for (c, &cnt) in counts.iter().enumerate() {
        let exact = m as f64 * cnt as f64 / n as f64;
        alloc[c] = exact.floor() as usize;
        remainders.push((exact - exact.floor(), c));
    }
    let assigned: usize = alloc.iter().sum();
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(priority[a.1].cmp(&priority[b.1])));
    for &(_, c) in remainders.iter().take(m - assigned) {
        alloc[c] += 1;
    }
    // Guarantee one per nonempty class by taking from the largest
    // allocations.
    for &c in &nonempty {
        if alloc[c] == 0 {
            let donor = (0..alloc.len())
                .filter(|&k| alloc[k] > 1)
                .max_by(|&a, &b| alloc[a].cmp(&alloc[b]).then(priority[b].cmp(&priority[a])))
                .expect("m >= number of classes");
            alloc[donor] -= 1;
            alloc[c] = 1;
        }
    }
    Ok(alloc)
}

/// Class-stratified random sample of `m` indices, sorted ascending.
///
/// One seeded permutation of all inputs is walked and each input is taken
/// while its class quota is open; allocation ties go to the class that
/// appears first in the permutation. Renaming the classes therefore leaves
/// the sample unchanged.
pub fn stratified_sample(labels: &[usize], m: usize, seed: u64) -> Result<Vec<usize>> {
    let counts = class_counts(labels);
    let mut perm: Vec<usize> = (0..labels.len()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut first_seen = vec![usize::MAX; counts.len()];
    for (pos, &i) in perm.iter().enumerate() {
        let c = labels[i];
        first_seen[c] = first_seen[c].min(pos);
    }
    let alloc = allocation_with_priority(&counts, m, &first_seen)?;
    let mut taken = vec![0; counts.len()];
    let mut out = Vec::with_capacity(m);
    for i in perm {
        let c = labels[i];
        if taken[c] < alloc[c] {
            taken[c] += 1;
            out.push(i);
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// Stratified train/test split; within each class `round(count ·
/// test_fraction)` members go to the test side.
pub fn stratified_split(
    ds: &LabeledDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::BadParameters(format!("test fraction must be in [0, 1), got {test_fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..ds.classes() {
        let mut members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == c).collect();
        members.shuffle(&mut rng);
        let k = (members.len() as f64 * test_fraction).round() as usize;
        test.extend_from_slice(&members[..k]);
        train.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((ds.subset(&train)?, ds.subset(&test)?))
}
