//! Brute-force k-nearest-neighbor classification and its accounting.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::metric::{DatasetMetric, Metric};

/// Majority vote among the `k` smallest entries of `dists`. Equal
/// distances are ordered by index; a tied vote goes to the label of the
/// nearest neighbor among the tied labels.
pub fn vote(dists: &[f64], labels: &[usize], k: usize) -> Result<usize> {
    if dists.is_empty() {
        return Err(Error::EmptyReference);
    }
    if k == 0 {
        return Err(Error::BadParameters("k must be positive".into()));
    }
    if k == 1 {
        return Ok(labels[crate::neighborhood::argmin(dists)]);
    }
    let mut order: Vec<usize> = (0..dists.len()).collect();
    order.sort_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(a.cmp(&b)));
    order.truncate(k.min(dists.len()));
    let classes = order.iter().map(|&i| labels[i]).max().unwrap_or(0) + 1;
    let mut counts = vec![0usize; classes];
    for &i in &order {
        counts[labels[i]] += 1;
    }
    let top = *counts.iter().max().expect("nonempty");
    Ok(order.iter().map(|&i| labels[i]).find(|&y| counts[y] == top).expect("some label has the top count"))
}

pub fn knn_classify<T, M: Metric<T> + ?Sized>(
    query: &T,
    reference: &[T],
    labels: &[usize],
    metric: &M,
    k: usize,
) -> Result<usize> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    if labels.len() != reference.len() {
        return Err(Error::DimensionMismatch { expected: reference.len(), got: labels.len() });
    }
    let dists = reference.iter().map(|r| metric.distance(query, r)).collect::<Result<Vec<_>>>()?;
    vote(&dists, labels, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub k: usize,
    pub workers: usize,
    /// Timing repetitions; the median is reported.
    pub repetitions: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { k: 1, workers: 1, repetitions: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub error_rate: f64,
    pub n_test: usize,
    pub n_reference: usize,
    pub k: usize,
    pub distance_evals: u64,
    /// Median wall time in seconds over the repetitions.
    pub wall_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speedup_vs_reference: Option<f64>,
    pub workers: usize,
    #[serde(skip)]
    pub predictions: Vec<usize>,
}

impl EvalReport {
    /// Records `baseline.wall_time / self.wall_time`.
    pub fn with_speedup(mut self, baseline: &EvalReport) -> Self {
        self.speedup_vs_reference = Some(baseline.wall_time / self.wall_time.max(f64::MIN_POSITIVE));
        self
    }
}

fn classify_all<T: Sync, M: Metric<T> + ?Sized>(
    test: &[T],
    reference: &[T],
    labels: &[usize],
    metric: &M,
    k: usize,
    workers: usize,
) -> Result<Vec<usize>> {
    if workers <= 1 || test.len() < 2 {
        return test.iter().map(|q| knn_classify(q, reference, labels, metric, k)).collect();
    }
    let chunk = test.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = test
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|q| knn_classify(q, reference, labels, metric, k))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(test.len());
        for h in handles {
            out.extend(h.join().expect("evaluation worker panicked")?);
        }
        Ok(out)
    })
}

/// Classifies every test point against `reference` and times it. Only
/// distance computation and voting are timed.
pub fn evaluate<T: Sync, M: Metric<T> + ?Sized>(
    test: &[T],
    test_labels: &[usize],
    reference: &[T],
    reference_labels: &[usize],
    metric: &M,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    if test.len() != test_labels.len() {
        return Err(Error::DimensionMismatch { expected: test.len(), got: test_labels.len() });
    }
    let reps = opts.repetitions.max(1);
    let mut times = Vec::with_capacity(reps);
    let mut predictions = Vec::new();
    for _ in 0..reps {
        let start = Instant::now();
        predictions = classify_all(test, reference, reference_labels, metric, opts.k, opts.workers)?;
        times.push(start.elapsed().as_secs_f64());
    }
    let wrong = predictions.iter().zip(test_labels).filter(|(p, y)| p != y).count();
    Ok(EvalReport {
        error_rate: if test.is_empty() { 0.0 } else { wrong as f64 / test.len() as f64 },
        n_test: test.len(),
        n_reference: reference.len(),
        k: opts.k,
        distance_evals: (test.len() * reference.len()) as u64,
        wall_time: crate::neighborhood::median(&times),
        speedup_vs_reference: None,
        workers: opts.workers.max(1),
        predictions,
    })
}

/// [`evaluate`] on datasets of the same family.
pub fn evaluate_dataset(
    test: &LabeledDataset,
    reference: &LabeledDataset,
    metric: &DatasetMetric,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    if test.family() != reference.family() {
        return Err(Error::FamilyMismatch(format!(
            "test is {} but reference is {}",
            test.family(),
            reference.family()
        )));
    }
    if let Some(m) = metric.as_spd() {
        evaluate(test.covariances()?, &test.labels, reference.covariances()?, &reference.labels, m, opts)
    } else {
        let m = metric.as_histogram().expect("metric is either SPD or histogram");
        evaluate(test.histograms()?.0, &test.labels, reference.histograms()?.0, &reference.labels, m, opts)
    }
}

/// Leave-one-out kNN error on the training set.
pub fn loo_train_error<T, M: Metric<T> + ?Sized>(
    train: &[T],
    labels: &[usize],
    metric: &M,
    k: usize,
) -> Result<f64> {
    let n = train.len();
    if n < 2 {
        return Err(Error::TooFewInputs { needed: 2, have: n });
    }
    let dists = crate::metric::pairwise_distances(train, metric)?;
    loo_error_from_distances(&dists, labels, k)
}

/// Leave-one-out error from a precomputed symmetric `n × n` matrix.
pub fn loo_error_from_distances(dists: &[f64], labels: &[usize], k: usize) -> Result<f64> {
    let n = labels.len();
    if n < 2 {
        return Err(Error::TooFewInputs { needed: 2, have: n });
    }
    let mut wrong = 0;
    let mut row = Vec::with_capacity(n - 1);
    let mut row_labels = Vec::with_capacity(n - 1);
    for i in 0..n {
        row.clear();
        row_labels.clear();
        for j in (0..n).filter(|&j| j != i) {
            row.push(dists[i * n + j]);
            row_labels.push(labels[j]);
        }
        if vote(&row, &row_labels, k)? != labels[i] {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / n as f64)
}
