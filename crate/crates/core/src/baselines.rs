//! Training-set reduction by selection: stratified subsampling, CNN, RNN,
//! FCNN and random mutation hill climbing.
//!
//! Everything here works from a precomputed symmetric distance matrix, so
//! the same code runs for any descriptor family. Wherever two members are
//! equally close, the one with the lower training index is the neighbor.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::stratified_sample;
use crate::error::{Error, Result};
use crate::metric::{pairwise_distances, Metric};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Scc,
    Shc,
    Subsample,
    Cnn,
    Rnn,
    Fcnn,
    Rmhc,
}

impl Method {
    pub const ALL: [Method; 7] =
        [Method::Scc, Method::Shc, Method::Subsample, Method::Cnn, Method::Rnn, Method::Fcnn, Method::Rmhc];

    pub fn name(self) -> &'static str {
        match self {
            Method::Scc => "scc",
            Method::Shc => "shc",
            Method::Subsample => "subsample",
            Method::Cnn => "cnn",
            Method::Rnn => "rnn",
            Method::Fcnn => "fcnn",
            Method::Rmhc => "rmhc",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::BadParameters(format!("unknown method {s:?}")))
    }
}

/// Number of prototypes for compression ratio `ratio` of `n` inputs, at
/// least one.
pub fn prototype_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64).round() as usize).clamp(1, n.max(1))
}

/// Selected set at a given size while a growing method was running.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub ratio: f64,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedSet {
    /// Training indices in selection order.
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
    pub method: Method,
    /// 1-NN on the set classifies every training input correctly.
    pub consistent: bool,
    #[serde(default)]
    pub snapshots: Vec<Snapshot>,
    /// RMHC: training error (count) after each step.
    #[serde(default)]
    pub error_trace: Vec<usize>,
}

impl ReducedSet {
    fn build(indices: Vec<usize>, train_labels: &[usize], method: Method, dists: &DistanceMatrix) -> Self {
        let consistent = misclassified(dists, train_labels, &indices) == 0;
        Self {
            labels: indices.iter().map(|&i| train_labels[i]).collect(),
            indices,
            method,
            consistent,
            snapshots: Vec::new(),
            error_trace: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Snapshot for `ratio` if the method passed through that size,
    /// otherwise the final set.
    pub fn at_ratio(&self, ratio: f64) -> &[usize] {
        self.snapshots
            .iter()
            .find(|s| s.ratio == ratio)
            .map_or(&self.indices, |s| &s.indices)
    }
}

/// Symmetric `n × n` distances between training inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn compute<T, M: Metric<T> + ?Sized>(items: &[T], metric: &M) -> Result<Self> {
        Ok(Self { n: items.len(), data: pairwise_distances(items, metric)? })
    }

    pub fn from_vec(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, got: data.len() });
        }
        Ok(Self { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Nearest member of `set` to `i` as `(distance, index)`.
fn nearest(dists: &DistanceMatrix, set: &[usize], i: usize) -> (f64, usize) {
    let mut best = (f64::INFINITY, usize::MAX);
    for &j in set {
        let d = dists.get(i, j);
        if closer((d, j), best) {
            best = (d, j);
        }
    }
    best
}

fn closer(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Number of training inputs misclassified by 1-NN over `set`.
pub fn misclassified(dists: &DistanceMatrix, labels: &[usize], set: &[usize]) -> usize {
    if set.is_empty() {
        return labels.len();
    }
    (0..labels.len()).filter(|&i| labels[nearest(dists, set, i).1] != labels[i]).count()
}

fn check_labels(dists: &DistanceMatrix, labels: &[usize]) -> Result<()> {
    if labels.len() != dists.n() {
        return Err(Error::DimensionMismatch { expected: dists.n(), got: labels.len() });
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

/// Records snapshots when `len` reaches one of the ratio targets.
struct SnapshotRecorder {
    targets: Vec<(f64, usize)>,
    taken: Vec<Snapshot>,
}

impl SnapshotRecorder {
    fn new(ratios: &[f64], n: usize) -> Self {
        Self { targets: ratios.iter().map(|&r| (r, prototype_count(r, n))).collect(), taken: Vec::new() }
    }

    fn observe(&mut self, set: &[usize]) {
        for &(ratio, size) in &self.targets {
            if set.len() == size && !self.taken.iter().any(|s| s.ratio == ratio) {
                self.taken.push(Snapshot { ratio, indices: set.to_vec() });
            }
        }
    }
}

/// Class-stratified random subset of size `m`.
pub fn subsample(labels: &[usize], m: usize, seed: u64) -> Result<Vec<usize>> {
    stratified_sample(labels, m, seed)
}

/// Condensed nearest neighbor: scans the inputs in a seeded random order,
/// adding every input misclassified by the current set, and repeats passes
/// until one adds nothing.
pub fn cnn_reduce(
    dists: &DistanceMatrix,
    labels: &[usize],
    seed: u64,
    snapshot_ratios: &[f64],
) -> Result<ReducedSet> {
    check_labels(dists, labels)?;
    let n = labels.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut recorder = SnapshotRecorder::new(snapshot_ratios, n);
    let mut set = vec![order[0]];
    let mut in_set = vec![false; n];
    in_set[order[0]] = true;
    let mut nn: Vec<(f64, usize)> = (0..n).map(|i| (dists.get(i, order[0]), order[0])).collect();
    recorder.observe(&set);
    loop {
        let mut added = false;
        for &i in &order {
            if in_set[i] || labels[nn[i].1] == labels[i] {
                continue;
            }
            set.push(i);
            in_set[i] = true;
            added = true;
            for (q, best) in nn.iter_mut().enumerate() {
                let cand = (dists.get(q, i), i);
                if closer(cand, *best) {
                    *best = cand;
                }
            }
            recorder.observe(&set);
        }
        if !added {
            break;
        }
    }
    let mut out = ReducedSet::build(set, labels, Method::Cnn, dists);
    out.snapshots = recorder.taken;
    Ok(out)
}

/// Reduced nearest neighbor: tries to delete each member of a consistent
/// set in a seeded random order, keeping deletions that preserve
/// consistency.
pub fn rnn_reduce(
    input: &ReducedSet,
    dists: &DistanceMatrix,
    labels: &[usize],
    seed: u64,
    snapshot_ratios: &[f64],
) -> Result<ReducedSet> {
    check_labels(dists, labels)?;
    if !input.consistent || misclassified(dists, labels, &input.indices) != 0 {
        return Err(Error::InconsistentInput);
    }
    let n = labels.len();
    let mut recorder = SnapshotRecorder::new(snapshot_ratios, n);
    let mut set = input.indices.clone();
    let mut order = set.clone();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    recorder.observe(&set);
    for c in order {
        if set.len() == 1 {
            break;
        }
        let trial: Vec<usize> = set.iter().copied().filter(|&j| j != c).collect();
        if misclassified(dists, labels, &trial) == 0 {
            set = trial;
            recorder.observe(&set);
        }
    }
    let mut out = ReducedSet::build(set, labels, Method::Rnn, dists);
    out.snapshots = recorder.taken;
    Ok(out)
}

/// Fast condensed nearest neighbor. Starts from the member of each class
/// closest to that class's centroid, then repeatedly adds, for every
/// selected member, the nearest misclassified input among those it is the
/// nearest neighbor of, until nothing is misclassified.
///
/// `centroid_distances(c)` returns the distance from the centroid of class
/// `c` to each of its members, in the order given.
pub fn fcnn_reduce<F>(
    dists: &DistanceMatrix,
    labels: &[usize],
    mut centroid_distances: F,
    snapshot_ratios: &[f64],
) -> Result<ReducedSet>
where
    F: FnMut(&[usize]) -> Result<Vec<f64>>,
{
    check_labels(dists, labels)?;
    let n = labels.len();
    let classes = labels.iter().max().map_or(0, |&c| c + 1);
    let mut recorder = SnapshotRecorder::new(snapshot_ratios, n);
    let mut delta = Vec::new();
    for c in 0..classes {
        let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        let cd = centroid_distances(&members)?;
        if cd.len() != members.len() {
            return Err(Error::CentroidFailure(format!(
                "expected {} centroid distances, got {}",
                members.len(),
                cd.len()
            )));
        }
        let best = (0..members.len())
            .min_by(|&a, &b| cd[a].total_cmp(&cd[b]).then(a.cmp(&b)))
            .expect("nonempty class");
        delta.push(members[best]);
    }
    let mut set: Vec<usize> = Vec::new();
    let mut in_set = vec![false; n];
    let mut nn = vec![(f64::INFINITY, usize::MAX); n];
    while !delta.is_empty() {
        for &p in &delta {
            set.push(p);
            in_set[p] = true;
            for (q, best) in nn.iter_mut().enumerate() {
                let cand = (dists.get(q, p), p);
                if closer(cand, *best) {
                    *best = cand;
                }
            }
            recorder.observe(&set);
        }
        // Representative per cell: nearest misclassified input.
        let mut rep: Vec<Option<(f64, usize)>> = vec![None; n];
        for q in 0..n {
            let (d, p) = nn[q];
            if in_set[q] || labels[p] == labels[q] {
                continue;
            }
            if rep[p].is_none_or(|r| closer((d, q), r)) {
                rep[p] = Some((d, q));
            }
        }
        delta = set.iter().filter_map(|&p| rep[p].map(|r| r.1)).collect();
    }
    let mut out = ReducedSet::build(set, labels, Method::Fcnn, dists);
    out.snapshots = recorder.taken;
    Ok(out)
}

/// Random mutation hill climbing over subsets of size `m`, starting from a
/// stratified subsample. Each step swaps a random selected input for a
/// random unselected one and keeps the swap iff the 1-NN training error
/// does not increase.
pub fn rmhc_reduce(
    dists: &DistanceMatrix,
    labels: &[usize],
    m: usize,
    steps: usize,
    seed: u64,
) -> Result<ReducedSet> {
    check_labels(dists, labels)?;
    let n = labels.len();
    if m == 0 || m > n {
        return Err(Error::TooFewInputs { needed: m.max(1), have: n });
    }
    let mut set = stratified_sample(labels, m, seed)?;
    let mut in_set = vec![false; n];
    set.iter().for_each(|&i| in_set[i] = true);
    let mut outside: Vec<usize> = (0..n).filter(|&i| !in_set[i]).collect();
    let mut nn: Vec<(f64, usize)> = (0..n).map(|i| nearest(dists, &set, i)).collect();
    let mut errors = nn.iter().enumerate().filter(|(i, b)| labels[b.1] != labels[*i]).count();
    let mut trace = Vec::with_capacity(steps);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_4a3c);
    for _ in 0..steps {
        if outside.is_empty() {
            trace.push(errors);
            continue;
        }
        let pos = rng.random_range(0..m);
        let opos = rng.random_range(0..outside.len());
        let (out_idx, in_idx) = (set[pos], outside[opos]);
        let mut trial = set.clone();
        trial[pos] = in_idx;
        let trial_nn = swap_update(dists, &trial, &nn, out_idx, in_idx);
        let trial_errors = trial_nn.iter().enumerate().filter(|(i, b)| labels[b.1] != labels[*i]).count();
        if trial_errors <= errors {
            set = trial;
            outside[opos] = out_idx;
            nn = trial_nn;
            errors = trial_errors;
        }
        trace.push(errors);
    }
    let mut out = ReducedSet::build(set, labels, Method::Rmhc, dists);
    out.error_trace = trace;
    Ok(out)
}

/// Nearest-member table after replacing `removed` by `added`. Only inputs
/// whose nearest member was removed are rescanned.
fn swap_update(
    dists: &DistanceMatrix,
    new_set: &[usize],
    nn: &[(f64, usize)],
    removed: usize,
    added: usize,
) -> Vec<(f64, usize)> {
    nn.iter()
        .enumerate()
        .map(|(q, &best)| {
            if best.1 == removed {
                nearest(dists, new_set, q)
            } else {
                let cand = (dists.get(q, added), added);
                if closer(cand, best) {
                    cand
                } else {
                    best
                }
            }
        })
        .collect()
}
