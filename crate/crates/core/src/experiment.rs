//! Experiment harness: compress a training set with every requested method
//! at every ratio and seed, evaluate kNN on the held-out split, and tabulate.
//!
//! Work is organized per seed. Each seed gets one stratified split, one
//! full-reference evaluation and, when some method needs it, one training
//! distance matrix. CNN, RNN and FCNN run once per seed and report the
//! snapshot they passed through at each ratio.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, OnceLock};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{
    cnn_reduce, fcnn_reduce, misclassified, prototype_count, rmhc_reduce, rnn_reduce, subsample, DistanceMatrix, Method,
    ReducedSet,
};
use crate::dataset::{stratified_split, CovarianceGenerator, Family, HistogramGenerator, LabeledDataset};
use crate::error::{Error, Result};
use crate::knn::{evaluate_dataset, EvalOptions, EvalReport};
use crate::metric::{cross_distances, DatasetMetric, Jbld, MetricKind, Sinkhorn};
use crate::neighborhood::{gamma_sq_grid, median};
use crate::ot::{sinkhorn_barycenter, Histogram};
use crate::scc::{scc_compress, scc_init, SccConfig};
use crate::shc::{shc_compress_observed, training_distances, ShcConfig};
use crate::spd::{jbld, jbld_centroid};

/// Ratios used when every class can get a prototype at 2%.
pub const FEW_CLASS_RATIOS: [f64; 4] = [0.02, 0.04, 0.08, 0.16];
/// Ratios used otherwise.
pub const MANY_CLASS_RATIOS: [f64; 4] = [0.10, 0.20, 0.30, 0.40];

const CENTROID_TOL: f64 = 1e-9;
const CENTROID_MAX_ITER: usize = 2000;
const TUNE_FRACTION: f64 = 0.2;
const SHC_STEP_GRID: [f64; 3] = [0.5, 1.0, 2.0];

/// Where the experiment data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSource {
    /// A dataset file; every seed splits the same data.
    Path(PathBuf),
    /// Synthetic covariances. Without `seed`, every experiment seed draws
    /// its own dataset.
    Covariance {
        #[serde(flatten)]
        generator: CovarianceGenerator,
        #[serde(default)]
        seed: Option<u64>,
    },
    Histogram {
        #[serde(flatten)]
        generator: HistogramGenerator,
        #[serde(default)]
        seed: Option<u64>,
    },
}

impl DatasetSource {
    pub fn load(&self, experiment_seed: u64) -> Result<LabeledDataset> {
        match self {
            Self::Path(p) => LabeledDataset::load(p),
            Self::Covariance { generator, seed } => generator.generate(seed.unwrap_or(experiment_seed)),
            Self::Histogram { generator, seed } => generator.generate(seed.unwrap_or(experiment_seed)),
        }
    }

    /// True when the data does not depend on the experiment seed.
    pub fn is_fixed(&self) -> bool {
        match self {
            Self::Path(_) => true,
            Self::Covariance { seed, .. } | Self::Histogram { seed, .. } => seed.is_some(),
        }
    }
}

fn default_k() -> usize {
    1
}

fn default_test_fraction() -> f64 {
    0.3
}

fn default_one() -> usize {
    1
}

fn default_repetitions() -> usize {
    3
}

fn default_rmhc_steps() -> usize {
    ShcConfig::default().rmhc_steps
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    #[serde(default)]
    pub name: Option<String>,
    /// Required by `bench`; [`run_experiment`] takes the data directly.
    #[serde(default)]
    pub dataset: Option<DatasetSource>,
    /// Empty picks the few-class or many-class defaults.
    #[serde(default)]
    pub ratios: Vec<f64>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub metric: MetricKind,
    /// Sinkhorn sharpness for evaluation and SHC; default from the ground
    /// metric.
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Seeds and γ² are set per cell.
    #[serde(default)]
    pub scc: SccConfig,
    #[serde(default)]
    pub shc: ShcConfig,
    /// RMHC mutation count for the `rmhc` baseline.
    #[serde(default = "default_rmhc_steps")]
    pub rmhc_steps: usize,
    /// Pick γ² (and the SHC step) on a validation carve-out of the
    /// training split instead of by initial training loss.
    #[serde(default)]
    pub tune: bool,
    /// Run cells one at a time in plan order.
    #[serde(default)]
    pub deterministic: bool,
    /// Concurrent cells when not deterministic.
    #[serde(default = "default_one")]
    pub workers: usize,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
}

impl ExperimentPlan {
    pub fn new(methods: Vec<Method>, seeds: Vec<u64>) -> Self {
        Self {
            name: None,
            dataset: None,
            ratios: Vec::new(),
            methods,
            seeds,
            k: 1,
            test_fraction: default_test_fraction(),
            metric: MetricKind::Auto,
            lambda: None,
            scc: SccConfig::default(),
            shc: ShcConfig::default(),
            rmhc_steps: default_rmhc_steps(),
            tune: false,
            deterministic: true,
            workers: 1,
            repetitions: default_repetitions(),
        }
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Checks everything that does not depend on the data.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::BadParameters(msg));
        if self.methods.is_empty() {
            return bad("plan has no methods".into());
        }
        if self.seeds.is_empty() {
            return bad("plan has no seeds".into());
        }
        if let Some(r) = self.ratios.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            return bad(format!("ratio {r} is outside (0, 1]"));
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return bad(format!("test fraction {} is outside (0, 1)", self.test_fraction));
        }
        if let Some(l) = self.lambda {
            if !(l.is_finite() && l > 0.0) {
                return bad(format!("lambda must be positive, got {l}"));
            }
        }
        Ok(())
    }

    /// Plan ratios, or the defaults for a training set of `n` inputs in
    /// `classes` classes.
    pub fn resolved_ratios(&self, n: usize, classes: usize) -> Vec<f64> {
        if !self.ratios.is_empty() {
            return self.ratios.clone();
        }
        default_ratios(n, classes).to_vec()
    }
}

/// Few-class ratios unless 2% of the training set is fewer prototypes than
/// classes.
pub fn default_ratios(n: usize, classes: usize) -> [f64; 4] {
    if prototype_count(FEW_CLASS_RATIOS[0], n) >= classes {
        FEW_CLASS_RATIOS
    } else {
        MANY_CLASS_RATIOS
    }
}

/// One JSON-lines record per (method, ratio, seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: Method,
    pub ratio: f64,
    pub seed: u64,
    pub prototypes: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub k: usize,
    pub error_rate: f64,
    pub full_error_rate: f64,
    pub distance_evals: u64,
    pub full_distance_evals: u64,
    /// Median test wall time, seconds.
    pub wall_time: f64,
    pub full_wall_time: f64,
    pub speedup: f64,
    /// Compression time, seconds, excluding `shared_time`.
    pub train_time: f64,
    /// Training distance matrix time for methods that use it.
    pub shared_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consistent: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_sq: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
}

impl ResultRow {
    /// Copy with every timing field zeroed, for reproducibility checks.
    pub fn without_timings(&self) -> Self {
        Self { wall_time: 0.0, full_wall_time: 0.0, speedup: 0.0, train_time: 0.0, shared_time: 0.0, ..self.clone() }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResults {
    pub rows: Vec<ResultRow>,
    pub ratios: Vec<f64>,
}

impl ExperimentResults {
    pub fn summary(&self) -> String {
        summarize(&self.rows, &self.ratios)
    }
}

/// Settings for a single compression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressSettings {
    pub method: Method,
    pub ratio: f64,
    pub seed: u64,
    pub gamma_sq: Option<f64>,
    pub lambda: Option<f64>,
    pub scc: SccConfig,
    pub shc: ShcConfig,
    pub rmhc_steps: usize,
    pub tune: bool,
}

impl CompressSettings {
    pub fn new(method: Method, ratio: f64, seed: u64) -> Self {
        Self {
            method,
            ratio,
            seed,
            gamma_sq: None,
            lambda: None,
            scc: SccConfig::default(),
            shc: ShcConfig::default(),
            rmhc_steps: default_rmhc_steps(),
            tune: false,
        }
    }
}

/// A compressed training set.
#[derive(Debug, Clone)]
pub struct Compressed {
    pub prototypes: LabeledDataset,
    /// Training indices for selection methods.
    pub indices: Option<Vec<usize>>,
    pub consistent: Option<bool>,
    pub gamma_sq: Option<f64>,
    pub iterations: Option<usize>,
    pub train_time: f64,
    pub shared_time: f64,
}

/// Checks that `method` applies to data of `family`.
pub fn check_method(method: Method, family: Family) -> Result<()> {
    match (method, family) {
        (Method::Scc, Family::Histogram) => {
            Err(Error::FamilyMismatch("scc needs covariance descriptors".into()))
        }
        (Method::Shc, Family::Covariance) => {
            Err(Error::FamilyMismatch("shc needs histogram descriptors".into()))
        }
        _ => Ok(()),
    }
}

/// Compresses `train` to `round(ratio · n)` prototypes (selection methods
/// that stop on their own may return a different size).
pub fn compress(train: &LabeledDataset, settings: &CompressSettings, metric: MetricKind) -> Result<Compressed> {
    let lambda = resolve_lambda(train, settings.lambda)?;
    let ctx = TrainContext::new(train.clone(), DatasetMetric::for_dataset(train, metric, lambda)?, lambda);
    ctx.compress(settings, &[settings.ratio])
}

fn resolve_lambda(ds: &LabeledDataset, lambda: Option<f64>) -> Result<Option<f64>> {
    Ok(match ds.family() {
        Family::Histogram => Some(lambda.unwrap_or_else(|| ds.histograms().map(|(_, m)| m.default_lambda()).unwrap_or(1.0))),
        Family::Covariance => None,
    })
}

type Timed<T> = Result<(T, f64)>;

/// Training split plus lazily computed pieces shared by several methods.
struct TrainContext {
    train: LabeledDataset,
    metric: DatasetMetric,
    lambda: Option<f64>,
    dists: OnceLock<Timed<DistanceMatrix>>,
    cnn: OnceLock<Timed<ReducedSet>>,
    rnn: OnceLock<Timed<ReducedSet>>,
    fcnn: OnceLock<Timed<ReducedSet>>,
}

impl TrainContext {
    fn new(train: LabeledDataset, metric: DatasetMetric, lambda: Option<f64>) -> Self {
        Self {
            train,
            metric,
            lambda,
            dists: OnceLock::new(),
            cnn: OnceLock::new(),
            rnn: OnceLock::new(),
            fcnn: OnceLock::new(),
        }
    }

    fn distances(&self) -> Result<(&DistanceMatrix, f64)> {
        let r = self.dists.get_or_init(|| {
            let start = Instant::now();
            let d = if let Some(m) = self.metric.as_spd() {
                DistanceMatrix::compute(self.train.covariances()?, m)?
            } else {
                let m = self.metric.as_histogram().expect("metric is either SPD or histogram");
                DistanceMatrix::compute(self.train.histograms()?.0, m)?
            };
            Ok((d, start.elapsed().as_secs_f64()))
        });
        r.as_ref().map(|(d, t)| (d, *t)).map_err(Clone::clone)
    }

    /// Pairwise Sinkhorn distances at the SHC sharpness.
    fn shc_distances(&self, lambda: f64) -> Result<(std::borrow::Cow<'_, DistanceMatrix>, f64)> {
        if let DatasetMetric::Sinkhorn(s) = &self.metric {
            if s.solver().lambda() == lambda {
                let (d, t) = self.distances()?;
                return Ok((std::borrow::Cow::Borrowed(d), t));
            }
        }
        let start = Instant::now();
        let d = training_distances(&self.train, lambda)?;
        Ok((std::borrow::Cow::Owned(d), start.elapsed().as_secs_f64()))
    }

    fn cached<'a>(
        &'a self,
        cell: &'a OnceLock<Timed<ReducedSet>>,
        run: impl FnOnce() -> Result<ReducedSet>,
    ) -> Result<(&'a ReducedSet, f64)> {
        let r = cell.get_or_init(|| {
            let start = Instant::now();
            run().map(|set| (set, start.elapsed().as_secs_f64()))
        });
        r.as_ref().map(|(s, t)| (s, *t)).map_err(Clone::clone)
    }

    fn cnn(&self, seed: u64, ratios: &[f64]) -> Result<(&ReducedSet, f64)> {
        let (dists, _) = self.distances()?;
        self.cached(&self.cnn, || cnn_reduce(dists, &self.train.labels, seed, ratios))
    }

    fn rnn(&self, seed: u64, ratios: &[f64]) -> Result<(&ReducedSet, f64)> {
        let (cnn, cnn_time) = self.cnn(seed, ratios)?;
        let (dists, _) = self.distances()?;
        let (set, t) = self.cached(&self.rnn, || rnn_reduce(cnn, dists, &self.train.labels, seed, ratios))?;
        Ok((set, t + cnn_time))
    }

    fn fcnn(&self, ratios: &[f64]) -> Result<(&ReducedSet, f64)> {
        let (dists, _) = self.distances()?;
        self.cached(&self.fcnn, || {
            fcnn_reduce(dists, &self.train.labels, |members| self.centroid_distances(members), ratios)
        })
    }

    /// Distances from the class centroid (JBLD centroid or Sinkhorn
    /// barycenter) to each listed training member.
    fn centroid_distances(&self, members: &[usize]) -> Result<Vec<f64>> {
        match self.train.family() {
            Family::Covariance => {
                let xs = self.train.covariances()?;
                let picked: Vec<_> = members.iter().map(|&i| xs[i].clone()).collect();
                let c = jbld_centroid(&picked, CENTROID_TOL, CENTROID_MAX_ITER)?;
                picked.iter().map(|x| jbld(&c.matrix, x)).collect()
            }
            Family::Histogram => {
                let (hs, gm) = self.train.histograms()?;
                let lambda = self.lambda.unwrap_or_else(|| gm.default_lambda());
                let picked: Vec<Histogram> = members.iter().map(|&i| hs[i].clone()).collect();
                let b = sinkhorn_barycenter(&picked, gm, lambda, CENTROID_TOL, CENTROID_MAX_ITER)?;
                cross_distances(&[b.histogram], &picked, &Sinkhorn::new(gm, lambda)?)
            }
        }
    }

    fn selection(&self, set: &[usize], consistent: Option<bool>, time: (f64, f64)) -> Result<Compressed> {
        Ok(Compressed {
            prototypes: self.train.subset(set)?,
            indices: Some(set.to_vec()),
            consistent,
            gamma_sq: None,
            iterations: None,
            train_time: time.0,
            shared_time: time.1,
        })
    }

    /// `ratios` are the snapshot ratios for CNN/RNN/FCNN; the cached run
    /// uses the ratios of the first call.
    fn compress(&self, s: &CompressSettings, ratios: &[f64]) -> Result<Compressed> {
        check_method(s.method, self.train.family())?;
        if !(s.ratio > 0.0 && s.ratio <= 1.0) {
            return Err(Error::BadParameters(format!("ratio {} is outside (0, 1]", s.ratio)));
        }
        let n = self.train.len();
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        let m = prototype_count(s.ratio, n);
        match s.method {
            Method::Subsample => {
                let start = Instant::now();
                let idx = subsample(&self.train.labels, m, s.seed)?;
                self.selection(&idx, None, (start.elapsed().as_secs_f64(), 0.0))
            }
            Method::Cnn | Method::Rnn | Method::Fcnn => {
                let (set, t) = match s.method {
                    Method::Cnn => self.cnn(s.seed, ratios)?,
                    Method::Rnn => self.rnn(s.seed, ratios)?,
                    _ => self.fcnn(ratios)?,
                };
                let (_, shared) = self.distances()?;
                let picked = set.at_ratio(s.ratio);
                let (dists, _) = self.distances()?;
                let consistent = misclassified(dists, &self.train.labels, picked) == 0;
                self.selection(picked, Some(consistent), (t, shared))
            }
            Method::Rmhc => {
                let (dists, shared) = self.distances()?;
                let start = Instant::now();
                let set = rmhc_reduce(dists, &self.train.labels, m, s.rmhc_steps, s.seed)?;
                self.selection(&set.indices, Some(set.consistent), (start.elapsed().as_secs_f64(), shared))
            }
            Method::Scc => {
                let start = Instant::now();
                let mut cfg = SccConfig { seed: s.seed, ..s.scc };
                cfg.gamma_sq = s.gamma_sq.or(cfg.gamma_sq);
                if s.tune && cfg.gamma_sq.is_none() {
                    cfg.gamma_sq = Some(tune_scc(&self.train, m, &cfg)?);
                }
                let out = scc_compress(&self.train, m, &cfg)?;
                Ok(Compressed {
                    prototypes: out.state.to_dataset()?,
                    indices: None,
                    consistent: None,
                    gamma_sq: Some(out.state.gamma_sq),
                    iterations: Some(out.iterations),
                    train_time: start.elapsed().as_secs_f64(),
                    shared_time: 0.0,
                })
            }
            Method::Shc => {
                let (_, gm) = self.train.histograms()?;
                let lambda = s.shc.lambda.or(self.lambda).unwrap_or_else(|| gm.default_lambda());
                let (dists, shared) = self.shc_distances(lambda)?;
                let start = Instant::now();
                let mut cfg = ShcConfig { seed: s.seed, lambda: Some(lambda), rmhc_steps: s.rmhc_steps, ..s.shc };
                cfg.gamma_sq = s.gamma_sq.or(cfg.gamma_sq);
                if s.tune && cfg.gamma_sq.is_none() {
                    let (g, step) = tune_shc(&self.train, m, &cfg)?;
                    cfg.gamma_sq = Some(g);
                    cfg.initial_step = step;
                }
                let out = shc_compress_observed(&self.train, &dists, m, &cfg, |_, _| {})?;
                Ok(Compressed {
                    prototypes: out.state.to_dataset(gm)?,
                    indices: None,
                    consistent: None,
                    gamma_sq: Some(out.state.gamma_sq),
                    iterations: Some(out.steps.len()),
                    train_time: start.elapsed().as_secs_f64(),
                    shared_time: shared,
                })
            }
        }
    }
}

fn validation_split(train: &LabeledDataset, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    stratified_split(train, TUNE_FRACTION, seed)
}

fn validation_error(reference: &LabeledDataset, valid: &LabeledDataset, metric: &DatasetMetric) -> Result<f64> {
    let opts = EvalOptions { repetitions: 1, ..EvalOptions::default() };
    Ok(evaluate_dataset(valid, reference, metric, &opts)?.error_rate)
}

/// γ² for SCC with the lowest validation 1-NN error; the grid is built
/// from the median initial divergence on the reduced training part.
fn tune_scc(train: &LabeledDataset, m: usize, cfg: &SccConfig) -> Result<f64> {
    let (fit, valid) = validation_split(train, cfg.seed)?;
    let m = m.min(fit.len());
    let (init, _) = scc_init(&fit, m, cfg.seed)?;
    let d = cross_distances(fit.covariances()?, &init.prototypes(), &Jbld)?;
    let mut best = (f64::INFINITY, init.gamma_sq);
    for g in gamma_sq_grid(median(&d)) {
        let out = match scc_compress(&fit, m, &SccConfig { gamma_sq: Some(g), ..*cfg }) {
            Ok(o) => o,
            Err(e) if e.class() == crate::error::ErrorClass::Numerical => continue,
            Err(e) => return Err(e),
        };
        let err = validation_error(&out.state.to_dataset()?, &valid, &DatasetMetric::Jbld)?;
        if err < best.0 {
            best = (err, g);
        }
    }
    Ok(best.1)
}

/// γ² and initial step for SHC by validation 1-NN error.
fn tune_shc(train: &LabeledDataset, m: usize, cfg: &ShcConfig) -> Result<(f64, f64)> {
    let (fit, valid) = validation_split(train, cfg.seed)?;
    let (_, gm) = fit.histograms()?;
    let lambda = cfg.lambda.unwrap_or_else(|| gm.default_lambda());
    let metric = DatasetMetric::Sinkhorn(Sinkhorn::new(gm, lambda)?);
    let m = m.min(fit.len());
    let dists = training_distances(&fit, lambda)?;
    let mut best = (f64::INFINITY, cfg.gamma_sq.unwrap_or(1.0), cfg.initial_step);
    let (init, idx) = crate::shc::shc_init(&fit, &dists, m, cfg.seed, cfg.rmhc_steps, lambda)?;
    best.1 = init.gamma_sq;
    let d: Vec<f64> = (0..fit.len()).flat_map(|i| idx.iter().map(move |&j| (i, j))).map(|(i, j)| dists.get(i, j)).collect();
    for g in gamma_sq_grid(median(&d)) {
        for step in SHC_STEP_GRID {
            let run = ShcConfig { gamma_sq: Some(g), initial_step: step, ..*cfg };
            let out = match shc_compress_observed(&fit, &dists, m, &run, |_, _| {}) {
                Ok(o) => o,
                Err(e) if e.class() == crate::error::ErrorClass::Numerical => continue,
                Err(e) => return Err(e),
            };
            let err = validation_error(&out.state.to_dataset(gm)?, &valid, &metric)?;
            if err < best.0 {
                best = (err, g, step);
            }
        }
    }
    Ok((best.1, best.2))
}

struct SeedContext {
    seed: u64,
    ctx: TrainContext,
    test: LabeledDataset,
    full: EvalReport,
}

/// Runs `plan` on `dataset` (the plan's dataset source is ignored).
/// `sink` sees every row as soon as it is finished; on failure the rows
/// already delivered stand and the first error is returned.
pub fn run_experiment(
    plan: &ExperimentPlan,
    dataset: &LabeledDataset,
    sink: &mut dyn FnMut(&ResultRow) -> Result<()>,
) -> Result<ExperimentResults> {
    run_with(plan, &|_| Ok(dataset.clone()), sink)
}

/// Runs `plan` on its own dataset source.
pub fn run_plan(plan: &ExperimentPlan, sink: &mut dyn FnMut(&ResultRow) -> Result<()>) -> Result<ExperimentResults> {
    let source = plan
        .dataset
        .as_ref()
        .ok_or_else(|| Error::BadParameters("plan has no dataset".into()))?;
    if source.is_fixed() {
        let ds = source.load(0)?;
        run_with(plan, &|_| Ok(ds.clone()), sink)
    } else {
        run_with(plan, &|seed| source.load(seed), sink)
    }
}

fn run_with(
    plan: &ExperimentPlan,
    data: &dyn Fn(u64) -> Result<LabeledDataset>,
    sink: &mut dyn FnMut(&ResultRow) -> Result<()>,
) -> Result<ExperimentResults> {
    plan.validate()?;
    let opts = EvalOptions { k: plan.k, workers: 1, repetitions: plan.repetitions };
    let mut contexts = Vec::with_capacity(plan.seeds.len());
    let mut ratios: Option<Vec<f64>> = None;
    for &seed in &plan.seeds {
        let ds = data(seed)?;
        for &method in &plan.methods {
            check_method(method, ds.family())?;
        }
        let (train, test) = stratified_split(&ds, plan.test_fraction, seed)?;
        let r = ratios.get_or_insert_with(|| plan.resolved_ratios(train.len(), train.classes()));
        if r.iter().any(|&x| prototype_count(x, train.len()) > train.len()) {
            return Err(Error::BadParameters("ratio exceeds training size".into()));
        }
        let lambda = resolve_lambda(&train, plan.lambda)?;
        let metric = DatasetMetric::for_dataset(&train, plan.metric, lambda)?;
        let full = evaluate_dataset(&test, &train, &metric, &opts)?;
        log::info!("seed {seed}: {} train, {} test, full error {:.4}", train.len(), test.len(), full.error_rate);
        contexts.push(SeedContext { seed, ctx: TrainContext::new(train, metric, lambda), test, full });
    }
    let ratios = ratios.unwrap_or_default();
    let mut cells: Vec<(usize, Method, f64)> = Vec::new();
    for c in 0..contexts.len() {
        for &m in &plan.methods {
            cells.extend(ratios.iter().map(|&r| (c, m, r)));
        }
    }
    let run_cell = |&(c, method, ratio): &(usize, Method, f64)| -> Result<ResultRow> {
        let sc = &contexts[c];
        let settings = CompressSettings {
            method,
            ratio,
            seed: sc.seed,
            gamma_sq: None,
            lambda: sc.ctx.lambda,
            scc: plan.scc,
            shc: plan.shc,
            rmhc_steps: if method == Method::Shc { plan.shc.rmhc_steps } else { plan.rmhc_steps },
            tune: plan.tune,
        };
        let out = sc.ctx.compress(&settings, &ratios)?;
        let report = evaluate_dataset(&sc.test, &out.prototypes, &sc.ctx.metric, &opts)?.with_speedup(&sc.full);
        log::info!("seed {} {method} ratio {ratio}: error {:.4}", sc.seed, report.error_rate);
        Ok(ResultRow {
            method,
            ratio,
            seed: sc.seed,
            prototypes: out.prototypes.len(),
            n_train: sc.ctx.train.len(),
            n_test: sc.test.len(),
            k: plan.k,
            error_rate: report.error_rate,
            full_error_rate: sc.full.error_rate,
            distance_evals: report.distance_evals,
            full_distance_evals: sc.full.distance_evals,
            wall_time: report.wall_time,
            full_wall_time: sc.full.wall_time,
            speedup: report.speedup_vs_reference.unwrap_or(f64::NAN),
            train_time: out.train_time,
            shared_time: out.shared_time,
            consistent: out.consistent,
            gamma_sq: out.gamma_sq,
            iterations: out.iterations,
        })
    };
    let rows = if plan.deterministic || plan.workers <= 1 {
        let mut rows = Vec::with_capacity(cells.len());
        for cell in &cells {
            let row = run_cell(cell)?;
            sink(&row)?;
            rows.push(row);
        }
        rows
    } else {
        run_parallel(&cells, plan.workers, &run_cell, sink)?
    };
    Ok(ExperimentResults { rows, ratios })
}

/// Runs cells on `workers` threads; rows reach `sink` in completion order
/// and come back in cell order.
fn run_parallel<C: Sync>(
    cells: &[C],
    workers: usize,
    run_cell: &(dyn Fn(&C) -> Result<ResultRow> + Sync),
    sink: &mut dyn FnMut(&ResultRow) -> Result<()>,
) -> Result<Vec<ResultRow>> {
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<(usize, Result<ResultRow>)>();
    let mut slots: Vec<Option<ResultRow>> = vec![None; cells.len()];
    let mut first_error = None;
    std::thread::scope(|s| {
        for _ in 0..workers.min(cells.len()) {
            let tx = tx.clone();
            let (next, stop) = (&next, &stop);
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= cells.len() || stop.load(Ordering::SeqCst) {
                    break;
                }
                let r = run_cell(&cells[i]);
                if r.is_err() {
                    stop.store(true, Ordering::SeqCst);
                }
                if tx.send((i, r)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (i, r) in rx {
            match r.and_then(|row| sink(&row).map(|_| row)) {
                Ok(row) => slots[i] = Some(row),
                Err(e) => {
                    stop.store(true, Ordering::SeqCst);
                    first_error.get_or_insert(e);
                }
            }
        }
    });
    if let Some(e) = first_error {
        return Err(e);
    }
    Ok(slots.into_iter().map(|r| r.expect("every cell finished")).collect())
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

fn table(
    title: &str,
    rows: &[ResultRow],
    ratios: &[f64],
    value: impl Fn(&ResultRow) -> f64,
    fmt: impl Fn(f64, f64) -> String,
) -> String {
    let mut methods: Vec<Method> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    let mut cells: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for r in rows {
        let mi = methods.iter().position(|&m| m == r.method).expect("collected above");
        if let Some(ri) = ratios.iter().position(|&x| x == r.ratio) {
            cells.entry((mi, ri)).or_default().push(value(r));
        }
    }
    let header: Vec<String> =
        std::iter::once("method".to_string()).chain(ratios.iter().map(|r| format!("{:.0}%", r * 100.0))).collect();
    let mut lines: Vec<Vec<String>> = vec![header];
    for (mi, m) in methods.iter().enumerate() {
        let mut line = vec![m.to_string()];
        for ri in 0..ratios.len() {
            line.push(cells.get(&(mi, ri)).map_or("-".into(), |v| {
                let (mean, std) = mean_std(v);
                fmt(mean, std)
            }));
        }
        lines.push(line);
    }
    let widths: Vec<usize> =
        (0..lines[0].len()).map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0)).collect();
    let mut out = format!("{title}\n");
    for l in &lines {
        let cols: Vec<String> = l.iter().zip(&widths).map(|(s, w)| format!("{s:>w$}")).collect();
        out.push_str(cols.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Plain-text tables of test error, speedup and training time, mean ± std
/// over seeds.
pub fn summarize(rows: &[ResultRow], ratios: &[f64]) -> String {
    let mut seen = Vec::new();
    let full: Vec<f64> = rows
        .iter()
        .filter(|r| {
            let new = !seen.contains(&r.seed);
            seen.push(r.seed);
            new
        })
        .map(|r| r.full_error_rate * 100.0)
        .collect();
    let (fm, fs) = mean_std(&full);
    let mut out = format!("full 1-NN test error: {fm:.2} ± {fs:.2} %\n\n");
    out.push_str(&table("test error (%)", rows, ratios, |r| r.error_rate * 100.0, |m, s| format!("{m:.2} ± {s:.2}")));
    out.push('\n');
    out.push_str(&table("speedup vs full reference", rows, ratios, |r| r.speedup, |m, s| format!("{m:.1} ± {s:.1}")));
    out.push('\n');
    out.push_str(&table("training time (s)", rows, ratios, |r| r.train_time, |m, s| format!("{m:.3} ± {s:.3}")));
    out
}
