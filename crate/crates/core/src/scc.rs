//! Covariance compression: learns `m` SPD prototypes `X̂_j = B_jᵀB_j`
//! minimizing the stochastic-neighborhood KL loss under JBLD, by nonlinear
//! conjugate gradient over the upper-triangular factors `B_j`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cg::{self, CgConfig, Evaluation, StopReason};
use crate::dataset::{stratified_sample, LabeledDataset};
use crate::error::{Error, Result};
use crate::neighborhood::{select_gamma_sq, NeighborhoodModel};
use crate::spd::{cholesky, gradient_from_sum_inverse, jbld_cached, spd_inverse_log_det, CholeskyFactor, SpdMatrix};

/// Steps whose factors have `(min|b_ii| / max|b_ii|)²` below this are
/// treated as infeasible.
pub const MIN_FACTOR_CONDITIONING: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct SccState {
    pub factors: Vec<CholeskyFactor>,
    pub labels: Vec<usize>,
    pub gamma_sq: f64,
    /// Loss at the initial point and after each accepted step.
    pub loss_history: Vec<f64>,
}

impl SccState {
    pub fn new(factors: Vec<CholeskyFactor>, labels: Vec<usize>, gamma_sq: f64) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::EmptyPrototypeSet);
        }
        if factors.len() != labels.len() {
            return Err(Error::DimensionMismatch { expected: factors.len(), got: labels.len() });
        }
        Ok(Self { factors, labels, gamma_sq, loss_history: Vec::new() })
    }

    pub fn m(&self) -> usize {
        self.factors.len()
    }

    pub fn prototypes(&self) -> Vec<SpdMatrix> {
        self.factors.iter().map(CholeskyFactor::reconstruct).collect()
    }

    /// Prototypes as a labeled covariance dataset.
    pub fn to_dataset(&self) -> Result<LabeledDataset> {
        LabeledDataset::covariance(self.prototypes(), self.labels.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SccConfig {
    pub seed: u64,
    /// Fixed sharpness; `None` selects it from the grid by initial loss.
    pub gamma_sq: Option<f64>,
    pub max_iter: usize,
    pub gtol: f64,
}

impl Default for SccConfig {
    fn default() -> Self {
        let cg = CgConfig::default();
        Self { seed: 0, gamma_sq: None, max_iter: cg.max_iter, gtol: cg.gtol }
    }
}

impl SccConfig {
    fn cg(&self) -> CgConfig {
        CgConfig { max_iter: self.max_iter, gtol: self.gtol, ..CgConfig::default() }
    }
}

/// Result of [`scc_compress`].
#[derive(Debug, Clone)]
pub struct SccOutcome {
    pub state: SccState,
    /// Training indices the prototypes were initialized from.
    pub init_indices: Vec<usize>,
    pub iterations: usize,
    pub evaluations: usize,
    pub stop: StopReason,
}

/// Class-stratified sample of `m` training covariances with their labels.
/// γ² is chosen by [`select_gamma_sq`] on the initial distances.
pub fn scc_init(train: &LabeledDataset, m: usize, seed: u64) -> Result<(SccState, Vec<usize>)> {
    let xs = train.covariances()?;
    if m == 0 || m > xs.len() {
        return Err(Error::TooFewInputs { needed: m.max(1), have: xs.len() });
    }
    let indices = stratified_sample(&train.labels, m, seed)?;
    let factors = indices.iter().map(|&i| cholesky(&xs[i])).collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = indices.iter().map(|&i| train.labels[i]).collect();
    let problem = Problem::new(xs, &train.labels, &labels, 1.0);
    let mats: Vec<DMatrix<f64>> = factors.iter().map(|f| f.as_matrix().clone()).collect();
    let distances = problem.distances(&mats)?;
    let gamma_sq = select_gamma_sq(&labels, &train.labels, &distances)?;
    Ok((SccState::new(factors, labels, gamma_sq)?, indices))
}

/// KL loss under JBLD and its gradient with respect to each factor (upper
/// triangular, strict lower part zero).
pub fn scc_loss_grad(state: &SccState, train: &LabeledDataset) -> Result<(f64, Vec<DMatrix<f64>>)> {
    let xs = train.covariances()?;
    let d = train.dim();
    if let Some(f) = state.factors.iter().find(|f| f.dim() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: f.dim() });
    }
    let problem = Problem::new(xs, &train.labels, &state.labels, state.gamma_sq);
    let mats: Vec<DMatrix<f64>> = state.factors.iter().map(|f| f.as_matrix().clone()).collect();
    problem.loss_grad(&mats)
}

/// Runs SCC from [`scc_init`]; see [`scc_compress_observed`].
pub fn scc_compress(train: &LabeledDataset, m: usize, config: &SccConfig) -> Result<SccOutcome> {
    scc_compress_observed(train, m, config, |_, _, _| {})
}

/// SCC with a callback receiving `(iteration, factors, loss)` after every
/// accepted step. Factors are passed as optimized, so diagonals may be
/// negative; the returned state has them sign-normalized.
pub fn scc_compress_observed<F>(
    train: &LabeledDataset,
    m: usize,
    config: &SccConfig,
    mut observer: F,
) -> Result<SccOutcome>
where
    F: FnMut(usize, &[DMatrix<f64>], f64),
{
    let (mut state, init_indices) = scc_init(train, m, config.seed)?;
    if let Some(g) = config.gamma_sq {
        state.gamma_sq = g;
    }
    let xs = train.covariances()?;
    let d = train.dim();
    let problem = Problem::new(xs, &train.labels, &state.labels, state.gamma_sq);
    let mats: Vec<DMatrix<f64>> = state.factors.iter().map(|f| f.as_matrix().clone()).collect();
    // Surface degenerate initializations as errors rather than infeasibility.
    problem.loss_grad(&mats)?;
    let x0 = pack(&mats);
    let report = cg::minimize(
        |p| problem.evaluate(&unpack(p, m, d)),
        x0,
        &config.cg(),
        |it, p, f| observer(it, &unpack(p, m, d), f),
    )?;
    state.factors =
        unpack(&report.x, m, d).into_iter().map(CholeskyFactor::canonicalize).collect::<Result<Vec<_>>>()?;
    state.loss_history = report.history;
    Ok(SccOutcome {
        state,
        init_indices,
        iterations: report.iterations,
        evaluations: report.evaluations,
        stop: report.stop,
    })
}

/// Upper-triangular entries of each factor, row by row.
fn pack(factors: &[DMatrix<f64>]) -> Vec<f64> {
    let mut out = Vec::new();
    for b in factors {
        let d = b.nrows();
        for i in 0..d {
            for j in i..d {
                out.push(b[(i, j)]);
            }
        }
    }
    out
}

fn unpack(p: &[f64], m: usize, d: usize) -> Vec<DMatrix<f64>> {
    let per = d * (d + 1) / 2;
    (0..m)
        .map(|j| {
            let mut b = DMatrix::zeros(d, d);
            let mut k = j * per;
            for r in 0..d {
                for c in r..d {
                    b[(r, c)] = p[k];
                    k += 1;
                }
            }
            b
        })
        .collect()
}

struct Problem<'a> {
    xs: &'a [SpdMatrix],
    log_det_x: Vec<f64>,
    train_labels: &'a [usize],
    proto_labels: &'a [usize],
    gamma_sq: f64,
}

impl<'a> Problem<'a> {
    fn new(xs: &'a [SpdMatrix], train_labels: &'a [usize], proto_labels: &'a [usize], gamma_sq: f64) -> Self {
        Self { log_det_x: xs.iter().map(SpdMatrix::log_det).collect(), xs, train_labels, proto_labels, gamma_sq }
    }

    fn distances(&self, factors: &[DMatrix<f64>]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.xs.len() * factors.len());
        let ys: Vec<(DMatrix<f64>, f64)> = factors.iter().map(|b| (b.transpose() * b, log_det_upper(b))).collect();
        for (x, &ldx) in self.xs.iter().zip(&self.log_det_x) {
            for (y, ldy) in &ys {
                out.push(jbld_cached(x.as_matrix(), ldx, y, *ldy)?);
            }
        }
        Ok(out)
    }

    fn loss_grad(&self, factors: &[DMatrix<f64>]) -> Result<(f64, Vec<DMatrix<f64>>)> {
        let (n, m) = (self.xs.len(), factors.len());
        let d = factors[0].nrows();
        let ys: Vec<(DMatrix<f64>, f64)> = factors.iter().map(|b| (b.transpose() * b, log_det_upper(b))).collect();
        let offset = d as f64 * std::f64::consts::LN_2;
        let mut distances = Vec::with_capacity(n * m);
        let mut inverses = Vec::with_capacity(n * m);
        for (x, &ldx) in self.xs.iter().zip(&self.log_det_x) {
            for (y, ldy) in &ys {
                let (inv, lds) = spd_inverse_log_det(&(x.as_matrix() + y))?;
                distances.push((lds - offset - 0.5 * (ldx + ldy)).max(0.0));
                inverses.push(inv);
            }
        }
        let model =
            NeighborhoodModel::new(self.gamma_sq, self.proto_labels.to_vec(), self.train_labels.to_vec(), distances)?;
        let (loss, coeffs) = model.loss_and_coeffs()?;
        let grads = factors
            .iter()
            .enumerate()
            .map(|(j, b)| {
                let mut acc = DMatrix::zeros(d, d);
                let mut total = 0.0;
                for i in 0..n {
                    let c = coeffs[i * m + j];
                    if c != 0.0 {
                        acc += &inverses[i * m + j] * c;
                        total += c;
                    }
                }
                gradient_from_sum_inverse(b, &acc, total)
            })
            .collect();
        Ok((loss, grads))
    }

    /// Objective for the optimizer: `None` for ill-conditioned factors or a
    /// vanishing correct-class probability.
    fn evaluate(&self, factors: &[DMatrix<f64>]) -> Result<Evaluation> {
        if !factors.iter().all(well_conditioned) {
            return Ok(None);
        }
        match self.loss_grad(factors) {
            Ok((loss, grads)) => Ok(Some((loss, pack(&grads)))),
            Err(e) if e.class() == crate::error::ErrorClass::Numerical => Ok(None),
            Err(e) => Err(e),
        }
    }
}

/// `log|BᵀB|` for upper-triangular `B` with any nonzero diagonal signs.
fn log_det_upper(b: &DMatrix<f64>) -> f64 {
    2.0 * (0..b.nrows()).map(|i| b[(i, i)].abs().ln()).sum::<f64>()
}

fn well_conditioned(b: &DMatrix<f64>) -> bool {
    let diag: Vec<f64> = (0..b.nrows()).map(|i| b[(i, i)].abs()).collect();
    let hi = diag.iter().copied().fold(0.0, f64::max);
    let lo = diag.iter().copied().fold(f64::INFINITY, f64::min);
    hi.is_finite() && hi > 0.0 && (lo / hi).powi(2) >= MIN_FACTOR_CONDITIONING
}
