//! Histogram compression: learns `m` prototype histograms
//! `ĥ_j = softmax(w_j)` minimizing the stochastic-neighborhood KL loss under
//! the Sinkhorn distance. The distance gradient comes from the Sinkhorn dual
//! `β*`, treated as constant over a step.

use serde::{Deserialize, Serialize};

use crate::baselines::{rmhc_reduce, DistanceMatrix};
use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::metric::Sinkhorn;
use crate::neighborhood::{select_gamma_sq, NeighborhoodModel};
use crate::ot::{sinkhorn::centered, GroundMetric, Histogram, SinkhornSolver, CLAMP_EPS};

/// `e^{w} / Σ_k e^{w_k}` with the maximum subtracted first.
pub fn softmax_decode(w: &[f64]) -> Result<Histogram> {
    if w.is_empty() {
        return Err(Error::EmptyInput);
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let max = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = w.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = e.iter().sum();
    Ok(Histogram::new_unchecked(e.into_iter().map(|v| v / total).collect()))
}

/// Logits whose softmax is `h` with entries clamped at [`CLAMP_EPS`].
pub fn softmax_encode(h: &Histogram) -> Vec<f64> {
    h.clamped(CLAMP_EPS).into_iter().map(f64::ln).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShcSnapshot {
    pub logits: Vec<Vec<f64>>,
    pub loss: f64,
    /// 1-NN training error of the decoded prototypes.
    pub train_error: f64,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShcState {
    pub logits: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub gamma_sq: f64,
    pub lambda: f64,
    /// Loss at the initial point and after each accepted step.
    pub loss_history: Vec<f64>,
    pub best_snapshot: Option<ShcSnapshot>,
}

impl ShcState {
    pub fn m(&self) -> usize {
        self.logits.len()
    }

    pub fn prototypes(&self) -> Result<Vec<Histogram>> {
        self.logits.iter().map(|w| softmax_decode(w)).collect()
    }

    /// Best snapshot's prototypes if one was recorded, otherwise the
    /// current logits.
    pub fn best_prototypes(&self) -> Result<Vec<Histogram>> {
        match &self.best_snapshot {
            Some(s) => s.logits.iter().map(|w| softmax_decode(w)).collect(),
            None => self.prototypes(),
        }
    }

    pub fn to_dataset(&self, metric: &GroundMetric) -> Result<LabeledDataset> {
        LabeledDataset::histogram(self.best_prototypes()?, metric.clone(), self.labels.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShcConfig {
    pub seed: u64,
    pub gamma_sq: Option<f64>,
    /// Entropic sharpness; `None` uses the ground metric's default.
    pub lambda: Option<f64>,
    pub max_iter: usize,
    /// First step moves the largest logit by this much.
    pub initial_step: f64,
    pub max_backtracks: usize,
    pub rmhc_steps: usize,
    /// Use only the diagonal of the softmax Jacobian, `β ∘ (ĥ - ĥ∘ĥ)`.
    pub diagonal_jacobian: bool,
    pub sinkhorn_tol: f64,
    pub sinkhorn_max_iter: usize,
}

impl Default for ShcConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            gamma_sq: None,
            lambda: None,
            max_iter: 50,
            initial_step: 1.0,
            max_backtracks: 10,
            rmhc_steps: 1000,
            diagonal_jacobian: false,
            sinkhorn_tol: crate::ot::sinkhorn::DEFAULT_TOL,
            sinkhorn_max_iter: crate::ot::sinkhorn::DEFAULT_MAX_ITER,
        }
    }
}

/// Per-iteration record of [`shc_compress`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShcStep {
    pub iteration: usize,
    /// A loss-decreasing step was found within the backtracking budget.
    pub accepted: bool,
    pub loss: f64,
    pub step_size: f64,
    pub train_error: f64,
}

#[derive(Debug, Clone)]
pub struct ShcOutcome {
    pub state: ShcState,
    pub init_indices: Vec<usize>,
    pub steps: Vec<ShcStep>,
    /// Pairs whose Sinkhorn solve did not converge (skipped in gradients).
    pub unconverged_pairs: usize,
}

/// Loss, gradients and side information at one point.
#[derive(Debug, Clone)]
pub struct ShcEvaluation {
    pub loss: f64,
    pub gradients: Vec<Vec<f64>>,
    pub train_error: f64,
    pub unconverged_pairs: usize,
}

/// Shared training data and Sinkhorn warm starts.
pub struct ShcProblem<'a> {
    train: &'a [Histogram],
    train_marginals: Vec<Vec<f64>>,
    train_labels: &'a [usize],
    labels: Vec<usize>,
    gamma_sq: f64,
    solver: SinkhornSolver,
    diagonal_jacobian: bool,
    /// Row-major `n × m` previous `β` per pair.
    warm: Vec<Option<Vec<f64>>>,
}

impl<'a> ShcProblem<'a> {
    pub fn new(
        train: &'a LabeledDataset,
        labels: Vec<usize>,
        gamma_sq: f64,
        solver: SinkhornSolver,
        diagonal_jacobian: bool,
    ) -> Result<Self> {
        let (members, _) = train.histograms()?;
        if labels.is_empty() {
            return Err(Error::EmptyPrototypeSet);
        }
        let m = labels.len();
        Ok(Self {
            train: members,
            train_marginals: members.iter().map(|h| h.clamped(CLAMP_EPS)).collect(),
            train_labels: &train.labels,
            labels,
            gamma_sq,
            solver,
            diagonal_jacobian,
            warm: vec![None; members.len() * m],
        })
    }

    pub fn evaluate(&mut self, logits: &[Vec<f64>]) -> Result<ShcEvaluation> {
        let m = self.labels.len();
        if logits.len() != m {
            return Err(Error::DimensionMismatch { expected: m, got: logits.len() });
        }
        let d = self.solver.dim();
        let protos = logits.iter().map(|w| softmax_decode(w)).collect::<Result<Vec<_>>>()?;
        if let Some(p) = protos.iter().find(|p| p.dim() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: p.dim() });
        }
        let proto_marginals: Vec<Vec<f64>> = protos.iter().map(|h| h.clamped(CLAMP_EPS)).collect();
        let n = self.train.len();
        let mut distances = Vec::with_capacity(n * m);
        let mut duals: Vec<Option<Vec<f64>>> = Vec::with_capacity(n * m);
        let mut unconverged = 0;
        for (i, a) in self.train_marginals.iter().enumerate() {
            for (j, b) in proto_marginals.iter().enumerate() {
                let slot = &mut self.warm[i * m + j];
                let sol = self.solver.solve_raw(a, b, slot.as_deref())?;
                distances.push(sol.distance.max(0.0));
                if sol.converged {
                    *slot = Some(sol.dual_beta.clone());
                    duals.push(Some(centered(&sol.dual_beta)));
                } else {
                    unconverged += 1;
                    duals.push(None);
                }
            }
        }
        if unconverged > 0 {
            log::warn!("shc: {unconverged} Sinkhorn solves did not converge; their pairs are skipped");
        }
        let model =
            NeighborhoodModel::new(self.gamma_sq, self.labels.clone(), self.train_labels.to_vec(), distances)?;
        let (loss, coeffs) = model.loss_and_coeffs()?;
        let mut gradients = Vec::with_capacity(m);
        for (j, h) in protos.iter().enumerate() {
            let mut g = vec![0.0; d];
            for i in 0..n {
                let c = coeffs[i * m + j];
                if c == 0.0 {
                    continue;
                }
                if let Some(beta) = &duals[i * m + j] {
                    g.iter_mut().zip(beta).for_each(|(gk, bk)| *gk += c * bk);
                }
            }
            gradients.push(softmax_pullback(h.as_slice(), &g, self.diagonal_jacobian));
        }
        Ok(ShcEvaluation { loss, gradients, train_error: model.nn_error(), unconverged_pairs: unconverged })
    }
}

/// `Jᵀg` for the softmax Jacobian `J = diag(h) - h hᵀ`, or only its
/// diagonal part when `diagonal` is set.
fn softmax_pullback(h: &[f64], g: &[f64], diagonal: bool) -> Vec<f64> {
    if diagonal {
        return h.iter().zip(g).map(|(hk, gk)| gk * (hk - hk * hk)).collect();
    }
    let dot: f64 = h.iter().zip(g).map(|(a, b)| a * b).sum();
    h.iter().zip(g).map(|(hk, gk)| hk * (gk - dot)).collect()
}

/// RMHC selection of `m` training histograms under 1-NN training error,
/// converted to logits. `dists` is the pairwise Sinkhorn matrix of the
/// training set. Returns the state and the selected indices; γ² is chosen
/// by [`select_gamma_sq`] on the initial distances.
pub fn shc_init(
    train: &LabeledDataset,
    dists: &DistanceMatrix,
    m: usize,
    seed: u64,
    rmhc_steps: usize,
    lambda: f64,
) -> Result<(ShcState, Vec<usize>)> {
    let (members, _) = train.histograms()?;
    let sel = rmhc_reduce(dists, &train.labels, m, rmhc_steps, seed)?;
    let logits = sel.indices.iter().map(|&i| softmax_encode(&members[i])).collect();
    let n = members.len();
    let distances: Vec<f64> = (0..n)
        .flat_map(|i| sel.indices.iter().map(move |&j| dists.get(i, j)))
        .collect();
    let gamma_sq = select_gamma_sq(&sel.labels, &train.labels, &distances)?;
    let state =
        ShcState { logits, labels: sel.labels, gamma_sq, lambda, loss_history: Vec::new(), best_snapshot: None };
    Ok((state, sel.indices))
}

/// Pairwise Sinkhorn distances of the training histograms.
pub fn training_distances(train: &LabeledDataset, lambda: f64) -> Result<DistanceMatrix> {
    let (members, metric) = train.histograms()?;
    DistanceMatrix::compute(members, &Sinkhorn::new(metric, lambda)?)
}

pub fn shc_compress(train: &LabeledDataset, m: usize, config: &ShcConfig) -> Result<ShcOutcome> {
    let (_, metric) = train.histograms()?;
    let lambda = config.lambda.unwrap_or_else(|| metric.default_lambda());
    let dists = training_distances(train, lambda)?;
    shc_compress_observed(train, &dists, m, config, |_, _| {})
}

/// Gradient descent on the logits from [`shc_init`]. The step is halved
/// while the loss does not decrease (at most `max_backtracks` times) and
/// grown by 10% after a decrease. The returned state carries the iterate
/// with the lowest 1-NN training error (ties: lower loss) as its best
/// snapshot. `observer` sees every iteration and the current prototypes.
pub fn shc_compress_observed<F>(
    train: &LabeledDataset,
    dists: &DistanceMatrix,
    m: usize,
    config: &ShcConfig,
    mut observer: F,
) -> Result<ShcOutcome>
where
    F: FnMut(&ShcStep, &[Histogram]),
{
    let (_, metric) = train.histograms()?;
    let lambda = config.lambda.unwrap_or_else(|| metric.default_lambda());
    let (mut state, init_indices) = shc_init(train, dists, m, config.seed, config.rmhc_steps, lambda)?;
    if let Some(g) = config.gamma_sq {
        state.gamma_sq = g;
    }
    let solver = SinkhornSolver::new(metric, lambda, config.sinkhorn_tol, config.sinkhorn_max_iter)?;
    let mut problem =
        ShcProblem::new(train, state.labels.clone(), state.gamma_sq, solver, config.diagonal_jacobian)?;
    let mut current = problem.evaluate(&state.logits)?;
    let mut unconverged = current.unconverged_pairs;
    state.loss_history.push(current.loss);
    let mut best = ShcSnapshot {
        logits: state.logits.clone(),
        loss: current.loss,
        train_error: current.train_error,
        iteration: 0,
    };
    let gmax = current.gradients.iter().flatten().fold(0.0_f64, |a, g| a.max(g.abs()));
    let mut step = if gmax > 0.0 { config.initial_step / gmax } else { config.initial_step };
    let mut steps = Vec::with_capacity(config.max_iter);
    for iteration in 1..=config.max_iter {
        let mut accepted = false;
        for _ in 0..=config.max_backtracks {
            let trial: Vec<Vec<f64>> = state
                .logits
                .iter()
                .zip(&current.gradients)
                .map(|(w, g)| w.iter().zip(g).map(|(wk, gk)| wk - step * gk).collect())
                .collect();
            let eval = match problem.evaluate(&trial) {
                Ok(e) => e,
                Err(e) if e.class() == crate::error::ErrorClass::Numerical => {
                    step *= 0.5;
                    continue;
                }
                Err(e) => return Err(e),
            };
            unconverged += eval.unconverged_pairs;
            if eval.loss < current.loss {
                state.logits = trial;
                current = eval;
                step *= 1.1;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if accepted {
            state.loss_history.push(current.loss);
            if (current.train_error, current.loss) < (best.train_error, best.loss) {
                best = ShcSnapshot {
                    logits: state.logits.clone(),
                    loss: current.loss,
                    train_error: current.train_error,
                    iteration,
                };
            }
        } else {
            log::debug!("shc: iteration {iteration} found no decreasing step");
        }
        let record =
            ShcStep { iteration, accepted, loss: current.loss, step_size: step, train_error: current.train_error };
        steps.push(record);
        observer(&record, &state.prototypes()?);
    }
    state.best_snapshot = Some(best);
    Ok(ShcOutcome { state, init_indices, steps, unconverged_pairs: unconverged })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decode_examples() {
        assert_eq!(softmax_decode(&[0.0; 4]).unwrap().as_slice(), &[0.25; 4]);
        let h = softmax_decode(&[1.0f64.ln(), 3.0f64.ln()]).unwrap();
        assert!((h.as_slice()[0] - 0.25).abs() < 1e-15 && (h.as_slice()[1] - 0.75).abs() < 1e-15);
        let a = softmax_decode(&[0.3, -1.0, 2.0]).unwrap();
        let b = softmax_decode(&[100.3, 99.0, 102.0]).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-14);
        }
        assert_eq!(softmax_decode(&[f64::NAN]).unwrap_err(), Error::NonFiniteInput);
    }

    #[test]
    fn encode_round_trip() {
        let h = Histogram::new(vec![0.1, 0.0, 0.6, 0.3]).unwrap();
        let back = softmax_decode(&softmax_encode(&h)).unwrap();
        for (x, y) in back.as_slice().iter().zip(h.as_slice()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn pullback_kills_constants() {
        let h = [0.1, 0.2, 0.3, 0.4];
        let g = [0.5, -1.0, 2.0, 0.25];
        let shifted: Vec<f64> = g.iter().map(|x| x + 7.0).collect();
        let a = softmax_pullback(&h, &g, false);
        let b = softmax_pullback(&h, &shifted, false);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
        assert!(a.iter().sum::<f64>().abs() < 1e-15);
    }
}
