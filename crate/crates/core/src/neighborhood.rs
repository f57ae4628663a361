//! Stochastic 1-NN neighborhoods over a prototype set.
//!
//! For training input `i` and prototype `j` with distance `D_ij`, the
//! probability that `j` is picked as the neighbor of `i` is
//! `p_ij = exp(-γ² D_ij) / Σ_k exp(-γ² D_ik)`. The probability of a correct
//! label is `p_i = Σ_{j: ŷ_j = y_i} p_ij`, and the objective is
//! `-Σ_i log p_i`. Both SCC and SHC share this machinery and only differ in
//! how `D` and `∂D/∂θ_j` are computed.

use crate::error::{Error, Result};

/// Floor applied to `p_i` before taking logs.
pub const PI_LOG_FLOOR: f64 = 1e-300;
/// Below this `p_i` the gradient coefficients are considered degenerate.
pub const PI_GRAD_FLOOR: f64 = 1e-30;

/// Distances from `n` training inputs to `m` prototypes plus labels.
#[derive(Debug, Clone)]
pub struct NeighborhoodModel {
    pub gamma_sq: f64,
    pub prototype_labels: Vec<usize>,
    pub train_labels: Vec<usize>,
    /// Row-major `n × m`.
    distances: Vec<f64>,
}

impl NeighborhoodModel {
    pub fn new(
        gamma_sq: f64,
        prototype_labels: Vec<usize>,
        train_labels: Vec<usize>,
        distances: Vec<f64>,
    ) -> Result<Self> {
        let (n, m) = (train_labels.len(), prototype_labels.len());
        if m == 0 {
            return Err(Error::EmptyPrototypeSet);
        }
        if distances.len() != n * m {
            return Err(Error::DimensionMismatch { expected: n * m, got: distances.len() });
        }
        if !(gamma_sq >= 0.0) || !gamma_sq.is_finite() {
            return Err(Error::BadParameters(format!("gamma_sq must be >= 0, got {gamma_sq}")));
        }
        if distances.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::BadParameters("distances must be finite and nonnegative".into()));
        }
        Ok(Self { gamma_sq, prototype_labels, train_labels, distances })
    }

    pub fn n(&self) -> usize {
        self.train_labels.len()
    }

    pub fn m(&self) -> usize {
        self.prototype_labels.len()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.distances[i * self.m() + j]
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    /// Row-stochastic `n × m` matrix of `p_ij` (row-major).
    pub fn assignment_probs(&self) -> Vec<f64> {
        let m = self.m();
        let mut out = vec![0.0; self.distances.len()];
        for (row, probs) in self.distances.chunks(m).zip(out.chunks_mut(m)) {
            softmax_neg(row, self.gamma_sq, probs);
        }
        out
    }

    /// `p_i` for every training input.
    pub fn correct_prob(&self) -> Vec<f64> {
        let probs = self.assignment_probs();
        self.correct_prob_from(&probs)
    }

    fn correct_prob_from(&self, probs: &[f64]) -> Vec<f64> {
        let m = self.m();
        probs
            .chunks(m)
            .zip(&self.train_labels)
            .map(|(row, &y)| {
                row.iter()
                    .zip(&self.prototype_labels)
                    .filter(|(_, &yh)| yh == y)
                    .map(|(p, _)| p)
                    .sum::<f64>()
                    .min(1.0)
            })
            .collect()
    }

    /// `-Σ_i log max(p_i, 1e-300)`.
    pub fn kl_loss(&self) -> f64 {
        kl_from_correct(&self.correct_prob())
    }

    /// `c_ij = (p_ij / p_i)(δ_{y_i ŷ_j} - p_i) γ²`, the factor multiplying
    /// `∂D_ij/∂θ_j` in the gradient of [`kl_loss`](Self::kl_loss).
    pub fn gradient_coeffs(&self) -> Result<Vec<f64>> {
        Ok(self.loss_and_coeffs()?.1)
    }

    /// Loss and gradient coefficients from one pass.
    pub fn loss_and_coeffs(&self) -> Result<(f64, Vec<f64>)> {
        let m = self.m();
        let probs = self.assignment_probs();
        let correct = self.correct_prob_from(&probs);
        let mut coeffs = vec![0.0; probs.len()];
        for (i, ((row, out), &pi)) in probs.chunks(m).zip(coeffs.chunks_mut(m)).zip(&correct).enumerate() {
            if pi < PI_GRAD_FLOOR {
                return Err(Error::DegeneratePi { index: i, value: pi });
            }
            let y = self.train_labels[i];
            for ((c, &p), &yh) in out.iter_mut().zip(row).zip(&self.prototype_labels) {
                let delta = if yh == y { 1.0 } else { 0.0 };
                *c = p / pi * (delta - pi) * self.gamma_sq;
            }
        }
        Ok((kl_from_correct(&correct), coeffs))
    }

    /// Fraction of training inputs whose nearest prototype (lowest index on
    /// ties) carries the wrong label.
    pub fn nn_error(&self) -> f64 {
        let m = self.m();
        let wrong = self
            .distances
            .chunks(m)
            .zip(&self.train_labels)
            .filter(|(row, &y)| self.prototype_labels[argmin(row)] != y)
            .count();
        wrong as f64 / self.n().max(1) as f64
    }
}

fn kl_from_correct(correct: &[f64]) -> f64 {
    -correct.iter().map(|p| p.max(PI_LOG_FLOOR).ln()).sum::<f64>()
}

/// `exp(-γ² d_j)` normalized, with the smallest distance subtracted first.
fn softmax_neg(row: &[f64], gamma_sq: f64, out: &mut [f64]) {
    let min = row.iter().copied().fold(f64::INFINITY, f64::min);
    let mut total = 0.0;
    for (o, &d) in out.iter_mut().zip(row) {
        *o = (-gamma_sq * (d - min)).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

/// Index of the smallest entry; the lowest index wins ties.
pub(crate) fn argmin(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v < row[best] {
            best = j;
        }
    }
    best
}

/// Median of a nonempty slice of distances.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Candidate sharpness values `2^k / med` for `k = -4..=4`.
pub fn gamma_sq_grid(median_distance: f64) -> Vec<f64> {
    let med = if median_distance > 0.0 { median_distance } else { 1.0 };
    (-4..=4).map(|k| 2f64.powi(k) / med).collect()
}

/// Picks γ² from [`gamma_sq_grid`] by the smallest training loss on a fixed
/// distance matrix; the first candidate wins ties.
pub fn select_gamma_sq(
    prototype_labels: &[usize],
    train_labels: &[usize],
    distances: &[f64],
) -> Result<f64> {
    let grid = gamma_sq_grid(median(distances));
    let mut best = (f64::INFINITY, grid[0]);
    for g in grid {
        let model =
            NeighborhoodModel::new(g, prototype_labels.to_vec(), train_labels.to_vec(), distances.to_vec())?;
        let loss = model.kl_loss();
        if loss < best.0 {
            best = (loss, g);
        }
    }
    Ok(best.1)
}
