use super::{GroundMetric, Histogram, SinkhornSolver, CLAMP_EPS};
use crate::error::{Error, Result};

/// Output of [`sinkhorn_barycenter`].
#[derive(Debug, Clone)]
pub struct Barycenter {
    pub histogram: Histogram,
    /// `Σ_i D_S(b, h_i)` at the returned histogram.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Uniformly weighted Sinkhorn barycenter by iterative Bregman projections
/// on a shared scaling, with the debiasing correction that makes the
/// barycenter of identical members equal to that member.
///
/// Iterates until successive barycenters differ by less than `tol` in L1 or
/// `max_iter` is reached (`converged = false`, last iterate returned).
pub fn sinkhorn_barycenter(
    members: &[Histogram],
    metric: &GroundMetric,
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Barycenter> {
    if members.is_empty() {
        return Err(Error::EmptyInput);
    }
    let d = metric.dim();
    for h in members {
        if h.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: h.dim() });
        }
    }
    let solver = SinkhornSolver::new(metric, lambda, 1e-9, 10_000)?;
    let kernel: Vec<f64> = metric.as_slice().iter().map(|c| (-lambda * c).exp()).collect();
    if kernel.iter().any(|&k| k < f64::MIN_POSITIVE) {
        return Err(Error::NumericalUnderflow);
    }
    let weight = 1.0 / members.len() as f64;
    let marginals: Vec<Vec<f64>> = members.iter().map(|h| h.clamped(CLAMP_EPS)).collect();

    let mut v = vec![vec![1.0; d]; members.len()];
    let mut ktu = vec![vec![0.0; d]; members.len()];
    let mut debias = vec![1.0; d];
    let mut bary = vec![1.0 / d as f64; d];
    let mut kx = vec![0.0; d];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        for (k, a) in marginals.iter().enumerate() {
            mat_vec(&kernel, &v[k], &mut kx, d);
            let u: Vec<f64> = a.iter().zip(&kx).map(|(a, kv)| a / kv).collect();
            // K is symmetric, so Kᵀu = Ku.
            mat_vec(&kernel, &u, &mut ktu[k], d);
        }
        let mut next: Vec<f64> = (0..d)
            .map(|l| debias[l] * ktu.iter().map(|t| t[l].ln() * weight).sum::<f64>().exp())
            .collect();
        let total: f64 = next.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::NumericalUnderflow);
        }
        for (k, t) in ktu.iter().enumerate() {
            for l in 0..d {
                v[k][l] = next[l] / t[l];
            }
        }
        mat_vec(&kernel, &debias, &mut kx, d);
        for l in 0..d {
            debias[l] = (debias[l] * next[l] / kx[l]).sqrt();
        }
        next.iter_mut().for_each(|x| *x /= total);
        let change: f64 = next.iter().zip(&bary).map(|(a, b)| (a - b).abs()).sum();
        bary = next;
        if change < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("sinkhorn_barycenter: no convergence after {max_iter} iterations");
    }
    let histogram = Histogram::from_unnormalized(bary)?;
    let objective = members
        .iter()
        .map(|h| solver.solve(&histogram, h).map(|s| s.distance))
        .sum::<Result<f64>>()?;
    Ok(Barycenter { histogram, objective, iterations, converged })
}

fn mat_vec(k: &[f64], x: &[f64], out: &mut [f64], d: usize) {
    for i in 0..d {
        out[i] = k[i * d..(i + 1) * d].iter().zip(x).map(|(a, b)| a * b).sum();
    }
}
