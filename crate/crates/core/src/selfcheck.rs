//! Quick numerical self-test run by `protocomp selfcheck`: each check
//! compares an implementation against an independent computation on a few
//! seeded instances.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::LabeledDataset;
use crate::error::Result;
use crate::ot::{emd_exact, GroundMetric, Histogram, SinkhornSolver};
use crate::scc::{scc_loss_grad, SccState};
use crate::shc::ShcProblem;
use crate::spd::{airm, cholesky, jbld, CholeskyFactor, SpdMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed error.
    pub value: f64,
    pub tolerance: f64,
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "ok  " } else { "FAIL" };
        write!(f, "{tag} {:<28} worst {:.3e} (tol {:.0e})", self.name, self.value, self.tolerance)
    }
}

fn check(name: &'static str, value: Result<f64>, tolerance: f64) -> CheckResult {
    let value = value.unwrap_or(f64::INFINITY);
    CheckResult { name, passed: value < tolerance, value, tolerance }
}

fn random_spd(d: usize, rng: &mut ChaCha8Rng) -> Result<SpdMatrix> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random::<f64>() - 0.5);
    SpdMatrix::from_symmetrized(&a * a.transpose() + DMatrix::identity(d, d) * 0.5)
}

fn random_histogram(d: usize, rng: &mut ChaCha8Rng) -> Result<Histogram> {
    Histogram::from_unnormalized((0..d).map(|_| rng.random::<f64>() + 0.05).collect())
}

/// Earth mover's distance on the line metric from cumulative sums.
fn cdf_emd(a: &Histogram, b: &Histogram) -> f64 {
    let mut acc = 0.0;
    let mut total = 0.0;
    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
        acc += x - y;
        total += acc.abs();
    }
    total
}

fn scc_gradient() -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0_f64;
    for _ in 0..3 {
        let xs = (0..6).map(|_| random_spd(2, &mut rng)).collect::<Result<Vec<_>>>()?;
        let train = LabeledDataset::covariance(xs, vec![0, 1, 0, 1, 0, 1])?;
        let factors = (0..2)
            .map(|_| cholesky(&random_spd(2, &mut rng)?))
            .collect::<Result<Vec<_>>>()?;
        let state = SccState::new(factors, vec![0, 1], 1.0)?;
        let (_, grads) = scc_loss_grad(&state, &train)?;
        let (mut diff, mut scale) = (0.0_f64, 0.0_f64);
        for j in 0..2 {
            for (r, c) in [(0, 0), (0, 1), (1, 1)] {
                let b = state.factors[j].as_matrix()[(r, c)];
                let h = 1e-6 * b.abs().max(1.0);
                let at = |v: f64| -> Result<f64> {
                    let mut s = state.clone();
                    let mut m = s.factors[j].as_matrix().clone();
                    m[(r, c)] = v;
                    s.factors[j] = CholeskyFactor::new(m)?;
                    Ok(scc_loss_grad(&s, &train)?.0)
                };
                let fd = (at(b + h)? - at(b - h)?) / (2.0 * h);
                diff = diff.max((fd - grads[j][(r, c)]).abs());
                scale = scale.max(fd.abs());
            }
        }
        worst = worst.max(diff / scale.max(1e-300));
    }
    Ok(worst)
}

fn shc_gradient() -> Result<f64> {
    let mut worst = 0.0_f64;
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let metric = GroundMetric::line(4);
        let hs = (0..3).map(|_| random_histogram(4, &mut rng)).collect::<Result<Vec<_>>>()?;
        let ds = LabeledDataset::histogram(hs, metric.clone(), vec![0, 1, 0])?;
        let logits: Vec<Vec<f64>> = (0..2).map(|_| (0..4).map(|_| rng.random::<f64>() - 0.5).collect()).collect();
        let solver = SinkhornSolver::new(&metric, 100.0, 1e-13, 1_000_000)?;
        let mut problem = ShcProblem::new(&ds, vec![0, 1], 1.0, solver, false)?;
        let at = problem.evaluate(&logits)?;
        let analytic: f64 = -at.gradients.iter().flatten().map(|g| g * g).sum::<f64>();
        let t = 1e-5;
        let mut shifted = |s: f64| -> Result<f64> {
            let w: Vec<Vec<f64>> = logits
                .iter()
                .zip(&at.gradients)
                .map(|(w, g)| w.iter().zip(g).map(|(a, b)| a - s * b).collect())
                .collect();
            Ok(problem.evaluate(&w)?.loss)
        };
        let fd = (shifted(t)? - shifted(-t)?) / (2.0 * t);
        worst = worst.max((fd - analytic).abs() / fd.abs());
    }
    Ok(worst)
}

fn sinkhorn_vs_emd() -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let metric = GroundMetric::line(6);
    let solver = SinkhornSolver::new(&metric, 200.0, 1e-12, 200_000)?;
    let mut worst = 0.0_f64;
    for _ in 0..10 {
        let (a, b) = (random_histogram(6, &mut rng)?, random_histogram(6, &mut rng)?);
        let e = emd_exact(&a, &b, &metric)?;
        let s = solver.solve(&a, &b)?.distance;
        // A Sinkhorn value below the exact optimum counts as a full failure.
        let gap = if s < e - 1e-6 { f64::INFINITY } else { (s - e) / e.max(1e-6) };
        worst = worst.max(gap);
    }
    Ok(worst)
}

fn emd_vs_cdf() -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let metric = GroundMetric::line(8);
    let mut worst = 0.0_f64;
    for _ in 0..20 {
        let (a, b) = (random_histogram(8, &mut rng)?, random_histogram(8, &mut rng)?);
        worst = worst.max((emd_exact(&a, &b, &metric)? - cdf_emd(&a, &b)).abs());
    }
    Ok(worst)
}

fn affine_invariance() -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0_f64;
    for _ in 0..10 {
        let (x, y) = (random_spd(3, &mut rng)?, random_spd(3, &mut rng)?);
        let a = DMatrix::from_fn(3, 3, |i, j| rng.random::<f64>() - 0.5 + if i == j { 1.5 } else { 0.0 });
        let (xa, ya) = (x.congruence(&a)?, y.congruence(&a)?);
        let dj = (jbld(&x, &y)? - jbld(&xa, &ya)?).abs();
        let da = (airm(&x, &y)? - airm(&xa, &ya)?).abs();
        worst = worst.max(dj).max(da).max(jbld(&x, &x)?.abs()).max(airm(&x, &x)?.abs());
    }
    Ok(worst)
}

fn cholesky_roundtrip() -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0_f64;
    for _ in 0..10 {
        let x = random_spd(5, &mut rng)?;
        let back = cholesky(&x)?.reconstruct();
        worst = worst.max((back.as_matrix() - x.as_matrix()).norm() / x.as_matrix().norm());
    }
    Ok(worst)
}

/// Runs every check.
pub fn run() -> Vec<CheckResult> {
    vec![
        check("scc gradient vs fd", scc_gradient(), 1e-4),
        check("shc descent derivative vs fd", shc_gradient(), 5e-2),
        check("sinkhorn gap over emd", sinkhorn_vs_emd(), 5e-2),
        check("emd vs line cdf", emd_vs_cdf(), 1e-10),
        check("jbld/airm affine invariance", affine_invariance(), 1e-8),
        check("cholesky reconstruction", cholesky_roundtrip(), 1e-12),
    ]
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for r in super::run() {
            assert!(r.passed, "{r}");
        }
    }
}
