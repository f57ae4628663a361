use super::{check_dims, GroundMetric, Histogram, CLAMP_EPS};
use crate::error::{Error, Result};

/// Default L1 marginal-violation tolerance.
pub const DEFAULT_TOL: f64 = 1e-9;
/// Default iteration cap.
pub const DEFAULT_MAX_ITER: usize = 10_000;

/// Result of a Sinkhorn solve between `h` (rows) and `hp` (columns).
#[derive(Debug, Clone)]
pub struct SinkhornSolution {
    /// `Σ_kl T_kl M_kl`.
    pub distance: f64,
    dim: usize,
    transport: Vec<f64>,
    /// `log u / λ`; defined up to an additive constant.
    pub dual_alpha: Vec<f64>,
    /// `log v / λ`; defined up to an additive constant.
    pub dual_beta: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Final `max(‖T1 - h‖₁, ‖Tᵀ1 - h'‖₁)`.
    pub violation: f64,
    /// Whether the stabilized log-domain iteration was used.
    pub log_domain: bool,
}

impl SinkhornSolution {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn transport(&self, i: usize, j: usize) -> f64 {
        self.transport[i * self.dim + j]
    }

    /// Row-major transport plan.
    pub fn transport_plan(&self) -> &[f64] {
        &self.transport
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.transport.chunks(self.dim).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for row in self.transport.chunks(self.dim) {
            for (o, t) in out.iter_mut().zip(row) {
                *o += t;
            }
        }
        out
    }
}

/// Sinkhorn solver with the Gibbs kernel `K = exp(-λM)` precomputed for one
/// ground metric.
#[derive(Debug, Clone)]
pub struct SinkhornSolver {
    dim: usize,
    lambda: f64,
    cost: Vec<f64>,
    kernel: Vec<f64>,
    log_domain: bool,
    tol: f64,
    max_iter: usize,
}

impl SinkhornSolver {
    pub fn new(metric: &GroundMetric, lambda: f64, tol: f64, max_iter: usize) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::BadParameters(format!("lambda must be positive, got {lambda}")));
        }
        if !(tol > 0.0) {
            return Err(Error::BadParameters(format!("tol must be positive, got {tol}")));
        }
        let cost = metric.as_slice().to_vec();
        let mut kernel = Vec::with_capacity(cost.len());
        let mut underflow = false;
        for &c in &cost {
            let e = -lambda * c;
            if !e.is_finite() {
                return Err(Error::NumericalUnderflow);
            }
            let k = e.exp();
            underflow |= k < f64::MIN_POSITIVE;
            kernel.push(k);
        }
        Ok(Self {
            dim: metric.dim(),
            lambda,
            cost,
            kernel,
            log_domain: underflow,
            tol,
            max_iter,
        })
    }

    pub fn with_defaults(metric: &GroundMetric, lambda: f64) -> Result<Self> {
        Self::new(metric, lambda, DEFAULT_TOL, DEFAULT_MAX_ITER)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn uses_log_domain(&self) -> bool {
        self.log_domain
    }

    pub fn solve(&self, h: &Histogram, hp: &Histogram) -> Result<SinkhornSolution> {
        self.solve_warm(h, hp, None)
    }

    /// Solves starting from a previous `dual_beta` for the same ground
    /// metric and λ.
    pub fn solve_warm(
        &self,
        h: &Histogram,
        hp: &Histogram,
        warm_beta: Option<&[f64]>,
    ) -> Result<SinkhornSolution> {
        let metric_dim = self.dim;
        if h.dim() != metric_dim || hp.dim() != metric_dim {
            return Err(Error::DimensionMismatch {
                expected: metric_dim,
                got: if h.dim() != metric_dim { h.dim() } else { hp.dim() },
            });
        }
        if let Some(w) = warm_beta {
            if w.len() != metric_dim {
                return Err(Error::DimensionMismatch { expected: metric_dim, got: w.len() });
            }
        }
        let a = h.clamped(CLAMP_EPS);
        let b = hp.clamped(CLAMP_EPS);
        self.solve_raw(&a, &b, warm_beta)
    }

    /// Solves on already-clamped, strictly positive marginals.
    pub(crate) fn solve_raw(
        &self,
        a: &[f64],
        b: &[f64],
        warm_beta: Option<&[f64]>,
    ) -> Result<SinkhornSolution> {
        if !self.log_domain {
            if let Some(sol) = self.solve_scaling(a, b, warm_beta) {
                return Ok(sol);
            }
        }
        self.solve_log(a, b, warm_beta)
    }

    /// Plain alternating scaling. Returns `None` when scalings leave the
    /// representable range, which triggers the log-domain path.
    fn solve_scaling(
        &self,
        a: &[f64],
        b: &[f64],
        warm_beta: Option<&[f64]>,
    ) -> Option<SinkhornSolution> {
        let d = self.dim;
        let k = &self.kernel;
        let mut v: Vec<f64> = match warm_beta {
            Some(w) => w.iter().map(|&x| (self.lambda * x).exp()).collect(),
            None => vec![1.0; d],
        };
        if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            v = vec![1.0; d];
        }
        let mut kv = vec![0.0; d];
        let mut ktu = vec![0.0; d];
        let mut u = vec![0.0; d];

        mat_vec(k, &v, &mut kv, d);
        for i in 0..d {
            u[i] = a[i] / kv[i];
        }
        let mut iterations = 0;
        let mut converged = false;
        let mut violation = f64::INFINITY;
        while iterations < self.max_iter {
            iterations += 1;
            mat_t_vec(k, &u, &mut ktu, d);
            for j in 0..d {
                v[j] = b[j] / ktu[j];
            }
            mat_vec(k, &v, &mut kv, d);
            let mut row_viol = 0.0;
            let mut col_viol = 0.0;
            for i in 0..d {
                row_viol += (u[i] * kv[i] - a[i]).abs();
                col_viol += (v[i] * ktu[i] - b[i]).abs();
            }
            violation = row_viol.max(col_viol);
            if !violation.is_finite() {
                return None;
            }
            if violation < self.tol {
                converged = true;
                break;
            }
            for i in 0..d {
                u[i] = a[i] / kv[i];
            }
        }
        if u.iter().chain(&v).any(|x| !(x.is_finite() && *x > 0.0)) {
            return None;
        }
        let mut transport = vec![0.0; d * d];
        let mut distance = 0.0;
        for i in 0..d {
            for j in 0..d {
                let t = u[i] * k[i * d + j] * v[j];
                transport[i * d + j] = t;
                distance += t * self.cost[i * d + j];
            }
        }
        Some(SinkhornSolution {
            distance,
            dim: d,
            transport,
            dual_alpha: u.iter().map(|x| x.ln() / self.lambda).collect(),
            dual_beta: v.iter().map(|x| x.ln() / self.lambda).collect(),
            iterations,
            converged,
            violation,
            log_domain: false,
        })
    }

    /// Log-domain iteration on the potentials `f = λα`, `g = λβ`.
    fn solve_log(&self, a: &[f64], b: &[f64], warm_beta: Option<&[f64]>) -> Result<SinkhornSolution> {
        let d = self.dim;
        let lam = self.lambda;
        let neg_lm: Vec<f64> = self.cost.iter().map(|c| -lam * c).collect();
        let log_a: Vec<f64> = a.iter().map(|x| x.ln()).collect();
        let log_b: Vec<f64> = b.iter().map(|x| x.ln()).collect();
        let mut g: Vec<f64> = match warm_beta {
            Some(w) => w.iter().map(|x| lam * x).collect(),
            None => vec![0.0; d],
        };
        let mut f = vec![0.0; d];
        let mut buf = vec![0.0; d];
        let update_f = |f: &mut [f64], g: &[f64], buf: &mut [f64]| {
            for i in 0..d {
                for j in 0..d {
                    buf[j] = neg_lm[i * d + j] + g[j];
                }
                f[i] = log_a[i] - log_sum_exp(buf);
            }
        };
        update_f(&mut f, &g, &mut buf);
        let mut iterations = 0;
        let mut converged = false;
        let mut violation = f64::INFINITY;
        while iterations < self.max_iter {
            iterations += 1;
            for j in 0..d {
                for i in 0..d {
                    buf[i] = neg_lm[i * d + j] + f[i];
                }
                g[j] = log_b[j] - log_sum_exp(&buf);
            }
            let mut row_viol = 0.0;
            for i in 0..d {
                let mut r = 0.0;
                for j in 0..d {
                    r += (f[i] + neg_lm[i * d + j] + g[j]).exp();
                }
                row_viol += (r - a[i]).abs();
            }
            let mut col_viol = 0.0;
            for j in 0..d {
                let mut c = 0.0;
                for i in 0..d {
                    c += (f[i] + neg_lm[i * d + j] + g[j]).exp();
                }
                col_viol += (c - b[j]).abs();
            }
            violation = row_viol.max(col_viol);
            if !violation.is_finite() {
                return Err(Error::NumericalUnderflow);
            }
            if violation < self.tol {
                converged = true;
                break;
            }
            update_f(&mut f, &g, &mut buf);
        }
        let mut transport = vec![0.0; d * d];
        let mut distance = 0.0;
        for i in 0..d {
            for j in 0..d {
                let t = (f[i] + neg_lm[i * d + j] + g[j]).exp();
                transport[i * d + j] = t;
                distance += t * self.cost[i * d + j];
            }
        }
        if !distance.is_finite() || f.iter().chain(&g).any(|x| !x.is_finite()) {
            return Err(Error::NumericalUnderflow);
        }
        Ok(SinkhornSolution {
            distance,
            dim: d,
            transport,
            dual_alpha: f.iter().map(|x| x / lam).collect(),
            dual_beta: g.iter().map(|x| x / lam).collect(),
            iterations,
            converged,
            violation,
            log_domain: true,
        })
    }
}

fn mat_vec(k: &[f64], x: &[f64], out: &mut [f64], d: usize) {
    for i in 0..d {
        let row = &k[i * d..(i + 1) * d];
        out[i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

fn mat_t_vec(k: &[f64], x: &[f64], out: &mut [f64], d: usize) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for i in 0..d {
        let xi = x[i];
        let row = &k[i * d..(i + 1) * d];
        for (o, kij) in out.iter_mut().zip(row) {
            *o += kij * xi;
        }
    }
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Entropic transport distance `tr(T^λ M)` between `h` and `hp`.
pub fn sinkhorn(
    h: &Histogram,
    hp: &Histogram,
    metric: &GroundMetric,
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SinkhornSolution> {
    check_dims(h.dim(), hp.dim(), metric)?;
    SinkhornSolver::new(metric, lambda, tol, max_iter)?.solve(h, hp)
}

/// Centered second dual `β* - mean(β*)`, the approximate gradient of the
/// Sinkhorn distance with respect to its second argument.
pub fn sinkhorn_grad_dual(sol: &SinkhornSolution) -> Result<Vec<f64>> {
    if !sol.converged {
        return Err(Error::NotConverged { iterations: sol.iterations, violation: sol.violation });
    }
    Ok(centered(&sol.dual_beta))
}

pub(crate) fn centered(v: &[f64]) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - mean).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn e(d: usize, k: usize) -> Histogram {
        let mut v = vec![0.0; d];
        v[k] = 1.0;
        Histogram::new(v).unwrap()
    }

    #[test]
    fn same_point_mass_is_near_zero() {
        let m = GroundMetric::from_rows(&[vec![0.0, 2.0], vec![2.0, 0.0]]).unwrap();
        let sol = sinkhorn(&e(2, 0), &e(2, 0), &m, 5.0, 1e-12, 10_000).unwrap();
        assert!(sol.distance <= 10.0 * CLAMP_EPS * m.max(), "{}", sol.distance);
    }

    #[test]
    fn forced_transport() {
        let m = GroundMetric::line(2);
        let sol = sinkhorn(&e(2, 0), &e(2, 1), &m, 200.0, 1e-12, 10_000).unwrap();
        assert!((sol.distance - 1.0).abs() < 1e-3);
        assert!(sol.converged);
    }

    #[test]
    fn line_metric_close_to_emd() {
        let h = Histogram::new(vec![0.5, 0.5]).unwrap();
        let hp = Histogram::new(vec![0.25, 0.75]).unwrap();
        let sol = sinkhorn(&h, &hp, &GroundMetric::line(2), 200.0, 1e-12, 10_000).unwrap();
        assert!((sol.distance - 0.25).abs() < 0.01, "{}", sol.distance);
    }

    #[test]
    fn marginals_and_distance_field() {
        let h = Histogram::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let hp = Histogram::new(vec![0.4, 0.3, 0.2, 0.1]).unwrap();
        let m = GroundMetric::line(4);
        let sol = sinkhorn(&h, &hp, &m, 3.0, 1e-11, 10_000).unwrap();
        for (r, t) in sol.row_sums().iter().zip(h.as_slice()) {
            assert_abs_diff_eq!(*r, *t, epsilon = 1e-10);
        }
        for (c, t) in sol.col_sums().iter().zip(hp.as_slice()) {
            assert_abs_diff_eq!(*c, *t, epsilon = 1e-10);
        }
        let mut direct = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                direct += sol.transport(i, j) * m.get(i, j);
            }
        }
        assert_abs_diff_eq!(direct, sol.distance, epsilon = 1e-14);
    }

    #[test]
    fn log_domain_matches_scaling_domain() {
        let h = Histogram::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let hp = Histogram::new(vec![0.25, 0.25, 0.2, 0.3]).unwrap();
        let m = GroundMetric::line(4);
        let solver = SinkhornSolver::new(&m, 4.0, 1e-12, 10_000).unwrap();
        let a = h.clamped(CLAMP_EPS);
        let b = hp.clamped(CLAMP_EPS);
        let s1 = solver.solve_scaling(&a, &b, None).unwrap();
        let s2 = solver.solve_log(&a, &b, None).unwrap();
        assert_abs_diff_eq!(s1.distance, s2.distance, epsilon = 1e-10);
        let c1 = centered(&s1.dual_beta);
        let c2 = centered(&s2.dual_beta);
        for (x, y) in c1.iter().zip(&c2) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-8);
        }
    }

    #[test]
    fn underflowing_kernel_uses_log_domain() {
        let m = GroundMetric::line(8);
        let solver = SinkhornSolver::new(&m, 200.0, 1e-10, 10_000).unwrap();
        assert!(solver.uses_log_domain());
        let h = Histogram::uniform(8);
        let sol = solver.solve(&h, &h).unwrap();
        assert!(sol.converged && sol.log_domain);
    }

    #[test]
    fn warm_start_reaches_same_solution() {
        let h = Histogram::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let hp = Histogram::new(vec![0.3, 0.3, 0.2, 0.2]).unwrap();
        let m = GroundMetric::line(4);
        let solver = SinkhornSolver::new(&m, 5.0, 1e-12, 10_000).unwrap();
        let cold = solver.solve(&h, &hp).unwrap();
        let warm = solver.solve_warm(&h, &hp, Some(&cold.dual_beta)).unwrap();
        assert!(warm.iterations <= 2, "{}", warm.iterations);
        assert_abs_diff_eq!(cold.distance, warm.distance, epsilon = 1e-12);
    }

    #[test]
    fn errors() {
        let m = GroundMetric::line(3);
        let h = Histogram::uniform(3);
        let h2 = Histogram::uniform(2);
        assert!(matches!(
            sinkhorn(&h, &h2, &m, 1.0, 1e-9, 100),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(sinkhorn(&h, &h, &m, 0.0, 1e-9, 100), Err(Error::BadParameters(_))));
        let sol = sinkhorn(&h, &Histogram::new(vec![0.8, 0.1, 0.1]).unwrap(), &m, 50.0, 1e-15, 1)
            .unwrap();
        assert!(!sol.converged);
        assert!(matches!(sinkhorn_grad_dual(&sol), Err(Error::NotConverged { .. })));
    }

    #[test]
    fn centered_dual_is_shift_invariant() {
        let h = Histogram::new(vec![0.2, 0.3, 0.5]).unwrap();
        let hp = Histogram::new(vec![0.6, 0.3, 0.1]).unwrap();
        let mut sol = sinkhorn(&h, &hp, &GroundMetric::line(3), 10.0, 1e-12, 10_000).unwrap();
        let g1 = sinkhorn_grad_dual(&sol).unwrap();
        sol.dual_beta.iter_mut().for_each(|b| *b += 3.7);
        let g2 = sinkhorn_grad_dual(&sol).unwrap();
        for (a, b) in g1.iter().zip(&g2) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }
}
