use protocomp::ot::{
    emd_exact, sinkhorn, sinkhorn_barycenter, sinkhorn_grad_dual, GroundMetric, Histogram,
    SinkhornSolver,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_histogram(d: usize, rng: &mut ChaCha8Rng) -> Histogram {
    let v: Vec<f64> = (0..d).map(|_| rng.random::<f64>() + 0.01).collect();
    Histogram::from_unnormalized(v).unwrap()
}

/// Closed-form EMD for the unit-spaced line metric.
fn cdf_l1(a: &[f64], b: &[f64]) -> f64 {
    let (mut ca, mut cb, mut acc) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ca += x;
        cb += y;
        acc += (ca - cb).abs();
    }
    acc
}

#[test]
fn emd_matches_cdf_on_line_metric() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let m = GroundMetric::line(8);
    for _ in 0..100 {
        let a = random_histogram(8, &mut rng);
        let b = random_histogram(8, &mut rng);
        let e = emd_exact(&a, &b, &m).unwrap();
        let c = cdf_l1(a.as_slice(), b.as_slice());
        assert!((e - c).abs() < 1e-10, "{e} vs {c}");
    }
}

#[test]
fn emd_symmetric_and_triangle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let pts: Vec<Vec<f64>> = (0..6).map(|_| vec![rng.random(), rng.random()]).collect();
    let m = GroundMetric::euclidean(&pts).unwrap();
    for _ in 0..50 {
        let a = random_histogram(6, &mut rng);
        let b = random_histogram(6, &mut rng);
        let c = random_histogram(6, &mut rng);
        let ab = emd_exact(&a, &b, &m).unwrap();
        let ba = emd_exact(&b, &a, &m).unwrap();
        let bc = emd_exact(&b, &c, &m).unwrap();
        let ac = emd_exact(&a, &c, &m).unwrap();
        assert!((ab - ba).abs() < 1e-10);
        assert!(ac <= ab + bc + 1e-10);
    }
}

#[test]
fn sinkhorn_upper_bounds_emd_with_shrinking_gap() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for trial in 0..50 {
        let d = 2 + trial % 7;
        let m = GroundMetric::line(d);
        let a = random_histogram(d, &mut rng);
        let b = random_histogram(d, &mut rng);
        let e = emd_exact(&a, &b, &m).unwrap();
        let mut prev = f64::INFINITY;
        for lambda in [5.0, 20.0, 80.0, 200.0] {
            let s = sinkhorn(&a, &b, &m, lambda, 1e-13, 100_000).unwrap();
            assert!(s.converged);
            assert!(s.distance >= e - 1e-6);
            let gap = s.distance - e;
            assert!(gap <= prev + 1e-9, "lambda {lambda}: {gap} > {prev}");
            prev = gap;
        }
    }
}

#[test]
fn sinkhorn_marginals_hold_after_convergence() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let m = GroundMetric::line(6);
    for _ in 0..20 {
        let a = random_histogram(6, &mut rng);
        let b = random_histogram(6, &mut rng);
        let s = sinkhorn(&a, &b, &m, 10.0, 1e-9, 10_000).unwrap();
        let rows: f64 = s.row_sums().iter().zip(a.as_slice()).map(|(x, y)| (x - y).abs()).sum();
        let cols: f64 = s.col_sums().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).sum();
        assert!(rows < 1e-9 && cols < 1e-9);
    }
}

#[test]
fn centered_dual_vanishes_for_identical_marginals() {
    let h = Histogram::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
    let m = GroundMetric::line(4);
    let s = sinkhorn(&h, &h, &m, 100.0, 1e-12, 100_000).unwrap();
    let g = sinkhorn_grad_dual(&s).unwrap();
    assert!(g.iter().all(|x| x.abs() < 1e-6), "{g:?}");
}

#[test]
fn dual_matches_directional_finite_difference() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let m = GroundMetric::line(4);
    let lambda = 100.0;
    let solver = SinkhornSolver::new(&m, lambda, 1e-14, 1_000_000).unwrap();
    let h = random_histogram(4, &mut rng);
    let hp = random_histogram(4, &mut rng);
    let beta = sinkhorn_grad_dual(&solver.solve(&h, &hp).unwrap()).unwrap();
    // Simplex-tangent direction: zero-sum.
    let raw: Vec<f64> = (0..4).map(|_| rng.random::<f64>() - 0.5).collect();
    let mean = raw.iter().sum::<f64>() / 4.0;
    let dir: Vec<f64> = raw.iter().map(|x| x - mean).collect();
    let step = 1e-6;
    let shifted = |s: f64| {
        Histogram::new(hp.as_slice().iter().zip(&dir).map(|(x, d)| x + s * d).collect()).unwrap()
    };
    let fp = solver.solve(&h, &shifted(step)).unwrap().distance;
    let fm = solver.solve(&h, &shifted(-step)).unwrap().distance;
    let fd = (fp - fm) / (2.0 * step);
    let analytic: f64 = beta.iter().zip(&dir).map(|(b, d)| b * d).sum();
    let rel = (fd - analytic).abs() / analytic.abs().max(1e-12);
    assert!(rel < 5e-3, "fd {fd} analytic {analytic} rel {rel}");
}

#[test]
fn barycenter_not_worse_than_members() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let m = GroundMetric::line(6);
    let lambda = 10.0;
    let solver = SinkhornSolver::new(&m, lambda, 1e-10, 100_000).unwrap();
    for _ in 0..5 {
        let members = vec![random_histogram(6, &mut rng), random_histogram(6, &mut rng)];
        let bary = sinkhorn_barycenter(&members, &m, lambda, 1e-10, 20_000).unwrap();
        let objective = |b: &Histogram| -> f64 {
            members.iter().map(|h| solver.solve(b, h).unwrap().distance).sum()
        };
        let at_output = objective(&bary.histogram);
        assert!((at_output - bary.objective).abs() < 1e-8);
        for h in &members {
            assert!(at_output <= objective(h) + 1e-9, "{at_output} > {}", objective(h));
        }
    }
}
