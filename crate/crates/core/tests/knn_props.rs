use proptest::prelude::*;
use protocomp::knn::{evaluate, knn_classify, loo_train_error, EvalOptions};
use protocomp::metric::Jbld;
use protocomp::spd::SpdMatrix;
use protocomp::{Error, Result};

fn abs(a: &f64, b: &f64) -> Result<f64> {
    Ok((a - b).abs())
}

/// Majority vote from a full sort; distance ties by index, vote ties by
/// the label of the nearest tied member.
fn brute_classify(q: f64, refs: &[f64], labels: &[usize], k: usize) -> usize {
    let mut order: Vec<usize> = (0..refs.len()).collect();
    order.sort_by(|&a, &b| (q - refs[a]).abs().total_cmp(&(q - refs[b]).abs()).then(a.cmp(&b)));
    let top = &order[..k];
    let classes = labels.iter().max().unwrap() + 1;
    let mut votes = vec![0; classes];
    top.iter().for_each(|&i| votes[labels[i]] += 1);
    let best = *votes.iter().max().unwrap();
    top.iter().map(|&i| labels[i]).find(|&y| votes[y] == best).unwrap()
}

proptest! {
    #[test]
    fn matches_brute_force(
        refs in prop::collection::vec(-5i32..5, 1..15),
        labels_seed in prop::collection::vec(0usize..3, 15),
        q in -6i32..6,
        k in 1usize..6,
    ) {
        // Integer-valued points make distance ties common.
        let refs: Vec<f64> = refs.into_iter().map(f64::from).collect();
        let labels: Vec<usize> = labels_seed[..refs.len()].to_vec();
        let k = k.min(refs.len());
        let q = f64::from(q);
        prop_assert_eq!(knn_classify(&q, &refs, &labels, &abs, k).unwrap(), brute_classify(q, &refs, &labels, k));
    }

    #[test]
    fn error_invariant_to_metric_scaling(
        refs in prop::collection::vec(-50.0f64..50.0, 1..12),
        tests in prop::collection::vec(-50.0f64..50.0, 1..12),
        scale in 0.01f64..100.0,
    ) {
        let labels: Vec<usize> = refs.iter().map(|r| usize::from(*r > 0.0)).collect();
        let tl: Vec<usize> = tests.iter().map(|r| usize::from(*r > 5.0)).collect();
        let scaled = move |a: &f64, b: &f64| -> Result<f64> { Ok(scale * (a - b).abs()) };
        let opts = EvalOptions { repetitions: 1, ..EvalOptions::default() };
        let a = evaluate(&tests, &tl, &refs, &labels, &abs, &opts).unwrap();
        let b = evaluate(&tests, &tl, &refs, &labels, &scaled, &opts).unwrap();
        prop_assert_eq!(a.error_rate, b.error_rate);
        prop_assert_eq!(a.distance_evals, (tests.len() * refs.len()) as u64);
    }

    #[test]
    fn reference_permutation_invariance(
        refs in prop::collection::vec(-50.0f64..50.0, 2..12),
        q in -50.0f64..50.0,
        rot in 0usize..12,
    ) {
        // Distinct continuous values: no distance ties, so order is irrelevant.
        let labels: Vec<usize> = (0..refs.len()).map(|i| i % 3).collect();
        let r = rot % refs.len();
        let mut pr = refs.clone();
        let mut pl = labels.clone();
        pr.rotate_left(r);
        pl.rotate_left(r);
        prop_assert_eq!(
            knn_classify(&q, &refs, &labels, &abs, 3.min(refs.len())).unwrap(),
            knn_classify(&q, &pr, &pl, &abs, 3.min(refs.len())).unwrap()
        );
    }
}

#[test]
fn hand_ordered_scalar_spd() {
    // JBLD between scalars x, y: log((x+y)/2) - ½ log(xy).
    let refs = [1.0, 3.0, 9.0].map(|v| SpdMatrix::from_row_slice(1, &[v]).unwrap());
    let labels = [0, 1, 2];
    let q = SpdMatrix::from_row_slice(1, &[4.0]).unwrap();
    let d = |y: f64| ((4.0 + y) / 2.0f64).ln() - 0.5 * (4.0 * y).ln();
    let nearest = (0..3).min_by(|&a, &b| d([1.0, 3.0, 9.0][a]).total_cmp(&d([1.0, 3.0, 9.0][b]))).unwrap();
    assert_eq!(knn_classify(&q, &refs, &labels, &Jbld, 1).unwrap(), labels[nearest]);
}

#[test]
fn self_reference_has_zero_error() {
    let pts: Vec<f64> = (0..20).map(|i| (i * 7 % 20) as f64).collect();
    let labels: Vec<usize> = (0..20).map(|i| i % 4).collect();
    let r = evaluate(&pts, &labels, &pts, &labels, &abs, &EvalOptions::default()).unwrap();
    assert_eq!(r.error_rate, 0.0);
    assert_eq!(r.distance_evals, 400);
}

#[test]
fn threaded_evaluation_matches_sequential() {
    let pts: Vec<f64> = (0..57).map(|i| ((i * 37) % 101) as f64 / 7.0).collect();
    let labels: Vec<usize> = pts.iter().map(|p| (*p as usize) % 3).collect();
    let refs: Vec<f64> = pts.iter().step_by(4).map(|p| p + 0.3).collect();
    let rl: Vec<usize> = labels.iter().step_by(4).copied().collect();
    let one = evaluate(&pts, &labels, &refs, &rl, &abs, &EvalOptions { workers: 1, ..Default::default() }).unwrap();
    let four = evaluate(&pts, &labels, &refs, &rl, &abs, &EvalOptions { workers: 4, ..Default::default() }).unwrap();
    assert_eq!(one.predictions, four.predictions);
    assert_eq!(four.workers, 4);
}

#[test]
fn loo_cases() {
    let twice: Vec<f64> = [0.0, 5.0, 9.0].iter().flat_map(|&v| [v, v]).collect();
    assert_eq!(loo_train_error(&twice, &[0, 0, 1, 1, 2, 2], &abs, 1).unwrap(), 0.0);
    assert_eq!(loo_train_error(&[0.0, 1.0], &[0, 1], &abs, 1).unwrap(), 1.0);
    assert_eq!(loo_train_error(&[0.0], &[0], &abs, 1), Err(Error::TooFewInputs { needed: 2, have: 1 }));
}

#[test]
fn loo_matches_brute_force() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(20);
    let pts: Vec<f64> = (0..20).map(|_| rng.random::<f64>() * 10.0).collect();
    let labels: Vec<usize> = (0..20).map(|_| rng.random_range(0..3)).collect();
    let wrong = (0..20)
        .filter(|&i| {
            let others: Vec<usize> = (0..20).filter(|&j| j != i).collect();
            let refs: Vec<f64> = others.iter().map(|&j| pts[j]).collect();
            let rl: Vec<usize> = others.iter().map(|&j| labels[j]).collect();
            brute_classify(pts[i], &refs, &rl, 1) != labels[i]
        })
        .count();
    assert_eq!(loo_train_error(&pts, &labels, &abs, 1).unwrap(), wrong as f64 / 20.0);
}
