use nalgebra::DMatrix;
use protocomp::dataset::{
    bow_histogram, covariance_descriptor, stratified_split, CovarianceGenerator, HistogramGenerator, LabeledDataset,
};
use protocomp::knn::{evaluate_dataset, EvalOptions};
use protocomp::metric::{DatasetMetric, MetricKind};
use protocomp::spd::SpdMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn bits_cov(ds: &LabeledDataset) -> Vec<u64> {
    ds.covariances().unwrap().iter().flat_map(|x| x.to_row_major()).map(f64::to_bits).collect()
}

fn bits_hist(ds: &LabeledDataset) -> Vec<u64> {
    let (hs, gm) = ds.histograms().unwrap();
    hs.iter().flat_map(|h| h.as_slice().to_vec()).chain(gm.as_slice().iter().copied()).map(f64::to_bits).collect()
}

#[test]
fn json_round_trip_is_bit_exact() {
    let cov = CovarianceGenerator { per_class: 10, ..Default::default() }.generate(3).unwrap();
    let back = LabeledDataset::from_json(&cov.to_json().unwrap()).unwrap();
    assert_eq!(bits_cov(&cov), bits_cov(&back));
    assert_eq!(cov.labels, back.labels);
    assert_eq!(cov.meta, back.meta);

    let hist = HistogramGenerator { per_class: 10, ..Default::default() }.generate(3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.json");
    hist.save(&path).unwrap();
    let back = LabeledDataset::load(&path).unwrap();
    assert_eq!(bits_hist(&hist), bits_hist(&back));
    assert_eq!(hist.labels, back.labels);
}

#[test]
fn generators_are_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let g = CovarianceGenerator { per_class: 20, ..Default::default() };
    for (name, seed) in [("a", 7), ("b", 7), ("c", 8)] {
        g.generate(seed).unwrap().save(dir.path().join(name)).unwrap();
    }
    let read = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
    let h = HistogramGenerator { per_class: 20, ..Default::default() };
    assert_eq!(h.generate(1).unwrap().to_json().unwrap(), h.generate(1).unwrap().to_json().unwrap());
}

#[test]
fn generated_members_satisfy_invariants() {
    let cov = CovarianceGenerator { per_class: 30, ..Default::default() }.generate(0).unwrap();
    for x in cov.covariances().unwrap() {
        SpdMatrix::new(x.as_matrix().clone()).unwrap();
    }
    assert_eq!(cov.class_counts(), vec![30, 30, 30]);
    let hist = HistogramGenerator { per_class: 30, ..Default::default() }.generate(0).unwrap();
    let (hs, gm) = hist.histograms().unwrap();
    for h in hs {
        assert!(h.as_slice().iter().all(|&v| v >= 0.0));
        assert!((h.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    for i in 0..gm.dim() {
        assert_eq!(gm.get(i, i), 0.0);
        for j in 0..gm.dim() {
            assert_eq!(gm.get(i, j), gm.get(j, i));
        }
    }
}

#[test]
fn sample_covariance_converges() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let l = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.5, 1.2, 0.0, -0.3, 0.4, 0.8]);
    let sigma = &l * l.transpose();
    let n = 1000;
    let features: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let z = nalgebra::DVector::from_fn(3, |_, _| rng.sample::<f64, _>(StandardNormal));
            (&l * z + nalgebra::DVector::from_element(3, 2.0)).iter().copied().collect()
        })
        .collect();
    let x = covariance_descriptor(&features).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            // Standard error of a Gaussian sample covariance entry.
            let se = ((sigma[(i, i)] * sigma[(j, j)] + sigma[(i, j)].powi(2)) / n as f64).sqrt();
            assert!((x.as_matrix()[(i, j)] - sigma[(i, j)]).abs() < 5.0 * se, "({i},{j})");
        }
    }
}

#[test]
fn covariance_of_two_opposite_features() {
    let v = [1.0, -2.0];
    let x = covariance_descriptor(&[v.to_vec(), v.iter().map(|a| -a).collect()]).unwrap();
    // Mean zero, so the sum of outer products is 2 v vᵀ over (2 - 1).
    let expect = DMatrix::from_fn(2, 2, |i, j| 2.0 * v[i] * v[j]);
    let tr = expect.trace();
    assert!((x.as_matrix() - &expect).norm() <= 1e-8 * tr / 2.0 * 2f64.sqrt() + 1e-15);
}

#[test]
fn bow_matches_recount() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let codebook: Vec<Vec<f64>> = (0..6).map(|_| (0..2).map(|_| rng.random::<f64>()).collect()).collect();
    let features: Vec<Vec<f64>> = (0..200).map(|_| (0..2).map(|_| rng.random::<f64>()).collect()).collect();
    let mut counts = [0.0; 6];
    for f in &features {
        let d = |c: &Vec<f64>| c.iter().zip(f).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let best = (0..6).fold(0, |b, k| if d(&codebook[k]) < d(&codebook[b]) { k } else { b });
        counts[best] += 1.0;
    }
    let h = bow_histogram(&features, &codebook).unwrap();
    for (a, c) in h.as_slice().iter().zip(counts) {
        assert!((a - c / 200.0).abs() < 1e-15);
    }
    let one = bow_histogram(&features[..1], &codebook).unwrap();
    assert_eq!(one.as_slice().iter().filter(|&&v| v == 1.0).count(), 1);
    let uniform = bow_histogram(&codebook, &codebook).unwrap();
    assert!(uniform.as_slice().iter().all(|&v| (v - 1.0 / 6.0).abs() < 1e-15));
}

fn full_nn_error(ds: &LabeledDataset, seed: u64) -> f64 {
    let (train, test) = stratified_split(ds, 0.5, seed).unwrap();
    let metric = DatasetMetric::for_dataset(&train, MetricKind::Auto, None).unwrap();
    evaluate_dataset(&test, &train, &metric, &EvalOptions { repetitions: 1, ..Default::default() })
        .unwrap()
        .error_rate
}

#[test]
fn zero_separation_is_chance() {
    let g = CovarianceGenerator { per_class: 60, separation: 0.0, ..Default::default() };
    let mean = (0..5).map(|s| full_nn_error(&g.generate(s).unwrap(), s)).sum::<f64>() / 5.0;
    assert!((mean - 2.0 / 3.0).abs() < 0.10, "{mean}");
}

#[test]
fn large_separation_is_easy() {
    let g = CovarianceGenerator { per_class: 60, separation: 4.0, wishart_dof: 50, ..Default::default() };
    for s in 0..5 {
        let e = full_nn_error(&g.generate(s).unwrap(), s);
        assert!(e < 0.05, "seed {s}: {e}");
    }
}

#[test]
fn concentrated_histograms_are_easy() {
    let g = HistogramGenerator { per_class: 20, dim: 10, concentration: 1e4, ..Default::default() };
    for s in 0..5 {
        assert_eq!(full_nn_error(&g.generate(s).unwrap(), s), 0.0);
    }
    let single = HistogramGenerator { classes: 1, per_class: 20, dim: 10, ..Default::default() };
    assert_eq!(full_nn_error(&single.generate(0).unwrap(), 0), 0.0);
}

#[test]
fn split_keeps_members_and_proportions() {
    let ds = CovarianceGenerator { per_class: 40, ..Default::default() }.generate(2).unwrap();
    let (train, test) = stratified_split(&ds, 0.3, 9).unwrap();
    assert_eq!(train.class_counts(), vec![28, 28, 28]);
    assert_eq!(test.class_counts(), vec![12, 12, 12]);
    let mut all: Vec<Vec<u64>> = train
        .covariances()
        .unwrap()
        .iter()
        .chain(test.covariances().unwrap())
        .map(|x| x.to_row_major().into_iter().map(f64::to_bits).collect())
        .collect();
    let mut orig: Vec<Vec<u64>> =
        ds.covariances().unwrap().iter().map(|x| x.to_row_major().into_iter().map(f64::to_bits).collect()).collect();
    all.sort();
    orig.sort();
    assert_eq!(all, orig);
}
