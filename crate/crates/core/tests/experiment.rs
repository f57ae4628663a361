use protocomp::baselines::Method;
use protocomp::dataset::{CovarianceGenerator, HistogramGenerator, LabeledDataset};
use protocomp::experiment::{
    compress, default_ratios, run_experiment, run_plan, CompressSettings, DatasetSource, ExperimentPlan, ResultRow,
};
use protocomp::metric::MetricKind;
use protocomp::Error;

fn hist_data() -> LabeledDataset {
    HistogramGenerator { classes: 3, per_class: 20, dim: 8, concentration: 10.0 }.generate(11).unwrap()
}

fn collect(plan: &ExperimentPlan, ds: &LabeledDataset) -> (Vec<ResultRow>, Vec<ResultRow>) {
    let mut streamed = Vec::new();
    let res = run_experiment(plan, ds, &mut |r| {
        streamed.push(r.clone());
        Ok(())
    })
    .unwrap();
    (res.rows, streamed)
}

#[test]
fn one_row_per_cell() {
    let mut plan = ExperimentPlan::new(vec![Method::Subsample, Method::Cnn, Method::Rmhc], vec![1, 2]);
    plan.ratios = vec![0.1, 0.3];
    plan.rmhc_steps = 50;
    plan.repetitions = 1;
    let (rows, streamed) = collect(&plan, &hist_data());
    assert_eq!(rows.len(), 3 * 2 * 2);
    assert_eq!(streamed.len(), rows.len());
    for r in &rows {
        assert_eq!(r.n_train + r.n_test, 60);
        assert_eq!(r.distance_evals, (r.prototypes * r.n_test) as u64);
        assert_eq!(r.full_distance_evals, (r.n_train * r.n_test) as u64);
        assert!((0.0..=1.0).contains(&r.error_rate));
    }
    let mut cells: Vec<_> = rows.iter().map(|r| (r.method.name(), r.ratio.to_bits(), r.seed)).collect();
    cells.sort();
    cells.dedup();
    assert_eq!(cells.len(), rows.len());
}

#[test]
fn full_ratio_subsample_equals_full() {
    let mut plan = ExperimentPlan::new(vec![Method::Subsample], vec![3, 4, 5]);
    plan.ratios = vec![1.0];
    plan.repetitions = 1;
    let (rows, _) = collect(&plan, &hist_data());
    for r in rows {
        assert_eq!(r.prototypes, r.n_train);
        assert_eq!(r.error_rate, r.full_error_rate);
    }
}

#[test]
fn subsample_error_falls_with_ratio() {
    let ds = CovarianceGenerator { classes: 3, per_class: 40, dim: 3, wishart_dof: 8, separation: 1.5 }
        .generate(2)
        .unwrap();
    let mut plan = ExperimentPlan::new(vec![Method::Subsample], (0..8).collect());
    plan.ratios = vec![0.04, 1.0];
    plan.repetitions = 1;
    let (rows, _) = collect(&plan, &ds);
    let mean = |ratio: f64| {
        let e: Vec<f64> = rows.iter().filter(|r| r.ratio == ratio).map(|r| r.error_rate).collect();
        e.iter().sum::<f64>() / e.len() as f64
    };
    assert!(mean(0.04) > mean(1.0), "{} vs {}", mean(0.04), mean(1.0));
}

#[test]
fn deterministic_runs_reproduce() {
    let mut plan = ExperimentPlan::new(vec![Method::Shc, Method::Fcnn, Method::Rnn], vec![7]);
    plan.ratios = vec![0.1];
    plan.shc.max_iter = 5;
    plan.shc.rmhc_steps = 20;
    plan.repetitions = 1;
    let ds = hist_data();
    let strip = |rows: Vec<ResultRow>| rows.iter().map(ResultRow::without_timings).collect::<Vec<_>>();
    let (a, _) = collect(&plan, &ds);
    let (b, _) = collect(&plan, &ds);
    assert_eq!(strip(a.clone()), strip(b));
    plan.deterministic = false;
    plan.workers = 3;
    let (c, _) = collect(&plan, &ds);
    assert_eq!(strip(a), strip(c));
}

#[test]
fn plan_parses_from_json() {
    let plan: ExperimentPlan = serde_json::from_str(
        r#"{
            "methods": ["scc", "subsample"],
            "seeds": [1, 2],
            "dataset": {"covariance": {"classes": 2, "per_class": 5, "dim": 2, "seed": 4}},
            "scc": {"max_iter": 7}
        }"#,
    )
    .unwrap();
    assert_eq!(plan.methods, vec![Method::Scc, Method::Subsample]);
    assert_eq!(plan.k, 1);
    assert_eq!(plan.scc.max_iter, 7);
    match plan.dataset.as_ref().unwrap() {
        DatasetSource::Covariance { generator, seed } => {
            assert_eq!((generator.classes, generator.per_class, generator.dim), (2, 5, 2));
            assert_eq!(*seed, Some(4));
        }
        other => panic!("{other:?}"),
    }
    let back: ExperimentPlan = serde_json::from_str(&serde_json::to_string(&plan).unwrap()).unwrap();
    assert_eq!(back, plan);
    let path: ExperimentPlan =
        serde_json::from_str(r#"{"methods": ["cnn"], "seeds": [0], "dataset": {"path": "x.json"}}"#).unwrap();
    assert!(matches!(path.dataset, Some(DatasetSource::Path(_))));
}

#[test]
fn run_plan_uses_its_dataset() {
    let mut plan = ExperimentPlan::new(vec![Method::Subsample], vec![0, 1]);
    plan.dataset = Some(DatasetSource::Histogram {
        generator: HistogramGenerator { classes: 2, per_class: 10, dim: 4, concentration: 5.0 },
        seed: None,
    });
    plan.ratios = vec![0.5];
    plan.repetitions = 1;
    let res = run_plan(&plan, &mut |_| Ok(())).unwrap();
    assert_eq!(res.rows.len(), 2);
    assert!(res.summary().contains("subsample"));
    plan.dataset = None;
    assert!(matches!(run_plan(&plan, &mut |_| Ok(())), Err(Error::BadParameters(_))));
}

#[test]
fn invalid_plans_are_rejected() {
    let ds = hist_data();
    let mut plan = ExperimentPlan::new(vec![Method::Subsample], vec![0]);
    plan.ratios = vec![1.5];
    assert!(matches!(run_experiment(&plan, &ds, &mut |_| Ok(())), Err(Error::BadParameters(_))));
    let plan = ExperimentPlan::new(vec![Method::Scc], vec![0]);
    assert!(matches!(run_experiment(&plan, &ds, &mut |_| Ok(())), Err(Error::FamilyMismatch { .. })));
    let plan = ExperimentPlan::new(vec![], vec![0]);
    assert!(plan.validate().is_err());
}

#[test]
fn default_ratio_sets() {
    assert_eq!(default_ratios(300, 3)[0], 0.02);
    assert_eq!(default_ratios(300, 20)[0], 0.10);
}

#[test]
fn compress_keeps_family_and_size() {
    let ds = hist_data();
    for method in [Method::Shc, Method::Subsample, Method::Rmhc] {
        let mut s = CompressSettings::new(method, 0.1, 3);
        s.shc.max_iter = 5;
        s.shc.rmhc_steps = 20;
        s.rmhc_steps = 20;
        let c = compress(&ds, &s, MetricKind::Auto).unwrap();
        assert_eq!(c.prototypes.len(), 6);
        assert_eq!(c.prototypes.family(), ds.family());
        assert_eq!(c.prototypes.class_counts(), vec![2, 2, 2]);
    }
}
