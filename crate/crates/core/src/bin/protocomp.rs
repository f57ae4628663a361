use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use protocomp::baselines::Method;
use protocomp::dataset::{CovarianceGenerator, HistogramGenerator, LabeledDataset};
use protocomp::error::ErrorClass;
use protocomp::experiment::{compress, run_plan, CompressSettings, ExperimentPlan};
use protocomp::knn::{evaluate_dataset, EvalOptions};
use protocomp::metric::{DatasetMetric, MetricKind};
use protocomp::{selfcheck, Error, Result};

#[derive(Parser)]
#[command(name = "protocomp", version, about = "Prototype compression for kNN on covariance and histogram descriptors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic covariance dataset.
    GenCov {
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 200)]
        per_class: usize,
        #[arg(long, default_value_t = 5)]
        dim: usize,
        #[arg(long, default_value_t = 10)]
        wishart_dof: usize,
        #[arg(long, default_value_t = 1.0)]
        separation: f64,
        #[command(flatten)]
        out: GenOut,
    },
    /// Generate a synthetic histogram dataset.
    GenHist {
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 200)]
        per_class: usize,
        #[arg(long, default_value_t = 20)]
        dim: usize,
        #[arg(long, default_value_t = 20.0)]
        concentration: f64,
        #[command(flatten)]
        out: GenOut,
    },
    /// Compress a training set into prototypes.
    Compress {
        #[arg(long, value_parser = parse_method)]
        method: Method,
        #[arg(long)]
        ratio: f64,
        #[arg(long)]
        gamma_sq: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Optimizer iteration cap for scc and shc.
        #[arg(long)]
        max_iter: Option<usize>,
        /// Choose γ² on a validation carve-out instead of by initial loss.
        #[arg(long)]
        tune: bool,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify a test set against a reference set.
    Eval {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, value_enum, default_value_t = MetricArg::Auto)]
        metric: MetricArg,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, default_value_t = 3)]
        repetitions: usize,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Run an experiment plan.
    Bench {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the summary tables here.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Run the built-in numerical checks.
    Selfcheck,
}

#[derive(Args)]
struct GenOut {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum MetricArg {
    Auto,
    Jbld,
    Airm,
    Sinkhorn,
    Emd,
}

impl From<MetricArg> for MetricKind {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Auto => MetricKind::Auto,
            MetricArg::Jbld => MetricKind::Jbld,
            MetricArg::Airm => MetricKind::Airm,
            MetricArg::Sinkhorn => MetricKind::Sinkhorn,
            MetricArg::Emd => MetricKind::Emd,
        }
    }
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenCov { classes, per_class, dim, wishart_dof, separation, out } => {
            let g = CovarianceGenerator { classes, per_class, dim, wishart_dof, separation };
            g.generate(out.seed)?.save(&out.out)
        }
        Command::GenHist { classes, per_class, dim, concentration, out } => {
            let g = HistogramGenerator { classes, per_class, dim, concentration };
            g.generate(out.seed)?.save(&out.out)
        }
        Command::Compress { method, ratio, gamma_sq, lambda, seed, max_iter, tune, input, out } => {
            let train = LabeledDataset::load(&input)?;
            let mut s = CompressSettings::new(method, ratio, seed);
            s.gamma_sq = gamma_sq;
            s.lambda = lambda;
            s.tune = tune;
            if let Some(it) = max_iter {
                s.scc.max_iter = it;
                s.shc.max_iter = it;
            }
            let c = compress(&train, &s, MetricKind::Auto)?;
            let mut proto = c.prototypes;
            proto.meta.name = format!("{method}-{ratio}");
            proto.meta.seed = Some(seed);
            proto.save(&out)?;
            eprintln!(
                "{method}: {} prototypes from {} inputs in {:.3} s",
                proto.len(),
                train.len(),
                c.train_time + c.shared_time
            );
            Ok(())
        }
        Command::Eval { reference, test, k, metric, lambda, workers, repetitions, json } => {
            let reference = LabeledDataset::load(&reference)?;
            let test = LabeledDataset::load(&test)?;
            if k == 0 || k > reference.len() {
                return Err(Error::BadParameters(format!("k = {k} with {} reference members", reference.len())));
            }
            let metric = DatasetMetric::for_dataset(&reference, metric.into(), lambda)?;
            let report = evaluate_dataset(&test, &reference, &metric, &EvalOptions { k, workers, repetitions })?;
            if json {
                println!("{}", serde_json::to_string(&report)?);
            } else {
                println!(
                    "error {:.4} ({} test, {} reference, k = {}), {} distances in {:.4} s",
                    report.error_rate, report.n_test, report.n_reference, report.k, report.distance_evals, report.wall_time
                );
            }
            Ok(())
        }
        Command::Bench { plan, out, summary } => {
            let plan = ExperimentPlan::load(&plan)?;
            let mut w = BufWriter::new(File::create(&out)?);
            let mut sink = |row: &protocomp::experiment::ResultRow| -> Result<()> {
                serde_json::to_writer(&mut w, row)?;
                w.write_all(b"\n")?;
                w.flush()?;
                Ok(())
            };
            let results = run_plan(&plan, &mut sink)?;
            let text = results.summary();
            print!("{text}");
            if let Some(p) = summary {
                std::fs::write(p, text)?;
            }
            Ok(())
        }
        Command::Selfcheck => {
            let results = selfcheck::run();
            for r in &results {
                println!("{r}");
            }
            match results.iter().find(|r| !r.passed) {
                Some(r) => Err(Error::CheckFailed(r.name.to_string())),
                None => Ok(()),
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e.class() {
                ErrorClass::Numerical => ExitCode::from(3),
                ErrorClass::Validation | ErrorClass::Io => ExitCode::from(2),
            }
        }
    }
}
