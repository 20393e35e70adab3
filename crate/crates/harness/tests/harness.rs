use aniso_ldp::models::{fit_ols, train_classifier, Activation, Architecture, TrainConfig};
use aniso_ldp::subspace::aggregate_jacobians;
use aniso_ldp::{linalg, DifferentiableModel, Matrix, Model};
use aniso_ldp_harness::config::{Check, DataSource, MechanismEntry, Statistic};
use aniso_ldp_harness::data::{gen_classification, gen_regression, ClassificationSpec, RegressionSpec};
use aniso_ldp_harness::sweep::{prepare, run_prepared, trial_seed, PrivateRecords, CLEAN_ID};
use aniso_ldp_harness::{gen_synthetic_classification, gen_synthetic_regression, rmse, run_sweep, ExperimentConfig, Task};

fn singular_values<M: DifferentiableModel<f64> + Sync>(model: &M, x: &Matrix<f64>) -> Vec<f64> {
    let agg = aggregate_jacobians(model, x).unwrap();
    linalg::sym_eig(&agg.matrix)
        .unwrap()
        .eigenvalues
        .iter()
        .map(|e| e.max(0.0).sqrt())
        .collect()
}

#[test]
fn noiseless_regression_is_realizable() {
    let spec = RegressionSpec { n: 1000, noise_std: 0.0, ..Default::default() };
    let s = gen_regression(&spec, 4).unwrap();
    let model = fit_ols(&s.public_x, &s.public_y).unwrap();
    let pred: Vec<f64> = (0..s.private_x.rows()).map(|i| model.forward(s.private_x.row(i)).unwrap()[0]).collect();
    assert!(rmse(&pred, &s.private_y).unwrap() <= 1e-6);
}

#[test]
fn regression_jacobian_has_one_dominant_direction() {
    let s = gen_synthetic_regression(1000, 16, 8).unwrap();
    let model = fit_ols(&s.public_x, &s.public_y).unwrap();
    let sv = singular_values(&model, &s.public_x);
    assert!(sv[0] >= 10.0 * sv[1], "{sv:?}");
}

fn nearest_mean_accuracy(public: &Matrix<f64>, labels: &[usize], classes: usize, test: &Matrix<f64>, truth: &[usize]) -> f64 {
    let m = public.cols();
    let mut means = vec![vec![0.0; m]; classes];
    let mut counts = vec![0.0; classes];
    for (i, &c) in labels.iter().enumerate() {
        means[c].iter_mut().zip(public.row(i)).for_each(|(a, b)| *a += b);
        counts[c] += 1.0;
    }
    for (mean, n) in means.iter_mut().zip(&counts) {
        mean.iter_mut().for_each(|a| *a /= n);
    }
    let hits = (0..test.rows())
        .filter(|&i| {
            let d = |c: usize| means[c].iter().zip(test.row(i)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            let best = (0..classes).min_by(|&a, &b| d(a).total_cmp(&d(b))).unwrap();
            best == truth[i]
        })
        .count();
    hits as f64 / test.rows() as f64
}

#[test]
fn separated_blobs_are_classifiable_without_noise() {
    let s = gen_synthetic_classification(2000, 32, 10, 10, 6).unwrap();
    let oracle = nearest_mean_accuracy(&s.public_x, &s.public_y, 10, &s.private_x, &s.private_y);
    assert!(oracle >= 0.95, "nearest-mean accuracy {oracle}");
    let (model, _) = train_classifier(&s.public_x, &s.public_y, 10, Architecture::Linear, &TrainConfig::default()).unwrap();
    let pred: Vec<usize> = (0..s.private_x.rows()).map(|i| model.predict_class(s.private_x.row(i)).unwrap()).collect();
    let acc = aniso_ldp_harness::accuracy(&pred, &s.private_y).unwrap();
    assert!(acc >= 0.95, "linear classifier accuracy {acc}");
}

#[test]
fn linear_classifier_spectrum_has_a_gap_at_the_discriminative_rank() {
    let spec = ClassificationSpec { n: 4000, m: 16, classes: 10, rank: 4, ..Default::default() };
    let s = gen_classification(&spec, 12).unwrap();
    let (model, _) = train_classifier(&s.public_x, &s.public_y, 10, Architecture::Linear, &TrainConfig::default()).unwrap();
    let sv = singular_values(&model, &s.public_x);
    let gaps: Vec<f64> = sv.windows(2).map(|w| w[0] / w[1].max(1e-300)).collect();
    // the largest gap within the first `classes` values sits right after the signal rank
    let best = (0..9).max_by(|&a, &b| gaps[a].total_cmp(&gaps[b])).unwrap();
    assert_eq!(best + 1, 4, "singular values {sv:?}");
    assert!(gaps[3] > 3.0, "gap {}", gaps[3]);
}

/// Plain full-batch softmax regression, written separately from the
/// library's trainer.
fn independent_softmax_accuracy(x: &Matrix<f64>, labels: &[usize], classes: usize) -> f64 {
    let (n, m) = (x.rows(), x.cols());
    let mut w = vec![vec![0.0; m + 1]; classes];
    for _ in 0..300 {
        let mut grad = vec![vec![0.0; m + 1]; classes];
        for i in 0..n {
            let z = x.row(i);
            let logits: Vec<f64> = w.iter().map(|wc| wc[m] + wc[..m].iter().zip(z).map(|(a, b)| a * b).sum::<f64>()).collect();
            let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - top).exp()).collect();
            let total: f64 = e.iter().sum();
            for c in 0..classes {
                let g = e[c] / total - if labels[i] == c { 1.0 } else { 0.0 };
                grad[c][..m].iter_mut().zip(z).for_each(|(a, b)| *a += g * b);
                grad[c][m] += g;
            }
        }
        for (wc, gc) in w.iter_mut().zip(&grad) {
            wc.iter_mut().zip(gc).for_each(|(a, g)| *a -= 0.5 * g / n as f64);
        }
    }
    let hits = (0..n)
        .filter(|&i| {
            let z = x.row(i);
            let score = |c: usize| w[c][m] + w[c][..m].iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
            (0..classes).max_by(|&a, &b| score(a).total_cmp(&score(b))).unwrap() == labels[i]
        })
        .count();
    hits as f64 / n as f64
}

#[test]
fn mlp_fits_the_ten_blob_set() {
    let s = gen_synthetic_classification(2000, 64, 10, 10, 3).unwrap();
    let oracle = independent_softmax_accuracy(&s.public_x, &s.public_y, 10);
    assert!(oracle >= 0.9, "independent trainer reaches only {oracle}");
    let arch = Architecture::Mlp { hidden: (10, 32), activation: Activation::Relu };
    let (model, _) = train_classifier(&s.public_x, &s.public_y, 10, arch, &TrainConfig::default()).unwrap();
    assert!(matches!(model, Model::Mlp(_)));
    let pred: Vec<usize> = (0..s.public_x.rows()).map(|i| model.predict_class(s.public_x.row(i)).unwrap()).collect();
    let acc = aniso_ldp_harness::accuracy(&pred, &s.public_y).unwrap();
    assert!(acc >= 0.9, "training accuracy {acc}");
}

fn small_regression() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_json(
        r#"{"task": "regression",
            "mechanisms": [{"mechanism": "laplace"}, {"mechanism": "laplace", "reshape": true}],
            "epsilons": [0.5, 1, 2, 5, 10], "seeds": 4, "master_seed": 3,
            "checks": [{"check": "monotone"}]}"#,
    )
    .unwrap();
    cfg.regression.n = 1200;
    cfg.calibration.jacobian_samples = 200;
    cfg
}

#[test]
fn regression_sweep_is_monotone_and_reshaping_helps() {
    let mut cfg = small_regression();
    cfg.checks.push(Check::RatioAtMost {
        better: "laplace+pa".into(),
        worse: "laplace".into(),
        epsilon: 1.0,
        statistic: Statistic::Median,
        ratio: 0.25,
    });
    let report = run_sweep(&cfg).unwrap();
    for c in report.evaluate_checks() {
        assert!(c.passed, "{}", c.description);
    }
    assert!(report.passed());
    assert_eq!(report.rank, 1);
}

#[test]
fn clean_row_ignores_epsilon() {
    let report = run_sweep(&small_regression()).unwrap();
    let first = report.values(CLEAN_ID, 0.5, "rmse");
    assert_eq!(first.len(), 4);
    for &eps in &[1.0, 2.0, 5.0, 10.0] {
        assert_eq!(report.values(CLEAN_ID, eps, "rmse"), first);
    }
    assert!(first.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let mut cfg = small_regression();
    cfg.seeds = 2;
    cfg.threads = Some(1);
    let one = run_sweep(&cfg).unwrap().results_csv();
    cfg.threads = Some(4);
    let four = run_sweep(&cfg).unwrap().results_csv();
    assert_eq!(one, four);
    assert!(one.starts_with("mechanism,epsilon,seed,metric,value,clip_fraction,status\n"));
}

#[test]
fn failed_cells_are_recorded_and_the_sweep_continues() {
    let mut cfg = small_regression();
    cfg.seeds = 2;
    let mut bad = MechanismEntry::new("privunit2", false);
    bad.clip = Some(aniso_ldp::pipeline::ClipMode::PerCoordinate);
    cfg.mechanisms.push(bad);
    let report = run_sweep(&cfg).unwrap();
    assert_eq!(report.failures.len(), 5 * 2);
    assert!(report.failures.iter().all(|f| f.mechanism == "privunit2"));
    assert_eq!(report.values("laplace", 1.0, "rmse").len(), 2);
    assert!(!report.passed());
    assert!(report.results_csv().contains("error: "));
    assert!(report.summary_table("rmse").contains("failed"));
}

#[test]
fn mean_error_shrinks_with_epsilon() {
    let mut cfg = small_regression();
    cfg.report_mean_error = true;
    cfg.seeds = 3;
    let report = run_sweep(&cfg).unwrap();
    let avg = |eps: f64| {
        let v = report.values("laplace+pa", eps, "mean_error");
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(avg(10.0) < avg(0.5));
    assert!(report.summary_table("mean_error").contains("laplace+pa"));
}

#[test]
fn calibration_is_public_only() {
    let cfg = small_regression();
    let data = aniso_ldp_harness::sweep::load_dataset(&cfg).unwrap();
    let public_hash = aniso_ldp::pipeline::matrix_hash(data.public_x());
    let prepared = prepare(&cfg, data).unwrap();
    assert_eq!(prepared.reshaped.transform.provenance.public_hash, public_hash);
    assert_eq!(prepared.public_hash, public_hash);
    assert_eq!(prepared.reshaped.transform.provenance.model_hash, prepared.model.content_hash());
    let report = run_prepared(&cfg, &prepared);
    assert_eq!(report.public_hash, public_hash);

    let private = Matrix::<f64>::zeros(2, 2);
    let guard = PrivateRecords::sealed(&private);
    assert!(guard.get().is_err());
    guard.unseal();
    assert!(guard.get().is_ok());
}

#[test]
fn cell_streams_are_distinct() {
    let a = trial_seed(1, "laplace", 0, 0);
    assert_ne!(a, trial_seed(1, "laplace+pa", 0, 0));
    assert_ne!(a, trial_seed(1, "laplace", 1, 0));
    assert_ne!(a, trial_seed(1, "laplace", 0, 1));
    assert_ne!(a, trial_seed(2, "laplace", 0, 0));
    assert_eq!(a, trial_seed(1, "laplace", 0, 0));
}

#[test]
fn csv_source_runs() {
    let dir = tempfile::tempdir().unwrap();
    let s = gen_synthetic_regression(800, 4, 2).unwrap();
    let write = |name: &str, x: &Matrix<f64>, y: &[f64]| {
        let mut body = String::from("a,b,c,d,target\n");
        for i in 0..x.rows() {
            let r = x.row(i);
            body.push_str(&format!("{},{},{},{},{}\n", r[0], r[1], r[2], r[3], y[i]));
        }
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    };
    let public = write("public.csv", &s.public_x, &s.public_y);
    let private = write("private.csv", &s.private_x, &s.private_y);
    let mut cfg = small_regression();
    cfg.task = Task::Regression;
    cfg.data = DataSource::Csv { public, private, target: "target".into() };
    cfg.seeds = 2;
    let report = run_sweep(&cfg).unwrap();
    assert!(report.failures.is_empty(), "{:?}", report.failures);
    assert_eq!(report.values("laplace", 1.0, "rmse").len(), 2);
}
