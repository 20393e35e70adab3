//! The ε sweep: every (mechanism, ε, seed) cell privatizes each private
//! record once, evaluates the public model on the result, and records the
//! metric.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use aniso_ldp::io::format_float;
use aniso_ldp::models::{fit_ols, train_classifier};
use aniso_ldp::pipeline::{calibrate, matrix_hash, RECORD_STREAM};
use aniso_ldp::{Calibration, DifferentiableModel, Error, Matrix, Model, Pipeline, PipelineConfig, Result, RngStream};
use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{Check, DataSource, ExperimentConfig, MechanismEntry, Statistic, Task};
use crate::data::{gen_classification, gen_regression, load_csv, Dataset};
use crate::metrics::{accuracy, mean_std, median, rmse};

/// Mechanism id of the unprivatized reference row.
pub const CLEAN_ID: &str = "none";

const TRIAL_STREAM: u64 = 0x74_7269_616c;
const TRAIN_STREAM: u64 = 0x74_7261_696e;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialResult {
    pub mechanism: String,
    pub epsilon: f64,
    pub seed: usize,
    pub metric: String,
    pub value: f64,
    pub clip_fraction: f64,
    /// Not written to the results CSV, which must be reproducible.
    #[serde(skip)]
    pub wall_time: Duration,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellFailure {
    pub mechanism: String,
    pub epsilon: f64,
    pub seed: usize,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub description: String,
    pub passed: bool,
}

/// Private records behind a seal: reading them while sealed is an error,
/// so nothing computed during model fitting or calibration can depend on
/// them.
pub struct PrivateRecords<'a> {
    data: &'a Matrix<f64>,
    sealed: AtomicBool,
}

impl<'a> PrivateRecords<'a> {
    pub fn sealed(data: &'a Matrix<f64>) -> Self {
        Self {
            data,
            sealed: AtomicBool::new(true),
        }
    }

    pub fn unseal(&self) {
        self.sealed.store(false, Ordering::SeqCst);
    }

    pub fn get(&self) -> Result<&'a Matrix<f64>> {
        if self.sealed.load(Ordering::SeqCst) {
            return Err(Error::Input("private records were accessed during calibration".into()));
        }
        Ok(self.data)
    }
}

/// Model and calibrations fitted on the public split.
pub struct Prepared {
    pub dataset: Dataset,
    pub model: Model<f64>,
    pub reshaped: Calibration<f64>,
    pub baseline: Calibration<f64>,
    pub public_hash: String,
    pub model_hash: String,
}

fn stream_id(text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Seed of one cell, stable under reordering of the mechanism list or grid
/// extension at the end.
pub fn trial_seed(master: u64, mechanism_id: &str, epsilon_index: usize, seed_index: usize) -> u64 {
    RngStream::derive(
        master,
        &[TRIAL_STREAM, stream_id(mechanism_id), epsilon_index as u64, seed_index as u64],
    )
    .next_u64()
}

pub fn load_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    let classification = config.task == Task::Classification;
    match &config.data {
        DataSource::Synthetic if classification => {
            let split = gen_classification(&config.classification, config.master_seed)?;
            Ok(Dataset::Classification {
                split,
                classes: config.classification.classes,
            })
        }
        DataSource::Synthetic => Ok(Dataset::Regression(gen_regression(&config.regression, config.master_seed)?)),
        DataSource::Csv { public, private, target } => load_csv(public, private, target, classification),
    }
}

/// Fits the model and both calibrations from public data only.
pub fn prepare(config: &ExperimentConfig, dataset: Dataset) -> Result<Prepared> {
    let private = match &dataset {
        Dataset::Regression(s) => &s.private_x,
        Dataset::Classification { split, .. } => &split.private_x,
    };
    let guard = PrivateRecords::sealed(private);
    let model = match &dataset {
        Dataset::Regression(s) => Model::Linear(fit_ols(&s.public_x, &s.public_y)?),
        Dataset::Classification { split, classes } => {
            let mut train = config.model.train;
            train.seed = RngStream::derive(config.master_seed, &[TRAIN_STREAM, train.seed]).next_u64();
            train_classifier(&split.public_x, &split.public_y, *classes, config.model.architecture, &train)?.0
        }
    };
    let public = dataset.public_x();
    let mut reshaped = calibrate(public, &model, &config.calibration)?;
    let model_hash = model.content_hash();
    reshaped.transform.provenance.model_hash = model_hash.clone();
    let baseline = Calibration::baseline(public, config.calibration.percentile)?;
    guard.unseal();
    guard.get()?;
    Ok(Prepared {
        public_hash: matrix_hash(public),
        model_hash,
        model,
        reshaped,
        baseline,
        dataset,
    })
}

impl Prepared {
    pub fn pipeline(&self, entry: &MechanismEntry, epsilon: f64) -> Result<Pipeline<f64>> {
        let mut cfg = PipelineConfig::new(entry.spec()?, epsilon);
        cfg.clip = entry.clip;
        cfg.bound_norm = entry.bound_norm;
        let cal = if entry.reshape { &self.reshaped } else { &self.baseline };
        Pipeline::new(cal, &cfg)
    }

    fn private(&self) -> &Matrix<f64> {
        match &self.dataset {
            Dataset::Regression(s) => &s.private_x,
            Dataset::Classification { split, .. } => &split.private_x,
        }
    }

    pub fn metric_name(&self) -> &'static str {
        match self.dataset {
            Dataset::Regression(_) => "rmse",
            Dataset::Classification { .. } => "accuracy",
        }
    }

    /// The task metric of the public model on `records` (same order as the
    /// private split).
    pub fn evaluate(&self, records: &Matrix<f64>) -> Result<f64> {
        match &self.dataset {
            Dataset::Regression(s) => {
                let pred = (0..records.rows())
                    .map(|i| Ok(self.model.forward(records.row(i))?[0]))
                    .collect::<Result<Vec<f64>>>()?;
                rmse(&pred, &s.private_y)
            }
            Dataset::Classification { split, .. } => {
                let pred = (0..records.rows())
                    .map(|i| self.model.predict_class(records.row(i)))
                    .collect::<Result<Vec<usize>>>()?;
                accuracy(&pred, &split.private_y)
            }
        }
    }
}

/// Output of one cell, before it is labelled.
struct CellOutput {
    metric: f64,
    clip_fraction: f64,
    mean_error: Option<f64>,
}

fn run_cell(prepared: &Prepared, pipeline: &Pipeline<f64>, seed: u64, mean_error: bool) -> Result<CellOutput> {
    let records = prepared.private();
    let n = records.rows();
    let mut uses = vec![0u32; n];
    let mut rows = Vec::with_capacity(n);
    let mut intermediate = Vec::with_capacity(if mean_error { n } else { 0 });
    let mut clipped = 0usize;
    for i in 0..n {
        let mut rng = RngStream::derive(seed, &[RECORD_STREAM, i as u64]);
        uses[i] += 1;
        let (y, was_clipped) = pipeline.randomize_intermediate_flagged(records.row(i), &mut rng)?;
        clipped += usize::from(was_clipped);
        rows.push(pipeline.postprocess(&y)?);
        if mean_error {
            intermediate.push(y);
        }
    }
    if let Some(i) = uses.iter().position(|&u| u != 1) {
        return Err(Error::Input(format!("private record {i} was randomized {} times", uses[i])));
    }
    let privatized = Matrix::from_rows(&rows)?;
    let mean_error = if mean_error {
        let estimate = pipeline.aggregate_mean(&intermediate)?;
        let truth: Vec<f64> = (0..records.cols())
            .map(|j| (0..n).map(|i| records[(i, j)]).sum::<f64>() / n as f64)
            .collect();
        Some(estimate.iter().zip(&truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
    } else {
        None
    };
    Ok(CellOutput {
        metric: prepared.evaluate(&privatized)?,
        clip_fraction: clipped as f64 / n as f64,
        mean_error,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepReport {
    pub config: ExperimentConfig,
    pub metric: String,
    pub results: Vec<TrialResult>,
    pub failures: Vec<CellFailure>,
    pub threads: usize,
    pub public_hash: String,
    pub model_hash: String,
    pub rank: usize,
    pub spectrum: Vec<f64>,
    pub calibration_warnings: Vec<String>,
}

/// Loads data, prepares, and runs every cell on a pool of
/// [`ExperimentConfig::effective_threads`] workers.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepReport> {
    config.validate()?;
    let threads = config.effective_threads();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Parameter(format!("cannot start {threads} workers: {e}")))?;
    pool.install(|| {
        let prepared = prepare(config, load_dataset(config)?)?;
        let mut report = run_prepared(config, &prepared);
        report.threads = threads;
        Ok(report)
    })
}

/// Runs every cell against an existing preparation on the current pool.
pub fn run_prepared(config: &ExperimentConfig, prepared: &Prepared) -> SweepReport {
    let metric = prepared.metric_name().to_string();
    let clean = prepared.evaluate(prepared.private());

    // pipelines depend on (mechanism, ε) only
    let pipelines: Vec<Vec<Result<Pipeline<f64>>>> = config
        .mechanisms
        .iter()
        .map(|entry| config.epsilons.iter().map(|&eps| prepared.pipeline(entry, eps)).collect())
        .collect();

    let cells: Vec<(usize, usize, usize)> = (0..config.mechanisms.len())
        .flat_map(|k| (0..config.epsilons.len()).flat_map(move |e| (0..config.seeds).map(move |s| (k, e, s))))
        .collect();
    let outputs: Vec<(Result<CellOutput>, Duration)> = cells
        .par_iter()
        .map(|&(k, e, s)| {
            let start = Instant::now();
            let id = config.mechanisms[k].id();
            let out = match &pipelines[k][e] {
                Ok(p) => run_cell(prepared, p, trial_seed(config.master_seed, &id, e, s), config.report_mean_error),
                Err(err) => Err(Error::Calibration(err.to_string())),
            };
            (out, start.elapsed())
        })
        .collect();

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for &eps in &config.epsilons {
        for s in 0..config.seeds {
            match &clean {
                Ok(v) => results.push(TrialResult {
                    mechanism: CLEAN_ID.into(),
                    epsilon: eps,
                    seed: s,
                    metric: metric.clone(),
                    value: *v,
                    clip_fraction: 0.0,
                    wall_time: Duration::ZERO,
                }),
                Err(err) => failures.push(CellFailure {
                    mechanism: CLEAN_ID.into(),
                    epsilon: eps,
                    seed: s,
                    error: err.to_string(),
                }),
            }
        }
    }
    for (&(k, e, s), (out, wall)) in cells.iter().zip(outputs) {
        let mechanism = config.mechanisms[k].id();
        let epsilon = config.epsilons[e];
        match out {
            Ok(out) if out.metric.is_finite() => {
                results.push(TrialResult {
                    mechanism: mechanism.clone(),
                    epsilon,
                    seed: s,
                    metric: metric.clone(),
                    value: out.metric,
                    clip_fraction: out.clip_fraction,
                    wall_time: wall,
                });
                if let Some(v) = out.mean_error {
                    results.push(TrialResult {
                        mechanism,
                        epsilon,
                        seed: s,
                        metric: "mean_error".into(),
                        value: v,
                        clip_fraction: out.clip_fraction,
                        wall_time: wall,
                    });
                }
            }
            Ok(out) => failures.push(CellFailure {
                mechanism,
                epsilon,
                seed: s,
                error: format!("non-finite {metric} {}", out.metric),
            }),
            Err(err) => failures.push(CellFailure {
                mechanism,
                epsilon,
                seed: s,
                error: err.to_string(),
            }),
        }
    }
    for f in &failures {
        log::error!("cell {} ε={} seed={} failed: {}", f.mechanism, f.epsilon, f.seed, f.error);
    }
    SweepReport {
        config: config.clone(),
        metric,
        results,
        failures,
        threads: rayon::current_num_threads(),
        public_hash: prepared.public_hash.clone(),
        model_hash: prepared.model_hash.clone(),
        rank: prepared.reshaped.rank,
        spectrum: prepared.reshaped.spectrum.clone(),
        calibration_warnings: prepared.reshaped.warnings.clone(),
    }
}

impl SweepReport {
    pub fn higher_is_better(&self) -> bool {
        self.metric == "accuracy"
    }

    /// Metric values of one cell across seeds, in seed order.
    pub fn values(&self, mechanism: &str, epsilon: f64, metric: &str) -> Vec<f64> {
        self.results
            .iter()
            .filter(|r| r.mechanism == mechanism && r.epsilon == epsilon && r.metric == metric)
            .map(|r| r.value)
            .collect()
    }

    pub fn statistic(&self, mechanism: &str, epsilon: f64, stat: Statistic) -> Option<f64> {
        let v = self.values(mechanism, epsilon, &self.metric);
        if v.is_empty() {
            return None;
        }
        Some(match stat {
            Statistic::Mean => mean_std(&v).0,
            Statistic::Median => median(&v),
        })
    }

    fn row_ids(&self) -> Vec<String> {
        std::iter::once(CLEAN_ID.to_string())
            .chain(self.config.mechanisms.iter().map(MechanismEntry::id))
            .collect()
    }

    /// One row per trial; failed cells carry an empty value and the error.
    pub fn results_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let row = |w: &mut csv::Writer<Vec<u8>>, fields: [String; 7]| w.write_record(fields).expect("in-memory write");
        row(&mut w, ["mechanism", "epsilon", "seed", "metric", "value", "clip_fraction", "status"].map(String::from));
        for r in &self.results {
            row(
                &mut w,
                [
                    r.mechanism.clone(),
                    format_float(r.epsilon),
                    r.seed.to_string(),
                    r.metric.clone(),
                    format_float(r.value),
                    format_float(r.clip_fraction),
                    "ok".into(),
                ],
            );
        }
        for f in &self.failures {
            row(
                &mut w,
                [
                    f.mechanism.clone(),
                    format_float(f.epsilon),
                    f.seed.to_string(),
                    self.metric.clone(),
                    String::new(),
                    String::new(),
                    format!("error: {}", f.error),
                ],
            );
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    /// Aligned `mean (std)` table, one row per mechanism and one column per ε.
    pub fn summary_table(&self, metric: &str) -> String {
        let mut header = vec![format!("{metric}")];
        header.extend(self.config.epsilons.iter().map(|e| format!("eps={e}")));
        let mut rows = vec![header];
        for id in self.row_ids() {
            let label = if id == CLEAN_ID { "no randomization".to_string() } else { id.clone() };
            let mut row = vec![label];
            for &eps in &self.config.epsilons {
                let v = self.values(&id, eps, metric);
                let failed = self.failures.iter().any(|f| f.mechanism == id && f.epsilon == eps);
                row.push(if v.is_empty() {
                    if failed { "failed".into() } else { "-".into() }
                } else {
                    let (m, s) = mean_std(&v);
                    format!("{m:.4} ({s:.4}){}", if failed { "*" } else { "" })
                });
            }
            if row[1..].iter().all(|c| c == "-") {
                continue;
            }
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|j| rows.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, r) in rows.iter().enumerate() {
            let cells: Vec<String> = r
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(j, (c, &w))| if j == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            writeln!(out, "{}", cells.join("  ").trim_end()).unwrap();
            if i == 0 {
                writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1))).unwrap();
            }
        }
        out
    }

    pub fn evaluate_checks(&self) -> Vec<CheckOutcome> {
        let higher = self.higher_is_better();
        let fmt_stat = |s: Statistic| match s {
            Statistic::Mean => "mean",
            Statistic::Median => "median",
        };
        let mut out = Vec::new();
        for check in &self.config.checks {
            match check {
                Check::Monotone { tolerance } => {
                    for id in self.config.mechanisms.iter().map(MechanismEntry::id) {
                        let means: Vec<Option<f64>> = self
                            .config
                            .epsilons
                            .iter()
                            .map(|&e| self.statistic(&id, e, Statistic::Mean))
                            .collect();
                        let ok = means.iter().all(Option::is_some)
                            && means.windows(2).all(|w| {
                                let (a, b) = (w[0].unwrap(), w[1].unwrap());
                                if higher {
                                    b >= a - tolerance * a.abs()
                                } else {
                                    b <= a + tolerance * a.abs()
                                }
                            });
                        let shown: Vec<String> =
                            means.iter().map(|m| m.map_or("failed".into(), |v| format!("{v:.4}"))).collect();
                        out.push(CheckOutcome {
                            description: format!(
                                "{id}: mean {} {} in ε (tolerance {tolerance}): [{}]",
                                self.metric,
                                if higher { "non-decreasing" } else { "non-increasing" },
                                shown.join(", ")
                            ),
                            passed: ok,
                        });
                    }
                }
                Check::RatioAtMost { better, worse, epsilon, statistic, ratio } => {
                    let (a, b) = (self.statistic(better, *epsilon, *statistic), self.statistic(worse, *epsilon, *statistic));
                    let passed = matches!((a, b), (Some(a), Some(b)) if a <= ratio * b);
                    out.push(CheckOutcome {
                        description: format!(
                            "{} {} at ε={epsilon}: {better} {} ≤ {ratio} × {worse} {}",
                            fmt_stat(*statistic),
                            self.metric,
                            a.map_or("failed".into(), |v| format!("{v:.4}")),
                            b.map_or("failed".into(), |v| format!("{v:.4}")),
                        ),
                        passed,
                    });
                }
                Check::GainAtLeast { better, worse, epsilon, statistic, gain } => {
                    let (a, b) = (self.statistic(better, *epsilon, *statistic), self.statistic(worse, *epsilon, *statistic));
                    let passed = matches!((a, b), (Some(a), Some(b)) if a >= b + gain);
                    out.push(CheckOutcome {
                        description: format!(
                            "{} {} at ε={epsilon}: {better} {} ≥ {worse} {} + {gain}",
                            fmt_stat(*statistic),
                            self.metric,
                            a.map_or("failed".into(), |v| format!("{v:.4}")),
                            b.map_or("failed".into(), |v| format!("{v:.4}")),
                        ),
                        passed,
                    });
                }
            }
        }
        out
    }

    /// No failed cells and every check holds.
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.evaluate_checks().iter().all(|c| c.passed)
    }
}
