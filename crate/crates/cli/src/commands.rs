use std::path::{Path, PathBuf};

use aniso_ldp::io::Table;
use aniso_ldp::mechanisms::{audit, AuditConfig};
use aniso_ldp::models::{check_jacobian, fit_ols, train_classifier, Architecture, TrainConfig};
use aniso_ldp::pipeline::{calibrate, matrix_hash, CalibrationOptions, ClipMode, MechanismSpec};
use aniso_ldp::subspace::ReshapeTransform;
use aniso_ldp::{Calibration, Matrix, Model, Norm, Pipeline, PipelineConfig, RngStream};
use aniso_ldp_harness::config::DataSource;
use aniso_ldp_harness::data::{gen_classification, gen_regression, ClassificationSpec, RegressionSpec, Split};
use aniso_ldp_harness::{run_sweep, ExperimentConfig};
use rand::Rng;
use serde::Serialize;
use serde_json::json;

use crate::args::*;
use crate::{Failure, Outcome};

pub fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Randomize(a) => cmd_randomize(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Audit(a) => cmd_audit(a),
        Command::Check(a) => cmd_check(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn input(msg: impl Into<String>) -> Failure {
    Failure::Input(msg.into())
}

/// Writes through a temporary sibling so a failed run leaves no partial file.
fn write_atomic(path: &Path, contents: &[u8]) -> Outcome {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, contents).map_err(|e| input(format!("cannot write {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path).map_err(|e| input(format!("cannot write {}: {e}", path.display())))
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    s
}

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| input(format!("cannot read {}: {e}", path.display())))
}

fn read_model(path: &Path) -> Result<Model<f64>, Failure> {
    Model::from_json(&read_text(path)?).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn read_features(path: &Path, exclude: &[String]) -> Result<(Table, Table), Failure> {
    let table = Table::read(path)?;
    let names: Vec<&str> = exclude.iter().map(String::as_str).collect();
    let features = table.without(&names)?;
    Ok((table, features))
}

fn cmd_calibrate(a: CalibrateArgs) -> Outcome {
    let model = read_model(&a.model)?;
    let mut options = match &a.options {
        Some(p) => serde_json::from_str::<CalibrationOptions>(&read_text(p)?)
            .map_err(|e| input(format!("{}: {e}", p.display())))?,
        None => CalibrationOptions::default(),
    };
    if let Some(p) = a.percentile {
        options.percentile = p;
    }
    if let Some(r) = a.rank {
        options.rank_rule = Some(r);
    }
    if let Some(s) = a.samples {
        options.jacobian_samples = s;
    }
    if let Some(n) = a.null_mode {
        options.null_mode = n;
    }
    if let Some(j) = a.jacobian_mode {
        options.jacobian_mode = j.into();
    }
    let (_, public) = read_features(&a.public, &a.exclude)?;
    let mut cal = calibrate(&public.data, &model, &options)?;
    let model_hash = model.content_hash();
    cal.transform.provenance.model_hash = model_hash.clone();

    let pulled: Vec<Vec<f64>> = (0..public.data.rows()).map(|i| cal.transform.pull_back(public.data.row(i))).collect();
    let coverage = |norm: Norm| {
        let rho = cal.radii.get(norm);
        pulled.iter().filter(|v| norm.of(v) <= rho).count() as f64 / pulled.len() as f64
    };
    let report = json!({
        "rank": cal.rank,
        "spectrum": cal.spectrum,
        "singular_values": cal.singular_values,
        "lambda": cal.transform.lambda(),
        "rho": cal.radii,
        "coverage": { "l1": coverage(Norm::L1), "l2": coverage(Norm::L2), "linf": coverage(Norm::Linf) },
        "warnings": cal.warnings,
        "degenerate": cal.degenerate,
    });
    let meta = json!({
        "command": "calibrate",
        "model": a.model,
        "public": a.public,
        "features": public.header,
        "options": options,
        "public_records": public.data.rows(),
        "public_hash": cal.transform.provenance.public_hash,
        "model_hash": model_hash,
        "report": report,
    });
    write_atomic(&a.out, cal.to_json().as_bytes())?;
    write_atomic(&sidecar(&a.out), to_json(&meta).as_bytes())?;
    print!("{}", to_json(&report));
    if cal.degenerate {
        return Err(Failure::Degenerate(cal.warnings.join("; ")));
    }
    Ok(())
}

fn read_calibration(path: &Path) -> Result<Calibration<f64>, Failure> {
    Calibration::from_json(&read_text(path)?).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn cmd_randomize(a: RandomizeArgs) -> Outcome {
    let cal = read_calibration(&a.calibration)?;
    let mechanism: MechanismSpec = a.mechanism.parse()?;
    let mut cfg = PipelineConfig::new(mechanism, a.epsilon);
    if let MechanismSpec::Gaussian { delta } = &mut cfg.mechanism {
        if !a.mechanism.contains(':') {
            *delta = a.delta;
        }
    }
    cfg.bound_norm = a.norm.map(Into::into);
    cfg.clip = if a.no_clip { Some(ClipMode::PublicBox) } else { a.clip.map(Into::into) };
    cfg.convention = a.convention.into();
    let pipeline = Pipeline::new(&cal, &cfg)?;

    let (table, features) = read_features(&a.input, &a.exclude)?;
    if features.data.cols() != cal.dim() {
        return Err(input(format!(
            "{} has {} feature columns, the calibration expects {}",
            a.input.display(),
            features.data.cols(),
            cal.dim()
        )));
    }
    let private = pipeline.randomize_batch(&features.data, a.seed)?;
    // put privatized features back in their original columns
    let mut out = table.data.clone();
    for (k, name) in features.header.iter().enumerate() {
        let j = table.column_index(name)?;
        for i in 0..out.rows() {
            out[(i, j)] = private[(i, k)];
        }
    }
    let mut buf = Vec::new();
    Table::new(table.header.clone(), out)?.write_to(&mut buf)?;
    let meta = json!({
        "command": "randomize",
        "calibration": a.calibration,
        "input": a.input,
        "records": table.data.rows(),
        "passthrough": a.exclude,
        "config": cfg,
        "seed": a.seed,
        "noise": pipeline.summary(),
        "provenance": cal.transform.provenance,
    });
    write_atomic(&a.out, &buf)?;
    write_atomic(&sidecar(&a.out), to_json(&meta).as_bytes())
}

fn cmd_eval(a: EvalArgs) -> Outcome {
    let mut cfg: ExperimentConfig = serde_json::from_str(&read_text(&a.config)?)
        .map_err(|e| input(format!("{}: {e}", a.config.display())))?;
    if let Some(t) = a.threads {
        cfg.threads = Some(t);
    }
    if let Some(s) = a.master_seed {
        cfg.master_seed = s;
    }
    if let Some(s) = a.seeds {
        cfg.seeds = s;
    }
    // CSV paths in the config are relative to the config file
    if let DataSource::Csv { public, private, .. } = &mut cfg.data {
        let base = a.config.parent().unwrap_or(Path::new("."));
        for p in [public, private] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
    cfg.validate()?;
    let report = run_sweep(&cfg)?;
    let checks = report.evaluate_checks();
    let mut summary = report.summary_table(&report.metric);
    if cfg.report_mean_error {
        summary.push('\n');
        summary.push_str(&report.summary_table("mean_error"));
    }
    let meta = json!({
        "command": "eval",
        "config": cfg,
        "public_hash": report.public_hash,
        "model_hash": report.model_hash,
        "rank": report.rank,
        "spectrum": report.spectrum,
        "calibration_warnings": report.calibration_warnings,
        "failures": report.failures,
        "checks": checks,
    });
    write_atomic(&a.out, report.results_csv().as_bytes())?;
    write_atomic(&sidecar(&a.out), to_json(&meta).as_bytes())?;
    match &a.summary {
        Some(p) => write_atomic(p, summary.as_bytes())?,
        None => print!("{summary}"),
    }
    for c in &checks {
        println!("[{}] {}", if c.passed { "pass" } else { "FAIL" }, c.description);
    }
    if report.passed() {
        return Ok(());
    }
    let mut lines: Vec<String> = report
        .failures
        .iter()
        .map(|f| format!("cell {} eps={} seed={}: {}", f.mechanism, f.epsilon, f.seed, f.error))
        .collect();
    lines.extend(checks.iter().filter(|c| !c.passed).map(|c| format!("check failed: {}", c.description)));
    Err(Failure::Assertion(lines.join("\n")))
}

fn cmd_audit(a: AuditArgs) -> Outcome {
    let mechanism: MechanismSpec = a.mechanism.parse()?;
    let mut cfg = PipelineConfig::new(mechanism, a.epsilon);
    if let MechanismSpec::Gaussian { delta } = &mut cfg.mechanism {
        if !a.mechanism.contains(':') {
            *delta = a.delta;
        }
    }
    let (cal, target) = match &a.calibration {
        Some(p) => (read_calibration(p)?, "pipeline"),
        None => {
            if a.dim == 0 {
                return Err(input("--dim must be positive"));
            }
            (Calibration::fixed(ReshapeTransform::identity(vec![0.0; a.dim]), 1.0)?, "mechanism")
        }
    };
    let pipeline = Pipeline::new(&cal, &cfg)?;
    let m = cal.dim();
    let z = match a.z {
        Some(z) => z,
        None => {
            let mut e = vec![0.0; m];
            e[0] = pipeline.rho();
            pipeline.postprocess(&e)?
        }
    };
    let z_prime = match a.z_prime {
        Some(z) => z,
        None => {
            let y = pipeline.transform().pull_back(&z);
            pipeline.postprocess(&y.iter().map(|v| -v).collect::<Vec<_>>())?
        }
    };
    if z.len() != m || z_prime.len() != m {
        return Err(input(format!("audit inputs must have {m} values")));
    }
    let config = AuditConfig {
        trials: a.trials,
        bins: a.bins,
        pairing: a.pairing.into(),
        seed: a.seed,
        direction: None,
    };
    let report = audit(|x, rng| pipeline.randomize(x, rng).expect("audit input was validated"), &z, &z_prime, &config)?;
    let limit = a.epsilon + a.slack;
    let passed = report.max_loss <= limit;
    let doc = json!({
        "command": "audit",
        "target": target,
        "config": cfg,
        "z": z,
        "z_prime": z_prime,
        "noise": pipeline.summary(),
        "max_loss": report.max_loss,
        "worst_bin": report.worst_bin,
        "trials": report.trials,
        "bins": report.bins,
        "pairing": config.pairing,
        "seed": a.seed,
        "limit": limit,
        "passed": passed,
    });
    let text = to_json(&doc);
    if let Some(p) = &a.out {
        write_atomic(p, text.as_bytes())?;
    }
    print!("{text}");
    if passed {
        Ok(())
    } else {
        Err(Failure::Assertion(format!("empirical loss {} exceeds {limit}", report.max_loss)))
    }
}

fn cmd_check(a: CheckArgs) -> Outcome {
    let model = read_model(&a.model)?;
    let m = aniso_ldp::DifferentiableModel::input_dim(&model);
    let points = match &a.points {
        Some(p) => {
            let (_, f) = read_features(p, &a.exclude)?;
            if f.data.cols() != m {
                return Err(input(format!("{} has {} columns, the model expects {m}", p.display(), f.data.cols())));
            }
            f.data
        }
        None => {
            let mut rng = RngStream::new(a.seed);
            Matrix::from_fn(a.random, m, |_, _| rng.random_range(-a.scale..=a.scale))
        }
    };
    let report = check_jacobian(&model, &points, a.step, a.kink_margin)?;
    let checked = report.points - report.skipped;
    let passed = checked > 0 && report.max_relative_error <= a.tolerance;
    let doc = json!({
        "command": "check",
        "model": a.model,
        "model_hash": model.content_hash(),
        "report": report,
        "tolerance": a.tolerance,
        "passed": passed,
    });
    let text = to_json(&doc);
    if let Some(p) = &a.out {
        write_atomic(p, text.as_bytes())?;
    }
    print!("{text}");
    if checked == 0 {
        Err(Failure::Assertion("every point was within the kink margin; nothing was checked".into()))
    } else if passed {
        Ok(())
    } else {
        Err(Failure::Assertion(format!(
            "max relative Jacobian error {} exceeds {}",
            report.max_relative_error, a.tolerance
        )))
    }
}

fn cmd_fit(a: FitArgs) -> Outcome {
    let table = Table::read(&a.public)?;
    let y = table.column(&a.target)?;
    let mut drop: Vec<&str> = a.exclude.iter().map(String::as_str).collect();
    drop.push(&a.target);
    let x = table.without(&drop)?;
    let (model, extra) = match a.task {
        TaskArg::Regression => (Model::Linear(fit_ols(&x.data, &y)?), json!(null)),
        TaskArg::Classification => {
            let labels: Vec<usize> = y
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    if v >= 0.0 && v.fract() == 0.0 {
                        Ok(v as usize)
                    } else {
                        Err(input(format!("record {}: label {v} is not a class index", i + 1)))
                    }
                })
                .collect::<Result<_, _>>()?;
            let classes = labels.iter().max().map_or(0, |c| c + 1);
            let arch = match a.arch {
                ArchArg::Linear => Architecture::Linear,
                ArchArg::Mlp => {
                    let [h1, h2] = a.hidden[..] else {
                        return Err(input("--hidden takes two widths, e.g. 10,32"));
                    };
                    Architecture::Mlp {
                        hidden: (h1, h2),
                        activation: a.activation.into(),
                    }
                }
            };
            let train = TrainConfig {
                step_size: a.step_size,
                epochs: a.epochs,
                batch_size: a.batch_size,
                seed: a.seed,
            };
            let (model, report) = train_classifier(&x.data, &labels, classes, arch, &train)?;
            (model, json!({ "architecture": arch, "train": train, "final_loss": report.losses.last() }))
        }
    };
    let meta = json!({
        "command": "fit",
        "public": a.public,
        "target": a.target,
        "features": x.header,
        "public_hash": matrix_hash(&x.data),
        "model_hash": model.content_hash(),
        "training": extra,
    });
    write_atomic(&a.out, model.to_json().as_bytes())?;
    write_atomic(&sidecar(&a.out), to_json(&meta).as_bytes())
}

fn write_split(split: &Split<f64>, target: &str, dir: &Path) -> Outcome {
    std::fs::create_dir_all(dir).map_err(|e| input(format!("cannot create {}: {e}", dir.display())))?;
    let m = split.dim();
    let mut header: Vec<String> = (0..m).map(|j| format!("x{j}")).collect();
    header.push(target.into());
    for (name, x, y) in [("public.csv", &split.public_x, &split.public_y), ("private.csv", &split.private_x, &split.private_y)] {
        let data = Matrix::from_fn(x.rows(), m + 1, |i, j| if j < m { x[(i, j)] } else { y[i] });
        let mut buf = Vec::new();
        Table::new(header.clone(), data)?.write_to(&mut buf)?;
        write_atomic(&dir.join(name), &buf)?;
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Outcome {
    match a.task {
        TaskArg::Regression => {
            let spec = RegressionSpec {
                n: a.n,
                m: a.m.unwrap_or(16),
                ..Default::default()
            };
            write_split(&gen_regression(&spec, a.seed)?, "target", &a.out_dir)
        }
        TaskArg::Classification => {
            let spec = ClassificationSpec {
                n: a.n,
                m: a.m.unwrap_or(64),
                classes: a.classes,
                rank: a.rank,
                ..Default::default()
            };
            let s = gen_classification(&spec, a.seed)?;
            let as_f64 = |v: &[usize]| v.iter().map(|&c| c as f64).collect();
            let split = Split {
                public_y: as_f64(&s.public_y),
                private_y: as_f64(&s.private_y),
                public_x: s.public_x,
                private_x: s.private_x,
            };
            write_split(&split, "label", &a.out_dir)
        }
    }
}
