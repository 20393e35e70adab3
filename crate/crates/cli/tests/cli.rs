use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_aniso-ldp"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Two-feature records with an extra `id` column, correlated so the
/// summation direction carries most of the spread.
fn write_points(path: &Path, n: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = String::from("a,b,id\n");
    for i in 0..n {
        let t: f64 = rng.random_range(-1.0..1.0);
        let e: f64 = rng.random_range(-0.2..0.2);
        s.push_str(&format!("{},{},{i}\n", t + e, t - e));
    }
    fs::write(path, s).unwrap();
}

/// The model `y = z₁ + z₂`.
fn write_sum_model(path: &Path) {
    let doc = serde_json::json!({
        "kind": "linear", "input_dim": 2, "output_dim": 1,
        "layers": [{ "rows": 1, "cols": 2, "weights": [1.0, 1.0], "bias": [0.0] }],
    });
    fs::write(path, doc.to_string()).unwrap();
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        write_points(&dir.path().join("public.csv"), 800, 1);
        write_points(&dir.path().join("private.csv"), 300, 2);
        write_sum_model(&dir.path().join("model.json"));
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn calibrate(&self, extra: &[&str]) -> Output {
        let (model, public, out) = (self.path("model.json"), self.path("public.csv"), self.path("cal.json"));
        let mut args = vec!["calibrate", "--model", p(&model), "--public", p(&public), "--exclude", "id", "--out", p(&out)];
        args.extend_from_slice(extra);
        run(&args)
    }

    fn randomize(&self, out: &str, extra: &[&str]) -> Output {
        let (cal, input, out) = (self.path("cal.json"), self.path("private.csv"), self.path(out));
        let mut args = vec!["randomize", "--calibration", p(&cal), "--input", p(&input), "--exclude", "id", "--out", p(&out)];
        args.extend_from_slice(extra);
        run(&args)
    }
}

#[test]
fn calibrate_writes_transform_and_report() {
    let fx = Fixture::new();
    let o = fx.calibrate(&["--rank", "fixed:1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cal = read_json(&fx.path("cal.json"));
    assert_eq!(cal["rank"], 1);
    let s: Vec<f64> = serde_json::from_value(cal["singular_values"].clone()).unwrap();
    // C = 11ᵀ has a single singular value 2, so s₁ = √2 and the null
    // direction sits at the floor.
    assert!((s[0] - 2f64.sqrt()).abs() < 1e-12);
    assert!((s[1] - 1e-3 * 2f64.sqrt()).abs() < 1e-15);
    let meta = read_json(&fx.path("cal.json.meta.json"));
    assert_eq!(meta["features"], serde_json::json!(["a", "b"]));
    assert_eq!(meta["public_records"], 800);
    assert!(meta["report"]["coverage"]["l2"].as_f64().unwrap() >= 0.89);
    assert!(!fx.path("cal.json.partial").exists());
}

#[test]
fn missing_input_is_an_input_error_with_no_output() {
    let fx = Fixture::new();
    fs::remove_file(fx.path("public.csv")).unwrap();
    let o = fx.calibrate(&[]);
    assert_eq!(code(&o), 2);
    assert!(!fx.path("cal.json").exists());
    assert!(!fx.path("cal.json.partial").exists());
}

#[test]
fn constant_public_data_is_degenerate_but_still_written() {
    let fx = Fixture::new();
    let rows: String = (0..600).map(|i| format!("0.5,0.5,{i}\n")).collect();
    fs::write(fx.path("public.csv"), format!("a,b,id\n{rows}")).unwrap();
    let o = fx.calibrate(&[]);
    assert_eq!(code(&o), 3);
    assert_eq!(read_json(&fx.path("cal.json"))["degenerate"], true);
}

#[test]
fn dimension_mismatch_is_an_input_error() {
    let fx = Fixture::new();
    // Without --exclude the id column becomes a third feature.
    let (model, public, out) = (fx.path("model.json"), fx.path("public.csv"), fx.path("cal.json"));
    let o = run(&["calibrate", "--model", p(&model), "--public", p(&public), "--out", p(&out)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("dimension mismatch"));
}

#[test]
fn unknown_flags_are_usage_errors() {
    assert_eq!(code(&run(&["calibrate", "--bogus"])), 2);
    assert_eq!(code(&run(&["frobnicate"])), 2);
}

#[test]
fn randomize_is_reproducible_and_keeps_the_schema() {
    let fx = Fixture::new();
    assert_eq!(code(&fx.calibrate(&[])), 0);
    for out in ["r1.csv", "r2.csv"] {
        assert_eq!(code(&fx.randomize(out, &["--epsilon", "1", "--seed", "9"])), 0);
    }
    assert_eq!(code(&fx.randomize("r3.csv", &["--epsilon", "1", "--seed", "10"])), 0);
    let (r1, r2, r3) = (
        fs::read(fx.path("r1.csv")).unwrap(),
        fs::read(fx.path("r2.csv")).unwrap(),
        fs::read(fx.path("r3.csv")).unwrap(),
    );
    assert_eq!(r1, r2);
    assert_ne!(r1, r3);

    let text = String::from_utf8(r1).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("a,b,id"));
    let body: Vec<&str> = lines.collect();
    assert_eq!(body.len(), 300);
    // The passthrough column is copied as is.
    assert!(body.iter().enumerate().all(|(i, l)| l.split(',').nth(2).unwrap().parse::<f64>().unwrap() == i as f64));
    let meta = read_json(&fx.path("r1.csv.meta.json"));
    assert_eq!(meta["records"], 300);
    assert_eq!(meta["passthrough"], serde_json::json!(["id"]));
}

#[test]
fn randomize_with_vanishing_noise_returns_the_records() {
    let fx = Fixture::new();
    assert_eq!(code(&fx.calibrate(&["--percentile", "1"])), 0);
    assert_eq!(code(&fx.randomize("r.csv", &["--epsilon", "1e12"])), 0);
    let read = |name: &str| -> Vec<Vec<f64>> {
        fs::read_to_string(fx.path(name))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect()
    };
    let (a, b) = (read("private.csv"), read("r.csv"));
    // Records beyond the largest public radius are bounded, so compare
    // only those the radius does not touch.
    let close = a.iter().zip(&b).filter(|(x, y)| x.iter().zip(*y).all(|(u, v)| (u - v).abs() < 1e-6)).count();
    assert!(close >= 290, "{close} of 300 records survived");
}

#[test]
fn coordinate_wise_mechanism_runs_without_clipping() {
    let fx = Fixture::new();
    assert_eq!(code(&fx.calibrate(&[])), 0);
    let o = fx.randomize("cw.csv", &["--epsilon", "2", "--mechanism", "cw", "--no-clip"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let meta = read_json(&fx.path("cw.csv.meta.json"));
    assert_eq!(meta["noise"]["clip"], "public-box");
}

#[test]
fn randomize_rejects_a_mismatched_calibration() {
    let fx = Fixture::new();
    assert_eq!(code(&fx.calibrate(&[])), 0);
    let (cal, input, out) = (fx.path("cal.json"), fx.path("private.csv"), fx.path("r.csv"));
    let o = run(&["randomize", "--calibration", p(&cal), "--input", p(&input), "--out", p(&out), "--epsilon", "1"]);
    assert_eq!(code(&o), 2);
    assert!(!out.exists());
}

#[test]
fn audit_passes_and_fails_against_its_slack() {
    let ok = run(&["audit", "--epsilon", "1", "--trials", "400000", "--slack", "0.1"]);
    assert_eq!(code(&ok), 0);
    let doc: Value = serde_json::from_slice(&ok.stdout).unwrap();
    let loss = doc["max_loss"].as_f64().unwrap();
    assert!(loss > 0.8 && loss <= 1.1, "{loss}");
    let strict = run(&["audit", "--epsilon", "1", "--trials", "400000", "--slack=-0.5"]);
    assert_eq!(code(&strict), 1);
}

#[test]
fn check_confirms_a_smooth_model_and_refuses_an_empty_check() {
    let dir = TempDir::new().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut layer = |rows: usize, cols: usize| {
        let w: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..rows).map(|_| rng.random_range(-0.5..0.5)).collect();
        serde_json::json!({ "rows": rows, "cols": cols, "weights": w, "bias": b })
    };
    let layers = vec![layer(6, 3), layer(2, 6)];
    for (name, act) in [("tanh.json", "tanh"), ("relu.json", "relu")] {
        let doc = serde_json::json!({
            "kind": "mlp", "input_dim": 3, "output_dim": 2, "activation": act, "layers": layers,
        });
        fs::write(dir.path().join(name), doc.to_string()).unwrap();
    }
    let tanh = dir.path().join("tanh.json");
    assert_eq!(code(&run(&["check", "--model", p(&tanh)])), 0);
    let relu = dir.path().join("relu.json");
    assert_eq!(code(&run(&["check", "--model", p(&relu), "--tolerance", "1e-6"])), 0);
    assert_eq!(code(&run(&["check", "--model", p(&relu), "--kink-margin", "1e9"])), 1);
}

#[test]
fn synth_fit_calibrate_round_trip() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    assert_eq!(code(&run(&["synth", "--task", "regression", "--n", "1200", "--m", "6", "--out-dir", p(d)])), 0);
    let header = fs::read_to_string(d.join("public.csv")).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "x0,x1,x2,x3,x4,x5,target");
    let (public, model, cal) = (d.join("public.csv"), d.join("model.json"), d.join("cal.json"));
    let fit = run(&["fit", "--public", p(&public), "--target", "target", "--task", "regression", "--arch", "linear", "--out", p(&model)]);
    assert_eq!(code(&fit), 0);
    let o = run(&["calibrate", "--model", p(&model), "--public", p(&public), "--exclude", "target", "--out", p(&cal)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_json(&cal)["rank"], 1);
}

fn write_config(dir: &Path, checks: Value) -> PathBuf {
    let config = serde_json::json!({
        "name": "tiny",
        "task": "regression",
        "data": { "source": "synthetic" },
        "regression": { "n": 1200, "m": 6, "households": 20 },
        "mechanisms": [
            { "mechanism": "laplace", "reshape": false },
            { "mechanism": "laplace", "reshape": true },
        ],
        "epsilons": [1.0, 4.0],
        "seeds": 3,
        "master_seed": 5,
        "checks": checks,
    });
    let path = dir.join("config.json");
    fs::write(&path, config.to_string()).unwrap();
    path
}

#[test]
fn eval_writes_results_and_reports_failed_checks() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), serde_json::json!([{ "check": "monotone" }]));
    let (out, summary) = (dir.path().join("r.csv"), dir.path().join("summary.txt"));
    let o = run(&["eval", p(&config), "--out", p(&out), "--summary", p(&summary)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("mechanism,epsilon,seed,metric,value,clip_fraction,status\n"));
    // Clean rows plus two mechanisms, each at two ε values and three seeds.
    assert_eq!(text.lines().count(), 1 + 3 * 2 * 3);
    assert!(fs::read_to_string(&summary).unwrap().contains("laplace+pa"));
    assert!(read_json(&dir.path().join("r.csv.meta.json"))["model_hash"].is_string());

    // A ratio no sweep can meet.
    let config = write_config(
        dir.path(),
        serde_json::json!([{ "check": "ratio-at-most", "better": "laplace+pa", "worse": "laplace",
                             "epsilon": 1.0, "statistic": "median", "ratio": 1e-9 }]),
    );
    let o = run(&["eval", p(&config), "--out", p(&out)]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("[FAIL]"));
}

#[test]
fn eval_rejects_unknown_config_fields() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{"name":"x","task":"regression","epsilonz":[1.0]}"#).unwrap();
    let out = dir.path().join("r.csv");
    assert_eq!(code(&run(&["eval", p(&path), "--out", p(&out)])), 2);
}
