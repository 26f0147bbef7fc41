use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn autoscale(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_autoscale"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// A light scenario next to copies of the fixture samples and catalog.
fn small_config(dir: &Path) -> PathBuf {
    for f in ["samples.csv", "catalog.csv"] {
        std::fs::copy(fixtures().join(f), dir.join(f)).unwrap();
    }
    let path = dir.join("small.toml");
    std::fs::write(
        &path,
        r#"
seed = 5

[paths]
samples = "samples.csv"
catalog = "catalog.csv"

[synthetic]
base_level = 40.0
noise_sigma = 3.0
length = 1500
seed = 9
harmonics = [{ period = 120.0, order = 1, a = [0.0, 20.0], b = [0.0] }]

[setup_times_s]
vm = 40.0
cd = 20.0
ml = 30.0

[forecaster]
period = 120.0
order = 2
window = 360
retrain_every = 30
tune_orders = [1, 2, 3, 4, 5]
tune_windows = [240, 300, 360]
tune_validation = 120

[compensator]
training_intervals = 300

[vertical]
enabled = false
"#,
    )
    .unwrap();
    path
}

#[test]
fn simulate_writes_artifacts_listed_in_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let out_dir = dir.path().join("out");
    let out = autoscale(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let manifest = read_json(&out_dir.join("manifest.json"));
    assert_eq!(manifest["command"], "simulate");
    let files = manifest["files"].as_array().unwrap();
    let names: Vec<&str> = files.iter().map(|f| f["path"].as_str().unwrap()).collect();
    for want in ["report.json", "requests.csv", "ticks.csv", "timeseries.svg", "scenario.json"] {
        assert!(names.contains(&want), "missing {want} in {names:?}");
    }
    for f in files {
        let bytes = std::fs::read(out_dir.join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(f["bytes"].as_u64().unwrap() as usize, bytes.len());
        assert_eq!(f["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&bytes)));
    }

    let report = read_json(&out_dir.join("report.json"));
    let compliance = report["summary"]["slo_compliance"].as_f64().unwrap();
    assert!(compliance > 0.95, "compliance {compliance}");
    assert!(std::fs::read_to_string(out_dir.join("timeseries.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn same_seed_gives_identical_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = autoscale(&[
            "simulate",
            "--config",
            config.to_str().unwrap(),
            "--seed",
            "17",
            "--out-dir",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(out_dir.join("manifest.json")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn negative_latency_sample_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let samples = dir.path().join("bad.csv");
    std::fs::write(&samples, "cores,latency_seconds\n2,0.4\n2,-0.2\n2,0.5\n").unwrap();
    let out = autoscale(&[
        "profile",
        "--samples",
        samples.to_str().unwrap(),
        "--out",
        dir.path().join("p.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 3"), "{stderr}");
}

#[test]
fn unreachable_slo_exits_3_with_per_flavor_reasons() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let out = autoscale(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--oracle-forecast",
        "--set",
        "slo.lambda_s=0.1",
        "--out-dir",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3);
    let stderr = String::from_utf8_lossy(&out.stderr);
    for flavor in ["small", "medium", "large"] {
        assert!(stderr.contains(flavor), "{stderr}");
    }
}

#[test]
fn compliance_below_requirement_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let out = autoscale(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--oracle-forecast",
        // Core release costs a few SLO misses, so full compliance is out of reach.
        "--set",
        "vertical.enabled=true",
        "--require-compliance",
        "1.0",
        "--out-dir",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    // Artifacts are still written.
    assert!(dir.path().join("out/manifest.json").is_file());
}

#[test]
fn higher_percentile_raises_every_t_p() {
    let dir = tempfile::tempdir().unwrap();
    let samples = fixtures().join("samples.csv");
    let profile_at = |p: &str| {
        let path = dir.path().join(format!("p{p}.json"));
        let out = autoscale(&[
            "profile",
            "--samples",
            samples.to_str().unwrap(),
            "--percentile",
            p,
            "--out",
            path.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        read_json(&path)
    };
    let p95 = profile_at("0.95");
    let p99 = profile_at("0.99");
    let cores = p95["per_core"].as_array().unwrap();
    assert_eq!(cores.len(), 3);
    for (i, c) in cores.iter().enumerate() {
        let hi = &p99["per_core"][i];
        assert_eq!(c["cores"], hi["cores"]);
        let (lo, hi) = (c["t_p_s"].as_f64().unwrap(), hi["t_p_s"].as_f64().unwrap());
        assert!(hi > lo, "{} cores: {hi} <= {lo}", c["cores"]);
    }
}

#[test]
fn tune_searches_the_whole_grid() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let out_dir = dir.path().join("out");
    let out = autoscale(&[
        "forecast",
        "--config",
        config.to_str().unwrap(),
        "--tune",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let tune = read_json(&out_dir.join("tune.json"));
    let cells = tune["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 15);
    let best = cells
        .iter()
        .filter_map(|c| c["ape95"].as_f64())
        .fold(f64::INFINITY, f64::min);
    let chosen = cells
        .iter()
        .find(|c| c["order"] == tune["best_order"] && c["window"] == tune["best_window"])
        .unwrap();
    assert_eq!(chosen["ape95"].as_f64().unwrap(), best);

    let metrics = read_json(&out_dir.join("metrics.json"));
    assert_eq!(metrics["order"], tune["best_order"]);
    let rows = std::fs::read_to_string(out_dir.join("forecast.csv")).unwrap().lines().count() - 1;
    assert_eq!(rows as u64, metrics["intervals"].as_u64().unwrap());
}

#[test]
fn sweep_lists_greedy_then_each_flavor() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let out_dir = dir.path().join("out");
    let out = autoscale(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--oracle-forecast",
        "--sweep-flavors",
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_json(&out_dir.join("flavors.json"));
    let rows = rows.as_array().unwrap();
    let policies: Vec<&str> = rows.iter().map(|r| r["policy"].as_str().unwrap()).collect();
    assert_eq!(policies, ["greedy", "only:small", "only:medium", "only:large"]);
    let greedy = rows[0]["total_cost"].as_f64().unwrap();
    for r in &rows[1..] {
        assert!(r["total_cost"].as_f64().unwrap() >= greedy - 1e-9);
    }
}

#[test]
fn estimate_matches_brute_force_on_the_fixture_catalog() {
    let dir = tempfile::tempdir().unwrap();
    let profile = dir.path().join("profile.json");
    let out = autoscale(&[
        "profile",
        "--samples",
        fixtures().join("samples.csv").to_str().unwrap(),
        "--out",
        profile.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    for demand in ["1", "7.5", "40"] {
        let out = autoscale(&[
            "estimate",
            "--profile",
            profile.to_str().unwrap(),
            "--catalog",
            fixtures().join("catalog.csv").to_str().unwrap(),
            "--lambda",
            "1",
            "--demand",
            demand,
            "--brute-force",
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let v: Value = serde_json::from_slice(&out.stdout).unwrap();
        let brute = v["brute_force_cost"].as_f64().unwrap();
        let greedy = v["total_cost"].as_f64().unwrap();
        assert!(greedy >= brute - 1e-9);
        assert!(v["lower_bound_cost"].as_f64().unwrap() <= brute + 1e-9);
    }
}

#[test]
fn generators_write_parseable_files() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    std::fs::write(&spec, "base_level = 10.0\nnoise_sigma = 1.0\nlength = 50\n").unwrap();
    let trace = dir.path().join("t/trace.csv");
    let out = autoscale(&["gen-trace", "--spec", spec.to_str().unwrap(), "--seed", "4", "--out", trace.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(&trace).unwrap().lines().count(), 51);

    let samples = dir.path().join("s.csv");
    let out = autoscale(&[
        "gen-samples",
        "--dist",
        "1:exponential:5",
        "--dist",
        "2:lognormal:-1,0.3",
        "--n",
        "20",
        "--out",
        samples.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&samples).unwrap();
    assert_eq!(text.lines().count(), 41);

    let out = autoscale(&["gen-samples", "--dist", "2:cauchy:1", "--out", samples.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}
