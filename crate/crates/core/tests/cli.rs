use std::fs;
use std::path::Path;
use std::process::{Command as Process, Output};

use recurrent_lab::cli::{emit_report, run_experiment, Command, ReportError, RunConfig, RunManifest, RunOptions};

const BIN: &str = env!("CARGO_BIN_EXE_recurrent-lab");

fn smoke() -> String {
    fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/smoke.toml")).unwrap()
}

/// OU or compact-bump rate study small enough for a unit-test budget.
fn rate_config(drift: &str, dir: &Path) -> RunConfig {
    let text = format!(
        r#"
[model]
growth_constant = 1.0
[model.drift]
{drift}
[model.sigma]
kind = "constant"
s = 1.0
[model.holder]
x0 = 0.0
alpha = 1.0
gamma = 1.0
delta = 0.5

[sim]
t_max = 10000.0
dt = 0.1
checkpoint_count = 3
checkpoint_min = 100.0
seed = 3
replications = 60

[diagnostics]
t_grid = [100.0, 1000.0, 10000.0]

[output]
directory = "{}"
"#,
        dir.display()
    );
    RunConfig::from_toml(&text).unwrap()
}

fn run_bin(args: &[&str]) -> Output {
    Process::new(BIN).args(args).output().unwrap()
}

fn manifest(dir: &Path) -> RunManifest {
    RunManifest::parse(&fs::read_to_string(dir.join("manifest.txt")).unwrap()).unwrap()
}

#[test]
fn rate_study_writes_per_horizon_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = rate_config("kind = \"linear\"\ntheta = 1.0", tmp.path());
    let m = run_experiment(&cfg, Command::RateStudy, &RunOptions::default()).unwrap();
    let names: Vec<&str> = m.files.iter().map(|f| f.name.as_str()).collect();
    for expected in [
        "errors_T100.csv",
        "errors_T1000.csv",
        "errors_T10000.csv",
        "ratefit.csv",
    ] {
        assert!(names.contains(&expected), "{names:?}");
        assert!(tmp.path().join(expected).exists());
    }
    assert!(tmp.path().join("manifest.txt").exists());
    let errors = m.files.iter().find(|f| f.name == "errors_T1000.csv").unwrap();
    assert_eq!(errors.rows, 60);
    let fit = fs::read_to_string(tmp.path().join("ratefit.csv")).unwrap();
    assert!(fit.starts_with("slope,intercept,stderr_slope,quantile,t_grid,regime,target_exponent\n"));
    assert_eq!(fit.lines().count(), 2);
}

#[test]
fn rerun_reproduces_data_files() {
    let tmp = tempfile::tempdir().unwrap();
    let mut hashes = Vec::new();
    for (k, workers) in [(0, 1), (1, 1), (2, 2)] {
        let dir = tmp.path().join(k.to_string());
        let mut cfg = RunConfig::from_toml(&smoke()).unwrap();
        cfg.output.directory = dir.clone();
        let opts = RunOptions {
            workers: Some(workers),
            dump: false,
        };
        let m = run_experiment(&cfg, Command::Estimate, &opts).unwrap();
        // the digest covers the output directory too, so compare data only
        hashes.push(m.files);
    }
    assert_eq!(hashes[0], hashes[1]);
    assert_eq!(hashes[0], hashes[2]);
}

#[test]
fn trace_table_has_one_row_per_replicate_and_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::from_toml(&smoke()).unwrap();
    cfg.output.directory = tmp.path().to_path_buf();
    let m = run_experiment(&cfg, Command::Estimate, &RunOptions::default()).unwrap();
    let expected = cfg.sim.replications as usize * cfg.sim.checkpoints.len();
    assert_eq!(m.files[0].rows, expected);
    let text = fs::read_to_string(tmp.path().join("traces.csv")).unwrap();
    assert_eq!(text.lines().count(), expected + 1);
    assert!(text.starts_with("replicate,t,v,h,r,b_hat,denom,defined,martingale\n"));
}

#[test]
fn zero_replications_fail_before_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let config = tmp.path().join("bad.toml");
    fs::write(&config, smoke().replace("replications = 10", "replications = 0")).unwrap();
    let o = run_bin(&[
        "diagnose:tightness",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("replications"));
    assert!(!out.exists());
}

#[test]
fn binary_runs_and_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/smoke.toml");
    let out = tmp.path().join("run");
    let o = run_bin(&[
        "diagnose",
        "local-time",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "99",
        "--workers",
        "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&out);
    assert_eq!(m.seed, 99);
    assert_eq!(m.workers, 2);
    assert_eq!(m.command, "diagnose:local-time");
    let echoed = RunConfig::load(&out.join("config.toml")).unwrap();
    assert_eq!(echoed.sim.seed, 99);
    assert_eq!(echoed.digest(), m.config_digest);

    let o = run_bin(&["report", out.to_str().unwrap()]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("classification: "), "{text}");
    assert!(text.contains("target exponent −0.3333"), "{text}");
}

#[test]
fn validate_echoes_resolved_defaults() {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/smoke.toml");
    let o = run_bin(&["validate", "--config", config.to_str().unwrap()]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("kernel = \"quartic\""));
    assert!(text.contains("delta = 0.5"));
    assert_eq!(
        RunConfig::from_toml(&text).unwrap(),
        RunConfig::from_toml(&smoke()).unwrap()
    );
}

#[test]
fn report_states_regime_exponents() {
    let tmp = tempfile::tempdir().unwrap();
    for (name, drift, line) in [
        ("ou", "kind = \"linear\"\ntheta = 1.0", "target exponent −0.3333"),
        ("bump", "kind = \"compact_bump\"\nc = 1.0", "target exponent −0.1667"),
    ] {
        let dir = tmp.path().join(name);
        let cfg = rate_config(drift, &dir);
        run_experiment(&cfg, Command::RateStudy, &RunOptions::default()).unwrap();
        let report = emit_report(&dir).unwrap();
        assert!(report.contains(line), "{report}");
        assert!(report.contains("rate slope "), "{report}");
        assert!(report.contains("coverage at t = 10000"), "{report}");
    }
}

#[test]
fn report_rejects_missing_or_tampered_runs() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(matches!(emit_report(tmp.path()), Err(ReportError::Io { .. })));

    fs::write(tmp.path().join("manifest.txt"), "not a manifest").unwrap();
    assert!(matches!(emit_report(tmp.path()), Err(ReportError::Manifest(_))));

    let mut cfg = RunConfig::from_toml(&smoke()).unwrap();
    cfg.output.directory = tmp.path().to_path_buf();
    run_experiment(&cfg, Command::Estimate, &RunOptions::default()).unwrap();
    assert!(emit_report(tmp.path()).is_ok());
    let traces = tmp.path().join("traces.csv");
    let mut text = fs::read_to_string(&traces).unwrap();
    text.push_str("extra\n");
    fs::write(&traces, text).unwrap();
    assert!(matches!(emit_report(tmp.path()), Err(ReportError::HashMismatch { .. })));
}

#[test]
fn rate_study_is_worker_count_invariant() {
    let tmp = tempfile::tempdir().unwrap();
    let files: Vec<_> = [1, 3]
        .into_iter()
        .map(|workers| {
            let cfg = rate_config("kind = \"linear\"\ntheta = 1.0", &tmp.path().join(workers.to_string()));
            let opts = RunOptions {
                workers: Some(workers),
                dump: false,
            };
            run_experiment(&cfg, Command::RateStudy, &opts).unwrap().files
        })
        .collect();
    assert_eq!(files[0], files[1]);
}
