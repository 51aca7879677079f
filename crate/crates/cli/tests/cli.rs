//! End-to-end tests of the `rdsmc` binary: config validation, result
//! files, exit codes, and the determinism contract.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rdsmc"))
}

fn run_ok(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = bin();
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn quick_config(out_dir: &Path, seeds: &str) -> String {
    format!(
        r#"
name = "quick"
output_dir = "{}"
seeds = {seeds}
n_particles = 32
metrics = ["log_z", "logz_bias"]
dump_samples = true
emit_ess_trace = true

[target]
kind = "gaussian"
mean = [1.0, -1.0]
scale = 2.0

[schedule]
kind = "vp"
t_steps = 12

[sampler]
kind = "rdsmc"

[sampler.outer]
kappa_ess = 0.3
t_start_resampling = 12

[sampler.inner]
estimator = "is"
n_is = 8
"#,
        out_dir.display()
    )
}

/// Strip the wall-time column, the one field that cannot be identical
/// across runs.
fn mask_wall_time(table: &str) -> String {
    table
        .lines()
        .map(|line| {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() < 5 {
                return line.to_string();
            }
            let mut fields: Vec<String> = fields.iter().map(|s| s.to_string()).collect();
            fields[4] = "WALL".into();
            fields.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn run_writes_expected_rows_and_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), "quick.toml", &quick_config(&out, "[0, 1, 2, 3, 4]"));
    let output = run_ok(&["run", cfg.to_str().unwrap()], &[]);
    assert!(output.status.success(), "{:?}", output);

    let table = std::fs::read_to_string(out.join("results.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(
        lines[0],
        "replicate,seed,metric,value,wall_time_s,resample_events,mean_inner_ess"
    );
    // 5 replicates x 2 metrics + 2 summary rows
    assert_eq!(lines.len(), 1 + 10 + 2);
    let summaries: Vec<&&str> = lines.iter().filter(|l| l.starts_with("summary")).collect();
    assert_eq!(summaries.len(), 2);
    assert!(summaries[0].contains('±'));

    // per-replicate artifacts
    for seed in 0..5 {
        let dump = std::fs::read_to_string(out.join(format!("samples_seed{seed}.csv"))).unwrap();
        let rows: Vec<&str> = dump.lines().collect();
        assert_eq!(rows.len(), 32);
        assert_eq!(rows[0].split(',').count(), 3); // 2 coords + weight
        let trace = std::fs::read_to_string(out.join(format!("ess_trace_seed{seed}.csv"))).unwrap();
        assert_eq!(trace.lines().count(), 1 + 13); // header + steps T..0
    }
    assert!(out.join("config_resolved.toml").exists());
}

#[test]
fn reruns_and_worker_counts_are_byte_identical_modulo_wall_time() {
    let tmp = tempfile::tempdir().unwrap();
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    let out_c = tmp.path().join("c");
    let cfg = write_config(tmp.path(), "quick.toml", &quick_config(&out_a, "[0, 1]"));

    assert!(run_ok(&["run", cfg.to_str().unwrap()], &[("RDSMC_WORKERS", "1")])
        .status
        .success());
    assert!(run_ok(
        &["run", cfg.to_str().unwrap()],
        &[("RDSMC_WORKERS", "1"), ("RDSMC_OUTPUT_DIR", out_b.to_str().unwrap())]
    )
    .status
    .success());
    assert!(run_ok(
        &["run", cfg.to_str().unwrap()],
        &[("RDSMC_WORKERS", "2"), ("RDSMC_OUTPUT_DIR", out_c.to_str().unwrap())]
    )
    .status
    .success());

    let a = mask_wall_time(&std::fs::read_to_string(out_a.join("results.csv")).unwrap());
    let b = mask_wall_time(&std::fs::read_to_string(out_b.join("results.csv")).unwrap());
    let c = mask_wall_time(&std::fs::read_to_string(out_c.join("results.csv")).unwrap());
    assert_eq!(a, b, "re-run differs");
    assert_eq!(a, c, "worker count changes output");

    for seed in [0, 1] {
        let da = std::fs::read_to_string(out_a.join(format!("samples_seed{seed}.csv"))).unwrap();
        let dc = std::fs::read_to_string(out_c.join(format!("samples_seed{seed}.csv"))).unwrap();
        assert_eq!(da, dc);
    }
}

#[test]
fn validate_reports_violations_and_unknown_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let mut body = quick_config(&out, "[0]");
    body = body.replace("kappa_ess = 0.3", "kappa_ess = 1.5");
    body.push_str("\n[sampler.extra]\nfoo = 1\n");
    let cfg = write_config(tmp.path(), "bad.toml", &body);
    let output = run_ok(&["validate", cfg.to_str().unwrap()], &[]);
    assert!(output.status.success());
    let text = String::from_utf8_lossy(&output.stdout);
    assert!(text.contains("unknown key: sampler.extra"), "{text}");
    assert!(text.contains("violation:"), "{text}");
    assert!(text.contains("kappa_ess"), "{text}");
}

#[test]
fn validate_clean_config_echoes_resolved_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), "quick.toml", &quick_config(&out, "[0]"));
    let output = run_ok(&["validate", cfg.to_str().unwrap()], &[]);
    let text = String::from_utf8_lossy(&output.stdout);
    assert!(text.contains("ok: no violations"), "{text}");
    assert!(text.contains("--- effective config ---"), "{text}");
    // defaults materialized
    assert!(text.contains("resample_scheme = \"systematic\""), "{text}");
    assert!(text.contains("identity = \"dsi\""), "{text}");
    assert!(text.contains("b_min = 0.1"), "{text}");
}

#[test]
fn run_exits_with_two_on_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    // unparseable file
    let cfg = write_config(tmp.path(), "broken.toml", "this is not toml [");
    let output = run_ok(&["run", cfg.to_str().unwrap()], &[]);
    assert_eq!(output.status.code(), Some(2));
    // missing dataset
    let body = format!(
        r#"
name = "missing_data"
output_dir = "{}"
seeds = [0]
n_particles = 8
metrics = ["test_ll"]

[target]
kind = "logreg"
dataset = "{}"

[schedule]
kind = "vp"
t_steps = 5

[sampler]
kind = "rdsmc_is"

[sampler.inner]
estimator = "is"
n_is = 4
"#,
        tmp.path().join("out").display(),
        tmp.path().join("nonexistent.csv").display()
    );
    let cfg = write_config(tmp.path(), "missing.toml", &body);
    let output = run_ok(&["run", cfg.to_str().unwrap()], &[]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn report_aggregates_result_tables() {
    let tmp = tempfile::tempdir().unwrap();
    for (label, seeds) in [("run_a", "[0, 1]"), ("run_b", "[2, 3]")] {
        let out = tmp.path().join(label);
        let cfg = write_config(
            tmp.path(),
            &format!("{label}.toml"),
            &quick_config(&out, seeds),
        );
        assert!(run_ok(&["run", cfg.to_str().unwrap()], &[]).status.success());
    }
    let output = run_ok(&["report", tmp.path().to_str().unwrap()], &[]);
    assert!(output.status.success());
    let text = String::from_utf8_lossy(&output.stdout);
    assert!(text.starts_with("run,metric,replicates,mean,stderr"), "{text}");
    assert!(text.contains("run_a,log_z,2,"), "{text}");
    assert!(text.contains("run_b,logz_bias,2,"), "{text}");
}

#[test]
fn logreg_pipeline_runs_on_the_bundled_dataset() {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/cancer.csv");
    if !data.exists() {
        panic!("bundled dataset missing: {}", data.display());
    }
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let body = format!(
        r#"
name = "cancer_smoke"
output_dir = "{}"
seeds = [0]
n_particles = 16
metrics = ["test_ll", "log_z"]

[target]
kind = "logreg"
dataset = "{}"
split_seed = 0

[schedule]
kind = "vp"
t_steps = 8

[sampler]
kind = "rdsmc"

[sampler.outer]
kappa_ess = 0.3
t_start_resampling = 8

[sampler.inner]
estimator = "ais"
identity = "tsi"
kernel = "mala"
n_is = 4
n_steps = 3
delta_mcmc = 0.01
score_clip = 20.0
"#,
        out.display(),
        data.display()
    );
    let cfg = write_config(tmp.path(), "cancer.toml", &body);
    let output = run_ok(&["run", cfg.to_str().unwrap()], &[]);
    assert!(output.status.success(), "{:?}", output);
    let table = std::fs::read_to_string(out.join("results.csv")).unwrap();
    let ll_row = table
        .lines()
        .find(|l| l.starts_with("0,0,test_ll"))
        .expect("test_ll row");
    let value: f64 = ll_row.split(',').nth(3).unwrap().parse().unwrap();
    assert!(value.is_finite() && value < 0.0, "test LL {value}");
}
