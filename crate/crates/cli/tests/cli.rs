//! End-to-end tests driving the `smartlab` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_smartlab"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("smartlab-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn sha256_hex(path: &Path) -> String {
    let bytes = std::fs::read(path).unwrap();
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn assert_success(output: &Output) {
    assert!(
        output.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

/// Minimal XML well-formedness check: balanced tags, quoted attributes.
fn assert_well_formed_xml(text: &str) {
    let mut stack: Vec<String> = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find('<') {
        let end = rest[start..]
            .find('>')
            .map(|e| start + e)
            .unwrap_or_else(|| panic!("unclosed tag near: {}", &rest[start..start + 40.min(rest.len() - start)]));
        let tag = &rest[start + 1..end];
        assert_eq!(tag.matches('"').count() % 2, 0, "unbalanced quotes in <{tag}>");
        if let Some(name) = tag.strip_prefix('/') {
            let open = stack.pop().unwrap_or_else(|| panic!("</{name}> without opener"));
            assert_eq!(open, name.trim(), "mismatched close tag");
        } else if !tag.ends_with('/') && !tag.starts_with('?') && !tag.starts_with('!') {
            let name = tag.split_whitespace().next().unwrap().to_string();
            stack.push(name);
        }
        rest = &rest[end + 1..];
    }
    assert!(stack.is_empty(), "unclosed tags: {stack:?}");
}

#[test]
fn simulate_writes_expected_rows_and_manifest() {
    let dir = temp_dir("simulate");
    let out = dir.join("trial.csv");
    let output = bin()
        .args([
            "simulate",
            "--scenario",
            "table1-s2",
            "--n",
            "1000",
            "--r",
            "0.5",
            "--seed",
            "42",
            "--out",
        ])
        .arg(&out)
        .output()
        .unwrap();
    assert_success(&output);

    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "cohort,a1,r,a2,y");
    // 3n/2 = 1500 records.
    assert_eq!(lines.len(), 1501);
    assert!(!text.contains('\r'));

    // The manifest digest matches the emitted file.
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.join("trial.csv.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["master_seed"], 42);
    assert_eq!(manifest["outputs"][0]["sha256"], sha256_hex(&out));

    // Determinism: the same invocation produces an identical digest.
    let out2 = dir.join("trial2.csv");
    let output = bin()
        .args([
            "simulate",
            "--scenario",
            "table1-s2",
            "--n",
            "1000",
            "--r",
            "0.5",
            "--seed",
            "42",
            "--out",
        ])
        .arg(&out2)
        .output()
        .unwrap();
    assert_success(&output);
    assert_eq!(sha256_hex(&out), sha256_hex(&out2));

    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn smartlab_seed_env_overrides_default() {
    let dir = temp_dir("seedenv");
    let a = dir.join("a.csv");
    let b = dir.join("b.csv");
    let c = dir.join("c.csv");
    for (path, env) in [(&a, Some("7")), (&b, Some("7")), (&c, Some("8"))] {
        let mut cmd = bin();
        cmd.args(["simulate", "--scenario", "table1-s1", "--n", "100", "--out"])
            .arg(path);
        if let Some(seed) = env {
            cmd.env("SMARTLAB_SEED", seed);
        }
        assert_success(&cmd.output().unwrap());
    }
    assert_eq!(sha256_hex(&a), sha256_hex(&b));
    assert_ne!(sha256_hex(&a), sha256_hex(&c));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn estimate_emits_six_regimes_plus_difference() {
    let dir = temp_dir("estimate");
    let data = dir.join("trial.csv");
    assert_success(
        &bin()
            .args([
                "simulate",
                "--scenario",
                "table1-s2",
                "--n",
                "500",
                "--r",
                "0.5",
                "--seed",
                "3",
                "--out",
            ])
            .arg(&data)
            .output()
            .unwrap(),
    );

    let out = dir.join("estimates.csv");
    let output = bin()
        .args(["estimate", "--approaches", "separate", "--n", "500", "--r", "0.5", "--data"])
        .arg(&data)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_success(&output);
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "approach,dtr,mean,var,ci_lo,ci_hi");
    assert_eq!(lines.len(), 1 + 6 + 1, "six regime rows plus one difference");
    assert!(lines.last().unwrap().starts_with("separate,d11-d31,"));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn estimate_mixed_commensurate_manifest_records_grid() {
    let dir = temp_dir("commp");
    let data = dir.join("trial.csv");
    assert_success(
        &bin()
            .args([
                "simulate",
                "--scenario",
                "table2-s2",
                "--n",
                "400",
                "--r",
                "0.5",
                "--seed",
                "5",
                "--out",
            ])
            .arg(&data)
            .output()
            .unwrap(),
    );
    let out = dir.join("estimates.csv");
    let output = bin()
        .args([
            "estimate",
            "--approaches",
            "BIGcommP",
            "--direction",
            "minimize",
            "--chains",
            "2",
            "--burn-in",
            "150",
            "--draws",
            "300",
            "--data",
        ])
        .arg(&data)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_success(&output);
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.join("estimates.csv.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["config"]["priors"]["mixed_taus"][0], 0.1);
    assert_eq!(manifest["config"]["priors"]["mixed_taus"][1], 20.0);
    assert_eq!(manifest["config"]["priors"]["mixed_weights"][0], 0.5);
    assert_eq!(manifest["config"]["family"], "binary");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn estimate_without_historical_cohort_fails_clearly() {
    let dir = temp_dir("noc1");
    let data = dir.join("trial.csv");
    // r = 0 produces an empty pre-adaptation cohort.
    assert_success(
        &bin()
            .args([
                "simulate",
                "--scenario",
                "table1-s2",
                "--n",
                "300",
                "--r",
                "0",
                "--seed",
                "4",
                "--out",
            ])
            .arg(&data)
            .output()
            .unwrap(),
    );
    let output = bin()
        .args(["estimate", "--approaches", "BIGlogdis", "--data"])
        .arg(&data)
        .arg("--out")
        .arg(dir.join("est.csv"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(
        stderr.contains("prior source cohort missing"),
        "stderr: {stderr}"
    );
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = temp_dir("cfgerr");
    // Unknown scenario name.
    let output = bin()
        .args(["simulate", "--scenario", "no-such-scenario", "--n", "100", "--out"])
        .arg(dir.join("x.csv"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));

    // Study config missing a required field names it.
    let config = dir.join("study.toml");
    std::fs::write(&config, "[study]\nscenarios = [\"table1-s2\"]\nn = [100]\nr = [0.5]\n").unwrap();
    let output = bin()
        .args(["run-study", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("replicates"), "stderr: {stderr}");

    // Malformed dataset rows exit with code three and a line number.
    let bad = dir.join("bad.csv");
    std::fs::write(&bad, "cohort,a1,r,a2,y\nc1,a11,2,a11,1.0\n").unwrap();
    let output = bin()
        .args(["estimate", "--approaches", "separate", "--data"])
        .arg(&bad)
        .arg("--out")
        .arg(dir.join("est.csv"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&output.stderr).contains("line 2"));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn run_study_emits_metrics_figures_and_manifest() {
    let dir = temp_dir("study");
    let out = dir.join("run");
    let output = bin()
        .args([
            "run-study",
            "--scenario",
            "table1-s2",
            "--n",
            "300",
            "--r",
            "0.5",
            "--replicates",
            "5",
            "--approaches",
            "separate,pooling",
            "--seed",
            "11",
            "--workers",
            "2",
            "--out",
        ])
        .arg(&out)
        .output()
        .unwrap();
    assert_success(&output);

    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(
        lines[0],
        "approach,scenario,n,r,replicates,bias,bias_mcse,var,mse,coverage,prob_optimal,failures"
    );
    assert_eq!(lines.len(), 3, "two approach rows");

    // Figures are well-formed and list one series per approach.
    for metric in ["bias", "var", "mse", "coverage", "prob_optimal"] {
        let svg = std::fs::read_to_string(out.join(format!("{metric}.svg"))).unwrap();
        assert_well_formed_xml(&svg);
        assert!(svg.contains("separate") && svg.contains("pooling"), "{metric}");
    }

    // Manifest digests match the emitted files.
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap())
            .unwrap();
    for entry in manifest["outputs"].as_array().unwrap() {
        let path = out.join(entry["path"].as_str().unwrap());
        assert_eq!(entry["sha256"].as_str().unwrap(), sha256_hex(&path));
    }

    // Resume reuses the completed cell and reproduces the metrics bytes.
    let before = sha256_hex(&out.join("metrics.csv"));
    let output = bin()
        .args([
            "run-study",
            "--scenario",
            "table1-s2",
            "--n",
            "300",
            "--r",
            "0.5",
            "--replicates",
            "5",
            "--approaches",
            "separate,pooling",
            "--seed",
            "11",
            "--resume",
            "--out",
        ])
        .arg(&out)
        .output()
        .unwrap();
    assert_success(&output);
    assert_eq!(before, sha256_hex(&out.join("metrics.csv")));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn numerical_failures_exit_with_code_four() {
    let dir = temp_dir("numerr");
    // A dataset too small to fit the outcome model: the log-distance prior
    // construction cannot converge.
    let data = dir.join("tiny.csv");
    let mut csv = String::from("cohort,a1,r,a2,y\n");
    for cohort in ["c1", "c2"] {
        csv.push_str(&format!("{cohort},a11,0,a11,1.0\n"));
        csv.push_str(&format!("{cohort},a11,1,a21,2.0\n"));
        csv.push_str(&format!("{cohort},a12,0,a12,3.0\n"));
        csv.push_str(&format!("{cohort},a12,1,a22,4.0\n"));
    }
    csv.push_str("c2,a13,0,a13,5.0\nc2,a13,1,a21,6.0\n");
    std::fs::write(&data, csv).unwrap();
    let output = bin()
        .args(["estimate", "--approaches", "BIGlogdis", "--data"])
        .arg(&data)
        .arg("--out")
        .arg(dir.join("est.csv"))
        .output()
        .unwrap();
    assert_eq!(
        output.status.code(),
        Some(4),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn degraded_study_exits_with_code_five() {
    let dir = temp_dir("partial");
    // r = 0 leaves the pre-adaptation cohort empty: pooling fails in every
    // replicate while separate succeeds, so the study completes partially.
    let out = dir.join("run");
    let output = bin()
        .args([
            "run-study",
            "--scenario",
            "table1-s2",
            "--n",
            "200",
            "--r",
            "0",
            "--replicates",
            "3",
            "--approaches",
            "separate,pooling",
            "--seed",
            "1",
            "--out",
        ])
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(
        output.status.code(),
        Some(5),
        "stderr: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    // Partial results are preserved: the separate row is healthy, the
    // pooling row records its failures.
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    let pooling_row = metrics
        .lines()
        .find(|l| l.starts_with("pooling,"))
        .unwrap();
    assert!(pooling_row.contains("NA"));
    assert!(pooling_row.ends_with(",3"), "row: {pooling_row}");
    let separate_row = metrics
        .lines()
        .find(|l| l.starts_with("separate,"))
        .unwrap();
    assert!(separate_row.ends_with(",0"), "row: {separate_row}");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn toy_grid_completes_within_budget() {
    let dir = temp_dir("budget");
    let started = std::time::Instant::now();
    let output = bin()
        .args([
            "run-study",
            "--scenario",
            "table1-s3",
            "--n",
            "300",
            "--r",
            "0.5",
            "--replicates",
            "5",
            "--approaches",
            "separate,pooling",
            "--seed",
            "2",
            "--out",
        ])
        .arg(dir.join("run"))
        .output()
        .unwrap();
    assert_success(&output);
    assert!(
        started.elapsed().as_secs() < 60,
        "toy study took {:?}",
        started.elapsed()
    );
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn print_schema_documents_both_formats() {
    let output = bin().arg("print-schema").output().unwrap();
    assert_success(&output);
    let text = String::from_utf8_lossy(&output.stdout);
    assert!(text.contains("response_rate.a11"));
    assert!(text.contains("[study]"));
    assert!(text.contains("SMARTLAB_SEED"));
}
