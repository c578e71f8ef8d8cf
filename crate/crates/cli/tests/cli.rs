use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command as Process, Output};

use serde_json::Value;
use tempfile::TempDir;

use herald_cli::commands::{SWEEP_CSV_HEADER, TUNING_CSV_HEADER};
use herald_cli::{execute, Command, Invocation, Scenario};

fn scenario_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/reference.scenario")
}

fn counts_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/reference_counts.json")
}

fn herald(args: &[&str], out: &Path) -> Output {
    Process::new(env!("CARGO_BIN_EXE_herald"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("HERALD_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn invocation(out: &Path, overrides: &[&str]) -> Invocation {
    Invocation {
        scenario: scenario_path(),
        overrides: overrides.iter().map(|s| s.to_string()).collect(),
        out: Some(out.to_path_buf()),
        ..Invocation::default()
    }
}

fn stderr_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stderr).expect("error report is JSON")
}

#[test]
fn bundled_scenario_is_complete() {
    let s = Scenario::load(&scenario_path(), &[]).unwrap();
    assert!(s.warnings().is_empty(), "{:?}", s.warnings());
    assert_eq!(s.present_sections().len(), 7);
    s.setup().unwrap();
    s.channel().unwrap();
}

#[test]
fn scenario_round_trips_through_toml() {
    let s = Scenario::load(&scenario_path(), &[]).unwrap();
    let again = Scenario::parse(&s.to_toml(), &[]).unwrap();
    assert_eq!(s, again);
}

#[test]
fn unknown_keys_are_rejected_by_name() {
    let text = fs::read_to_string(scenario_path()).unwrap();
    let bad = text.replace("[losses]", "[losses]\nt_mystery = 0.5");
    let e = Scenario::parse(&bad, &[]).unwrap_err();
    assert_eq!(e.exit_code(), 2);
    assert!(e.to_string().contains("t_mystery"), "{e}");

    let e = Scenario::parse(&text, &["source.bogus=1".into()]).unwrap_err();
    assert!(e.to_string().contains("bogus"), "{e}");
}

#[test]
fn override_replaces_value() {
    let s = Scenario::load(&scenario_path(), &["source.mu=0.05".into()]).unwrap();
    assert_eq!(s.setup().unwrap().pairs.mean, 0.05);
}

#[test]
fn zero_mu_leaves_only_dark_counts() {
    let dir = TempDir::new().unwrap();
    let out = execute(
        &Command::Simulate,
        &invocation(dir.path(), &["source.mu=0"]),
    )
    .unwrap();
    let c = &out.json["result"]["counts"];
    let singles = c["signal_singles"].as_f64().unwrap();
    // dark counts binned per pulse
    assert!((singles - 90.0).abs() < 1e-3, "{singles}");
    let idler = c["idler_singles"].as_f64().unwrap();
    assert!(idler > 0.0 && idler < 205e3 * 2.6e-4, "{idler}");
    let coinc = c["coincidences"].as_f64().unwrap();
    assert!(coinc < singles * 2.6e-4, "{coinc}");
}

#[test]
fn validation_error_exits_2() {
    let dir = TempDir::new().unwrap();
    let s = scenario_path();
    let o = herald(
        &[
            "simulate",
            s.to_str().unwrap(),
            "--override",
            "source.mu=-1",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(stderr_json(&o)["error"], "validation");

    let o = herald(
        &[
            "simulate",
            s.to_str().unwrap(),
            "--override",
            "nowhere.key=1",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_file_exits_4() {
    let dir = TempDir::new().unwrap();
    let o = herald(&["simulate", "/nonexistent/x.scenario"], dir.path());
    assert_eq!(o.status.code(), Some(4));
    assert_eq!(stderr_json(&o)["error"], "io");
}

#[test]
fn monte_carlo_output_is_reproducible() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let s = scenario_path();
    let args = [
        "simulate",
        s.to_str().unwrap(),
        "--mode",
        "monte-carlo",
        "--pulses",
        "200000",
        "--seed",
        "7",
    ];
    let oa = herald(&args, a.path());
    let ob = herald(&args, b.path());
    assert!(
        oa.status.success(),
        "{}",
        String::from_utf8_lossy(&oa.stderr)
    );
    let summary = |o: &Output| {
        let text = String::from_utf8_lossy(&o.stdout).into_owned();
        text.lines()
            .filter(|l| !l.starts_with("wrote "))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(summary(&oa), summary(&ob));
    let ja = fs::read(a.path().join("simulate.json")).unwrap();
    let jb = fs::read(b.path().join("simulate.json")).unwrap();
    assert_eq!(ja, jb);

    let v: Value = serde_json::from_slice(&ja).unwrap();
    assert_eq!(v["provenance"]["seed"], 7);
    assert_eq!(v["provenance"]["n_pulses"], 200000);
    assert_eq!(v["provenance"]["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn sweep_writes_csv() {
    let dir = TempDir::new().unwrap();
    let out = execute(&Command::Sweep, &invocation(dir.path(), &[])).unwrap();
    let text = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(SWEEP_CSV_HEADER));
    assert_eq!(lines.count(), 8);
    assert!(out.files.iter().any(|f| f.ends_with("sweep.json")));
}

#[test]
fn unsorted_sweep_is_rejected() {
    let dir = TempDir::new().unwrap();
    let e = execute(
        &Command::Sweep,
        &invocation(dir.path(), &["run.sweep_mu=[0.2, 0.1]"]),
    )
    .unwrap_err();
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn phasematch_writes_tuning_curve() {
    let dir = TempDir::new().unwrap();
    let out = execute(&Command::Phasematch, &invocation(dir.path(), &[])).unwrap();
    let theta = out.json["result"]["theta_deg"].as_f64().unwrap();
    assert!((theta - 26.4).abs() < 0.1, "{theta}");
    let text = fs::read_to_string(dir.path().join("tuning_curve.csv")).unwrap();
    assert_eq!(text.lines().next(), Some(TUNING_CSV_HEADER));
}

#[test]
fn spectrum_writes_grid() {
    let dir = TempDir::new().unwrap();
    execute(&Command::Spectrum, &invocation(dir.path(), &[])).unwrap();
    let text = fs::read_to_string(dir.path().join("spectrum.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("signal_nm,idler_nm,intensity"));
    assert_eq!(lines.count(), 181 * 321);
}

#[test]
fn estimate_reads_counts_file() {
    let dir = TempDir::new().unwrap();
    let cmd = Command::Estimate {
        counts: counts_path(),
    };
    let out = execute(&cmd, &invocation(dir.path(), &[])).unwrap();
    let mu = out.json["result"]["estimate"]["mu"].as_f64().unwrap();
    assert!((mu - 0.0829).abs() < 0.0829 * 0.05, "{mu}");
}

#[test]
fn infeasible_counts_are_reported() {
    let dir = TempDir::new().unwrap();
    let counts = dir.path().join("counts.json");
    fs::write(
        &counts,
        r#"{"signal_singles": 290000, "idler_singles": 285, "gate_rate": 205000,
            "coincidences": 300000, "trigger_rate": 216000}"#,
    )
    .unwrap();
    let e = execute(&Command::Estimate { counts }, &invocation(dir.path(), &[])).unwrap_err();
    assert_ne!(e.exit_code(), 0);
}

#[test]
fn unused_sections_warn() {
    let dir = TempDir::new().unwrap();
    let out = execute(&Command::Phasematch, &invocation(dir.path(), &[])).unwrap();
    assert!(
        out.warnings.iter().any(|w| w.contains("[channel]")),
        "{:?}",
        out.warnings
    );
}

#[test]
fn env_out_dir_is_used_without_flag() {
    let dir = TempDir::new().unwrap();
    let inv = Invocation {
        scenario: scenario_path(),
        env_out_dir: Some(dir.path().to_path_buf()),
        ..Invocation::default()
    };
    execute(&Command::HeraldStats, &inv).unwrap();
    assert!(dir.path().join("herald-stats.json").exists());
}
