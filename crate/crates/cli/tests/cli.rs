use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cbc_cli::run::{Comparison, RunManifest};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cbc"));
    c.env_remove(cbc_cli::OUT_DIR_ENV);
    c
}

fn nominal_text() -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/nominal.toml")).unwrap()
}

/// Nominal scenario with some `key = value` lines replaced.
fn scenario(dir: &Path, edits: &[(&str, &str)]) -> PathBuf {
    let mut text = nominal_text();
    for (from, to) in edits {
        assert!(text.contains(from), "{from} not in scenario");
        text = text.replacen(from, to, 1);
    }
    let p = dir.join("scenario.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn csv_rows(p: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(p).unwrap();
    r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn analytic_stage_writes_curves() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/nominal.toml");
    let o = run(&["analytic", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let s = csv_rows(&out.join("s_curve.csv"));
    assert!(s.len() > 100);
    let frf = csv_rows(&out.join("frf.csv"));
    // The frequency response is multivalued somewhere.
    assert!(frf.iter().any(|r| r[2] == "2"));
    let m: RunManifest = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m.stages.len(), 1);
    assert_eq!(m.scenario_sha256.len(), 64);
    assert!(m.stages[0].files.contains(&"s_curve.csv".to_string()));
}

#[test]
fn invalid_scenario_exits_2_without_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = scenario(tmp.path(), &[("cutoff_hz = 50.0", "cutoff_hz = 4000.0")]);
    let out = tmp.path().join("never");
    let o = run(&["full", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("noise.cutoff_hz"));
    assert!(!out.exists());

    let cfg = scenario(tmp.path(), &[("[plant]\n", "[plant]\nbogus = 3\n")]);
    let o = run(&["analytic", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());

    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/nominal.toml");
    let o = run(&["cbc", "--config", cfg.to_str().unwrap(), "--jobs", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn out_dir_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("env_out");
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/fig5.toml");
    let o = bin()
        .args(["analytic", "--config", cfg.to_str().unwrap()])
        .env(cbc_cli::OUT_DIR_ENV, &out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(out.join("s_curve.csv").exists());
}

#[test]
fn job_outputs_are_deterministic_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = scenario(
        tmp.path(),
        &[
            ("seeds = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]", "seeds = [4, 5]"),
            ("ladder = [0, 3, 6, 9, 12]", "ladder = [3]"),
            ("b1_hi = 2.3", "b1_hi = 0.4"),
        ],
    );
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for (dir, jobs) in [(&a, "1"), (&b, "2")] {
        let o = run(&["cbc", "--config", cfg.to_str().unwrap(), "--jobs", jobs, "--out", dir.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
    }
    for key in ["N3_s4", "N3_s5"] {
        let f = format!("jobs/{key}/cbc_branch.csv");
        let x = std::fs::read(a.join(&f)).unwrap();
        assert!(x.len() > 100);
        assert_eq!(x, std::fs::read(b.join(&f)).unwrap(), "{f} differs");
    }
    // Different seeds see different noise.
    assert_ne!(std::fs::read(a.join("jobs/N3_s4/cbc_branch.csv")).unwrap(), std::fs::read(a.join("jobs/N3_s5/cbc_branch.csv")).unwrap());
    let m: RunManifest = serde_json::from_str(&std::fs::read_to_string(b.join("manifest.json")).unwrap()).unwrap();
    let keys: Vec<&str> = m.jobs.iter().map(|j| j.key.as_str()).collect();
    assert_eq!(keys, ["N3_s4", "N3_s5"]);
}

#[test]
fn noise_free_identification_agrees_and_table_rebuilds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = scenario(
        tmp.path(),
        &[("seeds = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]", "seeds = [0]"), ("ladder = [0, 3, 6, 9, 12]", "ladder = [0]")],
    );
    let out = tmp.path().join("run");
    let o = run(&["identify", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let cmp: Comparison = serde_json::from_str(&std::fs::read_to_string(out.join("comparison.json")).unwrap()).unwrap();
    assert_eq!(cmp.levels.len(), 1);
    let a = &cmp.levels[0].agreement;
    assert_eq!(a.len(), 1);
    assert!(a[0].within, "open-loop and CBC mu_t differ by {} > {}", a[0].delta_mu_t, a[0].bound);
    assert!(cmp.levels[0].cbc.median_rel_mu_error < 0.02);

    let table = csv_rows(&out.join("table.csv"));
    assert_eq!(table.len(), 2);
    assert_eq!(table[0].len(), 18);
    assert_eq!((table[0][0].as_str(), table[0][1].as_str()), ("N0", "openloop"));
    assert_eq!(table[1][1], "cbc");
    for f in ["sweep_up.csv", "sweep_down.csv", "cbc_branch.csv", "data_cbc.csv", "band_cbc.csv", "fits.json"] {
        assert!(out.join("jobs/N0_s0").join(f).exists(), "{f} missing");
    }

    let rebuilt = tmp.path().join("rebuilt");
    let o = run(&["table", "--from", out.to_str().unwrap(), "--out", rebuilt.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read(out.join("table.csv")).unwrap(), std::fs::read(rebuilt.join("table.csv")).unwrap());
}

#[test]
fn table_of_a_run_without_jobs_is_header_only() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/fig5.toml");
    assert_eq!(run(&["analytic", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(run(&["table", "--from", out.to_str().unwrap()]).status.code(), Some(0));
    let text = std::fs::read_to_string(out.join("table.csv")).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("noise,source,mu_t,estd_mu,"));
    // A missing manifest is a runtime error.
    assert_eq!(run(&["table", "--from", tmp.path().join("nothing").to_str().unwrap()]).status.code(), Some(1));
}
