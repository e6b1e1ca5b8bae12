use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_fractalp");

fn fractalp(args: &[&str], out: &Path, threads: Option<usize>) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).arg("--out").arg(out).env_remove("FRACTALP_SEED");
    if let Some(n) = threads {
        cmd.env("RAYON_NUM_THREADS", n.to_string());
    }
    cmd.output().expect("binary runs")
}

fn timings(stderr: &[u8]) -> BTreeMap<u8, Vec<f64>> {
    let mut map: BTreeMap<u8, Vec<f64>> = BTreeMap::new();
    for line in String::from_utf8_lossy(stderr).lines() {
        let Some(rest) = line.strip_prefix("timing criterion=") else { continue };
        let (id, secs) = rest.split_once(" seconds=").expect("timing line");
        map.entry(id.parse().unwrap()).or_default().push(secs.parse().unwrap());
    }
    map
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

// per-criterion runtime limits in seconds; criterion 2 applies to each solve
fn limit(id: u8) -> Option<f64> {
    match id {
        1 => Some(1.0),
        2 => Some(60.0),
        7 => Some(300.0),
        8 => Some(600.0),
        _ => None,
    }
}

#[test]
fn acceptance_suite() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["suite", "--preset", "sg", "--p", "2", "--seed", "7"];

    let start = Instant::now();
    let first = fractalp(&args, a.path(), None);
    let total = start.elapsed().as_secs_f64();
    assert!(
        matches!(first.status.code(), Some(0 | 1)),
        "suite crashed: {}",
        String::from_utf8_lossy(&first.stderr)
    );
    let second = fractalp(&args, b.path(), Some(1));

    let summary: Value = serde_json::from_slice(&std::fs::read(a.path().join("suite.json")).unwrap()).unwrap();
    let times = timings(&first.stderr);
    let mut all = true;
    for c in summary["criteria"].as_array().unwrap() {
        let id = c["id"].as_u64().unwrap() as u8;
        let mut ok = c["passed"].as_bool().unwrap();
        let mut note = String::new();
        if let Some(max) = limit(id) {
            let t = times.get(&id).cloned().unwrap_or_default();
            let within = !t.is_empty() && t.iter().all(|&s| s < max);
            ok &= within;
            note = format!(" time {:?}s (limit {max}s)", t.iter().map(|s| (s * 100.0).round() / 100.0).collect::<Vec<_>>());
        }
        all &= ok;
        println!("{} criterion {:>2} {}{} {}", if ok { "PASS" } else { "FAIL" }, id, c["name"].as_str().unwrap(), note, c["values"]);
    }

    let fa = files(a.path());
    let fb = files(b.path());
    let differing: Vec<&String> = fa.keys().filter(|k| fb.get(*k) != fa.get(*k)).collect();
    let same_set = fa.keys().eq(fb.keys());
    let determinism = same_set && differing.is_empty() && first.stdout == second.stdout && fa.len() > 1;
    all &= determinism;
    println!(
        "{} criterion 13 byte-identical outputs across runs and thread counts ({} files, differing {:?})",
        if determinism { "PASS" } else { "FAIL" },
        fa.len(),
        differing
    );

    let total_ok = total < 1200.0;
    println!("total runtime {total:.1}s (limit 1200s) {}", if total_ok { "ok" } else { "exceeded" });
    assert!(summary["criteria"].as_array().unwrap().len() == 12);
    assert!(all && total_ok, "acceptance criteria failed");
    assert_eq!(first.status.code(), Some(0));
}

#[test]
fn missing_config_is_a_usage_error() {
    let d = tempfile::tempdir().unwrap();
    let out = fractalp(&["eigenform", "--config", "/nonexistent/fractalp.toml"], d.path(), None);
    assert_eq!(out.status.code(), Some(2));
    let out = fractalp(&["eigenform"], d.path(), None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("usage"));
}

#[test]
fn bad_config_key_names_the_path() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("bad.toml");
    std::fs::write(&cfg, "[gc]\ntrials = 0\n").unwrap();
    let out = fractalp(&["gc", "--config", cfg.to_str().unwrap()], d.path(), None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gc.trials"));
}

#[test]
fn eigenform_p3_reports_small_residual() {
    let d = tempfile::tempdir().unwrap();
    let out = fractalp(&["eigenform", "--preset", "sg", "--p", "3"], d.path(), None);
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["residual"].as_f64().unwrap() < 1e-8);
    assert!(v["converged"].as_bool().unwrap());
    let manifest: Value = serde_json::from_slice(&std::fs::read(d.path().join("manifest_eigenform.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert!(d.path().join("eigenform.csv").exists());
}

#[test]
fn seed_comes_from_the_environment() {
    let d = tempfile::tempdir().unwrap();
    let out = Command::new(BIN)
        .args(["exponents", "--preset", "sg", "--out"])
        .arg(d.path())
        .env("FRACTALP_SEED", "99")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let manifest: Value = serde_json::from_slice(&std::fs::read(d.path().join("manifest_exponents.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 99);
}

#[test]
fn gc_battery_passes_for_p3_graph_forms() {
    let d = tempfile::tempdir().unwrap();
    let out = fractalp(&["gc", "--preset", "sg", "--p", "3"], d.path(), None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["passed"], true);
}
