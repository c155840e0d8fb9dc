//! End-to-end runs of the `coldbench` binary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn coldbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coldbench")).args(args).output().expect("binary runs")
}

fn spec_file(dir: &Path) -> PathBuf {
    let p = dir.join("spec.json");
    std::fs::write(&p, r#"{"n_targets": 6, "compounds_per_paper": [10, 10], "seed": 5}"#).unwrap();
    p
}

fn read_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn run_in(tmp: &TempDir, name: &str, args: &[&str]) -> (Output, PathBuf) {
    let out = tmp.path().join(name);
    let mut all: Vec<&str> = args.to_vec();
    let out_s = out.to_str().unwrap().to_string();
    all.extend(["--out", &out_s]);
    (coldbench(&all), out)
}

#[test]
fn reports_identical_across_workers_and_repeats() {
    let tmp = TempDir::new().unwrap();
    let spec = spec_file(tmp.path());
    let spec = spec.to_str().unwrap();
    let mut reports = Vec::new();
    for (i, w) in ["1", "4", "8", "4"].iter().enumerate() {
        let (o, dir) = run_in(&tmp, &format!("run{i}"), &["run", "--synth-spec", spec, "--seeds", "7,13", "--trees", "10", "--workers", w]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        reports.push(read_dir(&dir));
    }
    assert!(reports[0].contains_key("fold_scores.csv") && reports[0].contains_key("manifest.json"));
    for r in &reports[1..] {
        assert_eq!(r, &reports[0]);
    }
}

#[test]
fn missing_dataset_names_the_field() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("absent.csv");
    let (o, dir) = run_in(&tmp, "err", &["run", "--data", missing.to_str().unwrap()]);
    assert!(!o.status.success());
    let doc = json(&dir.join("error.json"));
    assert_eq!(doc["field"], "data");
    assert_eq!(doc["code"], "missing_input");

    let (o, dir) = run_in(&tmp, "none", &["run"]);
    assert!(!o.status.success());
    assert_eq!(json(&dir.join("error.json"))["field"], "data");
}

#[test]
fn duplicate_seeds_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let spec = spec_file(tmp.path());
    let (o, dir) = run_in(&tmp, "dup", &["run", "--synth-spec", spec.to_str().unwrap(), "--seeds", "7,7"]);
    assert!(!o.status.success());
    assert_eq!(json(&dir.join("error.json"))["field"], "seeds");
}

#[test]
fn manifest_records_inputs_seeds_and_hash() {
    let tmp = TempDir::new().unwrap();
    let spec = spec_file(tmp.path());
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, format!("synth_spec = {:?}\nseeds = [1, 2, 3]\n\n[model]\nkind = \"forest\"\nn_trees = 8\n", spec)).unwrap();
    let cfg = cfg.to_str().unwrap();
    // Flags override file values; worker count stays out of the hash.
    let (o, a) = run_in(&tmp, "a", &["run", "--config", cfg, "--seeds", "7", "--workers", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (_, b) = run_in(&tmp, "b", &["run", "--config", cfg, "--seeds", "7", "--workers", "3"]);
    let (ma, mb) = (json(&a.join("manifest.json")), json(&b.join("manifest.json")));
    assert_eq!(ma["seeds"], serde_json::json!([7]));
    assert_eq!(ma["config"]["model"]["n_trees"], 8);
    assert_eq!(ma["config_hash"], mb["config_hash"]);
    assert_eq!(ma["inputs"][0]["role"], "synth_spec");
    assert_eq!(ma["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    let (_, c) = run_in(&tmp, "c", &["run", "--config", cfg, "--seeds", "8"]);
    assert_ne!(json(&c.join("manifest.json"))["config_hash"], ma["config_hash"]);
}

#[test]
fn canonical_seeds_are_the_default() {
    let tmp = TempDir::new().unwrap();
    let (o, dir) = run_in(&tmp, "p", &["power"]);
    assert!(o.status.success());
    assert_eq!(json(&dir.join("manifest.json"))["seeds"], serde_json::json!([7, 13, 29, 42, 43, 44, 53, 71, 89, 97]));
    let rows = json(&dir.join("power.json"));
    assert!((rows[0]["vif"].as_f64().unwrap() - 12.427).abs() < 1e-9);
}

#[test]
fn factorial_and_hpo_audit_from_files() {
    let tmp = TempDir::new().unwrap();
    let cells = tmp.path().join("cells.csv");
    let mut text = String::from("cell,mean\n");
    for m in 0..2 {
        for w in 0..2 {
            for a in 0..2 {
                for k in 0..2 {
                    text.push_str(&format!("{m}{w}{a}{k},{}\n", 0.6 + 0.01 * w as f64 + 0.02 * a as f64 + 0.04 * k as f64));
                }
            }
        }
    }
    std::fs::write(&cells, text).unwrap();
    let (o, dir) = run_in(&tmp, "f", &["factorial", "--cells", cells.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = json(&dir.join("factorial.json"));
    let get = |f: &str| m.as_array().unwrap().iter().find(|x| x["factor"] == f).unwrap()["marginal"].as_f64().unwrap();
    assert!((get("W") - 0.01).abs() < 1e-12 && (get("A") - 0.02).abs() < 1e-12 && (get("K") - 0.04).abs() < 1e-12);

    let trials = tmp.path().join("trials.csv");
    let mut t = String::from("trial_id,phase,seed,objective,lr\n");
    for i in 0..20 {
        t.push_str(&format!("t{i},random,{i},{},{}\n", 0.6 + 0.001 * i as f64, if i % 2 == 0 { "a" } else { "b" }));
    }
    std::fs::write(&trials, t).unwrap();
    let reval = tmp.path().join("reval.csv");
    std::fs::write(&reval, "trial_id,mean,sd,n_seeds\nt19,0.58,0.01,5\nt18,0.59,0.01,5\n").unwrap();
    let (o, dir) =
        run_in(&tmp, "h", &["audit-hpo", "--trials", trials.to_str().unwrap(), "--revalidation", reval.to_str().unwrap(), "--k", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let audit = json(&dir.join("trial_audit.json"));
    assert!((audit["regressions"][0]["regression"].as_f64().unwrap() - (0.619 - 0.58)).abs() < 1e-9);
    assert_eq!(json(&dir.join("manifest.json"))["inputs"].as_array().unwrap().len(), 2);
}

#[test]
fn synthetic_cohort_round_trips_through_ingest_and_audits_clean() {
    let tmp = TempDir::new().unwrap();
    let spec = spec_file(tmp.path());
    let (o, dir) = run_in(&tmp, "s", &["synth", "--synth-spec", spec.to_str().unwrap()]);
    assert!(o.status.success());
    let csv = dir.join("cohort.csv");
    let (o, ing) = run_in(&tmp, "i", &["ingest", "--data", csv.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = json(&ing.join("summary.json"));
    assert_eq!(summary["n_records"], 6 * 3 * 10);
    assert_eq!(summary["n_rejected"], 0);
    let (o, la) = run_in(&tmp, "l", &["leakage-audit", "--data", csv.to_str().unwrap(), "--all", "--seeds", "7"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&la.join("leakage.json"))["clean"], true);
}
