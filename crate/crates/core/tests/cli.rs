mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bazaar-tax-sim"))
        .args(args)
        .current_dir(common::repo_root())
        .output()
        .unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(str::to_string).collect())
        .collect()
}

fn out_dir() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

#[test]
fn vat_run_hosts_only_on_cheap_providers() {
    let dir = out_dir();
    let out = dir.path().to_str().unwrap();
    let o = bin(&[
        "run",
        "--config",
        "configs/table2.cfg",
        "--servers",
        "data/table3.csv",
        "--tax",
        "vat",
        "--rate",
        "0.10",
        "--out",
        out,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&dir.path().join("allocation.csv"));
    assert_eq!(rows.len(), 15);
    for row in &rows {
        let idx: usize = row[0][1..].parse().unwrap();
        let hosted: u32 = row[1].parse().unwrap();
        if idx > 6 {
            assert_eq!(hosted, 0, "{row:?}");
        }
    }
    assert!(rows.iter().any(|r| r[1] != "0"));
}

#[test]
fn sweep_writes_one_row_per_penalty() {
    let dir = out_dir();
    let out = dir.path().to_str().unwrap();
    let o = bin(&[
        "sweep",
        "--config",
        "configs/table2.cfg",
        "--tax",
        "greencloud",
        "--rate",
        "0.10",
        "--penalties",
        "80,0.9,1.09,1.1,1.2,2,8,16",
        "--out",
        out,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = csv_rows(&dir.path().join("summary.csv"));
    assert_eq!(summary.len(), 8);
    // summary keeps input order, the plot files are sorted
    assert_eq!(summary[0][2], "80");
    for name in ["laffer.csv", "welfare.csv"] {
        let rows = csv_rows(&dir.path().join(name));
        assert_eq!(rows.len(), 8);
        let ps: Vec<f64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
        assert!(ps.windows(2).all(|w| w[0] <= w[1]), "{name}: {ps:?}");
    }
    assert_eq!(csv_rows(&dir.path().join("allocation.csv")).len(), 8 * 15);
}

#[test]
fn single_penalty_sweep_gives_one_row_plots() {
    let dir = out_dir();
    let out = dir.path().to_str().unwrap();
    let o = bin(&[
        "sweep",
        "--config",
        "configs/table2.cfg",
        "--tax",
        "greencloud",
        "--rate",
        "0.1",
        "--penalties",
        "2",
        "--out",
        out,
    ]);
    assert!(o.status.success());
    assert_eq!(csv_rows(&dir.path().join("laffer.csv")).len(), 1);
    assert_eq!(csv_rows(&dir.path().join("welfare.csv")).len(), 1);
}

#[test]
fn missing_config_exits_2() {
    let o = bin(&["run", "--config", "missing.cfg"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("config not found"));
}

#[test]
fn bad_dataset_leaves_no_outputs() {
    let dir = out_dir();
    let bad = dir.path().join("bad.csv");
    fs::write(
        &bad,
        "provider,vendor_model,ssj_ops_per_watt\nP1,x,498\nP2,y,oops\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = bin(&[
        "run",
        "--config",
        "configs/table2.cfg",
        "--servers",
        bad.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
    assert!(!out.exists() || fs::read_dir(&out).unwrap().next().is_none());
}

#[test]
fn sweep_needs_green_cloud() {
    let dir = out_dir();
    let o = bin(&[
        "sweep",
        "--config",
        "configs/table2.cfg",
        "--penalties",
        "1,2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = bin(&["run", "--config", "configs/table2.cfg", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = out_dir();
    let a = dir.path().join("same");
    let mut first = Vec::new();
    for round in 0..2 {
        let o = bin(&[
            "sweep",
            "--config",
            "configs/table2.cfg",
            "--tax",
            "greencloud",
            "--rate",
            "0.1",
            "--penalties",
            "0.9,1.2,80",
            "--traces",
            "--out",
            a.to_str().unwrap(),
        ]);
        assert!(o.status.success());
        let mut files: Vec<_> = fs::read_dir(&a)
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        files.sort();
        let contents: Vec<_> = files
            .iter()
            .map(|p| (p.clone(), fs::read(p).unwrap()))
            .collect();
        if round == 0 {
            first = contents;
        } else {
            assert_eq!(first, contents);
        }
    }
    assert!(first.iter().any(|(p, _)| p.ends_with("traces.jsonl")));
}

#[test]
fn summary_revenue_matches_agreement_taxes() {
    let dir = out_dir();
    let out = dir.path().to_str().unwrap();
    let o = bin(&[
        "sweep",
        "--config",
        "configs/table2.cfg",
        "--tax",
        "greencloud",
        "--rate",
        "0.1",
        "--penalties",
        "0.9,1.09,80",
        "--out",
        out,
    ]);
    assert!(o.status.success());
    let agreements = csv_rows(&dir.path().join("agreements.csv"));
    for row in csv_rows(&dir.path().join("summary.csv")) {
        let taxes: Vec<f64> = agreements
            .iter()
            .filter(|a| a[0] == row[0])
            .map(|a| a[8].parse().unwrap())
            .collect();
        let revenue: f64 = row[3].parse().unwrap();
        let served: usize = row[5].parse().unwrap();
        assert_eq!(taxes.len(), served);
        // both sides are rounded to 4 decimals
        let slack = 5e-5 * (taxes.len() + 1) as f64;
        assert!(
            (taxes.iter().sum::<f64>() - revenue).abs() <= slack,
            "{row:?}"
        );
    }
}

#[test]
fn manifest_hashes_the_config() {
    let dir = out_dir();
    let out = dir.path().to_str().unwrap();
    let o = bin(&[
        "run",
        "--config",
        "configs/table2.cfg",
        "--traces",
        "--out",
        out,
    ]);
    assert!(o.status.success());
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    let bytes = fs::read(common::repo_root().join("configs/table2.cfg")).unwrap();
    assert_eq!(
        manifest["config_sha256"],
        hex::encode(Sha256::digest(&bytes))
    );
    assert_eq!(manifest["tax_policy"], "vat(rate=0.1)");

    let traces = fs::read_to_string(dir.path().join("traces.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(traces.lines().next().unwrap()).unwrap();
    for key in [
        "session",
        "t",
        "sender",
        "storage",
        "ram",
        "processing_power",
        "net_price",
        "gross_price",
    ] {
        assert!(first.get(key).is_some(), "missing {key}");
    }
}
