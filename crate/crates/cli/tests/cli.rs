use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nac_core::desk::desk_set;
use nac_core::io::{center_crop, save_image};
use serde_json::Value;
use tempfile::{tempdir, TempDir};

const TINY: [&str; 6] = ["--epochs", "3", "--blocks", "1", "--channels", "4"];

fn nac(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nac"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("NAC_SERIAL", "1")
        .output()
        .unwrap()
}

fn error_record(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().find(|l| l.starts_with('{')).expect("error record");
    serde_json::from_str(line).unwrap()
}

fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn sample_input(dir: &TempDir, size: usize) -> PathBuf {
    let path = dir.path().join("shapes.pgm");
    save_image(&center_crop(&desk_set()[0].1, size).unwrap(), &path).unwrap();
    path
}

/// Runs the same command twice into separate output roots and compares every file.
fn assert_reproducible(args: &[&str]) -> BTreeMap<PathBuf, Vec<u8>> {
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    let (ra, rb) = (nac(args, a.path()), nac(args, b.path()));
    assert!(ra.status.success(), "{}", String::from_utf8_lossy(&ra.stderr));
    assert!(rb.status.success());
    assert_eq!(ra.stdout.len(), rb.stdout.len());
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert!(!fa.is_empty());
    assert_eq!(fa, fb, "outputs differ between identical runs");
    fa
}

#[test]
fn denoise_writes_three_reproducible_files() {
    let dir = tempdir().unwrap();
    let input = sample_input(&dir, 24);
    let mut args = vec!["denoise", "--input", input.to_str().unwrap(), "--sigma", "10", "--seed", "7"];
    args.extend(TINY);
    let out = assert_reproducible(&args);
    assert_eq!(out.len(), 3);
    let names: Vec<String> = out.keys().map(|p| p.to_string_lossy().replace('\\', "/")).collect();
    let run_id = names[0].split('/').next().unwrap().to_string();
    assert_eq!(run_id.len(), 12);
    for want in ["curves/shapes.csv", "denoised/shapes.pgm", "report.json"] {
        assert!(names.contains(&format!("{run_id}/{want}")), "{names:?}");
    }
    let report: Value = serde_json::from_slice(&out[&PathBuf::from(&run_id).join("report.json")]).unwrap();
    let digest = report["config_digest"].as_str().unwrap();
    assert!(digest.starts_with(&run_id));
    assert_eq!(report["report"]["config_digest"].as_str().unwrap(), digest);
    let curve = String::from_utf8(out[&PathBuf::from(&run_id).join("curves/shapes.csv")].clone()).unwrap();
    assert_eq!(curve.lines().next().unwrap(), "epoch,loss,psnr");
    assert_eq!(curve.lines().count(), 1 + 3);
}

#[test]
fn zero_sigma_denoise_reaches_the_psnr_cap() {
    let dir = tempdir().unwrap();
    let input = sample_input(&dir, 16);
    let out_dir = tempdir().unwrap();
    let mut args = vec!["denoise", "--input", input.to_str().unwrap(), "--sigma", "0"];
    args.extend(TINY);
    let out = nac(&args, out_dir.path());
    assert!(out.status.success());
    let report_path = files(out_dir.path()).into_keys().find(|p| p.ends_with("report.json")).unwrap();
    let report: Value = serde_json::from_slice(&fs::read(out_dir.path().join(report_path)).unwrap()).unwrap();
    assert_eq!(report["report"]["mean_psnr"].as_f64().unwrap(), 99.0);
}

#[test]
fn already_noisy_input_is_denoised_without_reference() {
    let dir = tempdir().unwrap();
    let input = sample_input(&dir, 16);
    let mut args = vec!["denoise", "--input", input.to_str().unwrap(), "--no-synthesis", "--sigma", "10"];
    args.extend(TINY);
    let out = assert_reproducible(&args);
    let report = out.iter().find(|(p, _)| p.ends_with("report.json")).unwrap().1;
    let report: Value = serde_json::from_slice(report).unwrap();
    assert!(report["report"]["rows"][0]["psnr"].is_null());
}

#[test]
fn benchmark_table_has_one_row_per_level() {
    let data = tempdir().unwrap();
    sample_input(&data, 16);
    let mut args = vec!["benchmark", "--dataset", data.path().to_str().unwrap(), "--levels", "5"];
    args.extend(TINY);
    let out = assert_reproducible(&args);
    let csv = out.iter().find(|(p, _)| p.ends_with("benchmark.csv")).unwrap().1;
    let text = String::from_utf8(csv.clone()).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("level,psnr,ssim"));
    assert!(lines[1].starts_with("5,"));
}

#[test]
fn verify_theory_and_gradcheck_are_reproducible() {
    let out = assert_reproducible(&["verify-theory", "--trials", "20000", "--seed", "3"]);
    let report: Value = serde_json::from_slice(out.values().next().unwrap()).unwrap();
    let rows = report["rows"].as_array().unwrap();
    assert!(rows.iter().any(|r| r["predicted"].as_f64() == Some(400.0)));
    let out = assert_reproducible(&["gradcheck"]);
    let report: Value = serde_json::from_slice(out.values().next().unwrap()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 5);
}

#[test]
fn failures_exit_with_their_class() {
    let out_dir = tempdir().unwrap();
    let missing = nac(&["denoise", "--input", "does/not/exist.pgm"], out_dir.path());
    assert_eq!(missing.status.code(), Some(1));
    assert_eq!(error_record(&missing)["error"]["kind"], "input-not-found");

    let few = nac(&["verify-theory", "--trials", "100"], out_dir.path());
    assert_eq!(few.status.code(), Some(1));
    assert_eq!(error_record(&few)["error"]["kind"], "invalid-config");

    let fault = nac(&["gradcheck", "--fault", "conv2d"], out_dir.path());
    assert_eq!(fault.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&fault.stdout).contains("FAIL"));

    let bad_flag = nac(&["denoise", "--sigmaa", "3"], out_dir.path());
    assert_eq!(bad_flag.status.code(), Some(1));
    assert_eq!(error_record(&bad_flag)["error"]["kind"], "invalid-arguments");

    let dir = tempdir().unwrap();
    let input = sample_input(&dir, 16);
    let negative = nac(&["denoise", "--input", input.to_str().unwrap(), "--sigma", "-1"], out_dir.path());
    assert_eq!(negative.status.code(), Some(1));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 5\ntrials = 20000\n").unwrap();
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    let from_file = nac(&["verify-theory", "--config", cfg.to_str().unwrap()], a.path());
    let from_flags = nac(&["verify-theory", "--seed", "5", "--trials", "20000"], b.path());
    assert!(from_file.status.success() && from_flags.status.success());
    assert_eq!(files(a.path()), files(b.path()));
    let c = tempdir().unwrap();
    let overridden = nac(&["verify-theory", "--config", cfg.to_str().unwrap(), "--seed", "6"], c.path());
    assert!(overridden.status.success());
    assert_ne!(files(a.path()).into_keys().next(), files(c.path()).into_keys().next());
}
