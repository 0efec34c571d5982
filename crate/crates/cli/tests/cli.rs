use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rankdistill::{skdt, SeededRng, Tensor};
use serde_json::Value;
use tempfile::TempDir;

fn skd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skd"))
        .args(args)
        .env("SKD_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&o.stdout),
            String::from_utf8_lossy(&o.stderr)
        )
    })
}

fn put(dir: &Path, name: &str, t: &Tensor) -> String {
    let p = dir.join(name);
    skdt::write_tensor(t, &p).unwrap();
    p.to_str().unwrap().to_string()
}

fn random(seed: u64, shape: &[usize]) -> Tensor {
    SeededRng::new(seed).normal_tensor(shape).unwrap()
}

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures/normalization")
        .join(name)
        .to_str()
        .unwrap()
        .to_string()
}

fn loss_value(args: &[&str]) -> f64 {
    let o = skd(args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    stdout_json(&o)["loss"].as_f64().unwrap()
}

#[test]
fn spearman_of_a_file_with_itself_is_zero() {
    let dir = TempDir::new().unwrap();
    let t = put(dir.path(), "t.skdt", &random(1, &[2, 3, 6, 6]));
    let v = loss_value(&["loss", "spearman", &t, &t]);
    assert!(v.abs() <= 1e-12, "{v}");
}

#[test]
fn pearson_ignores_affine_maps() {
    let dir = TempDir::new().unwrap();
    let base = random(2, &[2, 3, 5, 5]);
    let t = put(dir.path(), "t.skdt", &base);
    let s = put(dir.path(), "s.skdt", &base.map(|v| 2.0 * v + 1.0));
    let v = loss_value(&["loss", "pearson", &s, &t]);
    assert!(v.abs() <= 1e-12, "{v}");
}

#[test]
fn total_with_zero_alpha_is_the_sum_of_its_parts() {
    let dir = TempDir::new().unwrap();
    let t = put(dir.path(), "t.skdt", &random(3, &[2, 4, 6, 6]));
    let s = put(dir.path(), "s.skdt", &random(4, &[2, 4, 6, 6]));
    let pool = ["--pool", "4x4"];
    let total = loss_value(&[&["loss", "total", &s, &t, "--alpha", "0"][..], &pool].concat());
    let scene = loss_value(&[&["loss", "scene", &s, &t][..], &pool].concat());
    let response = loss_value(&["loss", "response", &s, &t]);
    assert!((total - (scene + response)).abs() <= 1e-12, "{total} vs {}", scene + response);

    let spearman = loss_value(&[&["loss", "spearman", &s, &t][..], &pool].concat());
    let doubled = loss_value(&[&["loss", "total", &s, &t, "--alpha", "2"][..], &pool].concat());
    assert!((doubled - (scene + response + 2.0 * spearman)).abs() <= 1e-12);
}

#[test]
fn gradient_file_matches_reported_norm() {
    let dir = TempDir::new().unwrap();
    let t = put(dir.path(), "t.skdt", &random(5, &[1, 3, 4, 4]));
    let s = put(dir.path(), "s.skdt", &random(6, &[1, 3, 4, 4]));
    let g = dir.path().join("g.skdt");
    let o = skd(&["loss", "spearman", &s, &t, "--epsilon", "0.3", "--grad-out", g.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let norm = stdout_json(&o)["grad_norm"].as_f64().unwrap();
    let grad = skdt::read_tensor(&g).unwrap();
    assert_eq!(grad.shape(), &[1, 3, 4, 4]);
    assert!((grad.norm() - norm).abs() <= 1e-12 * (1.0 + norm));
    assert!(norm > 0.0);
}

#[test]
fn mask_file_restricts_masked_losses() {
    let dir = TempDir::new().unwrap();
    let t = Tensor::zeros(&[1, 1, 2, 2]).unwrap();
    let s = Tensor::new(vec![1, 1, 2, 2], vec![4.0, 1.0, 1.0, 1.0]).unwrap();
    let m = Tensor::new(vec![2, 2], vec![0.0, 1.0, 1.0, 1.0]).unwrap();
    let (t, s, m) = (put(dir.path(), "t", &t), put(dir.path(), "s", &s), put(dir.path(), "m", &m));
    assert!((loss_value(&["loss", "mask-l1", &s, &t]) - 7.0 / 4.0).abs() <= 1e-12);
    assert!((loss_value(&["loss", "mask-l1", &s, &t, "--mask", &m]) - 1.0).abs() <= 1e-12);
}

#[test]
fn loss_input_errors_use_exit_code_two() {
    let dir = TempDir::new().unwrap();
    let a = put(dir.path(), "a.skdt", &random(7, &[1, 2, 3, 3]));
    let b = put(dir.path(), "b.skdt", &random(8, &[1, 2, 4, 4]));
    let missing = dir.path().join("missing.skdt");
    let junk = dir.path().join("junk.skdt");
    fs::write(&junk, b"NOPE0000").unwrap();
    for args in [
        vec!["loss", "pearson", &a, &b],
        vec!["loss", "pearson", &a, missing.to_str().unwrap()],
        vec!["loss", "pearson", junk.to_str().unwrap(), &a],
        vec!["loss", "spearman", &a, &a, "--epsilon", "-1"],
        vec!["loss", "spearman", &a, &a, "--pool", "0x2"],
        vec!["loss", "hinge", &a, &a],
    ] {
        let o = skd(&args);
        assert_eq!(code(&o), 2, "{args:?}");
        assert!(o.stdout.is_empty());
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn constant_input_is_degenerate() {
    let dir = TempDir::new().unwrap();
    let flat = put(dir.path(), "flat.skdt", &Tensor::full(&[1, 2, 3, 3], 0.5).unwrap());
    let t = put(dir.path(), "t.skdt", &random(9, &[1, 2, 3, 3]));
    for kind in ["spearman", "pearson"] {
        assert_eq!(code(&skd(&["loss", kind, &flat, &t])), 3, "{kind}");
    }
}

#[test]
fn gradcheck_passes_for_spearman() {
    let o = skd(&["gradcheck", "spearman", "--seed", "4"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let j = stdout_json(&o);
    assert_eq!(j["passed"], Value::Bool(true));
    assert_eq!(j["cases"].as_u64(), Some(100));
    assert!(j["max_rel_error"].as_f64().unwrap() <= 1e-6);
}

#[test]
fn gradcheck_with_zero_tolerance_fails_cleanly() {
    let o = skd(&["gradcheck", "pearson", "--tolerance", "0", "--cases", "3"]);
    assert_eq!(code(&o), 1);
    let j = stdout_json(&o);
    assert_eq!(j["passed"], Value::Bool(false));
    assert!(j["max_rel_error"].as_f64().unwrap() > 0.0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("worst relative error"));
}

#[test]
fn gradcheck_rejects_unknown_kinds() {
    let o = skd(&["gradcheck", "hinge"]);
    assert_eq!(code(&o), 2);
    assert!(o.stdout.is_empty());
    assert!(String::from_utf8_lossy(&o.stderr).contains("spearman"));
    assert_eq!(code(&skd(&["gradcheck", "pool", "--tolerance", "-1"])), 2);
}

#[test]
fn analyze_self_agreement_is_perfect() {
    let dir = TempDir::new().unwrap();
    let t = put(dir.path(), "t.skdt", &random(10, &[2, 5, 4, 4]));
    let out = dir.path().join("out");
    let o = skd(&["analyze", &t, &t, "--out-dir", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let j = stdout_json(&o);
    assert_eq!(j["agreements"][0]["pearson"].as_f64(), Some(1.0));
    assert_eq!(j["agreements"][0]["spearman"].as_f64(), Some(1.0));
    let csv = fs::read_to_string(out.join("agreement.csv")).unwrap();
    assert_eq!(csv, "a,b,pearson,spearman\n0,1,1,1\n");
    assert!(out.join("curve_0.csv").exists() && out.join("curve_1.csv").exists());
}

#[test]
fn analyze_single_channel_curve_has_one_full_bin() {
    let dir = TempDir::new().unwrap();
    let t = put(dir.path(), "t.skdt", &random(11, &[3, 1, 4, 5]));
    let o = skd(&["analyze", &t, "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let j = stdout_json(&o);
    assert_eq!(j["curves"][0]["counts"], serde_json::json!([60]));
    assert!(j.get("agreements").is_none());
    let csv = fs::read_to_string(dir.path().join("curve_0.csv")).unwrap();
    assert_eq!(csv, "channel,count\n0,60\n");
}

#[test]
fn analyze_fixture_pair_matches_hand_counts() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    let (t, s) = (fixture("teacher.skdt"), fixture("student.skdt"));
    let raw = stdout_json(&skd(&["analyze", &t, &s, "--out-dir", out]));
    assert_eq!(raw["curves"][0]["counts"], serde_json::json!([2, 2, 3, 9]));
    assert_eq!(raw["agreements"][0]["spearman"].as_f64(), Some(1.0));
    let norm = stdout_json(&skd(&["analyze", &t, &s, "--normalize", "--out-dir", out]));
    assert_eq!(norm["curves"][0]["counts"], serde_json::json!([4, 5, 4, 3]));
    assert_eq!(norm["curves"][1]["counts"], serde_json::json!([5, 4, 3, 4]));
    assert_eq!(norm["agreements"][0]["spearman"].as_f64(), Some(0.0));
}

#[test]
fn analyze_degenerate_and_io_errors() {
    let dir = TempDir::new().unwrap();
    let one = put(dir.path(), "one.skdt", &random(12, &[1, 1, 3, 3]));
    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&skd(&["analyze", &one, &one, "--out-dir", out])), 3);
    assert_eq!(code(&skd(&["analyze", "/nonexistent/x.skdt", "--out-dir", out])), 2);
}

fn config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.cfg");
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

const SMALL: &str = "batch = 1\nchannels = 4\nheight = 16\nwidth = 16\nobjects = 2\n";

#[test]
fn train_writes_reproducible_reports() {
    let dir = TempDir::new().unwrap();
    let mut outputs = Vec::new();
    for run in ["first", "second"] {
        let out = dir.path().join(run);
        let cfg = config(
            dir.path(),
            &format!("# smoke run\nseed = 5\nsteps = 4\nlr = 1.0\nout_dir = {}\n{SMALL}", out.display()),
        );
        let o = skd(&["train", &cfg]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let j = stdout_json(&o);
        assert!(j["runs"][0]["final_rank_agreement"].is_f64());
        outputs.push((
            fs::read(out.join("report.json")).unwrap(),
            fs::read(out.join("trace.csv")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
    let trace = String::from_utf8(outputs[0].1.clone()).unwrap();
    assert_eq!(trace.lines().count(), 5);
    assert!(trace.starts_with("step,loss_total,loss_scc,loss_sd,loss_od,task_loss,rank_agreement\n"));
}

#[test]
fn zero_learning_rate_keeps_metrics() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("o");
    let cfg = config(dir.path(), &format!("seed=1\nsteps=1\nlr=0\nout_dir={}\n{SMALL}", out.display()));
    assert_eq!(code(&skd(&["train", &cfg])), 0);
    let report: Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["initial"], report["final"]);
    assert_eq!(report["seed"].as_u64(), Some(1));
    assert_eq!(report["distillation"], Value::Bool(true));
}

#[test]
fn table2_preset_writes_eight_reports() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("t2");
    let cfg = config(
        dir.path(),
        &format!("seed=2\nsteps=2\nlr=1\nout_dir={}\npreset=table2\n{SMALL}", out.display()),
    );
    let o = skd(&["train", &cfg]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let names: Vec<String> = stdout_json(&o)["runs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["name"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(names, ["a", "b", "c", "d", "e", "f", "g", "h"]);
    for n in &names {
        let report: Value =
            serde_json::from_slice(&fs::read(out.join(n).join("report.json")).unwrap()).unwrap();
        assert_eq!(report["distillation"], Value::Bool(n != "a"));
    }
}

#[test]
fn config_errors_name_the_key() {
    let dir = TempDir::new().unwrap();
    let cases = [
        ("seed=1\nsteps=1\nlr=0\nout_dir=x\nwarmup=3\n", "`warmup`"),
        ("seed=1\nsteps=1\nout_dir=x\n", "`lr`"),
        ("seed=1\nsteps=1\nlr=fast\nout_dir=x\n", "`lr`"),
    ];
    for (body, key) in cases {
        let o = skd(&["train", &config(dir.path(), body)]);
        assert_eq!(code(&o), 2, "{body}");
        assert!(String::from_utf8_lossy(&o.stderr).contains(key), "{body}");
        assert!(o.stdout.is_empty());
    }
    assert_eq!(code(&skd(&["train", "/nonexistent.cfg"])), 2);
}

#[test]
fn divergence_exits_with_code_four() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("d");
    let cfg = config(
        dir.path(),
        &format!("seed=7\nsteps=50\nlr=1e6\nhead_lr_scale=1\nout_dir={}\n{SMALL}", out.display()),
    );
    let o = skd(&["train", &cfg]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout_json(&o)["runs"][0]["diverged_at_step"].is_u64());
}
