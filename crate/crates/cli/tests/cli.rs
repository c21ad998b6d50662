//! End-to-end checks of the `mdlreg` binary: artifact schemas, byte-level
//! reproducibility, and error behaviour.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mdlreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mdlreg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn read(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

const SMALL_TRAIN: &[&str] = &[
    "--synth-classes",
    "3",
    "--synth-dim",
    "8",
    "--synth-per-class",
    "50",
    "--synth-separation",
    "3",
    "--synth-noise",
    "0.8",
    "--epochs",
    "2",
    "--hidden-dim",
    "8",
    "--latent-dim",
    "3",
    "--components",
    "2",
    "--batch-size",
    "32",
    "--learning-rate",
    "0.005",
    "--init-batch",
    "64",
];

#[test]
fn bounds_curve_reproducible_and_ordered() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let res = mdlreg(&[
            "bounds-curve",
            "--out",
            out.to_str().unwrap(),
            "--mdl-min",
            "0.01",
            "--mdl-max",
            "0.05",
            "--mdl-step",
            "0.01",
            "--emp-risks",
            "0.01,0.05",
        ]);
        assert!(
            res.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&res.stderr)
        );
    }
    let a = read(&out_a.join("bounds_curve.csv"));
    let b = read(&out_b.join("bounds_curve.csv"));
    assert_eq!(a, b, "reruns must be byte-identical");
    let text = String::from_utf8(a).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "mdl_rate,emp_risk,thm1,sqrt");
    for line in lines {
        let cols: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(cols.len(), 4);
        assert!(
            cols[2] < cols[3],
            "divergence bound below sqrt bound: {line}"
        );
    }
}

#[test]
fn bounds_residual_error_leaves_no_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    // emp_risk + g reaches 1.2: domain error.
    let res = mdlreg(&[
        "bounds-residual",
        "--out",
        out.to_str().unwrap(),
        "--emp-risk",
        "0.9",
        "--gen-max",
        "0.3",
    ]);
    assert_eq!(res.status.code(), Some(1));
    let stderr = String::from_utf8(res.stderr).unwrap();
    let doc: serde_json::Value = serde_json::from_str(stderr.trim()).expect("stderr is JSON");
    assert!(doc["error"]["code"].is_string());
    assert!(!out.join("bounds_residual.csv").exists());
    if out.exists() {
        let leftovers: Vec<_> = fs::read_dir(&out).unwrap().collect();
        assert!(leftovers.is_empty(), "no partial artifacts allowed");
    }
}

#[test]
fn unknown_config_key_is_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"mm": 1}"#).unwrap();
    let res = mdlreg(&["bounds-curve", "--config", cfg.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
    let stderr = String::from_utf8(res.stderr).unwrap();
    assert!(stderr.contains("mm"), "error must name the key: {stderr}");
}

#[test]
fn flag_overrides_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    // File asks for an invalid grid; the flag overrides it back to sanity.
    fs::write(&cfg, r#"{"gen_max": 0.1, "emp_risk": 0.2}"#).unwrap();
    let out = dir.path().join("out");
    let res = mdlreg(&[
        "bounds-residual",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--emp-risk",
        "0.05",
    ]);
    assert!(res.status.success());
    let text = String::from_utf8(read(&out.join("bounds_residual.csv"))).unwrap();
    // Grid still honors the file's gen_max (flag only overrode emp_risk).
    let last = text.lines().last().unwrap();
    let gen: f64 = last.split(',').next().unwrap().parse().unwrap();
    assert!((gen - 0.1).abs() < 1e-12);
}

#[test]
fn train_beta_zero_metrics_identical_across_kinds() {
    let dir = tempfile::tempdir().unwrap();
    let out_none = dir.path().join("none");
    let out_gm = dir.path().join("gm");
    for (out, reg) in [(&out_none, "none"), (&out_gm, "gm-lossy")] {
        let mut args = vec![
            "train",
            "--out",
            out.to_str().unwrap(),
            "--reg",
            reg,
            "--beta",
            "0",
            "--seed",
            "3",
        ];
        args.extend_from_slice(SMALL_TRAIN);
        let res = mdlreg(&args);
        assert!(
            res.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&res.stderr)
        );
    }
    let a = read(&out_none.join("metrics_none_beta0_seed3.csv"));
    let b = read(&out_gm.join("metrics_gm-lossy_beta0_seed3.csv"));
    assert_eq!(a, b, "beta = 0 runs must produce identical metrics");
}

#[test]
fn train_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let mut args = vec![
            "train",
            "--out",
            out.to_str().unwrap(),
            "--reg",
            "gm-lossy",
            "--beta",
            "0.01",
            "--seed",
            "1",
        ];
        args.extend_from_slice(SMALL_TRAIN);
        let res = mdlreg(&args);
        assert!(
            res.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&res.stderr)
        );
    }
    for name in [
        "metrics_gm-lossy_beta0.01_seed1.csv",
        "summary.json",
        "summary.csv",
    ] {
        assert_eq!(
            read(&out_a.join(name)),
            read(&out_b.join(name)),
            "{name} differs"
        );
    }
    let metrics =
        String::from_utf8(read(&out_a.join("metrics_gm-lossy_beta0.01_seed1.csv"))).unwrap();
    assert_eq!(
        metrics.lines().next().unwrap(),
        "epoch,train_loss,train_acc,test_acc,reg_value,gap"
    );
    assert_eq!(metrics.lines().count(), 3);
}

#[test]
fn prior_fit_bank_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("posteriors.csv");
    let mut csv = String::new();
    // Two well-separated classes in 3 dimensions.
    for i in 0..60 {
        let c = i % 2;
        let base = if c == 0 { -2.0 } else { 2.0 };
        let jitter = (i as f64 * 0.37).sin() * 0.3;
        csv.push_str(&format!(
            "{c}, {}, {}, {}, 0.5, 0.4, 0.6\n",
            base + jitter,
            base - jitter,
            jitter
        ));
    }
    fs::write(&input, csv).unwrap();
    let out = dir.path().join("out");
    let res = mdlreg(&[
        "prior-fit",
        "--input",
        input.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--components",
        "2",
        "--fit-epochs",
        "3",
        "--batch-size",
        "16",
        "--init-batch",
        "32",
        "--seed",
        "5",
    ]);
    assert!(
        res.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&res.stderr)
    );
    let text = String::from_utf8(read(&out.join("prior_bank.json"))).unwrap();
    let bank = mdlreg_cli::bank_io::bank_from_json(&text).unwrap();
    assert_eq!(bank.num_classes(), 2);
    assert_eq!(bank.components_per_class(), 2);
    assert_eq!(bank.dim(), 3);
    // Weights remain simplex points per class.
    for c in 0..2 {
        let sum: f64 = bank.class(c).weights().iter().sum();
        assert!((sum - 1.0).abs() <= 1e-9);
    }
    // Serialization is stable.
    assert_eq!(text, mdlreg_cli::bank_io::bank_to_json(&bank));
}

#[test]
fn train_runs_on_usps_format_files() {
    // Tiny files in the sparse USPS layout (256 features, 1-based labels)
    // exercise the full file -> parse -> standardize -> train path.
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir_all(&data).unwrap();
    let make = |n: usize, stride: usize| {
        let mut text = String::new();
        for i in 0..n {
            let label = i % 10 + 1;
            let sign = if label % 2 == 0 { 1.0 } else { -1.0 };
            text.push_str(&format!("{label}"));
            for k in 0..6 {
                let idx = (i * stride + k * 37) % 256 + 1;
                text.push_str(&format!(" {}:{}", idx, sign * (0.2 + 0.1 * k as f64)));
            }
            text.push('\n');
        }
        text
    };
    fs::write(data.join("usps"), make(120, 7)).unwrap();
    fs::write(data.join("usps.t"), make(40, 11)).unwrap();
    let out = dir.path().join("out");
    let res = mdlreg(&[
        "train",
        "--dataset",
        "usps",
        "--data-dir",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--reg",
        "cdvib",
        "--beta",
        "0.01",
        "--seed",
        "2",
        "--epochs",
        "2",
        "--hidden-dim",
        "8",
        "--latent-dim",
        "4",
        "--batch-size",
        "32",
        "--init-batch",
        "64",
        "--cache",
    ]);
    assert!(res.status.success(), "stderr: {}", String::from_utf8_lossy(&res.stderr));
    // The USPS files were actually used (no synth fallback) and cached.
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(!stderr.contains("falling back"), "unexpected fallback: {stderr}");
    assert!(data.join("usps.cache").exists());
    let summary = String::from_utf8(read(&out.join("summary.json"))).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(doc["dataset"], "usps");
}

#[test]
fn prior_fit_requires_input() {
    let res = mdlreg(&["prior-fit"]);
    assert_eq!(res.status.code(), Some(1));
    let stderr = String::from_utf8(res.stderr).unwrap();
    assert!(stderr.contains("input"), "{stderr}");
}

#[test]
fn kl_check_small_run_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let res = mdlreg(&[
        "kl-check",
        "--out",
        out.to_str().unwrap(),
        "--trials",
        "25",
        "--mc-samples",
        "20000",
        "--seed",
        "9",
    ]);
    assert!(
        res.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&res.stderr)
    );
    let doc: serde_json::Value =
        serde_json::from_str(&String::from_utf8(read(&out.join("kl_check.json"))).unwrap())
            .unwrap();
    assert_eq!(doc["trials"], 25);
    assert!(doc["passed"].as_bool().unwrap());
    assert!(doc["single_component_max_err"].as_f64().unwrap() <= 1e-12);
}

#[test]
fn gradcheck_small_run_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let res = mdlreg(&[
        "gradcheck",
        "--out",
        out.to_str().unwrap(),
        "--gradcheck-seeds",
        "2",
    ]);
    assert!(
        res.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&res.stderr)
    );
    let doc: serde_json::Value =
        serde_json::from_str(&String::from_utf8(read(&out.join("gradcheck.json"))).unwrap())
            .unwrap();
    assert!(doc["passed"].as_bool().unwrap());
    assert!(doc["max_rel_error"].as_f64().unwrap() <= 1e-4);
    assert_eq!(doc["kinds"].as_array().unwrap().len(), 5);
}
