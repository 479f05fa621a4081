use std::path::Path;
use std::process::Command;

use ecgan::data::read_pnm;
use ecgan::harness::{cmd_eval, cmd_generate, cmd_sweep, cmd_train, Axis, ExperimentConfig};
use ecgan::nn::{Checkpoint, Network, NetworkSpec, Role};
use ecgan::tensor::Rng;
use ecgan::train::Variant;
use ecgan::Error;

fn config_json(out: &Path, variant: &str, extra: &str) -> String {
    format!(
        r#"{{
  "data": {{"source": "synth", "n_per_class": 4, "test_per_class": 4, "classes": 3, "size": 16, "noise": 0.1, "seed": 5}},
  "variant": "{variant}",
  "hyper": {{"epochs": 2, "batch_size": 4}},
  "models": {{"gan_width": 8, "classifier_width": 8}},
  "output_dir": {out:?}{extra}
}}"#
    )
}

fn config(out: &Path, variant: &str, extra: &str) -> ExperimentConfig {
    ExperimentConfig::from_json(&config_json(out, variant, extra)).unwrap()
}

#[test]
fn unknown_fields_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ok = config_json(dir.path(), "ecgan", "");
    assert!(ExperimentConfig::from_json(&ok).is_ok());
    for (from, to) in [
        ("\"variant\"", "\"varient\""),
        ("\"epochs\"", "\"epoch\""),
        ("\"noise\"", "\"nosie\""),
        ("\"classifier_width\"", "\"width\""),
    ] {
        let bad = ok.replacen(from, to, 1);
        assert!(matches!(ExperimentConfig::from_json(&bad), Err(Error::Config(_))), "{to}");
    }
    let bad = ok.replace("\"ecgan\"", "\"ec-gan\"");
    assert!(ExperimentConfig::from_json(&bad).is_err());
    let bad = ok.replace("\"epochs\": 2", "\"threshold\": 1.5");
    assert!(ExperimentConfig::from_json(&bad).is_err());
}

#[test]
fn variant_names() {
    for v in [Variant::EcGan, Variant::Shared, Variant::Baseline, Variant::Conditional] {
        assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.name()));
    }
}

#[test]
fn train_writes_reproducible_metrics_and_checkpoints() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg_a = config(a.path(), "ecgan", "");
    let accs = cmd_train(&cfg_a).unwrap();
    cmd_train(&config(b.path(), "ecgan", "")).unwrap();
    assert_eq!(accs.len(), 1);

    let metrics = std::fs::read(a.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics, std::fs::read(b.path().join("metrics.csv")).unwrap());
    let text = String::from_utf8(metrics).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "run_id,variant,percent,lambda,seed,epoch,loss_d,loss_g,loss_c_sup,loss_c_unsup,keep_rate,train_acc,test_acc"
    );
    assert_eq!(lines.count(), 2);

    let back = ExperimentConfig::from_path(&a.path().join("run.json")).unwrap();
    assert_eq!(back, cfg_a);

    let run = a.path().join("ecgan-p100-l0.1-s0");
    for role in ["generator", "discriminator", "classifier"] {
        let ck = Checkpoint::load(&run.join(format!("{role}.ckpt"))).unwrap();
        assert_eq!(ck.role().to_string(), role);
        assert!(ck.optimizer().is_some());
    }
    // The stored classifier reproduces the reported accuracy.
    let acc = cmd_eval(&run.join("classifier.ckpt"), "synth:n_per_class=4,noise=0.1,seed=6").unwrap();
    assert_eq!(format!("{acc:.6}"), text.lines().last().unwrap().rsplit(',').next().unwrap());
}

#[test]
fn baseline_metrics_leave_gan_columns_empty() {
    let dir = tempfile::tempdir().unwrap();
    cmd_train(&config(dir.path(), "baseline", r#", "checkpoints": false, "dataset_percent": [50, 100]"#)).unwrap();
    let text = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("baseline-p50-l0.1-s0,baseline,50.0,0.1,0,0,,,"));
    assert!(!dir.path().join("baseline-p100-l0.1-s0").exists());
}

#[test]
fn flag_seed_replaces_config_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), "ecgan", r#", "seeds": [1, 2]"#);
    cfg.resolve_seeds(Some(9)).unwrap();
    assert_eq!(cfg.seeds, [9]);
}

#[test]
fn lambda_sweep_summarises_each_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "ecgan", r#", "lambdas": [0.0, 0.5], "seeds": [0, 1], "checkpoints": false"#);
    let rows = cmd_sweep(&cfg, Axis::Lambda).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!((rows[0].value.as_str(), rows[0].variant.as_str()), ("0", "baseline"));
    assert!(rows.iter().all(|r| r.seeds == 2 && r.axis == "lambda"));
    // The baseline does not depend on lambda and is trained once per seed.
    assert_eq!(rows[0].mean_test_acc, rows[2].mean_test_acc);
    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 2 * 6);
    let summary = std::fs::read_to_string(dir.path().join("sweep_summary.csv")).unwrap();
    assert_eq!(summary.lines().next().unwrap(), "axis,value,variant,seeds,mean_test_acc,std_test_acc");
    assert_eq!(summary.lines().count(), 5);
}

#[test]
fn strategy_sweep_covers_four_strategies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "ecgan",
        r#", "sweep_variants": ["baseline"], "checkpoints": false"#,
    );
    let rows = cmd_sweep(&cfg, Axis::Strategy).unwrap();
    let values: Vec<&str> = rows.iter().map(|r| r.value.as_str()).collect();
    assert_eq!(values, ["none", "augment", "decay", "both"]);
    assert!(dir.path().join("metrics.csv").exists());
}

#[test]
fn generate_writes_a_p6_grid() {
    let dir = tempfile::tempdir().unwrap();
    let g = Network::build(&NetworkSpec::new(Role::Generator, 16, 3, 4).with_width(8).with_conditional(true), &mut Rng::seed(0)).unwrap();
    let ckpt = dir.path().join("g.ckpt");
    Checkpoint::capture(&g, None).save(&ckpt).unwrap();
    let out = dir.path().join("grid.ppm");
    cmd_generate(&ckpt, 7, Some(2), &out, 3).unwrap();
    let bytes = std::fs::read(&out).unwrap();
    // P6 grammar: magic, whitespace-separated width height maxval, one
    // whitespace byte, then width·height·3 samples.
    let header: Vec<&str> = std::str::from_utf8(&bytes[..13]).unwrap().split_ascii_whitespace().take(4).collect();
    assert_eq!(header, ["P6", "48", "48", "255"]);
    assert_eq!(bytes.len(), "P6\n48 48\n255\n".len() + 48 * 48 * 3);
    let img = read_pnm(&out).unwrap();
    assert_eq!((img.width, img.height, img.channels), (48, 48, 3));
    // Tiles 8 and 9 of a 3x3 grid for 7 samples stay black.
    assert!(img.pixels[(47 * 48 + 40)..(47 * 48 + 48)].iter().all(|&p| p == 0.0));

    assert!(cmd_generate(&ckpt, 2, Some(4), &out, 0).is_err());
    assert!(cmd_generate(&ckpt, 0, None, &out, 0).is_err());
}

#[test]
fn eval_rejects_non_classifier_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let g = Network::build(&NetworkSpec::new(Role::Generator, 16, 1, 3), &mut Rng::seed(0)).unwrap();
    let ckpt = dir.path().join("g.ckpt");
    Checkpoint::capture(&g, None).save(&ckpt).unwrap();
    let err = cmd_eval(&ckpt, "synth:n_per_class=2").unwrap_err();
    assert!(matches!(&err, Error::RoleMismatch { expected, found } if expected == "classifier" && found == "generator"), "{err}");

    let sd = Network::build(&NetworkSpec::new(Role::SharedDiscriminator, 16, 1, 3), &mut Rng::seed(0)).unwrap();
    let ckpt = dir.path().join("sd.ckpt");
    Checkpoint::capture(&sd, None).save(&ckpt).unwrap();
    let acc = cmd_eval(&ckpt, "synth:n_per_class=2").unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(cmd_eval(&ckpt, "synth:n=2").is_err());
    assert!(cmd_eval(&ckpt, "tarball:x").is_err());
}

fn ecgan() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ecgan"));
    cmd.env_remove("ECGAN_SEED");
    cmd
}

fn run_ids(dir: &Path) -> Vec<String> {
    let mut ids: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .collect();
    ids.sort();
    ids
}

#[test]
fn cli_seed_precedence() {
    let root = tempfile::tempdir().unwrap();
    let cases: [(&str, Option<&str>, Option<&str>); 3] = [
        ("config", None, None),
        ("env", Some("7"), None),
        ("flag", Some("7"), Some("11")),
    ];
    let mut seen = Vec::new();
    for (name, env, flag) in cases {
        let out = root.path().join(name);
        let cfg = root.path().join(format!("{name}.json"));
        std::fs::write(&cfg, config_json(&out, "baseline", r#", "seeds": [3]"#)).unwrap();
        let mut cmd = ecgan();
        cmd.arg("train").arg(&cfg);
        if let Some(e) = env {
            cmd.env("ECGAN_SEED", e);
        }
        if let Some(f) = flag {
            cmd.args(["--seed", f]);
        }
        let o = cmd.output().unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(String::from_utf8_lossy(&o.stdout).starts_with("final_accuracy="));
        seen.push(run_ids(&out));
    }
    assert_eq!(seen, [["baseline-p100-l0.1-s3"], ["baseline-p100-l0.1-s7"], ["baseline-p100-l0.1-s11"]]);
}

#[test]
fn cli_generate_and_eval() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("c.json");
    std::fs::write(&cfg, config_json(&root.path().join("out"), "ecgan", "")).unwrap();
    assert!(ecgan().arg("train").arg(&cfg).status().unwrap().success());
    let run = root.path().join("out/ecgan-p100-l0.1-s0");

    let grid = root.path().join("g.pgm");
    let o = ecgan()
        .arg("generate")
        .arg(run.join("generator.ckpt"))
        .args(["--n", "4", "--out"])
        .arg(&grid)
        .env("ECGAN_SEED", "2")
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let img = read_pnm(&grid).unwrap();
    assert_eq!((img.width, img.height, img.channels), (32, 32, 1));

    let o = ecgan().arg("eval").arg(run.join("classifier.ckpt")).args(["--data", "synth:n_per_class=3"]).output().unwrap();
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("accuracy="));

    let o = ecgan().arg("eval").arg(run.join("generator.ckpt")).args(["--data", "synth:"]).output().unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("error:"));
}

#[test]
fn cli_rejects_bad_input() {
    let root = tempfile::tempdir().unwrap();
    let cfg = root.path().join("c.json");
    std::fs::write(&cfg, config_json(root.path(), "ecgan", "").replace("\"epochs\"", "\"epoks\"")).unwrap();
    let o = ecgan().arg("train").arg(&cfg).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("epoks"));

    let o = ecgan().arg("train").arg(root.path().join("missing.json")).output().unwrap();
    assert_eq!(o.status.code(), Some(1));

    std::fs::write(&cfg, config_json(root.path(), "ecgan", "")).unwrap();
    let o = ecgan().arg("sweep").arg(&cfg).args(["--axis", "width"]).output().unwrap();
    assert!(!o.status.success());
    let o = ecgan().arg("train").arg(&cfg).env("ECGAN_SEED", "abc").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}
