use std::path::Path;
use std::process::{Command, Output};

fn viewinv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_viewinv")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = viewinv(args);
    assert!(out.status.success(), "viewinv {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn tiny(manifest: Option<&Path>) -> serde_json::Value {
    let mut v = serde_json::json!({
        "data": { "synth": { "subjects": 6, "image_size": 16 } },
        "split": { "folds": 3 },
        "encoder": {
            "stage_channels": [4, 8, 8, 16, 16],
            "input_size": 16,
            "final_embed_dim": 16,
            "intermediate_embed_dim": 16,
            "projection_hidden_dim": 32
        },
        "pretrain": { "epochs": 2, "warmup_epochs": 1, "batch_images": 16 },
        "finetune": { "epochs": 2, "batch_images": 16, "val_fraction": 0.25 },
        "baseline": { "epochs": 2, "batch_images": 16, "val_fraction": 0.25 }
    });
    if let Some(m) = manifest {
        v["data"]["manifest"] = m.to_str().unwrap().into();
    }
    v
}

fn write(path: &Path, v: &serde_json::Value) -> String {
    std::fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn full_pipeline_from_generated_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let gen_cfg = write(&tmp.path().join("gen.json"), &tiny(None));
    ok(&["synth-gen", "--config", &gen_cfg, "--out", data.to_str().unwrap()]);
    let manifest = data.join("manifest.csv");
    assert!(manifest.exists());
    assert_eq!(std::fs::read_dir(data.join("images")).unwrap().count(), 6 * 8 * 5);

    let cfg = write(&tmp.path().join("run.json"), &tiny(Some(&manifest)));
    let run = tmp.path().join("run");
    let r = run.to_str().unwrap();
    ok(&["pretrain", "--config", &cfg, "--run", r, "--checkpoint-every", "1"]);
    ok(&["finetune", "--config", &cfg, "--run", r]);
    ok(&["train-baseline", "--config", &cfg, "--run", r]);
    let eval = ok(&["eval", "--config", &cfg, "--run", r, "--model", "finetune"]);
    assert!(eval.contains("accuracy"), "{eval}");
    ok(&["eval", "--config", &cfg, "--run", r, "--model", "baseline"]);
    ok(&["report", "--run", r]);

    for f in [
        "config.json",
        "logs.jsonl",
        "checkpoints/pretrain.ckpt",
        "checkpoints/finetune.ckpt",
        "checkpoints/baseline.ckpt",
        "metrics/finetune/metrics.json",
        "metrics/finetune/per_view.csv",
        "metrics/finetune/confusion.csv",
        "metrics/finetune/training.json",
        "metrics/baseline/metrics.json",
        "reports/summary.csv",
        "reports/view_drop.csv",
        "reports/view_drop.png",
        "reports/loss_curve.csv",
        "reports/loss_curve.png",
        "reports/confusion_finetune.png",
    ] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.join("metrics/finetune/metrics.json")).unwrap()).unwrap();
    assert_eq!(m["schema_version"], 1);
    assert_eq!(m["n_test"], 2 * 8 * 5);
    assert_eq!(m["per_view"].as_array().unwrap().len(), 5);
    let logs = std::fs::read_to_string(run.join("logs.jsonl")).unwrap();
    // 2 pretrain + 2 finetune + 2 baseline epochs
    assert_eq!(logs.lines().count(), 6);
}

#[test]
fn resume_of_a_finished_run_reproduces_its_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(&tmp.path().join("c.json"), &tiny(None));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["pretrain", "--config", &cfg, "--run", a.to_str().unwrap()]);
    let ck = a.join("checkpoints/pretrain.ckpt");
    ok(&["pretrain", "--config", &cfg, "--run", b.to_str().unwrap(), "--resume", ck.to_str().unwrap()]);
    assert_eq!(std::fs::read(&ck).unwrap(), std::fs::read(b.join("checkpoints/pretrain.ckpt")).unwrap());

    // A different pretraining config may not continue the checkpoint.
    let mut other = tiny(None);
    other["pretrain"]["epochs"] = 3.into();
    let other = write(&tmp.path().join("o.json"), &other);
    let out = viewinv(&["pretrain", "--config", &other, "--run", tmp.path().join("c").to_str().unwrap(), "--resume", ck.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_errors_exit_2_and_runtime_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let mut bad = tiny(None);
    bad["pretrain"]["loss"] = serde_json::json!({ "gama": 0.3 });
    let bad = write(&tmp.path().join("bad.json"), &bad);
    let out = viewinv(&["pretrain", "--config", &bad, "--run", tmp.path().join("x").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("pretrain.loss") && err.contains("gama"), "{err}");

    let mut invalid = tiny(None);
    invalid["label_fraction"] = 0.0.into();
    let invalid = write(&tmp.path().join("inv.json"), &invalid);
    assert_eq!(viewinv(&["pretrain", "--config", &invalid, "--run", tmp.path().join("y").to_str().unwrap()]).status.code(), Some(2));

    assert_eq!(viewinv(&["pretrain", "--bogus"]).status.code(), Some(2));

    // A run directory keeps the config it was created with.
    let cfg = write(&tmp.path().join("c.json"), &tiny(None));
    let run = tmp.path().join("r");
    let r = run.to_str().unwrap();
    let out = viewinv(&["eval", "--config", &cfg, "--run", r]);
    assert_eq!(out.status.code(), Some(1), "missing checkpoint: {}", String::from_utf8_lossy(&out.stderr));
    let mut changed = tiny(None);
    changed["label_seed"] = 5.into();
    let changed = write(&tmp.path().join("d.json"), &changed);
    assert_eq!(viewinv(&["pretrain", "--config", &changed, "--run", r]).status.code(), Some(2));

    assert_eq!(viewinv(&["report", "--run", tmp.path().join("nowhere").to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn verify_writes_report_and_exits_0() {
    let tmp = tempfile::tempdir().unwrap();
    let stdout = ok(&["verify", "--out", tmp.path().to_str().unwrap()]);
    assert!(!stdout.contains("FAIL"), "{stdout}");
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(tmp.path().join("verify_report.json")).unwrap()).unwrap();
    assert_eq!(v["passed"], true);
    assert!(v["checks"].as_array().unwrap().len() >= 20);
}

#[test]
fn sweep_grid_writes_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = tiny(None);
    c["pretrain"]["epochs"] = 2.into();
    let cfg = write(&tmp.path().join("c.json"), &c);
    let root = tmp.path().join("sweep");
    let r = root.to_str().unwrap();
    ok(&["sweep", "--config", &cfg, "--run", r, "--grid", "gamma=0.25,0.5", "--seeds", "0,1"]);
    let rows = std::fs::read_to_string(root.join("reports/sweep.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 2 * 2);
    assert!(rows.starts_with("cell,model,seed,accuracy,max_view_drop"));
    let summary = std::fs::read_to_string(root.join("reports/sweep_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 2);
    ok(&["report", "--run", r]);
    assert!(root.join("reports/sweep.png").exists());

    let lf = tmp.path().join("lf");
    ok(&["sweep", "--config", &cfg, "--run", lf.to_str().unwrap(), "--label-fractions", "0.5,1.0"]);
    let curve = std::fs::read_to_string(lf.join("reports/label_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 3);
    assert_eq!(viewinv(&["sweep", "--config", &cfg, "--run", lf.to_str().unwrap(), "--label-fractions", "1.5"]).status.code(), Some(2));
}
