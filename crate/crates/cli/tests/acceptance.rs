//! Acceptance suite. Each test prints one `PASS`/`FAIL` line naming the
//! criterion it checks (visible with `--nocapture`); the libtest line for
//! the test carries the same verdict.
//!
//! The desk experiment trains ten contrastive models and two baselines on
//! the default synthetic dataset and dominates the runtime (about half an
//! hour on one CPU core). Its results are computed once and shared by the
//! four direction-of-effect tests.

use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use viewinv_cli::config::RunConfig;
use viewinv_cli::sweep::{loss_ablation, run_cell};
use viewinv_core::eval::MetricsReport;
use viewinv_core::losses::LossTerms;
use viewinv_core::model::EncoderConfig;
use viewinv_core::train::{cosine_warmup_lr, plateau_lr, PlateauConfig};
use viewinv_core::verify::{
    closed_form_fixtures, gradient_checks, invariance_checks, oracle_equivalence, reduction_identities, CheckOutcome,
};

fn verdict(label: &str, ok: bool, detail: impl std::fmt::Display) -> bool {
    println!("{} {label}: {detail}", if ok { "PASS" } else { "FAIL" });
    ok
}

fn checks_verdict(label: &str, checks: &[CheckOutcome], elapsed: Duration, budget: Duration) -> bool {
    for c in checks {
        println!("    {:<48} worst {:.3e} / {:.0e} over {} cases", c.name, c.worst_error, c.threshold, c.cases);
    }
    let ok = checks.iter().all(|c| c.passed) && elapsed < budget;
    verdict(label, ok, format!("{} checks in {:.1}s (budget {}s)", checks.len(), elapsed.as_secs_f64(), budget.as_secs()))
}

#[test]
fn oracle_equivalence_over_seeds_batches_and_dims() {
    let t = Instant::now();
    let seeds: Vec<u64> = (0..20).collect();
    let mut checks = Vec::new();
    for normalize in [true, false] {
        checks.extend(oracle_equivalence(&seeds, &[2, 4, 6, 8], &[4, 8, 16], normalize).unwrap());
    }
    assert!(checks_verdict("oracle equivalence", &checks, t.elapsed(), Duration::from_secs(60)));
}

#[test]
fn closed_form_fixture_values() {
    let t = Instant::now();
    let checks = closed_form_fixtures().unwrap();
    assert_eq!(checks.len(), 4);
    assert!(checks_verdict("closed-form fixtures", &checks, t.elapsed(), Duration::from_secs(60)));
}

#[test]
fn reduction_identities_between_objectives() {
    let t = Instant::now();
    let checks = reduction_identities(&(0..20).collect::<Vec<_>>()).unwrap();
    assert!(checks_verdict("reduction identities", &checks, t.elapsed(), Duration::from_secs(60)));
}

#[test]
fn gradient_checks_for_every_term_and_total() {
    let t = Instant::now();
    let checks = gradient_checks(10).unwrap();
    assert!(checks_verdict("gradient checks", &checks, t.elapsed(), Duration::from_secs(120)));
}

#[test]
fn invariance_properties() {
    let t = Instant::now();
    let checks = invariance_checks(&(0..20).collect::<Vec<_>>()).unwrap();
    assert!(checks_verdict("invariance properties", &checks, t.elapsed(), Duration::from_secs(60)));
}

#[test]
fn shape_contract_at_both_scales() {
    let full = EncoderConfig::full_scale().shape_trace();
    let desk = EncoderConfig::desk().shape_trace();
    let ok = full.r_b == [512, 28, 28]
        && full.r_a == [1024, 14, 14]
        && full.r_f == [2048, 7, 7]
        && full.z_dim == 128
        && desk.r_b == [64, 4, 4]
        && desk.r_a == [128, 2, 2]
        && desk.r_f == [256, 1, 1];
    assert!(verdict(
        "shape contract",
        ok,
        format!(
            "full r_b {:?} r_a {:?} r_f {:?} z {}; desk r_b {:?} r_a {:?} r_f {:?}",
            full.r_b, full.r_a, full.r_f, full.z_dim, desk.r_b, desk.r_a, desk.r_f
        )
    ));
}

#[test]
fn schedules_match_closed_forms() {
    let pi = std::f64::consts::PI;
    let (epochs, warmup, base) = (100, 10, 1e-3);
    let mut worst: f64 = 0.0;
    for e in 0..epochs {
        let expect = if e < warmup {
            base * e as f64 / warmup as f64
        } else {
            base * 0.5 * (1.0 + (pi * (e - warmup) as f64 / (epochs - warmup) as f64).cos())
        };
        worst = worst.max((cosine_warmup_lr(e, epochs, warmup, base).unwrap() - expect).abs() / base);
    }
    let c = PlateauConfig::default();
    // (history, halvings): the rate is base * factor^k after k halvings,
    // one per patience + 1 consecutive stagnant epochs.
    let cases: Vec<(Vec<f64>, i32)> = vec![
        ((0..20).map(|i| i as f64 * 0.01).collect(), 0),
        (vec![0.5; 4], 0),
        (vec![0.5; 5], 1),
        (vec![0.5; 9], 2),
        (vec![0.5; 13], 3),
        (vec![0.5, 0.5, 0.5, 0.5, 0.6, 0.6, 0.6, 0.6, 0.6], 1),
        ((0..5).map(|i| 0.5 + i as f64 * 1e-5).collect(), 1),
    ];
    for (h, k) in &cases {
        worst = worst.max((plateau_lr(h, 1e-4, c).unwrap() - 1e-4 * c.factor.powi(*k)).abs() / 1e-4);
    }
    assert!(verdict(
        "schedules",
        worst <= 1e-12,
        format!("{epochs} cosine-warmup epochs and {} plateau histories, worst relative deviation {worst:.1e}", cases.len())
    ));
}

// Determinism: the binary twice on one config.

fn tiny_config() -> serde_json::Value {
    serde_json::json!({
        "data": { "synth": { "subjects": 6, "image_size": 16 } },
        "split": { "folds": 3 },
        "encoder": {
            "stage_channels": [4, 8, 8, 16, 16],
            "input_size": 16,
            "final_embed_dim": 16,
            "intermediate_embed_dim": 16,
            "projection_hidden_dim": 32
        },
        "pretrain": { "epochs": 3, "warmup_epochs": 1, "batch_images": 16 },
        "finetune": { "epochs": 3, "batch_images": 16, "val_fraction": 0.25 },
        "baseline": { "epochs": 3, "batch_images": 16, "val_fraction": 0.25 }
    })
}

fn viewinv(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_viewinv")).args(args).output().unwrap();
    assert!(out.status.success(), "viewinv {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn full_run(dir: &Path, config: &Path) {
    let (c, r) = (config.to_str().unwrap(), dir.to_str().unwrap());
    viewinv(&["pretrain", "--config", c, "--run", r]);
    viewinv(&["finetune", "--config", c, "--run", r]);
    viewinv(&["eval", "--config", c, "--run", r, "--model", "finetune"]);
}

#[test]
fn identical_runs_write_identical_logs_and_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("config.json");
    std::fs::write(&config, serde_json::to_string_pretty(&tiny_config()).unwrap()).unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    full_run(&a, &config);
    full_run(&b, &config);
    let mut ok = true;
    let mut detail = Vec::new();
    for file in ["logs.jsonl", "metrics/finetune/metrics.json", "checkpoints/finetune.ckpt"] {
        let (x, y) = (std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap());
        let same = x == y && !x.is_empty();
        ok &= same;
        detail.push(format!("{file} {}", if same { "identical" } else { "differs" }));
    }
    assert!(verdict("determinism", ok, detail.join(", ")));
}

// Desk-scale end-to-end experiment.

struct Desk {
    viewfx_full: f64,
    viewfx_tenth: f64,
    baseline_full: f64,
    baseline_tenth: f64,
    viewfx_max_drop: f64,
    baseline_max_drop: f64,
    /// Mean accuracy over seeds for full, sup+view and sup-only objectives.
    ablation: [(String, Vec<f64>); 3],
    elapsed: Duration,
}

const SEEDS: [u64; 3] = [0, 1, 2];

fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| {
        let t = Instant::now();
        let tmp = tempfile::tempdir().unwrap();
        let base = RunConfig::default();
        assert_eq!(base.data.synth.classes * base.data.synth.views * base.data.synth.subjects, 2000);
        assert_eq!(base.pretrain.epochs, 100);

        let run = |name: &str, terms: LossTerms, seed: u64, fraction: f64, baseline: bool| -> MetricsReport {
            let mut c = base.clone();
            c.pretrain.loss.terms = terms;
            c.pretrain.seed = seed;
            c.finetune.seed = seed;
            c.baseline.seed = seed;
            c.label_fraction = fraction;
            let dir = tmp.path().join(format!("{name}_s{seed}_f{fraction}_{}", if baseline { "baseline" } else { "viewfx" }));
            let r = run_cell(&dir, name, &c, baseline).unwrap();
            println!(
                "    {name:<9} seed {seed} labels {:>3}% {:<8} accuracy {:.4} max view drop {:.4} ({:.0}s elapsed)",
                fraction * 100.0,
                if baseline { "baseline" } else { "viewfx" },
                r.overall_accuracy,
                r.max_view_drop().unwrap_or(f64::NAN),
                t.elapsed().as_secs_f64()
            );
            r
        };
        let terms = |name: &str| loss_ablation().into_iter().find(|(n, _)| *n == name).unwrap().1;

        let full: Vec<MetricsReport> = SEEDS.iter().map(|&s| run("full", terms("full"), s, 1.0, false)).collect();
        let baseline_full = run("full", terms("full"), 0, 1.0, true);
        let viewfx_tenth = run("full", terms("full"), 0, 0.1, false);
        let baseline_tenth = run("full", terms("full"), 0, 0.1, true);
        let acc = |name: &str| -> Vec<f64> { SEEDS.iter().map(|&s| run(name, terms(name), s, 1.0, false).overall_accuracy).collect() };
        let sup_view = acc("sup+view");
        let sup = acc("sup");
        Desk {
            viewfx_full: full[0].overall_accuracy,
            viewfx_tenth: viewfx_tenth.overall_accuracy,
            baseline_full: baseline_full.overall_accuracy,
            baseline_tenth: baseline_tenth.overall_accuracy,
            viewfx_max_drop: full[0].max_view_drop().unwrap(),
            baseline_max_drop: baseline_full.max_view_drop().unwrap(),
            ablation: [
                ("full".into(), full.iter().map(|r| r.overall_accuracy).collect()),
                ("sup+view".into(), sup_view),
                ("sup".into(), sup),
            ],
            elapsed: t.elapsed(),
        }
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn desk_viewfx_matches_or_beats_baseline_with_all_labels() {
    let d = desk();
    assert!(verdict(
        "desk: viewfx >= baseline at 100% labels",
        d.viewfx_full >= d.baseline_full,
        format!("viewfx {:.4} vs baseline {:.4}", d.viewfx_full, d.baseline_full)
    ));
}

#[test]
fn desk_gap_widens_with_fewer_labels() {
    let d = desk();
    let (g10, g100) = (d.viewfx_tenth - d.baseline_tenth, d.viewfx_full - d.baseline_full);
    assert!(verdict(
        "desk: gap at 10% labels > gap at 100%",
        g10 > g100,
        format!(
            "10%: {:.4} - {:.4} = {g10:+.4}; 100%: {:.4} - {:.4} = {g100:+.4}",
            d.viewfx_tenth, d.baseline_tenth, d.viewfx_full, d.baseline_full
        )
    ));
}

#[test]
fn desk_viewfx_drops_less_across_views() {
    let d = desk();
    assert!(verdict(
        "desk: viewfx max per-view drop <= baseline's",
        d.viewfx_max_drop <= d.baseline_max_drop,
        format!("viewfx {:.4} vs baseline {:.4}", d.viewfx_max_drop, d.baseline_max_drop)
    ));
}

#[test]
fn desk_loss_ablation_ordering() {
    let d = desk();
    let m: Vec<f64> = d.ablation.iter().map(|(_, v)| mean(v)).collect();
    let detail: Vec<String> = d.ablation.iter().zip(&m).map(|((n, v), m)| format!("{n} {m:.4} {v:.4?}")).collect();
    assert!(verdict("desk: full >= sup+view >= sup (mean of 3 seeds)", m[0] >= m[1] && m[1] >= m[2], detail.join("; ")));
}

#[test]
fn desk_experiment_within_budget() {
    let d = desk();
    assert!(verdict(
        "desk: runtime under 45 min",
        d.elapsed < Duration::from_secs(45 * 60),
        format!("{:.1} min", d.elapsed.as_secs_f64() / 60.0)
    ));
}
