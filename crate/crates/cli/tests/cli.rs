use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use candle_core::{DType, Device};
use uwhdn_core::datasets::synthetic::{synthetic_pairs, write_synthetic_dataset};
use uwhdn_core::datasets::Image;
use uwhdn_core::nn::ArchConfig;
use uwhdn_core::training::{save_checkpoint, TrainConfig, TrainState};

fn uwhdn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uwhdn"))
        .args(args)
        .env_remove("UWHDN_OUT")
        .output()
        .expect("spawn uwhdn")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn toy_arch() -> ArchConfig {
    ArchConfig {
        base_width: 4,
        res_blocks: 1,
    }
}

/// An untrained checkpoint, whose G_C output layer is still zero.
fn fresh_checkpoint(dir: &Path) -> PathBuf {
    fresh_checkpoint_with(dir, toy_arch())
}

fn fresh_checkpoint_with(dir: &Path, arch: ArchConfig) -> PathBuf {
    let config = TrainConfig {
        arch,
        ..Default::default()
    };
    let state = TrainState::new(&config, DType::F32, &Device::Cpu).unwrap();
    let path = dir.join("fresh.uwhdn");
    save_checkpoint(&state, &path).unwrap();
    path
}

fn synthetic_root(dir: &Path, count: usize, size: usize) -> PathBuf {
    let root = dir.join("data");
    write_synthetic_dataset(&root, &synthetic_pairs(count, size, 5)).unwrap();
    root
}

const SUBCOMMANDS: [&str; 6] = ["prepare-data", "train", "restore", "evaluate", "diagnose", "synthesize"];

#[test]
fn help_for_every_subcommand() {
    let top = uwhdn(&["--help"]);
    assert!(top.status.success());
    for sub in SUBCOMMANDS {
        assert!(stdout(&top).contains(sub), "{sub} missing from top-level help");
        let o = uwhdn(&[sub, "--help"]);
        assert!(o.status.success(), "{sub} --help failed");
        let text = stdout(&o);
        assert!(text.contains("--out") || sub == "diagnose", "{sub}: {text}");
        assert!(text.contains("--help"));
    }
}

#[test]
fn train_help_defaults_match_config_defaults() {
    let text = stdout(&uwhdn(&["train", "--help"]));
    let d = TrainConfig::default();
    let flat: String = text.split_whitespace().collect::<Vec<_>>().join(" ");
    for (flag, value) in [
        ("--patch", d.patch.to_string()),
        ("--batch", d.batch.to_string()),
        ("--learning-rate", d.learning_rate.to_string()),
        ("--beta1", d.beta1.to_string()),
        ("--beta2", d.beta2.to_string()),
        ("--epochs", d.epochs.to_string()),
        ("--seed", d.seed.to_string()),
        ("--log-every", d.log_every.to_string()),
        ("--checkpoint-every", d.checkpoint_every.to_string()),
        ("--base-width", d.arch.base_width.to_string()),
        ("--res-blocks", d.arch.res_blocks.to_string()),
    ] {
        let at = flat.find(&format!("{flag} <")).unwrap_or_else(|| panic!("{flag} not documented"));
        let rest = &flat[at..];
        let shown = rest.split("[default: ").nth(1).and_then(|s| s.split(']').next()).unwrap();
        assert_eq!(shown, value, "{flag}");
    }
    assert_eq!((d.patch, d.batch, d.learning_rate, d.epochs), (128, 4, 0.0005, 80));
}

#[test]
fn unknown_flag_and_bad_value_exit_2() {
    assert_eq!(uwhdn(&["restore", "--frobnicate"]).status.code(), Some(2));
    assert_eq!(uwhdn(&["train", "--data", "x", "--patch", "big"]).status.code(), Some(2));
    assert_eq!(uwhdn(&["nonsense"]).status.code(), Some(2));
}

#[test]
fn prepare_data_890_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("uieb");
    for sub in ["underwater", "clean"] {
        for i in 0..890 {
            Image::filled(2, 2, [0.5; 3]).save_png(&root.join(sub).join(format!("{i:04}.png"))).unwrap();
        }
    }
    let out = dir.path().join("prep");
    let o = uwhdn(&["prepare-data", "--root", p(&root), "--kind", "UIEB", "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "underwater=445 clean=445");
    assert!(out.join("manifest.jsonl").is_file());
    assert!(out.join("split.json").is_file());
}

#[test]
fn prepare_data_is_deterministic_and_rejects_missing_root() {
    let dir = tempfile::tempdir().unwrap();
    let root = synthetic_root(dir.path(), 10, 8);
    let outs: Vec<PathBuf> = ["a", "b"].iter().map(|n| dir.path().join(n)).collect();
    for out in &outs {
        let o = uwhdn(&["prepare-data", "--root", p(&root), "--kind", "synthetic", "--seed", "9", "--out", p(out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert_eq!(stdout(&o).trim(), "underwater=5 clean=5");
    }
    assert_eq!(
        std::fs::read(outs[0].join("split.json")).unwrap(),
        std::fs::read(outs[1].join("split.json")).unwrap()
    );

    let missing = dir.path().join("no_such_root");
    let o = uwhdn(&["prepare-data", "--root", p(&missing), "--kind", "UIEB", "--out", p(&outs[0])]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no_such_root"), "{}", stderr(&o));

    let o = uwhdn(&["prepare-data", "--root", p(&root), "--kind", "nope", "--out", p(&outs[0])]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_validation_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = uwhdn(&["train", "--data", p(dir.path()), "--epochs", "0", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("epochs"));
    let o = uwhdn(&["train", "--data", p(dir.path()), "--patch", "30", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "patchh = 32\n").unwrap();
    let o = uwhdn(&["train", "--data", p(dir.path()), "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    // no manifest under --data
    let o = uwhdn(&["train", "--data", p(dir.path()), "--steps", "1", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

fn train_toy(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--data",
        p(data),
        "--out",
        p(out),
        "--patch",
        "16",
        "--batch",
        "2",
        "--base-width",
        "4",
        "--res-blocks",
        "1",
    ];
    args.extend_from_slice(extra);
    uwhdn(&args)
}

#[test]
fn train_end_to_end_is_deterministic_and_respects_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let root = synthetic_root(dir.path(), 6, 24);
    let prep = dir.path().join("prep");
    assert!(uwhdn(&["prepare-data", "--root", p(&root), "--kind", "synthetic", "--out", p(&prep)]).status.success());

    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "steps = 4\nlearning_rate = 0.001\ncheckpoint_every = 2\n").unwrap();
    let runs: Vec<PathBuf> = ["r1", "r2"].iter().map(|n| dir.path().join(n)).collect();
    for run in &runs {
        let o = train_toy(&prep, run, &["--config", p(&cfg), "--steps", "3"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let resolved = TrainConfig::from_file(&runs[0].join("config.toml")).unwrap();
    assert_eq!(resolved.steps, Some(3));
    assert_eq!(resolved.learning_rate, 0.001);
    assert_eq!(resolved.patch, 16);
    assert_eq!(resolved.beta2, 0.99);

    for f in ["loss_trace.csv", "final.uwhdn", "checkpoints/step_000002.uwhdn", "checkpoints/step_000003.uwhdn"] {
        let a = std::fs::read(runs[0].join(f)).unwrap_or_else(|_| panic!("{f} missing"));
        assert_eq!(a, std::fs::read(runs[1].join(f)).unwrap(), "{f} differs");
    }
    let trace = std::fs::read_to_string(runs[0].join("loss_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 4);

    let o = train_toy(
        &prep,
        &runs[0],
        &["--base-width", "8", "--steps", "5", "--resume", p(&runs[0].join("final.uwhdn"))],
    );
    assert_eq!(o.status.code(), Some(2), "arch mismatch on resume: {}", stderr(&o));
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let root = synthetic_root(dir.path(), 4, 16);
    let prep = dir.path().join("prep");
    assert!(uwhdn(&["prepare-data", "--root", p(&root), "--kind", "synthetic", "--out", p(&prep)]).status.success());
    let o = train_toy(&prep, &dir.path().join("run"), &["--steps", "20", "--learning-rate", "1e30"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"));
}

#[test]
fn restore_zero_residual_writes_identical_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = fresh_checkpoint(dir.path());
    let pairs = synthetic_pairs(5, 20, 3);
    let input = dir.path().join("in");
    for pair in &pairs {
        pair.underwater.save_png(&input.join(format!("{}.png", pair.id))).unwrap();
    }
    std::fs::write(input.join("notes.txt"), "not an image").unwrap();
    let out = dir.path().join("out");
    let o = uwhdn(&["restore", "--checkpoint", p(&ckpt), "--input", p(&input), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_dir(&out).unwrap().count(), 10);
    for pair in &pairs {
        let c = std::fs::read(out.join(format!("{}_content.png", pair.id))).unwrap();
        let r = std::fs::read(out.join(format!("{}_restored.png", pair.id))).unwrap();
        assert_eq!(c, r);
    }

    let single = dir.path().join("big.png");
    Image::from_fn(128, 128, |x, y| [x as f32 / 128.0, y as f32 / 128.0, 0.4]).save_png(&single).unwrap();
    let out1 = dir.path().join("out1");
    let o = uwhdn(&["restore", "--checkpoint", p(&ckpt), "--input", p(&single), "--out", p(&out1)]);
    assert!(o.status.success());
    let mut names: Vec<String> =
        std::fs::read_dir(&out1).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["big_content.png", "big_restored.png"]);
    let restored = Image::load(&out1.join("big_restored.png")).unwrap();
    assert_eq!((restored.width(), restored.height()), (128, 128));
}

#[test]
fn restore_reports_per_file_failures() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = fresh_checkpoint(dir.path());
    let input = dir.path().join("in");
    Image::filled(12, 12, [0.2, 0.5, 0.6]).save_png(&input.join("good.png")).unwrap();
    std::fs::write(input.join("broken.png"), b"not a png").unwrap();
    let out = dir.path().join("out");
    let o = uwhdn(&["restore", "--checkpoint", p(&ckpt), "--input", p(&input), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(out.join("good_restored.png").is_file());
    assert!(stderr(&o).contains("1 of 2"));

    let o = uwhdn(&["restore", "--checkpoint", p(&input.join("good.png")), "--input", p(&input), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2), "a non-checkpoint is a validation error");
}

#[test]
fn evaluate_writes_one_row_per_pair() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = fresh_checkpoint(dir.path());
    let root = dir.path().join("test");
    write_synthetic_dataset(&root, &synthetic_pairs(90, 16, 8)).unwrap();
    let prep = dir.path().join("prep");
    assert!(uwhdn(&["prepare-data", "--root", p(&root), "--kind", "synthetic", "--out", p(&prep)]).status.success());
    let out = dir.path().join("eval");
    let o = uwhdn(&[
        "evaluate",
        "--checkpoint",
        p(&ckpt),
        "--manifest",
        p(&prep.join("manifest.jsonl")),
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 91);
    assert!(out.join("summary.json").is_file());
    assert!(out.join("grid.png").is_file());
    assert!(!out.join("loss_curves.png").exists());
    assert!(stdout(&o).contains("evaluated images: 90"));
}

#[test]
fn diagnose_prints_ratio_near_one_when_untrained() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = fresh_checkpoint_with(dir.path(), ArchConfig::default());
    let root = synthetic_root(dir.path(), 12, 32);
    let prep = dir.path().join("prep");
    assert!(uwhdn(&["prepare-data", "--root", p(&root), "--kind", "synthetic", "--out", p(&prep)]).status.success());
    let o = uwhdn(&["diagnose", "--checkpoint", p(&ckpt), "--manifest", p(&prep.join("manifest.jsonl"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let ratio: f64 = text.trim().rsplit("ratio=").next().unwrap().parse().unwrap();
    assert!((0.7..=1.3).contains(&ratio), "{text}");
}

#[test]
fn synthesize_identity_and_generated_sets() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    let o = uwhdn(&["synthesize", "--count", "3", "--size", "16", "--seed", "2", "--out", p(&gen)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_dir(gen.join("clean")).unwrap().count(), 3);
    assert_eq!(std::fs::read_dir(gen.join("underwater")).unwrap().count(), 3);

    let id = dir.path().join("id");
    let o = uwhdn(&["synthesize", "--input", p(&gen.join("clean")), "--identity", "--out", p(&id)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for e in std::fs::read_dir(gen.join("clean")).unwrap() {
        let src = e.unwrap().path();
        let dst = id.join(src.file_name().unwrap());
        assert_eq!(Image::load(&src).unwrap(), Image::load(&dst).unwrap());
    }

    let degraded: Vec<PathBuf> = ["d1", "d2"].iter().map(|n| dir.path().join(n)).collect();
    for d in &degraded {
        assert!(uwhdn(&["synthesize", "--input", p(&gen.join("clean")), "--seed", "4", "--out", p(d)]).status.success());
    }
    let a = std::fs::read(degraded[0].join("syn00000.png")).unwrap();
    assert_eq!(a, std::fs::read(degraded[1].join("syn00000.png")).unwrap());
    assert_ne!(a, std::fs::read(gen.join("clean").join("syn00000.png")).unwrap());

    assert_eq!(uwhdn(&["synthesize", "--out", p(&id)]).status.code(), Some(2));
    assert_eq!(uwhdn(&["synthesize", "--count", "2", "--identity", "--out", p(&id)]).status.code(), Some(2));
}

#[test]
fn output_root_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("envout");
    let o = Command::new(env!("CARGO_BIN_EXE_uwhdn"))
        .args(["synthesize", "--count", "1", "--size", "8"])
        .env("UWHDN_OUT", &out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("clean").join("syn00000.png").is_file());
}
