use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gunet::model::{build_gunet, ModelConfig};
use gunet::train::save_checkpoint;

fn gunet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gunet")).args(args).output().expect("spawn gunet")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

/// Exact integer in the `label ... (N)` line of `count` output.
fn total(text: &str, label: &str) -> u64 {
    let line = text.lines().find(|l| l.starts_with(label)).unwrap();
    line.rsplit_once('(').unwrap().1.trim_end_matches(')').parse().unwrap()
}

#[test]
fn describe_tiny_preset() {
    let o = gunet(&["describe", "--preset", "T"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("widths      24,48,96,192,96,48,24"));
}

#[test]
fn describe_json_matches_table() {
    let o = gunet(&["describe", "--preset", "S", "--json"]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let widths: Vec<u64> = v["stages"].as_array().unwrap().iter().map(|s| s["width"].as_u64().unwrap()).collect();
    assert_eq!(widths, [24, 48, 96, 192, 96, 48, 24]);
    let blocks: Vec<u64> = v["stages"].as_array().unwrap().iter().map(|s| s["blocks"].as_u64().unwrap()).collect();
    assert_eq!(blocks, [4, 4, 4, 8, 4, 4, 4]);
    assert_eq!(v["config"]["fusion_kind"], "sk");
    assert!(v["params"].as_u64().unwrap() > 1_000_000);
}

#[test]
fn invalid_preset_names_the_valid_ones() {
    let o = gunet(&["describe", "--preset", "Q"]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("T, S, B, D"));
}

#[test]
fn count_tiny_preset_and_scaling() {
    let base = gunet(&["count", "--preset", "T"]);
    assert_eq!(code(&base), 0);
    let text = stdout(&base);
    let params = total(&text, "params") as f64;
    assert!((params / 0.805e6 - 1.0).abs() <= 0.10, "{params}");
    assert!(text.contains("params      0.845M"));
    let big = stdout(&gunet(&["count", "--preset", "T", "--res", "512", "512"]));
    let ratio = total(&big, "MACs") as f64 / total(&text, "MACs") as f64;
    assert!((3.9..=4.1).contains(&ratio), "{ratio}");
}

#[test]
fn count_fusion_ablation_ordering_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("rows.csv");
    let sum = stdout(&gunet(&["count", "--preset", "T", "--ablate", "fusion=sum", "--csv", csv.to_str().unwrap()]));
    let cat = stdout(&gunet(&["count", "--preset", "T", "--ablate", "fusion=concat"]));
    assert!(total(&sum, "params") < total(&cat, "params"));
    let rows = fs::read_to_string(&csv).unwrap();
    assert!(rows.lines().count() > 10);
    let bad = gunet(&["count", "--ablate", "fusion=maybe"]);
    assert_eq!(code(&bad), 3);
}

#[test]
fn unknown_flags_are_usage_errors() {
    assert_eq!(code(&gunet(&["count", "--bogus"])), 1);
    assert_eq!(code(&gunet(&["frobnicate"])), 1);
    assert_eq!(code(&gunet(&["describe", "--preset", "T", "--config", "x.toml"])), 1);
}

#[test]
fn every_subcommand_documents_its_flags() {
    let expected: [(&str, &[&str]); 6] = [
        ("describe", &["--preset", "--config", "--ablate", "--json"]),
        ("count", &["--preset", "--config", "--ablate", "--res", "--csv"]),
        ("synth", &["--n", "--size", "--seed", "--depth", "--out"]),
        ("train", &["--config", "--set", "--data", "--out", "--seed", "--quiet"]),
        ("dehaze", &["--checkpoint", "--input", "--output", "--compare"]),
        ("gradcheck", &["--scope", "--verbose"]),
    ];
    for (cmd, flags) in expected {
        let o = gunet(&[cmd, "--help"]);
        assert_eq!(code(&o), 0, "{cmd}");
        let help = stdout(&o);
        for f in flags {
            assert!(help.contains(f), "{cmd} --help lacks {f}");
        }
    }
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["clean", "hazy"] {
        let mut names: Vec<_> = fs::read_dir(dir.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        for p in names {
            out.push((p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()));
        }
    }
    out.push(("params.csv".into(), fs::read(dir.join("params.csv")).unwrap()));
    out
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = gunet(&["synth", "--n", "4", "--size", "24", "--seed", "7", "--out", d.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let (x, y) = (dir_bytes(&a), dir_bytes(&b));
    assert_eq!(x.len(), 9);
    assert_eq!(x, y);
}

#[test]
fn zero_head_checkpoint_reproduces_the_input_png() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = gunet(&["synth", "--n", "1", "--size", "30", "--seed", "3", "--out", data.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let cfg = ModelConfig::micro(4, 1);
    let (_, store) = build_gunet::<f32>(&cfg, 0).unwrap();
    let ckpt = dir.path().join("zero.gunt");
    save_checkpoint(&store, &cfg, &ckpt).unwrap();

    let input = data.join("hazy/0000.png");
    let output = dir.path().join("out.png");
    let compare = dir.path().join("cmp.png");
    let o = gunet(&[
        "dehaze",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--output",
        output.to_str().unwrap(),
        "--compare",
        compare.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read(&input).unwrap(), fs::read(&output).unwrap());
    assert!(compare.exists());
}

#[test]
fn dehaze_error_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.gunt");
    let o = gunet(&["dehaze", "--checkpoint", missing.to_str().unwrap(), "--input", "x.png", "--output", "y.png"]);
    assert_eq!(code(&o), 2);
    let junk = dir.path().join("junk.gunt");
    fs::write(&junk, b"not a checkpoint at all, just bytes padded past the header length").unwrap();
    let o = gunet(&["dehaze", "--checkpoint", junk.to_str().unwrap(), "--input", "x.png", "--output", "y.png"]);
    assert_eq!(code(&o), 2);
}

fn train_args<'a>(out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec![
        "train",
        "--out",
        out,
        "--quiet",
        "--set",
        "model.base_width=4",
        "--set",
        "model.n_stages=3",
        "--set",
        "train.epochs=2",
        "--set",
        "train.warmup_epochs=1",
        "--set",
        "train.frozen_bn_epochs=1",
        "--set",
        "train.samples_per_epoch=8",
        "--set",
        "train.batch_size=4",
        "--set",
        "train.crop=16",
        "--set",
        "train.dtype=double",
        "--set",
        "data.n=10",
        "--set",
        "data.size=20",
        "--set",
        "data.val_count=2",
    ];
    args.extend_from_slice(extra);
    args
}

#[test]
fn train_writes_artifacts_and_honors_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let runs: Vec<_> = ["a", "b", "c"].iter().map(|n| dir.path().join(n)).collect();
    let seeds = ["5", "5", "6"];
    for (out, seed) in runs.iter().zip(seeds) {
        let o = gunet(&train_args(out.to_str().unwrap(), &["--seed", seed]));
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in ["metrics.csv", "best.gunt", "last.gunt", "run.toml"] {
        assert!(runs[0].join(f).exists(), "{f}");
    }
    let metrics = |d: &Path| fs::read_to_string(d.join("metrics.csv")).unwrap();
    assert_eq!(metrics(&runs[0]), metrics(&runs[1]));
    assert_ne!(metrics(&runs[0]), metrics(&runs[2]));
    assert_eq!(metrics(&runs[0]).lines().next().unwrap(), "epoch,step,lr,train_l1,val_psnr,val_ssim");
    assert_eq!(fs::read(runs[0].join("last.gunt")).unwrap(), fs::read(runs[1].join("last.gunt")).unwrap());

    let manifest: toml::Table = fs::read_to_string(runs[0].join("run.toml")).unwrap().parse().unwrap();
    assert_eq!(manifest["results"]["status"].as_str(), Some("completed"));
    assert_eq!(manifest["results"]["steps"].as_integer(), Some(4));
    assert_eq!(manifest["seed"].as_integer(), Some(5));
    assert_eq!(manifest["config"]["model"]["base_width"].as_integer(), Some(4));
    assert!(manifest.contains_key("finished"));

    // The trained checkpoint dehazes a synthesized image.
    let data = dir.path().join("data");
    assert_eq!(code(&gunet(&["synth", "--n", "1", "--size", "20", "--out", data.to_str().unwrap()])), 0);
    let out = dir.path().join("d.png");
    let o = gunet(&[
        "dehaze",
        "--checkpoint",
        runs[0].join("best.gunt").to_str().unwrap(),
        "--input",
        data.join("hazy/0000.png").to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn train_from_a_synth_directory_and_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(code(&gunet(&["synth", "--n", "6", "--size", "16", "--out", data.to_str().unwrap()])), 0);
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "[model]\npreset = \"T\"\nbase_width = 4\nbase_blocks = 1\nn_stages = 3\n\n[train]\nepochs = 1\nwarmup_epochs = 0\nfrozen_bn_epochs = 0\nsamples_per_epoch = 4\nbatch_size = 2\ncrop = 16\n\n[data]\nval_count = 1\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = gunet(&[
        "train",
        "--quiet",
        "--config",
        cfg.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_to_string(out.join("metrics.csv")).unwrap().lines().count(), 2);
}

#[test]
fn train_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = gunet(&["train", "--out", out.to_str().unwrap(), "--set", "train.batch_size=0"]);
    assert_eq!(code(&o), 3);
    let o = gunet(&["train", "--out", out.to_str().unwrap(), "--set", "optim.lr=1"]);
    assert_eq!(code(&o), 3);
    let o = gunet(&["train", "--out", out.to_str().unwrap(), "--config", dir.path().join("none.toml").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn gradcheck_op_scope_passes() {
    let o = gunet(&["gradcheck", "--scope", "op"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains(", 0 failed"));
    assert_eq!(code(&gunet(&["gradcheck", "--scope", "planet"])), 1);
}
