use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[model]
max_len = 12
embed_dim = 8
heads = 2
hidden_dim = 12
blocks = 2
dropout = 0.1

[train]
epochs = 2
batch_size = 16

[data]
source = "keyword-sentiment"
train_size = 120
dev_size = 40
eval_size = 40
seed = 3

[sweep]
deltas = [0.0, 0.001, 0.1, 0.5]
"#;

fn beex(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_beex"))
        .args(args)
        .current_dir(dir)
        .env_remove("BEEX_SEED")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), TINY).unwrap();
    dir
}

#[test]
fn usage_errors_exit_with_2() {
    let dir = setup();
    assert_eq!(
        beex(&["train", "--bogus"], dir.path()).status.code(),
        Some(2)
    );
    assert_eq!(beex(&["frobnicate"], dir.path()).status.code(), Some(2));
}

#[test]
fn config_errors_exit_with_2() {
    let dir = setup();
    fs::write(dir.path().join("bad.toml"), "[model]\nlayers = 3\n").unwrap();
    let out = beex(&["build-vocab", "--config", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = beex(&["build-vocab", "--config", "missing.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = beex(
        &["build-vocab", "--config", "c.toml", "--binarizer", "sign"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_beex"))
        .args(["build-vocab", "--config", "c.toml"])
        .current_dir(dir.path())
        .env("BEEX_SEED", "seven")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn data_errors_exit_with_3() {
    let dir = setup();
    let cfg = "[data]\nsource = \"tsv\"\ntrain_path = \"nope.tsv\"\ndev_path = \"nope.tsv\"\n";
    fs::write(dir.path().join("t.toml"), cfg).unwrap();
    assert_eq!(
        beex(&["build-vocab", "--config", "t.toml"], dir.path())
            .status
            .code(),
        Some(3)
    );

    fs::write(dir.path().join("train.tsv"), "text\tlabel\nhello\t1\n").unwrap();
    let cfg = "[data]\nsource = \"tsv\"\ntrain_path = \"train.tsv\"\ndev_path = \"train.tsv\"\n";
    fs::write(dir.path().join("t.toml"), cfg).unwrap();
    let out = beex(&["build-vocab", "--config", "t.toml"], dir.path());
    assert_eq!(out.status.code(), Some(3), "missing `sentence` column");
}

#[test]
fn tsv_pipeline() {
    let dir = setup();
    let mut tsv = String::from("sentence\tlabel\n");
    for i in 0..30 {
        tsv.push_str(&format!(
            "good film number {i}\t1\nbad film number {i}\t0\n"
        ));
    }
    fs::write(dir.path().join("d.tsv"), tsv).unwrap();
    let cfg = format!(
        "{}\n",
        TINY.replace(
            "source = \"keyword-sentiment\"",
            "source = \"tsv\"\ntrain_path = \"d.tsv\"\ndev_path = \"d.tsv\""
        )
    );
    fs::write(dir.path().join("t.toml"), cfg).unwrap();
    let out = ok(&beex(
        &["build-vocab", "--config", "t.toml", "--out-dir", "v"],
        dir.path(),
    ));
    assert!(out.contains("2 labels"), "{out}");
    let vocab = fs::read_to_string(dir.path().join("v/vocab.tsv")).unwrap();
    assert!(vocab.lines().any(|l| l.contains("good")));
}

#[test]
fn train_is_seed_deterministic_and_artifacts_round_trip() {
    let dir = setup();
    let p = dir.path();
    ok(&beex(
        &[
            "train",
            "--config",
            "c.toml",
            "--seed",
            "7",
            "--out-dir",
            "a",
        ],
        p,
    ));
    ok(&beex(
        &[
            "train",
            "--config",
            "c.toml",
            "--seed",
            "7",
            "--out-dir",
            "b",
        ],
        p,
    ));
    let out = Command::new(env!("CARGO_BIN_EXE_beex"))
        .args(["train", "--config", "c.toml", "--out-dir", "e"])
        .current_dir(p)
        .env("BEEX_SEED", "7")
        .output()
        .unwrap();
    ok(&out);
    ok(&beex(
        &[
            "train",
            "--config",
            "c.toml",
            "--seed",
            "8",
            "--out-dir",
            "c",
        ],
        p,
    ));
    let read = |f: &str| fs::read(p.join(f)).unwrap();
    assert_eq!(read("a/latent.beex"), read("b/latent.beex"));
    assert_eq!(read("a/latent.beex"), read("e/latent.beex"));
    assert_eq!(read("a/frozen.beex"), read("b/frozen.beex"));
    assert_eq!(read("a/train_log.jsonl"), read("b/train_log.jsonl"));
    assert_ne!(read("a/latent.beex"), read("c/latent.beex"));

    let log = String::from_utf8(read("a/train_log.jsonl")).unwrap();
    let epochs = log
        .lines()
        .filter(|l| l.contains("\"event\":\"epoch\""))
        .count();
    assert_eq!(epochs, 2);

    // freezing the latent checkpoint reproduces the frozen one
    ok(&beex(
        &[
            "freeze",
            "--checkpoint",
            "a/latent.beex",
            "--out",
            "a/refrozen.beex",
        ],
        p,
    ));
    assert_eq!(read("a/refrozen.beex"), read("a/frozen.beex"));

    let info = ok(&beex(&["inspect", "--checkpoint", "a/frozen.beex"], p));
    assert!(info.contains("Frozen") && info.contains("ratio"), "{info}");
    let info = ok(&beex(&["inspect", "--config", "c.toml"], p));
    assert!(info.contains("latent bytes"), "{info}");
}

#[test]
fn eval_with_and_without_early_exit() {
    let dir = setup();
    let p = dir.path();
    ok(&beex(&["train", "--config", "c.toml", "--out-dir", "r"], p));
    ok(&beex(
        &[
            "eval",
            "--config",
            "c.toml",
            "--out-dir",
            "r",
            "--delta",
            "0.5",
        ],
        p,
    ));
    ok(&beex(
        &["eval", "--config", "c.toml", "--out-dir", "r", "--no-ee"],
        p,
    ));
    ok(&beex(
        &["eval", "--config", "c.toml", "--out-dir", "r", "--latent"],
        p,
    ));
    let load = |f: &str| -> serde_json::Value {
        serde_json::from_str(&fs::read_to_string(p.join("r").join(f)).unwrap()).unwrap()
    };
    let ee = load("eval.json");
    let wee = load("eval_no_ee.json");
    assert_eq!(wee["reduction_percent"], 0.0);
    assert_eq!(wee["exit_histogram"], serde_json::json!([0, 40]));
    assert_eq!(ee["delta"], 0.5);
    assert_eq!(ee["ledger_wee"], wee["ledger_wee"]);
    let hist: Vec<u64> = serde_json::from_value(ee["exit_histogram"].clone()).unwrap();
    assert_eq!(hist.iter().sum::<u64>(), 40);
    assert!(load("eval_latent.json")["metric"].is_number());

    let csv = fs::read_to_string(p.join("r/eval_histogram.csv")).unwrap();
    assert!(csv.starts_with("exit_block,count,fraction"));
    let traces = fs::read_to_string(p.join("r/eval_traces.jsonl")).unwrap();
    assert_eq!(traces.lines().count(), 40);

    ok(&beex(&["sweep", "--config", "c.toml", "--out-dir", "r"], p));
    let sweep = fs::read_to_string(p.join("r/sweep.csv")).unwrap();
    let depths: Vec<f64> = sweep
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(depths.len(), 4);
    assert!(depths.windows(2).all(|w| w[1] <= w[0]), "{depths:?}");

    let out = beex(
        &[
            "eval",
            "--config",
            "c.toml",
            "--out-dir",
            "r",
            "--latent",
            "--checkpoint",
            "r/frozen.beex",
        ],
        p,
    );
    assert_eq!(out.status.code(), Some(2));
    let out = beex(&["eval", "--config", "c.toml", "--out-dir", "nowhere"], p);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn ablate_clip_compares_against_b2() {
    let dir = setup();
    let p = dir.path();
    let out = ok(&beex(
        &[
            "ablate",
            "--config",
            "c.toml",
            "--binarizer",
            "clip",
            "--out-dir",
            "ab",
        ],
        p,
    ));
    assert!(out.contains("clip ≤ b2"), "{out}");
    let csv = fs::read_to_string(p.join("ab/ablation.csv")).unwrap();
    let variants: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(variants, ["b2", "clip"]);
}
