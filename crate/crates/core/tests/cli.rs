use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn afdsc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afdsc"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(out: &Path, seed: &str) {
    let o = afdsc(&[
        "synth",
        "--out",
        s(out),
        "--seed",
        seed,
        "--num-docs",
        "80",
        "--num-queries",
        "20",
        "--mixed-docs",
        "5",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

const SMALL: [&str; 6] = ["--epochs", "1", "--batch-size", "16", "--dropout", "0"];

#[test]
fn synth_is_byte_identical_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    synth(&dir.path().join("a"), "7");
    synth(&dir.path().join("b"), "7");
    for f in [
        "train.jsonl",
        "heldout.jsonl",
        "mixed.jsonl",
        "positive.txt",
        "negative.txt",
    ] {
        assert_eq!(
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
    synth(&dir.path().join("c"), "8");
    assert_ne!(
        fs::read(dir.path().join("a/train.jsonl")).unwrap(),
        fs::read(dir.path().join("c/train.jsonl")).unwrap()
    );
}

#[test]
fn train_eval_predict_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, "1");
    let cfg = dir.path().join("c.json");
    fs::write(
        &cfg,
        r#"{"epochs": 4, "model": {"model_dim": 16, "num_heads": 2, "ffn_dim": 32}}"#,
    )
    .unwrap();
    let run = dir.path().join("run");
    let corpus = data.join("train.jsonl");
    let mut args = vec![
        "train",
        "--config",
        s(&cfg),
        "--corpus",
        s(&corpus),
        "--out",
        s(&run),
    ];
    args.extend(SMALL);
    let o = afdsc(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    // Flags win over the file; unspecified fields come from the file.
    let resolved: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("config.json")).unwrap()).unwrap();
    assert_eq!(resolved["epochs"], 1);
    assert_eq!(resolved["model"]["model_dim"], 16);
    assert_eq!(resolved["batch_size"], 16);
    let csv = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("step,loss,wsp,mwp,rating,lr\n"));
    assert_eq!(csv.lines().count(), 1 + 5);

    let ev = dir.path().join("ev");
    let o = afdsc(&[
        "eval",
        "--ckpt",
        s(&run.join("checkpoint.json")),
        "--queries",
        s(&data.join("heldout.jsonl")),
        "--out",
        s(&ev),
        "--format",
        "json",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let results: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ev.join("results.json")).unwrap()).unwrap();
    assert!(results["config_hash"].is_string());
    assert!(results["reports"][0]["runs"][0]["confusion"].is_array());
    assert!(ev.join("config.json").exists());
    let printed: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(printed[0]["mean_accuracy"].is_number());

    let q = dir.path().join("q.jsonl");
    fs::write(
        &q,
        "{\"tokens\":[\"was\",\"good\"],\"pos\":[\"AUX\",\"ADJ\"],\"span\":[1,2]}\n",
    )
    .unwrap();
    let o = afdsc(&[
        "predict",
        "--ckpt",
        s(&run.join("checkpoint.json")),
        "--input",
        s(&q),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let pred: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(pred["no_aspect_fallback"], true);
    assert_eq!(pred["span"], serde_json::json!([1, 2]));
    assert_eq!(pred["rating_dist"].as_array().unwrap().len(), 5);
    let polarity = pred["polarity"].as_str().unwrap();
    assert!(["POS", "NEG", "NEU"].contains(&polarity));
}

#[test]
fn ablate_writes_one_row_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, "2");
    let out = dir.path().join("abl");
    let (corpus, mixed) = (data.join("train.jsonl"), data.join("mixed.jsonl"));
    let mut args = vec![
        "ablate",
        "--corpus",
        s(&corpus),
        "--queries",
        s(&mixed),
        "--out",
        s(&out),
        "--seeds",
        "0",
        "--variants",
        "full,-pos_mask",
    ];
    args.extend(SMALL);
    let o = afdsc(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(table.contains("full") && table.contains("-pos_mask"));
    let results: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("results.json")).unwrap()).unwrap();
    assert_eq!(results["reports"].as_array().unwrap().len(), 2);
}

#[test]
fn exit_codes_by_error_category() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(afdsc(&["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(afdsc(&[]).status.code(), Some(2));

    let data = dir.path().join("data");
    synth(&data, "3");
    let corpus = data.join("train.jsonl");
    let out = dir.path().join("x");
    let o = afdsc(&[
        "train",
        "--corpus",
        s(&corpus),
        "--out",
        s(&out),
        "--epochs",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(3));
    let bad_cfg = dir.path().join("bad.json");
    fs::write(&bad_cfg, "{ nope").unwrap();
    let o = afdsc(&[
        "train",
        "--config",
        s(&bad_cfg),
        "--corpus",
        s(&corpus),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(3));

    let o = afdsc(&[
        "train",
        "--corpus",
        s(&dir.path().join("missing.jsonl")),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(4));
    let bad = dir.path().join("bad.jsonl");
    fs::write(
        &bad,
        "{\"tokens\":[\"a\"],\"pos\":[\"NOUN\"],\"rating\":9}\n",
    )
    .unwrap();
    let o = afdsc(&["train", "--corpus", s(&bad), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains(":1:"));
}
