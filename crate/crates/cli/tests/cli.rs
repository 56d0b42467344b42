//! End-to-end runs of the `fcrx` binary on a small toy world.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn fcrx(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fcrx"))
        .args(args)
        .current_dir(cwd)
        .env_remove("FCRX_REWRITER_URL")
        .env_remove("FCRX_REWRITER_MODEL")
        .env_remove("FCRX_REWRITER_KEY")
        .output()
        .expect("spawn fcrx")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL: &[&str] = &["--set", "toy.toy.n_images=60", "--epochs", "3"];

fn small_demo(dir: &Path, seed: &str) -> Output {
    let mut args = vec!["demo", "--seed", seed, "--out", "run"];
    args.extend_from_slice(SMALL);
    fcrx(&args, dir)
}

#[test]
fn help_and_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&fcrx(&["--help"], tmp.path())), 0);
    assert_eq!(code(&fcrx(&[], tmp.path())), 1);
    assert_eq!(code(&fcrx(&["frobnicate"], tmp.path())), 1);

    let missing = fcrx(&["--config", "nope.toml", "demo"], tmp.path());
    assert_eq!(code(&missing), 1);
    assert!(stderr(&missing).contains("Usage"), "{}", stderr(&missing));

    std::fs::write(tmp.path().join("bad.toml"), "seed = 1\ncolour = \"red\"\n").unwrap();
    assert_eq!(code(&fcrx(&["--config", "bad.toml", "demo"], tmp.path())), 1);
    assert_eq!(code(&fcrx(&["model", "eval", "--checkpoint", "absent.json", "--data", "x"], tmp.path())), 1);
}

#[test]
fn malformed_inputs_are_data_errors() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("ckpt.json"), "{ not json").unwrap();
    std::fs::write(tmp.path().join("data.jsonl"), "").unwrap();
    let o = fcrx(&["model", "eval", "--checkpoint", "ckpt.json", "--data", "data.jsonl", "--out", "o"], tmp.path());
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn divergent_training_is_a_numerical_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = fcrx(&["demo", "--out", "run", "--set", "toy.toy.n_images=40", "--epochs", "2", "--max-lr", "1e300"], tmp.path());
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn demo_pipeline_and_downstream_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let o = small_demo(dir, "3");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let run = dir.join("run");

    let metrics = json(&run.join("metrics.json"));
    assert_eq!(metrics["seed"], 3);
    assert_eq!(metrics["images"], 60);
    for key in ["accuracy", "miou"] {
        assert!(metrics["test"][key].is_number(), "{key}");
    }
    assert!(metrics["assessment"]["mean_fc_ap"].is_number());

    let manifest = json(&run.join("manifest.json"));
    assert_eq!(manifest["command"], "demo");
    assert_eq!(manifest["config"]["model"]["epochs"], 3);
    assert_eq!(manifest["config"]["toy"]["toy"]["n_images"], 60);
    let outputs: Vec<&str> = manifest["outputs"].as_array().unwrap().iter().map(|o| o["file"].as_str().unwrap()).collect();
    for f in ["checkpoint.json", "metrics.json", "eval.json", "table.csv", "data/atlas.json"] {
        assert!(outputs.contains(&f), "{f} not in manifest");
    }
    assert!(!manifest.to_string().contains("unix_ms"));
    assert!(run.join("timestamps.json").exists());

    // Same seed, same bytes.
    let again = dir.join("again");
    std::fs::create_dir(&again).unwrap();
    assert_eq!(code(&small_demo(&again, "3")), 0);
    for f in ["metrics.json", "checkpoint.json", "eval.json", "manifest.json"] {
        assert_eq!(std::fs::read(run.join(f)).unwrap(), std::fs::read(again.join("run").join(f)).unwrap(), "{f}");
    }

    let corpus = std::fs::read_to_string(run.join("data/test_corpus.jsonl")).unwrap();
    let first: Value = serde_json::from_str(corpus.lines().next().unwrap()).unwrap();
    let image = first["image_id"].as_str().unwrap();
    std::fs::write(dir.join("report.txt"), first["automated_report"].as_str().unwrap()).unwrap();
    std::fs::write(dir.join("reference.txt"), first["ground_truth_report"].as_str().unwrap()).unwrap();
    let common = [
        "--checkpoint",
        "run/checkpoint.json",
        "--atlas",
        "run/data/atlas.json",
        "--image",
        image,
        "--report",
        "report.txt",
    ];

    let mut args = vec!["check"];
    args.extend_from_slice(&common);
    args.extend_from_slice(&["--reference", "reference.txt", "--out", "checked"]);
    let o = fcrx(&args, dir);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(dir.join("checked/manifest.json").exists());

    let mut args = vec!["correct"];
    args.extend_from_slice(&common);
    args.extend_from_slice(&["--out", "corrected"]);
    assert_eq!(code(&fcrx(&args, dir)), 0);
    args.push("--require-rewriter");
    let o = fcrx(&args, dir);
    assert_eq!(code(&o), 4, "{}", stderr(&o));

    let o = fcrx(
        &[
            "eval",
            "run",
            "--corpus",
            "run/data/test_corpus.jsonl",
            "--checkpoint",
            "run/checkpoint.json",
            "--atlas",
            "run/data/atlas.json",
            "--out",
            "assessed",
        ],
        dir,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let original = json(&run.join("eval.json"));
    let rerun = json(&dir.join("assessed/eval.json"));
    assert_eq!(original["summary"], rerun["summary"]);

    // Nothing listens on the discard port.
    let o = fcrx(
        &[
            "--set",
            "rewriter.url=\"http://127.0.0.1:9/\"",
            "--set",
            "rewriter.timeout_secs=2",
            "eval",
            "run",
            "--corpus",
            "run/data/test_corpus.jsonl",
            "--checkpoint",
            "run/checkpoint.json",
            "--atlas",
            "run/data/atlas.json",
            "--out",
            "unreachable",
            "--require-rewriter",
        ],
        dir,
    );
    assert_eq!(code(&o), 4, "{}", stderr(&o));

    let o = fcrx(&["model", "eval", "--checkpoint", "run/checkpoint.json", "--data", "run/data/samples.jsonl", "--out", "me"], dir);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn config_file_and_overrides_combine() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("fcrx.toml"),
        "seed = 5\n[toy.toy]\nn_images = 40\n[model]\nepochs = 2\nhidden = [16]\n",
    )
    .unwrap();
    let o = fcrx(&["--config", "fcrx.toml", "--set", "model.proj_dim=8", "demo", "--out", "run"], tmp.path());
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let manifest = json(&tmp.path().join("run/manifest.json"));
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["config"]["model"]["epochs"], 2);
    assert_eq!(manifest["config"]["model"]["proj_dim"], 8);
    assert_eq!(manifest["config"]["model"]["hidden"], serde_json::json!([16]));

    let o = fcrx(&["--config", "fcrx.toml", "--seed", "6", "--set", "model.proj_dim=8", "demo", "--out", "run6"], tmp.path());
    assert_eq!(code(&o), 0);
    let m6 = json(&tmp.path().join("run6/manifest.json"));
    assert_eq!(m6["seed"], 6);
    assert_ne!(m6["config_hash"], manifest["config_hash"]);
}
