mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::criteria::{mass_bin, read_tree};
use serde_json::{json, Value};

fn mass(args: &[&str]) -> Output {
    Command::new(mass_bin()).args(args).output().unwrap()
}

fn json_out(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const TINY_MODEL: &str =
    r#"{"encoder_hidden":[24],"feature_dim":12,"projector_hidden":24,"projection_dim":6,"predictor_hidden":24}"#;

fn write_configs(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let model: Value = serde_json::from_str(TINY_MODEL).unwrap();
    let train = dir.join("train.json");
    let eval = dir.join("eval.json");
    std::fs::write(
        &train,
        json!({
            "epochs": 1, "batch_size": 8, "view_side": 12, "model": model,
            "data": {"type": "synthetic", "n_per_class": 4, "image_side": 16, "seed": 0}
        })
        .to_string(),
    )
    .unwrap();
    std::fs::write(
        &eval,
        json!({
            "view_side": 12, "model": model,
            "train": {"type": "synthetic", "n_per_class": 10, "image_side": 16, "seed": 0},
            "test": {"type": "synthetic", "n_per_class": 5, "image_side": 16, "seed": 1},
            "sgd": {"epochs": 3, "batch_size": 8}
        })
        .to_string(),
    )
    .unwrap();
    (train, eval)
}

#[test]
fn help_lists_subcommands() {
    let out = mass(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["augment", "cropstats", "pretrain", "lineval", "finetune", "bench"] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(mass(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(mass(&["cropstats", "--strategy", "diagonal"]).status.code(), Some(1));
}

#[test]
fn augment_writes_every_view_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str, threads: &str| {
        let dir = tmp.path().join(name);
        let out = mass(&[
            "augment",
            "--synthetic",
            "2",
            "--image-side",
            "16",
            "--side",
            "12",
            "--views",
            "3",
            "--seed",
            "4",
            "--threads",
            threads,
            "--output",
            p(&dir),
        ]);
        json_out(&out);
        read_tree(&dir)
    };
    let a = run("a", "1");
    assert_eq!(a.len(), 8 * 3);
    assert!(a.iter().all(|(name, bytes)| name.ends_with(".ppm") && bytes.starts_with(b"P6\n12 12\n255\n")));
    assert_eq!(a, run("b", "2"));
}

#[test]
fn augment_from_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("src");
    std::fs::create_dir(&src).unwrap();
    let img = mass_core::image::Image::filled(10, 14, [30, 60, 90]);
    std::fs::write(src.join("flat.ppm"), mass_core::ppm::encode_ppm(&img)).unwrap();
    let out_dir = tmp.path().join("out");
    json_out(&mass(&["augment", "--input", p(&src), "--output", p(&out_dir), "--side", "8", "--m", "0"]));
    let files = read_tree(&out_dir);
    let names: Vec<_> = files.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["flat_view0.ppm", "flat_view1.ppm"]);
}

#[test]
fn cropstats_reports_uniform_moments() {
    let v = json_out(&mass(&["cropstats", "--samples", "20000", "--seed", "3"]));
    let mean = v["mean"].as_f64().unwrap();
    assert!((0.74..0.76).contains(&mean), "{v}");
    assert!(v["min"].as_f64().unwrap() >= 0.5 && v["max"].as_f64().unwrap() <= 1.0);
    let inc = json_out(&mass(&["cropstats", "--strategy", "inception", "--samples", "5000"]));
    assert!(inc["aspect_min"].as_f64().unwrap() > 0.7 && inc["aspect_max"].as_f64().unwrap() < 1.4, "{inc}");
}

#[test]
fn pretrain_then_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let (train_cfg, eval_cfg) = write_configs(tmp.path());
    let ckpt = tmp.path().join("m.ckpt");
    let log = tmp.path().join("log.jsonl");
    let v = json_out(&mass(&["pretrain", "--config", p(&train_cfg), "--checkpoint", p(&ckpt), "--log", p(&log)]));
    assert_eq!(v["epochs_run"], 1);
    assert_eq!(v["config"]["batch_size"], 8);
    assert!(mass_core::checkpoint::load_checkpoint(&ckpt).is_ok());
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 1);

    let report = tmp.path().join("probe.json");
    let v = json_out(&mass(&["lineval", "--checkpoint", p(&ckpt), "--config", p(&eval_cfg), "--output", p(&report)]));
    let top1 = v["top1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&top1));
    assert_eq!(v["n_test"], 20);
    assert!(v.get("top5").is_none());
    assert_eq!(serde_json::from_str::<Value>(&std::fs::read_to_string(&report).unwrap()).unwrap(), v);

    let v = json_out(&mass(&["finetune", "--checkpoint", p(&ckpt), "--config", p(&eval_cfg), "--fraction", "0.5"]));
    assert_eq!(v["n_train"], 20);
}

#[test]
fn lineval_on_random_parameters() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, eval_cfg) = write_configs(tmp.path());
    let v = json_out(&mass(&["lineval", "--random-init", "--config", p(&eval_cfg), "--epochs", "2"]));
    assert_eq!(v["config"]["sgd"]["epochs"], 2);
    assert_eq!(v["protocol"], "linear");
}

#[test]
fn runtime_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, eval_cfg) = write_configs(tmp.path());
    let out = mass(&["finetune", "--random-init", "--config", p(&eval_cfg), "--fraction", "0"]);
    assert_eq!(out.status.code(), Some(2));
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"epochs": 1, "learning_rate": 3}"#).unwrap();
    assert_eq!(mass(&["pretrain", "--config", p(&bad)]).status.code(), Some(2));
    let missing = tmp.path().join("nope.ckpt");
    assert_eq!(mass(&["lineval", "--checkpoint", p(&missing), "--config", p(&eval_cfg)]).status.code(), Some(2));
}

#[test]
fn bench_digest_ignores_thread_count() {
    let run = |threads: &str| {
        json_out(&mass(&["bench", "--iters", "6", "--size", "24", "--side", "16", "--threads", threads]))
    };
    let (a, b) = (run("1"), run("3"));
    assert_eq!(a["digest"], b["digest"]);
    let per_op = a["per_op_micros"].as_object().unwrap();
    assert_eq!(per_op.len(), 20);
    assert!(per_op.contains_key("Equalize") && per_op.contains_key("crop") && per_op.contains_key("resize"));
}
