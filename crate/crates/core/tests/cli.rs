use std::fs;

use dcnt::cli::dispatch;
use dcnt::config::KEYS;

fn run(args: &[&str]) -> i32 {
    dispatch(std::iter::once("dcnt").chain(args.iter().copied()))
}

#[test]
fn missing_or_unknown_subcommand_is_a_usage_error() {
    assert_eq!(run(&[]), 2);
    assert_eq!(run(&["frobnicate"]), 2);
}

#[test]
fn help_lists_every_configuration_key() {
    let help = dcnt::config::describe_keys();
    for (key, _, _) in KEYS {
        assert!(help.contains(key), "{key} missing from help");
    }
}

#[test]
fn generate_writes_one_image_per_triplet() {
    let dir = tempfile::tempdir().unwrap();
    let d = |p: &str| dir.path().join(p).to_string_lossy().into_owned();
    assert_eq!(run(&["synth", "--out", &d("scene"), "--height", "12", "--width", "12", "--bands", "10", "--per-class", "5"]), 0);
    assert_eq!(run(&["generate", "--cube", &d("scene/cube.hsc"), "--groups", "5", "--out", &d("set")]), 0);
    let ppms = fs::read_dir(dir.path().join("set")).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "ppm")).count();
    assert_eq!(ppms, 10);
    let manifest = fs::read_to_string(dir.path().join("set/manifest.txt")).unwrap();
    assert_eq!(manifest.lines().next(), Some("0 5 4 3"));
    assert_eq!(manifest.lines().count(), 10);
    assert_eq!(run(&["generate", "--cube", &d("scene/cube.hsc"), "--groups", "3", "--out", &d("bad")]), 1);
}

#[test]
fn predict_vote_and_eval_chain_together() {
    let dir = tempfile::tempdir().unwrap();
    let d = |p: &str| dir.path().join(p).to_string_lossy().into_owned();
    assert_eq!(run(&["synth", "--out", &d("scene"), "--height", "12", "--width", "12", "--bands", "9", "--per-class", "5"]), 0);
    assert_eq!(run(&["generate", "--cube", &d("scene/cube.hsc"), "--groups", "3", "--out", &d("set")]), 0);
    fs::write(dir.path().join("c.conf"), "train.epochs = 1\ndcm.Z = 4\ndcm.T = 1\n").unwrap();
    assert_eq!(run(&["train", "--set", &d("set"), "--labels", &d("scene/train.lbl"), "--config", &d("c.conf"), "--out", &d("m.ckpt")]), 0);
    assert_eq!(run(&["predict", "--ckpt", &d("m.ckpt"), "--set", &d("set"), "--out", &d("pred"), "--truth", &d("scene/truth.lbl")]), 0);
    for f in ["prob_0.prb", "class_0.lbl", "vote_hard.lbl", "vote_soft.lbl", "report_hard.json", "report_soft.json"] {
        assert!(dir.path().join("pred").join(f).exists(), "{f} missing");
    }
    assert_eq!(run(&["vote", "--mode", "soft", "--in", &d("pred"), "--out", &d("again.lbl")]), 0);
    assert_eq!(fs::read(d("again.lbl")).unwrap(), fs::read(d("pred/vote_soft.lbl")).unwrap());
    assert_eq!(run(&["eval", "--pred", &d("again.lbl"), "--truth", &d("scene/truth.lbl"), "--report", &d("r.json")]), 0);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d("r.json")).unwrap()).unwrap();
    assert!(report["oa"].as_f64().unwrap() >= 0.0);
    assert_eq!(run(&["areas", "--checkpoint", &d("m.ckpt"), "--image", &d("set/img_0.ppm"), "--out", &d("areas")]), 0);
    assert!(dir.path().join("areas/areas.lbl").exists());
}
