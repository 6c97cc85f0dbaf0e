use std::path::Path;
use std::process::{Command, Output};

fn mmsense(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmsense")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn synth(dir: &Path, preset: &str, instances: &str, modality: &str) -> String {
    let out = mmsense(&["synth", "--preset", preset, "--instances", instances, "--modality", modality, "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    dir.join("manifest.jsonl").to_str().unwrap().to_string()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn synth_is_reproducible_and_counts_samples() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    synth(&a, "single-env", "2", "both");
    synth(&b, "single-env", "2", "both");
    let ta = tree(&a);
    assert_eq!(ta, tree(&b));
    let manifest = std::fs::read_to_string(a.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 40);

    let c = tmp.path().join("c");
    let out = mmsense(&["synth", "--preset", "single-env", "--instances", "2", "--seed", "9", "--out", c.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert_ne!(ta, tree(&c));
}

#[test]
fn large_beam_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(tmp.path(), "single-env", "50", "beamsnr");
    let text = std::fs::read_to_string(manifest).unwrap();
    assert_eq!(text.lines().count(), 500);
    assert!(text.lines().all(|l| l.contains("\"beamsnr\"")));
}

#[test]
fn usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("x");
    let out_dir = out_dir.to_str().unwrap();
    assert_eq!(code(&mmsense(&["synth", "--instances", "0", "--out", out_dir])), 1);
    assert_eq!(code(&mmsense(&["train", "--bogus"])), 1);
    assert_eq!(code(&mmsense(&["frobnicate"])), 1);
    assert_eq!(code(&mmsense(&["--help"])), 0);
    assert_eq!(code(&mmsense(&["--version"])), 0);

    let manifest = synth(&tmp.path().join("d"), "two-env", "1", "beamsnr");
    let same = mmsense(&[
        "xenv", "--manifest", &manifest, "--modality", "beamsnr", "--train-env", "home", "--test-env", "home", "--out", out_dir,
    ]);
    assert_eq!(code(&same), 1, "{}", stderr(&same));
    let bad_batch = mmsense(&["train", "--manifest", &manifest, "--modality", "beamsnr", "--batch", "0", "--out", out_dir]);
    assert_eq!(code(&bad_batch), 1);
    let mixed = mmsense(&[
        "orient", "--manifest", &manifest, "--modality", "beamsnr", "--train", "both", "--test", "90", "--out", out_dir,
    ]);
    assert_eq!(code(&mixed), 1, "{}", stderr(&mixed));
}

#[test]
fn data_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("absent.jsonl");
    let out = mmsense(&["train", "--manifest", missing.to_str().unwrap(), "--modality", "beamsnr", "--out", "unused"]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("absent.jsonl"));

    let manifest = synth(&tmp.path().join("d"), "two-env", "1", "beamsnr");
    let out = mmsense(&[
        "xenv", "--manifest", &manifest, "--modality", "beamsnr", "--train-env", "home", "--test-env", "lab", "--out", "unused",
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    let out = mmsense(&["eval", "--model", missing.to_str().unwrap(), "--manifest", &manifest]);
    assert_eq!(code(&out), 2);
}

#[test]
fn auto_batch_follows_modality() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("d"), "single-env", "4", "both");
    for (modality, batch, length) in [("beamsnr", 16, 128), ("csi", 64, 512)] {
        let out_dir = tmp.path().join(modality);
        let out = mmsense(&[
            "train", "--manifest", &manifest, "--modality", modality, "--epochs", "1", "--out", out_dir.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let config = json(&out_dir.join("config.json"));
        assert_eq!(config["train"]["batch_size"], batch);
        assert_eq!(config["train"]["input_length"], length);
        assert_eq!(config["settings"]["manifest"], manifest.as_str());
        for name in ["report.txt", "confusion.csv", "loss.csv", "model.bin"] {
            assert!(out_dir.join(name).exists(), "{name}");
        }
    }
}

#[test]
fn training_runs_are_reproducible_and_reportable() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("d"), "single-env", "4", "beamsnr");
    let run = |name: &str| {
        let dir = tmp.path().join(name);
        let out = mmsense(&[
            "train", "--manifest", &manifest, "--modality", "beamsnr", "--epochs", "2", "--input-length", "32", "--seed", "3",
            "--out", dir.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        dir
    };
    let a = run("a");
    let b = run("b");
    let strip = |t: Vec<(String, Vec<u8>)>| -> Vec<(String, Vec<u8>)> {
        t.into_iter().filter(|(n, _)| n != "config.json").collect()
    };
    assert_eq!(strip(tree(&a)), strip(tree(&b)));

    let shown = mmsense(&["report", "--dir", a.to_str().unwrap()]);
    assert_eq!(code(&shown), 0);
    assert_eq!(shown.stdout, std::fs::read(a.join("report.txt")).unwrap());

    let eval = mmsense(&["eval", "--model", a.join("model.bin").to_str().unwrap(), "--manifest", &manifest]);
    assert_eq!(code(&eval), 0, "{}", stderr(&eval));
    assert!(String::from_utf8_lossy(&eval.stdout).contains("/40)"));
}

#[test]
fn adaptation_with_zero_k_matches_cross_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("d"), "two-env", "2", "beamsnr");
    let common = ["--manifest", &manifest, "--modality", "beamsnr", "--epochs", "2", "--input-length", "32"];
    let xenv_dir = tmp.path().join("xenv");
    let adapt_dir = tmp.path().join("adapt");
    let mut xenv = vec!["xenv"];
    xenv.extend(common);
    xenv.extend(["--train-env", "home", "--test-env", "office", "--out", xenv_dir.to_str().unwrap()]);
    let mut adapt = vec!["adapt"];
    adapt.extend(common);
    adapt.extend(["--base-env", "home", "--adapt-env", "office", "--k", "0", "--out", adapt_dir.to_str().unwrap()]);
    assert_eq!(code(&mmsense(&xenv)), 0);
    assert_eq!(code(&mmsense(&adapt)), 0);
    for name in ["confusion.csv", "loss.csv", "model.bin"] {
        assert_eq!(std::fs::read(xenv_dir.join(name)).unwrap(), std::fs::read(adapt_dir.join(name)).unwrap(), "{name}");
    }
    assert_eq!(json(&adapt_dir.join("config.json"))["settings"]["k_per_gesture"], 0);
}
