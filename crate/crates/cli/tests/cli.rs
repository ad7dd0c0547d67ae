use std::path::Path;
use std::process::{Command, Output};

fn edgesynth(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_edgesynth"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = edgesynth(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const SMALL: &[&str] = &[
    "--set",
    "toygen.count=4",
    "--set",
    "toygen.width=64",
    "--set",
    "toygen.height=64",
    "--set",
    "prepare.block=32",
    "--set",
    "split.test_fraction=0.25",
    "--set",
    "gan.epochs=1",
    "--set",
    "seg.epochs=2",
    "--set",
    "seg.input_size=32",
];

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    let mut v = args.to_vec();
    v.extend_from_slice(SMALL);
    v
}

#[test]
fn full_workflow_through_the_binary() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &with_small(&["toygen", "--out", "raw"]));
    let prepared = ok(d, &with_small(&["prepare", "--raw", "raw", "--out", "data"]));
    assert!(prepared.contains("12 train (12 real, 0 g0, 0 g1), 4 test"), "{prepared}");

    let m = ["--manifest", "data/manifest.jsonl"];
    ok(d, &with_small(&["fuse", m[0], m[1]]));
    ok(d, &with_small(&["train-gan", m[0], m[1]]));
    let synth = ok(d, &with_small(&["synth", m[0], m[1], "--mode", "g0"]));
    assert!(synth.contains("24 train (12 real, 12 g0, 0 g1), 4 test"), "{synth}");

    ok(d, &with_small(&["train-seg", m[0], m[1], "--run", "initial", "--set", "seg.origins=real"]));
    ok(d, &with_small(&["eval", m[0], m[1], "--run", "initial"]));
    let seg = ok(d, &with_small(&["train-seg", m[0], m[1], "--run", "g0", "--set", "seg.origins=real,g0"]));
    assert!(seg.contains("+replica(G0)") && seg.contains("24 training pairs"), "{seg}");
    ok(d, &with_small(&["eval", m[0], m[1], "--run", "g0"]));

    let table = ok(d, &["report", m[0], m[1]]);
    assert_eq!(table.lines().count(), 3, "{table}");
    assert_eq!(table, std::fs::read_to_string(d.join("data/runs/comparison.csv")).unwrap());
    for file in ["gan/loss.csv", "gan/loss_smoothed.csv", "runs/g0/metrics.csv", "runs/initial/seg_loss.csv"] {
        assert!(d.join("data").join(file).is_file(), "{file}");
    }
}

#[test]
fn validation_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = edgesynth(d, &["toygen", "--out", "x", "--set", "canny.sgima=2"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("canny.sgima"));

    let out = edgesynth(d, &["fuse", "--manifest", "missing.jsonl"]);
    assert_eq!(out.status.code(), Some(1));

    let out = edgesynth(d, &["synth", "--mode", "g7"]);
    assert_eq!(out.status.code(), Some(1));

    std::fs::write(d.join("bad.cfg"), "seed = 3\nnot a setting\n").unwrap();
    let out = edgesynth(d, &["--config", "bad.cfg", "keys"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_file_and_seed_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("run.cfg"), "toygen.count = 2\ntoygen.width = 32\ntoygen.height = 32\nseed = 1\n").unwrap();
    ok(d, &["--config", "run.cfg", "toygen", "--out", "a"]);
    ok(d, &["--config", "run.cfg", "toygen", "--out", "b"]);
    ok(d, &["--config", "run.cfg", "--seed", "2", "toygen", "--out", "c"]);
    let read = |p: &str| std::fs::read(d.join(p)).unwrap();
    assert_eq!(read("a/images/toy001.ppm"), read("b/images/toy001.ppm"));
    assert_ne!(read("a/images/toy001.ppm"), read("c/images/toy001.ppm"));
    assert!(String::from_utf8(read("c/manifest.jsonl")).unwrap().contains("\"seed\":2"));
}

#[test]
fn numerical_failure_exits_with_two_and_keeps_a_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &with_small(&["toygen", "--out", "raw"]));
    ok(d, &with_small(&["prepare", "--raw", "raw", "--out", "data"]));
    ok(d, &with_small(&["fuse", "--manifest", "data/manifest.jsonl"]));
    let out = edgesynth(
        d,
        &with_small(&["train-gan", "--manifest", "data/manifest.jsonl", "--set", "gan.lr=1e300", "--set", "gan.epochs=3"]),
    );
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("GAN iteration"));
    assert!(d.join("data/gan/generator.ckpt").is_file());
}

#[test]
fn keys_lists_every_setting() {
    let tmp = tempfile::tempdir().unwrap();
    let keys = ok(tmp.path(), &["keys"]);
    assert!(keys.contains("canny.sigma = 1.0"));
    assert!(keys.contains("seg.origins = real,g0,g1"));
}
