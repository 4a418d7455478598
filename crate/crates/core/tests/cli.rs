use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use pollenstack::config::{PipelineConfig, KEYS};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pollenstack"));
    c.env_remove("POLLENSTACK_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn pollenstack")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synth(root: &Path, per_class: &str) {
    ok(&["synth", root.to_str().unwrap(), "--per-class", per_class]);
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

#[test]
fn help_lists_every_key_with_its_default() {
    let help = ok(&["prep", "--help"]);
    let defaults = PipelineConfig::default();
    for (key, _) in KEYS {
        assert!(help.contains(&format!("--{key}")), "{key}");
        assert!(
            help.contains(&format!("[default: {}]", defaults.get(key).unwrap())),
            "{key} default"
        );
    }
}

#[test]
fn window_larger_than_depth_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    synth(&root, "10");
    let out = run(&[
        "prep",
        root.to_str().unwrap(),
        "--out",
        dir.path().join("ds").to_str().unwrap(),
        "--layers",
        "25",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("window exceeds stack depth"));
}

#[test]
fn input_and_config_errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing");
    let out = run(&["prep", missing.to_str().unwrap(), "--out", "x"]);
    assert_eq!(out.status.code(), Some(1));

    let conf = dir.path().join("bad.conf");
    fs::write(&conf, "lerning_rate = 0.1\n").unwrap();
    let out = run(&["config", "--config", conf.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["config", "--canny_kernel", "4"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn env_seed_sits_below_file_and_flags() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("c.conf");
    fs::write(&conf, "seed = 5\n").unwrap();
    let seed_of = |out: &Output| {
        String::from_utf8_lossy(&out.stdout)
            .lines()
            .find_map(|l| l.strip_prefix("seed = ").map(str::to_string))
            .unwrap()
    };
    let env_only = bin().args(["config"]).env("POLLENSTACK_SEED", "3").output().unwrap();
    assert_eq!(seed_of(&env_only), "3");
    let file = bin()
        .args(["config", "--config", conf.to_str().unwrap()])
        .env("POLLENSTACK_SEED", "3")
        .output()
        .unwrap();
    assert_eq!(seed_of(&file), "5");
    let flag = bin()
        .args(["config", "--config", conf.to_str().unwrap(), "--seed", "8"])
        .env("POLLENSTACK_SEED", "3")
        .output()
        .unwrap();
    assert_eq!(seed_of(&flag), "8");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    synth(&root, "12");
    let root = root.to_str().unwrap();
    for run_name in ["a", "b"] {
        let prefix = dir.path().join(run_name).join("ds");
        let p = prefix.to_str().unwrap();
        ok(&["prep", root, "--out", p, "--seed", "4", "--workers", if run_name == "a" { "1" } else { "3" }]);
        ok(&["baseline", p, "--out", &format!("{p}-run"), "--seed", "4", "--epochs", "3"]);
    }
    for suffix in [
        ".pstk",
        ".index.tsv",
        ".split.tsv",
        ".manifest.tsv",
        "-run.val.pred.tsv",
        "-run.test.pred.tsv",
    ] {
        assert_eq!(
            read(dir.path().join(format!("a/ds{suffix}"))),
            read(dir.path().join(format!("b/ds{suffix}"))),
            "{suffix}"
        );
    }
}

#[test]
fn eval_renders_tables_and_tsv() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    synth(&root, "12");
    let p = dir.path().join("ds");
    let p = p.to_str().unwrap();
    ok(&["prep", root.to_str().unwrap(), "--out", p]);
    ok(&["baseline", p, "--out", &format!("{p}-run"), "--epochs", "2"]);
    let tsv = dir.path().join("metrics.tsv");
    let table = ok(&[
        "eval",
        &format!("{p}-run.val.pred.tsv"),
        &format!("{p}-run.test.pred.tsv"),
        "--truth",
        p,
        "--tsv",
        tsv.to_str().unwrap(),
    ]);
    assert!(table.starts_with("Model"));
    assert!(table.contains("[test]"));
    let metrics = fs::read_to_string(&tsv).unwrap();
    assert_eq!(metrics.lines().count(), 3);
}

#[test]
fn inspect_dumps_one_profile_per_stack() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    ok(&["synth", root.to_str().unwrap(), "--per-class", "2", "--format", "tiff"]);
    let masks = dir.path().join("masks");
    let dump = ok(&["inspect", root.to_str().unwrap(), "--masks", masks.to_str().unwrap()]);
    assert_eq!(dump.lines().filter(|l| l.starts_with("focal\t")).count(), 6);
    assert_eq!(fs::read_dir(&masks).unwrap().count(), 6);
}
