use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn dismark(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dismark"))
        .args(args)
        .env("RUST_LOG", "off")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn extract_reproduces_the_golden_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pairs.tsv");
    let corpus = data("mini.conllu");
    let o = dismark(&["extract", "--in", s(&corpus), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(&out).unwrap(), fs::read_to_string(data("mini.pairs.tsv")).unwrap());
    assert_eq!(
        fs::read_to_string(dir.path().join("pairs.tsv.rejections.tsv")).unwrap(),
        fs::read_to_string(data("mini.rejections.tsv")).unwrap()
    );
    let report: serde_json::Value = serde_json::from_slice(
        &dismark(&["--format", "json", "extract", "--in", s(&corpus), "--out", s(&out)]).stdout,
    )
    .unwrap();
    assert_eq!(report["accepted"], 20);
    assert_eq!(report["rejected"], 13);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.conllu");
    let out = dir.path().join("p.tsv");
    assert_eq!(dismark(&["extract", "--bogus"]).status.code(), Some(1));
    assert_eq!(dismark(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(dismark(&["extract", "--in", s(&missing), "--out", s(&out)]).status.code(), Some(2));
    assert_eq!(dismark(&["extract", "--out", s(&out)]).status.code(), Some(2));
    assert_eq!(dismark(&["gradcheck"]).status.code(), Some(0));
    // An impossible tolerance turns a correct gradient into a failed check.
    assert_eq!(dismark(&["gradcheck", "--tolerance", "0"]).status.code(), Some(3));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let out = dir.path().join("p.tsv");
    fs::write(
        &cfg,
        format!("marker_set = \"custom:because\"\n[paths]\ncorpus = {:?}\nout = {:?}\n", s(&data("mini.conllu")), s(&out)),
    )
    .unwrap();

    assert!(dismark(&["--config", s(&cfg), "extract"]).status.success());
    let only_because = fs::read_to_string(&out).unwrap();
    assert!(!only_because.is_empty());
    assert!(only_because.lines().all(|l| l.ends_with("\tbecause")));

    assert!(dismark(&["--config", s(&cfg), "extract", "--markers", "books_all"]).status.success());
    assert_eq!(fs::read_to_string(&out).unwrap(), fs::read_to_string(data("mini.pairs.tsv")).unwrap());

    fs::write(&cfg, "no_such_key = 1\n").unwrap();
    assert_eq!(dismark(&["--config", s(&cfg), "stats", "--in", s(&out)]).status.code(), Some(2));
}

#[test]
fn pipeline_from_pairs_to_confusion() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = dir.path().join("pairs.tsv");
    let mut text = String::new();
    for i in 0..60 {
        let (m, cue) = [("so", "red"), ("but", "blue")][i % 2];
        text.push_str(&format!("the cat sat {}\ta {} dog ran\t{}\n", i, cue, m));
    }
    fs::write(&pairs, text).unwrap();
    let split_dir = dir.path().join("split");
    assert!(dismark(&["--seed", "1", "split", "--in", s(&pairs), "--out-dir", s(&split_dir), "--ratios", "0.6,0.2,0.2"])
        .status
        .success());
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(split_dir.join("split.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 1);

    let preds = dir.path().join("preds.tsv");
    let (train, test) = (split_dir.join("train.tsv"), split_dir.join("test.tsv"));
    let o = dismark(&["--format", "json", "eval", "--train", s(&train), "--test", s(&test), "--predictions", s(&preds)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["accuracy"], 1.0);

    let prefix = dir.path().join("cm");
    assert!(dismark(&["confusion", "--predictions", s(&preds), "--train", s(&train), "--out", s(&prefix)])
        .status
        .success());
    let counts = fs::read_to_string(dir.path().join("cm.counts.csv")).unwrap();
    assert!(counts.starts_with("actual\\predicted,"));
}

#[test]
fn help_and_version() {
    let o = dismark(&["--help"]);
    assert!(o.status.success());
    let help = String::from_utf8_lossy(&o.stdout);
    for cmd in ["extract", "split", "balance", "validate", "train-baseline", "train-encoder", "eval", "confusion", "gradcheck"] {
        assert!(help.contains(cmd), "{}", cmd);
    }
    let v = dismark(&["--version"]);
    assert!(String::from_utf8_lossy(&v.stdout).contains(env!("CARGO_PKG_VERSION")));
}
