//! Drives the `hunkfix` binary through a full small run: seed, mine, train,
//! localize, fix and evaluate, plus the usage and data error exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = "seed = 5
embed.dims = 16
embed.epochs = 10
scorer.hidden = 8
scorer.epochs = 10
classifier.hidden = 8
classifier.epochs = 8
repair.hidden = 8
repair.epochs = 6
repair.ctl_epochs = 1
repair.beam_width = 8
";

fn hunkfix(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hunkfix")).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = hunkfix(dir, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn json(path: PathBuf) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

fn bug_dirs(corpus: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(corpus).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_dir()).collect();
    v.sort();
    v
}

#[test]
fn seed_is_reproducible_and_lays_out_the_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["--seed", "3", "seed", "--corpus", "a", "--count", "10"]);
    ok(d, &["--seed", "3", "seed", "--corpus", "b", "--count", "10"]);
    let (a, b) = (bug_dirs(&d.join("a")), bug_dirs(&d.join("b")));
    assert_eq!(a.len(), 10);
    for (x, y) in a.iter().zip(&b) {
        for f in ["before/main.mini", "after/main.mini", "meta.json"] {
            assert_eq!(fs::read(x.join(f)).unwrap(), fs::read(y.join(f)).unwrap(), "{}", x.display());
        }
        assert!(fs::read_dir(x.join("tests")).unwrap().any(|e| e.unwrap().path().to_string_lossy().ends_with(".test.json")));
    }
}

#[test]
fn parse_and_run_write_their_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["seed", "--corpus", "c", "--count", "1"]);
    let bug = bug_dirs(&d.join("c")).remove(0);
    let before = bug.join("before/main.mini");
    ok(d, &["--out", "p", "parse", before.to_str().unwrap()]);
    assert!(json(d.join("p/ast.json")).is_object());

    let stdout = ok(d, &["--out", "r", "run", before.to_str().unwrap(), "--tests", bug.join("tests").to_str().unwrap()]);
    assert!(stdout.contains("FAIL"), "a seeded bug fails at least one test:\n{stdout}");
    assert!(json(d.join("r/coverage.json")).is_object() || json(d.join("r/coverage.json")).is_array());

    let after = bug.join("after/main.mini");
    let stdout = ok(d, &["--out", "r", "run", after.to_str().unwrap(), "--tests", bug.join("tests").to_str().unwrap()]);
    assert!(!stdout.contains("FAIL"), "the fixed program passes:\n{stdout}");
}

#[test]
fn full_pipeline_from_seed_to_evaluation() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("small.conf"), SMALL).unwrap();
    let cfg = ["--config", "small.conf"];
    let with = |rest: &[&str]| -> Vec<String> { cfg.iter().chain(rest).map(|s| s.to_string()).collect() };
    let run = |rest: &[&str]| {
        let args = with(rest);
        ok(d, &args.iter().map(String::as_str).collect::<Vec<_>>())
    };

    run(&["--seed", "31", "seed", "--corpus", "train", "--count", "24", "--prefix", "t"]);
    run(&["--seed", "32", "seed", "--corpus", "bugs", "--count", "4", "--prefix", "b"]);

    run(&["--out", "mined", "mine", "--corpus", "train"]);
    let pairs = fs::read_to_string(d.join("mined/pairs.jsonl")).unwrap();
    assert!(pairs.lines().count() >= 24);
    for l in pairs.lines() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        assert!(v.get("bugId").is_some(), "{l}");
    }
    assert!(json(d.join("mined/hunk_sets.json")).is_array());

    // Everything but train-embed needs the embedding table first.
    let o = hunkfix(d, &with(&["train-pairscorer", "--corpus", "train", "--models", "m"]).iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(o.status.code(), Some(2));

    for cmd in ["train-embed", "train-pairscorer", "train-classifier", "train-repair"] {
        run(&[cmd, "--corpus", "train", "--models", "m"]);
    }
    assert!(d.join("m/embeddings.txt").is_file());

    let bug = bug_dirs(&d.join("bugs")).remove(0);
    let bug = bug.to_str().unwrap();
    run(&["--out", "loc", "localize", "--bug", bug, "--models", "m"]);
    let loc = json(d.join("loc/localization.json"));
    assert!(loc.get("groups").is_some_and(|g| g.is_array()), "{loc}");

    run(&["--out", "fix", "fix", "--bug", bug, "--models", "m", "--topk", "5"]);
    let patches = json(d.join("fix/patches.json"));
    assert!(patches["patches"].is_array());
    let report = json(d.join("fix/report.json"));
    for key in ["bugId", "tried", "plausibleRank", "correct", "wallClockMs"] {
        assert!(report.get(key).is_some(), "{key} missing from {report}");
    }
    assert_eq!(report["bugId"], patches["bugId"]);

    // Identical inputs and seed give identical patches.
    run(&["--out", "fix2", "fix", "--bug", bug, "--models", "m", "--topk", "5"]);
    assert_eq!(json(d.join("fix2/patches.json")), patches);

    let table = run(&["--out", "eval", "evaluate", "--corpus", "bugs", "--models", "m"]);
    let rows: Vec<&str> = table.lines().collect();
    for (i, prefix) in ["Type 1.", "Type 2.", "Type 3.", "Type 4.", "Type 5.", "Total"].iter().enumerate() {
        assert!(rows[i + 1].starts_with(prefix), "{table}");
    }
    assert!(rows[6].trim_end().ends_with("4"), "{table}");
    assert_eq!(fs::read_to_string(d.join("eval/table.txt")).unwrap(), table);
    assert!(json(d.join("eval/evaluation.json")).is_object());
}

#[test]
fn usage_errors_exit_1_and_data_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let o = hunkfix(d, &["seed", "--corpus", "c", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(hunkfix(d, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(hunkfix(d, &["--set", "repair.beam_width", "seed", "--corpus", "c"]).status.code(), Some(1));
    assert_eq!(hunkfix(d, &["--set", "no.such.key=1", "seed", "--corpus", "c"]).status.code(), Some(1));
    assert_eq!(hunkfix(d, &["--help"]).status.code(), Some(0));

    assert_eq!(hunkfix(d, &["localize", "--bug", "missing", "--models", "m"]).status.code(), Some(2));
    fs::write(d.join("bad.mini"), "func main( {").unwrap();
    assert_eq!(hunkfix(d, &["parse", "bad.mini"]).status.code(), Some(2));
    assert_eq!(hunkfix(d, &["--config", "nope.conf", "seed", "--corpus", "c"]).status.code(), Some(2));
}
