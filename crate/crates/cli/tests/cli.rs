use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lse"))
        .args(args)
        .env_remove("LSE_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = lse(args);
    assert!(
        out.status.success(),
        "lse {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn synth(dir: &Path) -> String {
    let ds = dir.join("ds");
    let ds = ds.to_str().unwrap();
    ok(&["synth", "--classes", "12", "--per-class", "20", "--f1", "30", "--f2", "10", "--d-true", "8", "--seed", "7", "--out", ds]);
    format!("{ds}/manifest")
}

/// `key = value` lookup in a flat TOML report.
fn field(report: &str, key: &str) -> f64 {
    report
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("no `{key}` in report:\n{report}"))
        .parse()
        .unwrap()
}

#[test]
fn planted_tzsl_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path());
    let report = ok(&["eval-tzsl", "--manifest", &manifest, "--lambda", "0.1", "--dim", "8"]);
    assert!(report.contains("scenario = \"TZSL\""));
    assert!(field(&report, "per_class_accuracy") >= 0.95);

    let zsr = ok(&["eval-zsr", "--manifest", &manifest, "--lambda", "0.1", "--dim", "8"]);
    assert!(field(&zsr, "map") >= 0.95);
}

#[test]
fn training_twice_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path());
    let a = dir.path().join("a.lse");
    let b = dir.path().join("b.lse");
    for out in [&a, &b] {
        ok(&["train", "--manifest", &manifest, "--lambda", "0.1", "--dim", "8", "--out", out.to_str().unwrap()]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let info = ok(&["--format", "csv", "inspect", a.to_str().unwrap()]);
    assert!(info.lines().any(|l| l == "lambda,0.1"), "{info}");
    assert!(info.lines().any(|l| l == "latent_dim,8"), "{info}");
}

#[test]
fn unseen_unseen_matches_tzsl() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path());
    let common = ["--manifest", manifest.as_str(), "--lambda", "0.1", "--dim", "8"];
    let tzsl = ok(&[&["--format", "csv", "eval-tzsl"][..], &common].concat());
    let uu = ok(&[&["--format", "csv", "eval-gzsl", "--scenario", "U-U"][..], &common].concat());
    let tzsl_row: Vec<&str> = tzsl.lines().nth(1).unwrap().split(',').collect();
    let uu_row: Vec<&str> = uu.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(tzsl.lines().next(), uu.lines().next());
    assert_eq!(uu_row[0], "U-U");
    assert_eq!(tzsl_row[1..], uu_row[1..]);
}

#[test]
fn csv_reports_share_one_schema() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path());
    let out = ok(&["--format", "csv", "eval-gzsl", "--manifest", &manifest, "--lambda", "0.1", "--dim", "8"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 5, "{out}");
    let width = lines[0].split(',').count();
    assert!(lines.iter().all(|l| l.split(',').count() == width));
    let tags: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(tags, ["U-U", "S-S", "U-T", "S-T"]);
}

#[test]
fn predictions_cover_the_unseen_pool() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path());
    let model = dir.path().join("m.lse");
    ok(&["train", "--manifest", &manifest, "--lambda", "0.1", "--dim", "8", "--out", model.to_str().unwrap()]);
    let preds = ok(&["predict", "--model", model.to_str().unwrap(), "--manifest", &manifest, "--top-k", "2"]);
    let rows: Vec<&str> = preds.lines().collect();
    // default pool: the 4 unseen classes
    assert_eq!(rows.len(), 80);
    // index, predicted id, then two (id, score) pairs
    assert!(rows.iter().all(|r| r.split(',').count() == 6));
}

#[test]
fn reads_leave_inputs_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path());
    let ds = dir.path().join("ds");
    let before: Vec<(String, Vec<u8>)> = {
        let mut v: Vec<_> = fs::read_dir(&ds)
            .unwrap()
            .map(|e| {
                let p = e.unwrap().path();
                (p.display().to_string(), fs::read(&p).unwrap())
            })
            .collect();
        v.sort();
        v
    };
    ok(&["eval-gzsl", "--manifest", &manifest, "--lambda", "0.1", "--dim", "8", "--scenario", "S-T"]);
    ok(&["gridsearch", "--manifest", &manifest, "--lambdas", "0.1", "--dims", "4,8", "--folds", "4"]);
    let mut after: Vec<(String, Vec<u8>)> = fs::read_dir(&ds)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.display().to_string(), fs::read(&p).unwrap())
        })
        .collect();
    after.sort();
    assert!(before == after, "inputs changed");
}

#[test]
fn exit_codes_follow_the_taxonomy() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path());

    assert_eq!(lse(&["--help"]).status.code(), Some(0));
    assert_eq!(lse(&["fly"]).status.code(), Some(1));
    assert_eq!(lse(&["eval-tzsl", "--manifest", &manifest, "--dim", "8"]).status.code(), Some(1));

    let bad_lambda = lse(&["eval-tzsl", "--manifest", &manifest, "--lambda", "1.5", "--dim", "8"]);
    assert_eq!(bad_lambda.status.code(), Some(1));
    assert!(bad_lambda.stdout.is_empty());
    assert!(String::from_utf8_lossy(&bad_lambda.stderr).contains("lambda"));

    let missing = dir.path().join("nowhere");
    assert_eq!(
        lse(&["eval-tzsl", "--manifest", missing.to_str().unwrap(), "--lambda", "0.1", "--dim", "8"]).status.code(),
        Some(1)
    );
    assert_eq!(lse(&["--threads", "0", "inspect", "x"]).status.code(), Some(1));

    // an unreadable model file is a runtime failure, not a bad argument
    let unreadable = dir.path().join("dir.lse");
    fs::create_dir(&unreadable).unwrap();
    assert_eq!(lse(&["inspect", unreadable.to_str().unwrap()]).status.code(), Some(2));
}
