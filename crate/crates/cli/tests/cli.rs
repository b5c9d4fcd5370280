use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = "\
[cohort]
n_patients = 30
[train]
pretrain_epochs = 3
max_epochs = 5
[sweep]
n_labeled = [3, 6]
repetitions = 2
[eval]
bootstrap_resamples = 100
";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_chronocon"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    let config = dir.join("small.toml");
    if !config.exists() {
        fs::write(&config, SMALL).unwrap();
    }
    let out = bin()
        .arg("--config")
        .arg(&config)
        .arg("--out-dir")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.insert(path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    files
}

fn pipeline(dir: &Path) -> Vec<Vec<u8>> {
    let o = dir.join("out");
    let p = |name: &str| o.join(name).display().to_string();
    let mut stdout = Vec::new();
    run(dir, &["generate"]);
    run(dir, &["pretrain", "--loss", "chrono", "--dae", "on"]);
    run(dir, &["finetune", "--model", &p("pretrained.bin"), "--labeled-patients", "4"]);
    run(dir, &["predict", "--model", &p("finetuned.bin"), "--truth-out", &p("truth_scores.csv")]);
    run(dir, &["finetune", "--labeled-patients", "4", "--out", &p("scratch.bin")]);
    run(dir, &["predict", "--model", &p("scratch.bin"), "--out", &p("scratch_pred.csv")]);
    run(
        dir,
        &[
            "evaluate",
            "--pred",
            &p("predictions.csv"),
            "--truth",
            &p("truth_scores.csv"),
            "--pred-b",
            &p("scratch_pred.csv"),
        ],
    );
    run(dir, &["evaluate", "--pred", &p("predictions.csv"), "--truth", &p("cohort.csv"), "--out", &p("report_cohort.json")]);
    run(dir, &["analyze-embeddings", "--model", &p("pretrained.bin")]);
    run(dir, &["sweep", "--jobs", "2"]);
    run(dir, &["report", "--sweep", &p("sweep.csv"), "--analysis", &p("embedding_analysis.json")]);
    stdout.push(run(dir, &["pairing", "dump", "--batch", &p("cohort.csv"), "--variant", "rnc-t"]).stdout);
    stdout.push(run(dir, &["loss", "eval", "--batch", &p("cohort.csv")]).stdout);
    stdout.push(run(dir, &["config"]).stdout);
    stdout
}

#[test]
fn every_command_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let out_a = pipeline(a.path());
    let out_b = pipeline(b.path());
    assert_eq!(out_a, out_b);
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    for (k, v) in &sa {
        assert!(&sb[k] == v, "{} differs", k.display());
    }
    for name in ["table2.csv", "summary.md", "fig3_left.csv", "fig4_medians.csv", "sweep.csv", "report.json"] {
        assert!(sa.contains_key(&PathBuf::from("out").join(name)), "{name}");
    }
    assert!(!sa.contains_key(&PathBuf::from("out/sweep_partial.csv")));

    let report: serde_json::Value = serde_json::from_slice(&sa[&PathBuf::from("out/report.json")]).unwrap();
    assert!(report.get("cross_sectional").is_some());
    let from_cohort = &sa[&PathBuf::from("out/report_cohort.json")];
    assert!(!from_cohort.is_empty());
    let table = String::from_utf8(sa[&PathBuf::from("out/sweep.csv")].clone()).unwrap();
    assert_eq!(table.lines().count(), 1 + 2 * 2 * 2);
}

#[test]
fn seed_flag_changes_outputs() {
    let a = tempfile::tempdir().unwrap();
    run(a.path(), &["generate"]);
    let first = fs::read(a.path().join("out/cohort.csv")).unwrap();
    run(a.path(), &["--seed", "9", "generate"]);
    assert_ne!(first, fs::read(a.path().join("out/cohort.csv")).unwrap());
}

#[test]
fn sweep_resumes_from_completed_cells() {
    let d = tempfile::tempdir().unwrap();
    run(d.path(), &["sweep"]);
    let table = fs::read(d.path().join("out/sweep.csv")).unwrap();
    let cells = d.path().join("out/cells");
    let victim = fs::read_dir(&cells).unwrap().next().unwrap().unwrap().path();
    let kept: Vec<PathBuf> = fs::read_dir(&cells)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p != &victim)
        .collect();
    let before: Vec<_> = kept.iter().map(|p| fs::metadata(p).unwrap().modified().unwrap()).collect();
    fs::remove_file(&victim).unwrap();

    let out = bin()
        .env("RUST_LOG", "info")
        .arg("--config")
        .arg(d.path().join("small.toml"))
        .arg("--out-dir")
        .arg(d.path().join("out"))
        .arg("sweep")
        .output()
        .unwrap();
    assert!(out.status.success());
    let log = String::from_utf8_lossy(&out.stderr);
    assert!(log.contains("7 already complete"), "{log}");
    assert_eq!(fs::read(d.path().join("out/sweep.csv")).unwrap(), table);
    let after: Vec<_> = kept.iter().map(|p| fs::metadata(p).unwrap().modified().unwrap()).collect();
    assert_eq!(before, after);

    fs::write(d.path().join("small.toml"), SMALL.replace("repetitions = 2", "repetitions = 1")).unwrap();
    let changed = bin()
        .arg("--config")
        .arg(d.path().join("small.toml"))
        .arg("--out-dir")
        .arg(d.path().join("out"))
        .arg("sweep")
        .output()
        .unwrap();
    assert!(!changed.status.success());
    run(d.path(), &["sweep", "--fresh"]);
    let table = String::from_utf8(fs::read(d.path().join("out/sweep.csv")).unwrap()).unwrap();
    assert_eq!(table.lines().count(), 1 + 2 * 2);
}

#[test]
fn bad_input_fails_cleanly() {
    let d = tempfile::tempdir().unwrap();
    let missing = d.path().join("nope.csv");
    let out = bin()
        .args(["pairing", "dump", "--batch"])
        .arg(&missing)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let batch = d.path().join("b.csv");
    fs::write(&batch, "sample_id,group_id,timestamp,view_id,label:ero,f0\n0,p/a,0,0,,0.1\n").unwrap();
    let out = bin()
        .args(["pairing", "dump", "--variant", "rnc", "--batch"])
        .arg(&batch)
        .output()
        .unwrap();
    assert!(!out.status.success());

    let out = bin().env("CHRONOCON_THREADS", "0").arg("config").output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn loss_eval_matches_the_three_visit_example() {
    let d = tempfile::tempdir().unwrap();
    let batch = d.path().join("b.csv");
    fs::write(
        &batch,
        "sample_id,group_id,timestamp,view_id,label:ero,f0\n0,p/a,0,0,0,0\n1,p/a,1,0,1,1\n2,p/a,2,0,2,3\n",
    )
    .unwrap();
    let out = bin().args(["loss", "eval", "--batch"]).arg(&batch).output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let expected = (1.0 + (-2.0f64).exp()).ln() + (1.0 + (-1.0f64).exp()).ln();
    assert!((v["value"].as_f64().unwrap() - expected).abs() < 1e-12);
}
