use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn claimspot(args: &[&str], stdin: Option<&str>) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_claimspot"))
        .args(args)
        .env_remove("PORT")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut pipe = child.stdin.take().unwrap();
    pipe.write_all(stdin.unwrap_or("").as_bytes()).unwrap();
    drop(pipe);
    child.wait_with_output().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(claimspot(&["--help"], None).status.code(), Some(0));
    assert_eq!(claimspot(&["--version"], None).status.code(), Some(0));
    let out = claimspot(&["frobnicate"], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(claimspot(&["train"], None).status.code(), Some(1));
    assert_eq!(claimspot(&["train", "--dataset", "x.tsv", "--bogus"], None).status.code(), Some(1));
}

#[test]
fn data_errors_exit_two() {
    let sample = root().join("data/sample.tsv");
    let out = claimspot(&["train", "--dataset", path(&sample), "--config", "missing.json"], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));
    let out = claimspot(&["crossval", "--dataset", "no/such/file.tsv"], None);
    assert_eq!(out.status.code(), Some(2));
    let out = claimspot(&["score", "--checkpoint", path(&sample)], Some("hello\n"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_config_values_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"cs_lr": -1.0}"#).unwrap();
    let sample = root().join("data/sample.tsv");
    let out = claimspot(&["train", "--dataset", path(&sample), "--config", path(&bad)], None);
    assert_eq!(out.status.code(), Some(1));
    let unknown = dir.path().join("unknown.json");
    std::fs::write(&unknown, r#"{"learning_rate": 0.1}"#).unwrap();
    let out = claimspot(&["train", "--dataset", path(&sample), "--config", path(&unknown)], None);
    assert_eq!(out.status.code(), Some(1));
    let out = claimspot(&["train", "--dataset", path(&sample), "--perturb-id", "9"], None);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn divergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("diverge.json");
    std::fs::write(
        &cfg,
        r#"{"layers": 1, "hidden_size": 8, "seq_len": 12, "cs_lr": 1e300, "adversarial": false, "cs_train_steps": 2}"#,
    )
    .unwrap();
    let sample = root().join("data/sample.tsv");
    let out = claimspot(
        &["train", "--dataset", path(&sample), "--config", path(&cfg), "--out", path(dir.path())],
        None,
    );
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_then_score_rank_and_curate() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let sample = root().join("data/sample.tsv");
    let toy = root().join("configs/toy.json");
    let out = claimspot(
        &["train", "--dataset", path(&sample), "--config", path(&toy), "--out", path(&out_dir)],
        None,
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = out_dir.join("model.ckpt");
    assert!(ckpt.exists());
    assert!(out_dir.join("train_report.json").exists());
    let before = std::fs::read(&ckpt).unwrap();

    let input = "The U.S. loses millions of lives each year to homicide.\n\nI really think you're overthinking the situation.\nTaxes rose 5 percent.\n";
    let out = claimspot(&["score", "--checkpoint", path(&ckpt)], Some(input));
    assert_eq!(out.status.code(), Some(0));
    let lines: Vec<f64> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| l.parse().unwrap())
        .collect();
    assert_eq!(lines.len(), input.lines().count());
    assert!(lines.iter().all(|s| (0.0..=1.0).contains(s)));

    // Scoring the same lines one at a time gives the same values in order.
    for (line, score) in input.lines().zip(&lines) {
        let out = claimspot(&["score", "--checkpoint", path(&ckpt)], Some(&format!("{line}\n")));
        let single: f64 = String::from_utf8(out.stdout).unwrap().trim().parse().unwrap();
        assert_eq!(single, *score);
    }

    let out = claimspot(
        &["rank", "--checkpoint", path(&ckpt), "--dataset", path(&sample), "--out", path(&out_dir)],
        None,
    );
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("rank_report.json")).unwrap()).unwrap();
    assert!(report["ndcg"].as_f64().unwrap() > 0.0);

    let out = claimspot(
        &["curate", "--dataset", path(&sample), "--ratio", "1.0", "--out", path(&out_dir)],
        None,
    );
    assert_eq!(out.status.code(), Some(0));
    let curated = std::fs::read_to_string(out_dir.join("curated.tsv")).unwrap();
    assert_eq!(curated.lines().count(), 1 + 25 + 25);

    assert_eq!(std::fs::read(&ckpt).unwrap(), before);
}

#[test]
fn curate_with_consensus_labels() {
    let dir = tempfile::tempdir().unwrap();
    let labels = dir.path().join("labels.tsv");
    let coders = dir.path().join("coders.json");
    std::fs::write(
        &labels,
        "Taxes rose 5 percent.\ta\tCFS\nTaxes rose 5 percent.\tb\tCFS\nHello there.\ta\tNCS\nHello there.\tb\tNCS\nWe won.\ta\tNCS\nWe won.\tb\tCFS\nThanks.\ta\tNCS\nThanks.\tc\tNCS\n",
    )
    .unwrap();
    let good = |id: &str| {
        serde_json::json!({
            "coder_id": id, "screening": [["NCS", "NCS"]], "answered": 150, "skipped": 0,
            "mean_length": 10.0, "corpus_mean_length": 10.0
        })
    };
    let mut poor = good("c");
    poor["answered"] = serde_json::json!(5);
    std::fs::write(&coders, serde_json::to_string(&vec![good("a"), good("b"), poor]).unwrap()).unwrap();
    let out = claimspot(
        &[
            "curate",
            "--labels",
            path(&labels),
            "--coders",
            path(&coders),
            "--ratio",
            "1.0",
            "--out",
            path(dir.path()),
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let curated = std::fs::read_to_string(dir.path().join("curated.tsv")).unwrap();
    assert_eq!(curated, "text\tlabel\nTaxes rose 5 percent.\tCFS\nHello there.\tNCS\n");
}
