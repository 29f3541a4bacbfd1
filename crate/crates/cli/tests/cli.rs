use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pssr::experiment::ExperimentConfig;
use pssr::metrics::{calibration_report, load_predictions, BinScheme};

const TINY: &str = r#"
seeds = [1]
heads = ["ctc"]
methods = ["nll"]

[task]
train_size = 60
val_size = 0
test_size = 40
lexicon_size = 10

[train]
hidden = 6
decoder_hidden = 4
epochs = 2
batch_size = 16
learning_rate = 0.01

[pssr]
alpha = 0.2
total = 4

[shift]
kinds = ["noise", "blur"]
severities = [0.0, 1.0]

[active]
init_fraction = 0.2
query_fraction = 0.1
rounds = 1
"#;

fn setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.toml");
    fs::write(&cfg, TINY).unwrap();
    (dir, cfg)
}

fn pssr(cfg: &Path, out: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_pssr"))
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("PSSR_OUT")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "pssr {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn files_named(root: &Path, name: &str) -> Vec<PathBuf> {
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() == name {
                found.push(p);
            }
        }
    }
    found.sort();
    found
}

#[test]
fn single_cell_writes_one_log_and_one_report() {
    let (dir, cfg) = setup();
    let out = dir.path().join("out");
    pssr(&cfg, &out, &["report"]);
    assert_eq!(files_named(&out, "predictions.jsonl").len(), 1);
    assert_eq!(files_named(&out, "report.csv").len(), 1);
    assert_eq!(files_named(&out, "reliability.svg").len(), 1);
    assert!(out.join("config.toml").exists());
}

#[test]
fn summary_has_one_row_per_method_and_matches_logs() {
    let (dir, cfg) = setup();
    let out = dir.path().join("out");
    pssr(&cfg, &out, &["report", "--method", "nll", "--method", "pssr"]);
    let mut rdr = csv::Reader::from_path(out.join("summary.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    for col in ["acc_mean", "ece_mean", "ace_mean", "mce_mean"] {
        assert!(headers.iter().any(|h| h == col), "missing {col}");
    }
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2);

    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    for row in &rows {
        let method = &row[col("method")];
        let records = load_predictions(&out.join(format!("seed-1/ctc-{method}/predictions.jsonl"))).unwrap();
        let r = calibration_report(&records, 10, BinScheme::EqualWidth).unwrap();
        for (name, want) in [("acc_mean", r.accuracy), ("ece_mean", r.ece), ("ace_mean", r.ace), ("mce_mean", r.mce)] {
            assert_eq!(row[col(name)].parse::<f64>().unwrap(), want, "{method} {name}");
        }
    }
}

#[test]
fn reruns_are_byte_identical() {
    let (dir, cfg) = setup();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    pssr(&cfg, &a, &["report"]);
    pssr(&cfg, &b, &["report"]);
    let fa = files_named(&a, "predictions.jsonl");
    let fb = files_named(&b, "predictions.jsonl");
    for name in ["summary.csv", "runs.csv"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap());
    }
    assert_eq!(fs::read(&fa[0]).unwrap(), fs::read(&fb[0]).unwrap());
}

#[test]
fn step_commands_chain() {
    let (dir, cfg) = setup();
    let out = dir.path().join("out");
    for step in ["synth", "train-ref", "mine", "train", "eval"] {
        pssr(&cfg, &out, &[step, "--method", "nll", "--method", "pssr"]);
    }
    assert!(out.join("seed-1/data/train.jsonl").exists());
    assert!(out.join("seed-1/reference/model.txt").exists());
    assert!(out.join("seed-1/mined.jsonl").exists());
    assert_eq!(files_named(&out, "predictions.jsonl").len(), 2);

    // the reference and the ctc baseline are the same training run
    assert_eq!(
        fs::read(out.join("seed-1/reference/model.txt")).unwrap(),
        fs::read(out.join("seed-1/ctc-nll/model.txt")).unwrap()
    );
}

#[test]
fn missing_prerequisites_fail_with_a_diagnostic() {
    let (dir, cfg) = setup();
    let out = Command::new(env!("CARGO_BIN_EXE_pssr"))
        .args(["--config", cfg.to_str().unwrap(), "--out"])
        .arg(dir.path().join("empty"))
        .arg("mine")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("synth"));
}

#[test]
fn invalid_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "seeds = []\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pssr"))
        .arg("--config")
        .arg(&cfg)
        .arg("report")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));

    fs::write(&cfg, "[task]\nnoise = 1\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_pssr"))
        .arg("--config")
        .arg(&cfg)
        .arg("synth")
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn output_root_comes_from_the_environment() {
    let (dir, cfg) = setup();
    let root = dir.path().join("from-env");
    let out = Command::new(env!("CARGO_BIN_EXE_pssr"))
        .arg("--config")
        .arg(&cfg)
        .arg("synth")
        .env("PSSR_OUT", &root)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(root.join("seed-1/data/test.jsonl").exists());
}

#[test]
fn shift_study_includes_clean_rows() {
    let (dir, cfg) = setup();
    let out = dir.path().join("out");
    pssr(&cfg, &out, &["study-shift"]);
    let mut rdr = csv::Reader::from_path(out.join("shift.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 4);
    // both kinds at severity 0 reproduce the same clean evaluation
    let clean: Vec<_> = rows.iter().filter(|r| &r[4] == "0.0").collect();
    assert_eq!(clean.len(), 2);
    assert_eq!(clean[0].iter().skip(5).collect::<Vec<_>>(), clean[1].iter().skip(5).collect::<Vec<_>>());
}

#[test]
fn active_learning_emits_curves() {
    let (dir, cfg) = setup();
    let out = dir.path().join("out");
    pssr(&cfg, &out, &["active-learn"]);
    let mut rdr = csv::Reader::from_path(out.join("active_learning.csv")).unwrap();
    // three strategies, base point plus one round each
    assert_eq!(rdr.records().count(), 6);
}

#[test]
fn shipped_config_parses_to_the_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    let cfg = ExperimentConfig::load(&path).unwrap();
    assert_eq!(cfg, ExperimentConfig::default());
}
