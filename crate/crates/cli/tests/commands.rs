use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL_CONFIG: &str = "\
# small cohort and model so the chain runs in seconds
seed = 5
synth.n_subjects = 6
synth.records_per_subject = 2
synth.noise_sd = 0.05
model.n_kernels = 2
model.kernel_width = 9
model.lstm_hidden = 2
model.dense_widths = 8
train.max_epochs = 3
train.optimizer = adam
";

fn morphobp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_morphobp"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = morphobp(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Runs simulate, preprocess, represent, train and evaluate under `root`.
fn full_chain(root: &Path) {
    fs::write(root.join("run.cfg"), SMALL_CONFIG).unwrap();
    for args in [
        ["--out", "sim", "simulate"].as_slice(),
        &["--out", "prep", "preprocess", "--input", "sim/records"],
        &["--out", "rep", "represent", "--input", "sim/records"],
        &["--out", "tr", "train", "--input", "rep"],
    ] {
        ok(root, &[&["--config", "run.cfg"], args].concat());
    }
    ok(root, &["--out", "ev", "evaluate", "--input", "tr"]);
}

#[test]
fn six_subject_chain_emits_every_artifact() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    full_chain(root);
    for file in [
        "sim/truth.csv",
        "sim/records/S00_R1.csv",
        "prep/qc.csv",
        "prep/pulses/S05_R2.csv",
        "rep/labels.csv",
        "rep/grids/S03_R1.csv",
        "tr/predictions.csv",
        "tr/checkpoints/run0_fold00_SBP.mbpm",
        "tr/history/run0_fold05_DBP.csv",
        "ev/report.json",
        "ev/report.csv",
        "ev/bland_altman_sbp.csv",
        "ev/bland_altman_dbp.csv",
    ] {
        assert!(root.join(file).is_file(), "missing {file}");
    }
    let predictions = fs::read_to_string(root.join("tr/predictions.csv")).unwrap();
    assert_eq!(predictions.lines().count(), 1 + 6 * 2 * 2);
    let summary = ok(root, &["report", "--input", "ev"]);
    assert!(summary.contains("SBP") && summary.contains("BHS grade"), "{summary}");
}

#[test]
fn reruns_are_byte_identical() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    full_chain(a.path());
    full_chain(b.path());
    for file in [
        "sim/truth.csv",
        "sim/records/S02_R2.csv",
        "prep/qc.csv",
        "rep/grids/S04_R1.csv",
        "tr/predictions.csv",
        "tr/history/run0_fold03_SBP.csv",
        "ev/report.csv",
        "ev/report.json",
        "ev/bland_altman_dbp.csv",
    ] {
        assert_eq!(
            fs::read(a.path().join(file)).unwrap(),
            fs::read(b.path().join(file)).unwrap(),
            "{file} differs"
        );
    }
}

#[test]
fn perfect_predictions_grade_a_and_pass() {
    let tmp = TempDir::new().unwrap();
    let mut table = String::from("run,fold,subject_id,record_id,target,prediction_mmHg,reference_mmHg\n");
    for (i, target) in ["SBP", "DBP"].iter().enumerate() {
        for s in 0..4 {
            let y = 100.0 + 10.0 * s as f64 - 30.0 * i as f64;
            table.push_str(&format!("0,{s},S{s:02},R1,{target},{y},{y}\n"));
        }
    }
    fs::write(tmp.path().join("predictions.csv"), table).unwrap();
    let summary = ok(tmp.path(), &["--out", ".", "evaluate", "--input", "predictions.csv"]);
    assert_eq!(summary.matches("BHS grade A").count(), 2, "{summary}");
    assert_eq!(summary.matches(": pass").count(), 2, "{summary}");
    let json = fs::read_to_string(tmp.path().join("report.json")).unwrap();
    assert!(json.contains("\"aami_pass\": true") || json.contains("\"aami_pass\":true"), "{json}");
}

#[test]
fn failures_exit_non_zero_with_a_message() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    let out = morphobp(root, &["train", "--input", "missing"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("labels.csv"));

    fs::write(root.join("bad.cfg"), "seed = 1\nmodel.depth = 4\n").unwrap();
    let out = morphobp(root, &["--config", "bad.cfg", "simulate"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2") && err.contains("model.depth"), "{err}");

    fs::write(root.join("invalid.cfg"), "train.lr_factor = 2\n").unwrap();
    let out = morphobp(root, &["--config", "invalid.cfg", "simulate"]);
    assert!(!out.status.success());
}
