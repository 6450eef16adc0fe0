use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BLOBS: &str = r#"
num_clients = 6
rounds = 2
layer_dims = [8, 12, 4]
dataset = "blobs"
blob_classes = 4
blob_per_class = 60
blob_dim = 8
samples_per_client = 30
batch_size = 10
out_dir = "out"
"#;

fn freqfed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_freqfed")).args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn run_writes_a_csv_report_next_to_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BLOBS);
    let out = freqfed(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("round,ma,ba,"));
}

#[test]
fn format_and_out_dir_flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BLOBS);
    let target = dir.path().join("elsewhere");
    let out = freqfed(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--format",
        "json",
        "--out-dir",
        target.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(target.join("report.json")).unwrap();
    let rounds: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(rounds.as_array().unwrap().len(), 2);
}

#[test]
fn seed_flag_changes_the_run_and_replays_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{BLOBS}attack = \"label_flip\"\npmr = 0.34\n"));
    let report = |seed: &str, sub: &str| {
        let target = dir.path().join(sub);
        let out = freqfed(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            seed,
            "--out-dir",
            target.to_str().unwrap(),
            "--format",
            "json",
        ]);
        assert_eq!(code(&out), 0);
        std::fs::read_to_string(target.join("report.json")).unwrap()
    };
    let a = report("5", "a");
    assert_eq!(a, report("5", "b"));
    assert_ne!(a, report("6", "c"));
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BLOBS);
    let out = freqfed(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--axis",
        "iid_rate",
        "--values",
        "0.2,0.9",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/sweep_iid_rate.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("iid_rate,"));
    assert_eq!(lines.count(), 2);
}

#[test]
fn configuration_problems_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    for body in [
        format!("{BLOBS}num_clinets = 3\n"),
        format!("{BLOBS}iid_rate = 2.0\n"),
        "rounds = \"many\"\n".to_string(),
    ] {
        let cfg = write_config(dir.path(), &body);
        let out = freqfed(&["run", "--config", cfg.to_str().unwrap()]);
        assert_eq!(code(&out), 1, "{body}");
        assert!(!out.stderr.is_empty());
    }
    let missing = dir.path().join("absent.toml");
    assert_eq!(code(&freqfed(&["run", "--config", missing.to_str().unwrap()])), 1);
    assert_eq!(code(&freqfed(&["launch"])), 1);
    let cfg = write_config(dir.path(), BLOBS);
    let bad_axis = freqfed(&["sweep", "--config", cfg.to_str().unwrap(), "--axis", "gamma", "--values", "1"]);
    assert_eq!(code(&bad_axis), 1);
    let no_attack_pmr = freqfed(&["sweep", "--config", cfg.to_str().unwrap(), "--axis", "pmr", "--values", "0.1"]);
    assert_eq!(code(&no_attack_pmr), 1);
}

#[test]
fn runtime_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "rounds = 1\nmnist_images = \"no/such/images.gz\"\nmnist_labels = \"no/such/labels.gz\"\n",
    );
    let out = freqfed(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn help_exits_cleanly() {
    let out = freqfed(&["--help"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("sweep"));
}
