use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mllab::bench::{parse_report_csv, CURVE_HEADER};
use mllab::trainer::{lr_at_epoch, EpochRecord, OptimizerConfig};

fn mllab(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mllab"));
    cmd.args(args).env_remove("MLLAB_OUT");
    if let Some(p) = env_out {
        cmd.env("MLLAB_OUT", p);
    }
    cmd.output().expect("spawn mllab")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("exp.conf");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const SMOKE: &str = "[experiment]\nbackbone = residual\nloss = arcface\ndataset = SynA\nseed = 3\nepochs = 1\n";

fn read_records(run_dir: &Path) -> Vec<EpochRecord> {
    fs::read_to_string(run_dir.join("metrics.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn smoke_run_writes_one_epoch_and_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");
    let cfg = write_config(tmp.path(), SMOKE);
    let run = mllab(&["run", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));

    let dir = out.join("Residual-SynA-ArcFace-s3");
    for f in ["run.json", "metrics.jsonl", "pairs.csv", "checkpoint.bin"] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    let records = read_records(&dir);
    assert_eq!(records.len(), 1);
    assert_eq!(records[0].epoch, 1);

    let table = mllab(&["report", "--runs", out.to_str().unwrap()], None);
    assert!(table.status.success());
    let text = String::from_utf8(table.stdout).unwrap();
    assert!(text.contains("Mean Accuracy"));
    assert!(text.contains("n/a"), "one epoch is shorter than the window:\n{text}");
    assert!(out.join("report.txt").is_file());

    let csv = mllab(&["report", "--runs", out.to_str().unwrap(), "--format", "csv"], None);
    assert!(csv.status.success());
    let rows = parse_report_csv(&String::from_utf8(csv.stdout).unwrap()).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!((rows[0].base_model.as_str(), rows[0].loss.as_str()), ("Residual", "ArcFace"));
    assert_eq!(rows[0].test_acc, records[0].test_acc);
    assert_eq!(rows[0].window_mean, None);
}

#[test]
fn curves_agree_with_schedule_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");
    let cfg = write_config(
        tmp.path(),
        "[experiment]\nbackbone = dws\nloss = amsoftmax\ndataset = SynA\nseed = 5\nepochs = 6\ndrop_epochs = 3, 5\nnum_pairs = 200\n",
    );
    assert!(mllab(&["run", "--config", &cfg, "--out", out.to_str().unwrap()], None).status.success());
    let curves = mllab(&["curves", "--runs", out.to_str().unwrap()], None);
    assert!(curves.status.success());

    let text = fs::read_to_string(out.join("DWSep-SynA-AMSoftmax-s5/curve.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(CURVE_HEADER));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 6);

    let sched = OptimizerConfig { epochs: 6, drop_epochs: vec![3, 5], ..OptimizerConfig::default() };
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[0] as usize, i + 1);
        assert_eq!(r[1], lr_at_epoch(&sched, i + 1).unwrap());
    }

    let csv = mllab(&["report", "--runs", out.to_str().unwrap(), "--format", "csv"], None);
    let row = &parse_report_csv(&String::from_utf8(csv.stdout).unwrap()).unwrap()[0];
    let best = rows.iter().map(|r| r[4]).fold(f64::NEG_INFINITY, f64::max);
    let first_max = rows.iter().position(|r| r[4] == best).unwrap() + 1;
    assert_eq!(row.test_acc, best);
    assert_eq!(row.best_epoch, first_max);
    assert_eq!(row.train_acc, rows[5][3]);
}

#[test]
fn env_var_sets_output_root_and_flag_overrides_it() {
    let tmp = tempfile::tempdir().unwrap();
    let env_dir = tmp.path().join("from-env");
    let cfg = write_config(tmp.path(), SMOKE);
    assert!(mllab(&["run", "--config", &cfg], Some(&env_dir)).status.success());
    assert!(env_dir.join("Residual-SynA-ArcFace-s3/metrics.jsonl").is_file());

    let flag_dir = tmp.path().join("from-flag");
    let env_dir2 = tmp.path().join("unused");
    assert!(mllab(&["run", "--config", &cfg, "--out", flag_dir.to_str().unwrap()], Some(&env_dir2)).status.success());
    assert!(flag_dir.join("Residual-SynA-ArcFace-s3").is_dir());
    assert!(!env_dir2.exists());
}

#[test]
fn config_errors_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("runs");
    for body in [
        "[experiment]\nbackbone = residual\nloss = centerloss\ndataset = SynA\n",
        "[experiment]\nbackbone = residual\nloss = ce\ndataset = SynA\nlearning_rate = 0.1\n",
        "[experiment]\nbackbone = residual\nloss = ce\ndataset = SynA\nepochs = 4\ndrop_epochs = 3, 2\n",
    ] {
        let cfg = write_config(tmp.path(), body);
        let o = mllab(&["run", "--config", &cfg, "--out", out.to_str().unwrap()], None);
        assert_eq!(o.status.code(), Some(2), "{body}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
    }
    assert!(!out.exists(), "no run may start after a config error");

    let o = mllab(&["gradcheck", "--loss", "arcface", "--trials", "0"], None);
    assert_eq!(o.status.code(), Some(2));
    let o = mllab(&["gradcheck", "--loss", "centerloss"], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn failing_run_exits_with_code_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        &format!(
            "[experiment]\nbackbone = residual\nloss = ce\ndataset = file\ntrain_file = {}\ntest_file = {}\nepochs = 1\n",
            tmp.path().join("missing-train.txt").display(),
            tmp.path().join("missing-test.txt").display()
        ),
    );
    let o = mllab(&["run", "--config", &cfg, "--out", tmp.path().join("runs").to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn report_on_empty_directory_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let o = mllab(&["report", "--runs", tmp.path().to_str().unwrap()], None);
    assert!(!o.status.success());
}

#[test]
fn gradcheck_command_reports_pass() {
    let o = mllab(&["gradcheck", "--loss", "asoftmax", "--trials", "20", "--seed", "9"], None);
    assert!(o.status.success());
    assert!(String::from_utf8(o.stdout).unwrap().starts_with("PASS ASoftmax"));
}
