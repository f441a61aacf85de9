use std::fs;
use std::path::Path;

use mllab::bench::{discover_runs, emit_report, format_csv, parse_config_str, parse_report_csv, report_rows, run_grid, ReportFormat};
use mllab::loss::LossKind;

#[test]
fn every_loss_lowers_training_loss_over_the_default_schedule() {
    let configs = parse_config_str(
        "[experiment]\nbackbone = residual\nloss = ce, asoftmax, amsoftmax, arcface, marginal\ndataset = SynA\nseed = 42\n",
        Path::new("."),
    )
    .unwrap();
    let tmp = tempfile::tempdir().unwrap();
    for (cfg, result) in configs.iter().zip(run_grid(&configs, Some(tmp.path()), 2)) {
        let run = result.unwrap().run;
        assert_eq!(run.records.len(), 20);
        let (first, last) = (run.records[0].train_loss, run.records[19].train_loss);
        assert!(last < first, "{:?}: loss {first} -> {last}", cfg.loss.kind);
    }

    let runs = discover_runs(tmp.path()).unwrap();
    let rows = report_rows(&runs).unwrap();
    let losses: Vec<&str> = rows.iter().map(|r| r.loss.as_str()).collect();
    let expected: Vec<&str> = LossKind::ALL.iter().map(|k| k.label()).collect();
    assert_eq!(losses, expected);
    assert!(rows.iter().all(|r| r.window_mean.is_some() && r.window_std.is_some()));
    assert_eq!(parse_report_csv(&format_csv(&rows)).unwrap(), rows);

    let (path, text) = emit_report(tmp.path(), ReportFormat::Table).unwrap();
    assert_eq!(fs::read_to_string(path).unwrap(), text);
    assert!(text.lines().any(|l| l.contains("Residual") && l.contains('±')));
}

#[test]
fn failed_run_does_not_stop_the_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!(
        "[experiment]\nbackbone = residual\nloss = ce\ndataset = SynA\nepochs = 1\n\n\
         [experiment]\nbackbone = residual\nloss = ce\ndataset = file\ntrain_file = {0}\ntest_file = {0}\nepochs = 1\n",
        tmp.path().join("absent.txt").display()
    );
    let configs = parse_config_str(&text, tmp.path()).unwrap();
    let results = run_grid(&configs, Some(&tmp.path().join("runs")), 2);
    assert!(results[0].is_ok());
    assert!(results[1].is_err());
}
