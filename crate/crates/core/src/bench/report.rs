//! Results table and learning curves, computed only from files in run
//! directories so they can be regenerated at any time.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{RunMeta, METRICS_FILE, RUN_META_FILE};
use crate::backbone::BackboneKind;
use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::loss::LossKind;
use crate::trainer::EpochRecord;

pub const CURVE_FILE: &str = "curve.csv";
pub const CURVE_HEADER: &str = "epoch,lr,train_loss,train_acc,test_acc";
const CSV_HEADER: &str = "base_model,loss,dataset,train_acc,test_acc,best_epoch,window_mean,window_std";

#[derive(Clone, Debug, PartialEq)]
pub struct CompletedRun {
    pub dir: PathBuf,
    pub meta: RunMeta,
    pub records: Vec<EpochRecord>,
}

/// Every direct subdirectory of `runs_dir` holding both a run description
/// and a metrics log, ordered by directory name.
pub fn discover_runs(runs_dir: &Path) -> Result<Vec<CompletedRun>> {
    let entries = match fs::read_dir(runs_dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::NoRunsFound(runs_dir.into())),
        Err(e) => return Err(e.into()),
    };
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(RUN_META_FILE).is_file() && p.join(METRICS_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::NoRunsFound(runs_dir.into()));
    }
    dirs.into_iter()
        .map(|dir| {
            let meta: RunMeta = serde_json::from_str(&fs::read_to_string(dir.join(RUN_META_FILE))?)?;
            let records = fs::read_to_string(dir.join(METRICS_FILE))?
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(serde_json::from_str)
                .collect::<std::result::Result<Vec<EpochRecord>, _>>()?;
            if records.is_empty() {
                return Err(Error::InsufficientData(format!("{} has an empty metrics log", dir.display())));
            }
            Ok(CompletedRun { dir, meta, records })
        })
        .collect()
}

/// One results-table row. `train_acc` is the final-epoch value, `test_acc`
/// the best verification accuracy reached at `best_epoch`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub base_model: String,
    pub loss: String,
    pub dataset: String,
    pub train_acc: f64,
    pub test_acc: f64,
    pub best_epoch: usize,
    pub window_mean: Option<f64>,
    pub window_std: Option<f64>,
}

/// Rows sorted by model, loss and dataset (seed breaks ties).
pub fn report_rows(runs: &[CompletedRun]) -> Result<Vec<ReportRow>> {
    let mut keyed: Vec<((BackboneKind, LossKind, String, u64), ReportRow)> = runs
        .iter()
        .map(|r| {
            let test: Vec<f64> = r.records.iter().map(|e| e.test_acc).collect();
            let ev = EvalReport::from_series(&test)?;
            let m = &r.meta;
            Ok((
                (m.base_model, m.loss, m.dataset.clone(), m.seed),
                ReportRow {
                    base_model: m.base_model.label().to_string(),
                    loss: m.loss.label().to_string(),
                    dataset: m.dataset.clone(),
                    train_acc: r.records[r.records.len() - 1].train_acc,
                    test_acc: ev.best_acc,
                    best_epoch: ev.best_epoch,
                    window_mean: ev.window_mean,
                    window_std: ev.window_std,
                },
            ))
        })
        .collect::<Result<_>>()?;
    keyed.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(keyed.into_iter().map(|(_, r)| r).collect())
}

/// Aligned text table; the last column shows `mean±std` over the
/// epoch 10–20 window.
pub fn format_table(rows: &[ReportRow]) -> String {
    let header = ["Base Model", "Loss", "Dataset", "Train Acc", "Test Acc", "Epochs", "Mean Accuracy"];
    let cells: Vec<[String; 7]> = rows
        .iter()
        .map(|r| {
            let mean = match (r.window_mean, r.window_std) {
                (Some(m), Some(s)) => format!("{m:.2}±{s:.3}"),
                _ => "n/a".to_string(),
            };
            [
                r.base_model.clone(),
                r.loss.clone(),
                r.dataset.clone(),
                format!("{:.2}", r.train_acc),
                format!("{:.2}", r.test_acc),
                r.best_epoch.to_string(),
                mean,
            ]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cols: &[&str]| -> String {
        let mut s = String::from("|");
        for (c, w) in cols.iter().zip(widths) {
            let pad = w - c.chars().count();
            write!(s, " {c}{} |", " ".repeat(pad)).unwrap();
        }
        s.push('\n');
        s
    };
    let mut out = line(&header);
    out.push('|');
    for w in widths {
        out.push_str(&"-".repeat(w + 2));
        out.push('|');
    }
    out.push('\n');
    for row in &cells {
        out.push_str(&line(&row.each_ref().map(String::as_str)));
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Full-precision CSV; missing window statistics are empty fields.
pub fn format_csv(rows: &[ReportRow]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.base_model,
            r.loss,
            r.dataset,
            r.train_acc,
            r.test_acc,
            r.best_epoch,
            opt(r.window_mean),
            opt(r.window_std)
        )
        .unwrap();
    }
    out
}

pub fn parse_report_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        _ => return Err(Error::Parse { line: 1, msg: "missing report header".into() }),
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let bad = |msg: String| Error::Parse { line: i + 1, msg };
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 8 {
                return Err(bad(format!("expected 8 fields, got {}", f.len())));
            }
            let num = |s: &str| f64::from_str(s).map_err(|e| bad(format!("`{s}`: {e}")));
            let opt_num = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
            Ok(ReportRow {
                base_model: f[0].to_string(),
                loss: f[1].to_string(),
                dataset: f[2].to_string(),
                train_acc: num(f[3])?,
                test_acc: num(f[4])?,
                best_epoch: f[5].parse().map_err(|e| bad(format!("`{}`: {e}", f[5])))?,
                window_mean: opt_num(f[6])?,
                window_std: opt_num(f[7])?,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::InvalidConfig(format!("unknown report format `{other}`"))),
        }
    }
}

/// Write `report.txt` or `report.csv` into `runs_dir` and return its path
/// and contents.
pub fn emit_report(runs_dir: &Path, format: ReportFormat) -> Result<(PathBuf, String)> {
    let rows = report_rows(&discover_runs(runs_dir)?)?;
    let (name, text) = match format {
        ReportFormat::Table => ("report.txt", format_table(&rows)),
        ReportFormat::Csv => ("report.csv", format_csv(&rows)),
    };
    let path = runs_dir.join(name);
    fs::write(&path, &text)?;
    Ok((path, text))
}

/// Write `curve.csv` into every run directory; returns the written paths.
pub fn emit_curves(runs_dir: &Path) -> Result<Vec<PathBuf>> {
    let runs = discover_runs(runs_dir)?;
    let mut written = Vec::with_capacity(runs.len());
    for run in runs {
        let mut text = format!("{CURVE_HEADER}\n");
        for r in &run.records {
            writeln!(text, "{},{},{},{},{}", r.epoch, r.lr, r.train_loss, r.train_acc, r.test_acc).unwrap();
        }
        let path = run.dir.join(CURVE_FILE);
        fs::write(&path, text)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(model: &str, mean: Option<f64>) -> ReportRow {
        ReportRow {
            base_model: model.into(),
            loss: "ArcFace".into(),
            dataset: "SynA".into(),
            train_acc: 97.125,
            test_acc: 99.0 + 1.0 / 3.0,
            best_epoch: 13,
            window_mean: mean,
            window_std: mean.map(|_| 0.30549),
        }
    }

    #[test]
    fn table_rendering() {
        let t = format_table(&[row("Residual", Some(98.0 + 1.0 / 3.0)), row("DWSep", None)]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("| Base Model "));
        assert!(lines[2].contains("98.33±0.305"));
        assert!(lines[2].contains("| 99.33 "));
        assert!(lines[3].contains("n/a"));
        assert!(lines.iter().all(|l| l.chars().count() == lines[0].chars().count()));
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![row("Residual", Some(98.123456789)), row("DWSep", None)];
        assert_eq!(parse_report_csv(&format_csv(&rows)).unwrap(), rows);
        assert!(parse_report_csv("nope\n").is_err());
    }

    #[test]
    fn missing_runs_dir() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(discover_runs(dir.path()), Err(Error::NoRunsFound(_))));
        assert!(matches!(discover_runs(&dir.path().join("absent")), Err(Error::NoRunsFound(_))));
    }
}
