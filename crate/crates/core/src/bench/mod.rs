//! Experiment harness: config grids, run execution with on-disk artifacts,
//! and report/curve generation from completed run directories.
//!
//! A run directory `<Model>-<Dataset>-<Loss>-s<seed>` holds `run.json`
//! (identity and full config), `metrics.jsonl` (one record per epoch),
//! `pairs.csv` (the verification pair list) and `checkpoint.bin` (final
//! backbone weights). Nothing written depends on wall-clock time.

mod config;
mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

pub use config::{
    parse_config, parse_config_str, run_label, DatasetSource, ExperimentConfig, NetworkOverrides, DEFAULT_SEED,
};
pub use report::{
    discover_runs, emit_curves, emit_report, format_csv, format_table, parse_report_csv, report_rows, CompletedRun,
    ReportFormat, ReportRow, CURVE_FILE, CURVE_HEADER,
};

use crate::backbone::{init_network, save_checkpoint, BackboneKind};
use crate::data::{load_sampleset, SampleSet, Split};
use crate::error::{Error, Result};
use crate::eval::{format_pairs, EvalReport};
use crate::loss::LossKind;
use crate::seed::{derive_seed, Stream};
use crate::trainer::{run_training, Model, TrainRun};

pub const RUN_META_FILE: &str = "run.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const PAIRS_FILE: &str = "pairs.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const DEFAULT_OUT_DIR: &str = "mllab-runs";
pub const OUT_ENV: &str = "MLLAB_OUT";

/// Identity of a run as stored in `run.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    pub label: String,
    pub base_model: BackboneKind,
    pub loss: LossKind,
    pub dataset: String,
    pub seed: u64,
    pub seed_defaulted: bool,
    pub config: ExperimentConfig,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub run_id: String,
    pub dir: PathBuf,
    pub run: TrainRun,
    pub report: EvalReport,
}

/// Output root for `config`: an explicit override, else `$MLLAB_OUT`, else
/// the config's `out` key, else [`DEFAULT_OUT_DIR`].
pub fn output_root(config: &ExperimentConfig, cli_override: Option<&Path>) -> PathBuf {
    if let Some(p) = cli_override {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    config.out_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn build_data(config: &ExperimentConfig) -> Result<(SampleSet, SampleSet)> {
    match &config.dataset {
        DatasetSource::Synthetic { spec, .. } => spec.generate(config.seed),
        DatasetSource::Files { train, test, .. } => {
            let train = load_sampleset(train, Split::Train)?;
            let test = load_sampleset(test, Split::Test)?;
            if train.dim() != test.dim() {
                return Err(Error::mismatch("test feature dim", train.dim(), test.dim()));
            }
            Ok((train, test))
        }
    }
}

/// Train one configuration and write its artifacts under `out_root/<run_id>`.
pub fn run_experiment(config: &ExperimentConfig, out_root: &Path) -> Result<RunOutcome> {
    let run_id = config.run_id();
    execute(config, out_root, &run_id).map_err(|e| Error::Run { run_id, source: Box::new(e) })
}

fn execute(config: &ExperimentConfig, out_root: &Path, run_id: &str) -> Result<RunOutcome> {
    config.validate()?;
    let (train, test) = build_data(config)?;
    let net_config = config.network.apply(config.backbone, train.dim());
    let net = init_network(net_config, derive_seed(config.seed, Stream::Init, 0))?;
    let model = Model::with_classifier(net, train.classes, config.seed)?;
    let run = run_training(model, &config.loss, &train, &test, &config.optimizer, &config.eval, config.seed)?;
    let report = EvalReport::from_series(&run.test_series())?;

    let dir = out_root.join(run_id);
    fs::create_dir_all(&dir)?;
    let meta = RunMeta {
        run_id: run_id.to_string(),
        label: config.label(),
        base_model: config.backbone,
        loss: config.loss.kind,
        dataset: config.dataset.label().to_string(),
        seed: config.seed,
        seed_defaulted: config.seed_defaulted,
        config: ExperimentConfig { out_dir: None, ..config.clone() },
    };
    fs::write(dir.join(RUN_META_FILE), serde_json::to_string_pretty(&meta)? + "\n")?;
    fs::write(dir.join(METRICS_FILE), run.to_jsonl()?)?;
    fs::write(dir.join(PAIRS_FILE), format_pairs(&run.pairs))?;
    save_checkpoint(&run.model.net, &dir.join(CHECKPOINT_FILE))?;
    Ok(RunOutcome { run_id: run_id.to_string(), dir, run, report })
}

/// Run every config with at most `jobs` runs in flight. Results come back
/// in input order; one failing run does not stop the others.
pub fn run_grid(configs: &[ExperimentConfig], cli_out: Option<&Path>, jobs: usize) -> Vec<Result<RunOutcome>> {
    let jobs = jobs.clamp(1, configs.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<RunOutcome>>>> = Mutex::new((0..configs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cfg) = configs.get(i) else { break };
                let result = run_experiment(cfg, &output_root(cfg, cli_out));
                slots.lock().expect("result slots poisoned")[i] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots poisoned")
        .into_iter()
        .map(|r| r.expect("every slot is filled once the scope ends"))
        .collect()
}
