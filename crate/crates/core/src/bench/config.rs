//! Experiment-file parser.
//!
//! The file is a list of `[experiment]` sections made of `key = value`
//! lines. Blank lines and lines starting with `#` are ignored. The grid keys
//! `backbone`, `loss`, `dataset` and `seed` take comma-separated lists and a
//! section expands to their Cartesian product; every other key takes a single
//! value (`drop_epochs` takes a comma list of epochs, or `none`). If
//! `epochs` is shortened without `drop_epochs`, default drop epochs past the
//! end are discarded. Unknown keys and repeated keys are errors. See
//! `configs/` for annotated examples.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneKind, NetworkConfig};
use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::loss::{LossKind, LossSpec};
use crate::trainer::{EvalConfig, OptimizerConfig};

pub const DEFAULT_SEED: u64 = 42;

/// Where a run's data comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum DatasetSource {
    Synthetic { label: String, spec: SyntheticSpec },
    Files { label: String, train: PathBuf, test: PathBuf },
}

impl DatasetSource {
    pub fn label(&self) -> &str {
        match self {
            DatasetSource::Synthetic { label, .. } | DatasetSource::Files { label, .. } => label,
        }
    }
}

/// Optional architecture overrides; unset fields keep the backbone defaults.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkOverrides {
    pub width: Option<usize>,
    pub blocks: Option<usize>,
    pub embed_dim: Option<usize>,
    pub grid_side: Option<usize>,
    pub kernel: Option<usize>,
}

impl NetworkOverrides {
    pub fn apply(&self, kind: BackboneKind, input_dim: usize) -> NetworkConfig {
        let mut c = NetworkConfig::new(kind, input_dim);
        c.width = self.width.unwrap_or(c.width);
        c.blocks = self.blocks.unwrap_or(c.blocks);
        c.embed_dim = self.embed_dim.unwrap_or(c.embed_dim);
        c.grid_side = self.grid_side.unwrap_or(c.grid_side);
        c.kernel = self.kernel.unwrap_or(c.kernel);
        c
    }
}

/// One fully specified run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub backbone: BackboneKind,
    pub network: NetworkOverrides,
    pub loss: LossSpec,
    pub dataset: DatasetSource,
    pub optimizer: OptimizerConfig,
    pub eval: EvalConfig,
    pub seed: u64,
    /// True when the file gave no `seed` and [`DEFAULT_SEED`] was used.
    pub seed_defaulted: bool,
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Default desk-scale run.
    pub fn new(backbone: BackboneKind, loss: LossKind, dataset: DatasetSource, seed: u64) -> Self {
        ExperimentConfig {
            backbone,
            network: NetworkOverrides::default(),
            loss: LossSpec::new(loss),
            dataset,
            optimizer: OptimizerConfig::default(),
            eval: EvalConfig::default(),
            seed,
            seed_defaulted: false,
            out_dir: None,
        }
    }

    /// `<Model>-<Dataset>-<Loss>`, e.g. `Residual-SynA-ArcFace`.
    pub fn label(&self) -> String {
        run_label(self.backbone, self.dataset.label(), self.loss.kind)
    }

    /// Directory name of the run: the label plus the seed.
    pub fn run_id(&self) -> String {
        format!("{}-s{}", self.label(), self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.optimizer.validate()?;
        if self.eval.folds < 2 || self.eval.num_pairs == 0 || !self.eval.num_pairs.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "need folds >= 2 and an even positive num_pairs, got folds={} num_pairs={}",
                self.eval.folds, self.eval.num_pairs
            )));
        }
        if self.eval.num_pairs < self.eval.folds {
            return Err(Error::InvalidConfig(format!(
                "num_pairs {} is smaller than folds {}",
                self.eval.num_pairs, self.eval.folds
            )));
        }
        match &self.dataset {
            DatasetSource::Synthetic { spec, .. } => {
                spec.validate()?;
                self.network.apply(self.backbone, spec.dim).validate()
            }
            DatasetSource::Files { .. } => Ok(()),
        }
    }
}

pub fn run_label(backbone: BackboneKind, dataset: &str, loss: LossKind) -> String {
    format!("{}-{}-{}", backbone.label(), dataset, loss.label())
}

const GRID_KEYS: [&str; 4] = ["backbone", "loss", "dataset", "seed"];

const SCALAR_KEYS: &[&str] = &[
    "epochs",
    "lr0",
    "momentum",
    "weight_decay",
    "drop_epochs",
    "drop_factor",
    "batch_size",
    "num_pairs",
    "folds",
    "asoftmax_m",
    "asoftmax_lambda",
    "asoftmax_normalize",
    "am_margin",
    "am_scale",
    "arcface_margin",
    "arcface_scale",
    "marginal_threshold",
    "marginal_slack",
    "marginal_balance",
    "marginal_hinge",
    "width",
    "blocks",
    "embed_dim",
    "grid_side",
    "kernel",
    "train_ids",
    "train_per_class",
    "test_ids",
    "test_per_class",
    "dim",
    "noise_sigma",
    "label_noise",
    "min_angle",
    "train_file",
    "test_file",
    "dataset_label",
    "out",
];

struct Section {
    index: usize,
    entries: BTreeMap<String, (usize, String)>,
}

impl Section {
    fn path(&self, key: &str) -> String {
        format!("experiment[{}].{key}", self.index)
    }

    fn err(&self, key: &str, msg: impl fmt::Display) -> Error {
        let line = self.entries.get(key).map(|e| e.0).unwrap_or(0);
        Error::config(self.path(key), format!("line {line}: {msg}"))
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.1.as_str())
    }

    fn scalar<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e| self.err(key, format!("`{v}`: {e}"))),
        }
    }

    fn set<T: FromStr>(&self, key: &str, target: &mut T) -> Result<()>
    where
        T::Err: fmt::Display,
    {
        if let Some(v) = self.scalar(key)? {
            *target = v;
        }
        Ok(())
    }

    fn list(&self, key: &str) -> Option<Vec<&str>> {
        self.raw(key).map(|v| v.split(',').map(str::trim).collect())
    }
}

fn split_sections(text: &str) -> Result<Vec<Section>> {
    let mut sections: Vec<Section> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line.starts_with('[') {
            if line != "[experiment]" {
                return Err(Error::config(format!("line {lineno}"), format!("unknown section `{line}`")));
            }
            sections.push(Section { index: sections.len(), entries: BTreeMap::new() });
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::config(format!("line {lineno}"), "expected `key = value`"));
        };
        let (key, value) = (key.trim().to_string(), value.trim().to_string());
        let Some(section) = sections.last_mut() else {
            return Err(Error::config(format!("line {lineno}"), "key outside an [experiment] section"));
        };
        let path = section.path(&key);
        if !GRID_KEYS.contains(&key.as_str()) && !SCALAR_KEYS.contains(&key.as_str()) {
            return Err(Error::config(path, format!("line {lineno}: unknown key")));
        }
        if value.is_empty() {
            return Err(Error::config(path, format!("line {lineno}: empty value")));
        }
        if value.contains(',') && !GRID_KEYS.contains(&key.as_str()) && key != "drop_epochs" {
            return Err(Error::config(path, format!("line {lineno}: only grid keys take lists")));
        }
        if section.entries.insert(key, (lineno, value)).is_some() {
            return Err(Error::config(path, format!("line {lineno}: repeated key")));
        }
    }
    if sections.is_empty() {
        return Err(Error::config("file", "no [experiment] section"));
    }
    Ok(sections)
}

fn dataset_source(sec: &Section, token: &str, base_dir: &Path) -> Result<DatasetSource> {
    let mut spec = match token.to_ascii_lowercase().as_str() {
        "syna" => SyntheticSpec::syn_a(),
        "synb" => SyntheticSpec::syn_b(),
        "file" => {
            let resolve = |key: &str| -> Result<PathBuf> {
                let p = sec.raw(key).ok_or_else(|| sec.err(key, "required when dataset = file"))?;
                Ok(base_dir.join(p))
            };
            let label = sec.raw("dataset_label").unwrap_or("File").to_string();
            return Ok(DatasetSource::Files {
                label,
                train: resolve("train_file")?,
                test: resolve("test_file")?,
            });
        }
        _ => return Err(sec.err("dataset", format!("unknown dataset `{token}` (expected SynA, SynB or file)"))),
    };
    let label = if token.eq_ignore_ascii_case("syna") { "SynA" } else { "SynB" };
    sec.set("train_ids", &mut spec.train_ids)?;
    sec.set("train_per_class", &mut spec.train_per_class)?;
    sec.set("test_ids", &mut spec.test_ids)?;
    sec.set("test_per_class", &mut spec.test_per_class)?;
    sec.set("dim", &mut spec.dim)?;
    sec.set("noise_sigma", &mut spec.noise_sigma)?;
    sec.set("label_noise", &mut spec.label_noise)?;
    sec.set("min_angle", &mut spec.min_angle)?;
    Ok(DatasetSource::Synthetic { label: label.to_string(), spec })
}

fn loss_spec(sec: &Section, kind: LossKind) -> Result<LossSpec> {
    let mut s = LossSpec::new(kind);
    sec.set("asoftmax_m", &mut s.m_int)?;
    sec.set("asoftmax_lambda", &mut s.asoftmax_lambda)?;
    sec.set("asoftmax_normalize", &mut s.normalize_features)?;
    sec.set("marginal_threshold", &mut s.dist_threshold)?;
    sec.set("marginal_slack", &mut s.error_margin)?;
    sec.set("marginal_balance", &mut s.balance)?;
    sec.set("marginal_hinge", &mut s.marginal_hinge)?;
    match kind {
        LossKind::AMSoftmax => {
            sec.set("am_margin", &mut s.m_add)?;
            sec.set("am_scale", &mut s.s)?;
        }
        LossKind::ArcFace => {
            sec.set("arcface_margin", &mut s.m_add)?;
            sec.set("arcface_scale", &mut s.s)?;
        }
        _ => {}
    }
    Ok(s)
}

fn expand(sec: &Section, base_dir: &Path) -> Result<Vec<ExperimentConfig>> {
    let backbones = sec
        .list("backbone")
        .ok_or_else(|| sec.err("backbone", "missing required key"))?
        .into_iter()
        .map(|b| b.parse::<BackboneKind>().map_err(|e| sec.err("backbone", e)))
        .collect::<Result<Vec<_>>>()?;
    // An unknown loss name surfaces as its own error kind.
    let losses = sec
        .list("loss")
        .ok_or_else(|| sec.err("loss", "missing required key"))?
        .into_iter()
        .map(str::parse::<LossKind>)
        .collect::<Result<Vec<_>>>()?;
    let datasets = sec.list("dataset").ok_or_else(|| sec.err("dataset", "missing required key"))?;
    let (seeds, seed_defaulted) = match sec.list("seed") {
        None => (vec![DEFAULT_SEED], true),
        Some(v) => (
            v.into_iter()
                .map(|s| s.parse::<u64>().map_err(|e| sec.err("seed", format!("`{s}`: {e}"))))
                .collect::<Result<Vec<_>>>()?,
            false,
        ),
    };

    let mut optimizer = OptimizerConfig::default();
    sec.set("epochs", &mut optimizer.epochs)?;
    sec.set("lr0", &mut optimizer.lr0)?;
    sec.set("momentum", &mut optimizer.momentum)?;
    sec.set("weight_decay", &mut optimizer.weight_decay)?;
    sec.set("drop_factor", &mut optimizer.drop_factor)?;
    sec.set("batch_size", &mut optimizer.batch_size)?;
    if let Some(list) = sec.list("drop_epochs") {
        optimizer.drop_epochs = if list == ["none"] {
            Vec::new()
        } else {
            list.into_iter()
                .map(|e| e.parse::<usize>().map_err(|err| sec.err("drop_epochs", format!("`{e}`: {err}"))))
                .collect::<Result<_>>()?
        };
    } else {
        // Default drops past a shortened run would never fire.
        let epochs = optimizer.epochs;
        optimizer.drop_epochs.retain(|&d| d <= epochs);
    }
    let mut eval = EvalConfig::default();
    sec.set("num_pairs", &mut eval.num_pairs)?;
    sec.set("folds", &mut eval.folds)?;
    let network = NetworkOverrides {
        width: sec.scalar("width")?,
        blocks: sec.scalar("blocks")?,
        embed_dim: sec.scalar("embed_dim")?,
        grid_side: sec.scalar("grid_side")?,
        kernel: sec.scalar("kernel")?,
    };
    let out_dir = sec.raw("out").map(|p| base_dir.join(p));
    let dataset_sources = datasets
        .iter()
        .map(|d| dataset_source(sec, d, base_dir))
        .collect::<Result<Vec<_>>>()?;

    let mut out = Vec::new();
    for &backbone in &backbones {
        for &kind in &losses {
            let loss = loss_spec(sec, kind)?;
            for dataset in &dataset_sources {
                for &seed in &seeds {
                    let cfg = ExperimentConfig {
                        backbone,
                        network: network.clone(),
                        loss: loss.clone(),
                        dataset: dataset.clone(),
                        optimizer: optimizer.clone(),
                        eval: eval.clone(),
                        seed,
                        seed_defaulted,
                        out_dir: out_dir.clone(),
                    };
                    cfg.validate()
                        .map_err(|e| Error::config(format!("experiment[{}]", sec.index), e.to_string()))?;
                    out.push(cfg);
                }
            }
        }
    }
    Ok(out)
}

/// Parse and validate experiment text. Relative paths resolve against `base_dir`.
pub fn parse_config_str(text: &str, base_dir: &Path) -> Result<Vec<ExperimentConfig>> {
    let mut all = Vec::new();
    for sec in split_sections(text)? {
        all.extend(expand(&sec, base_dir)?);
    }
    let mut ids: Vec<String> = all.iter().map(ExperimentConfig::run_id).collect();
    ids.sort();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::config("file", format!("run `{}` is defined twice", w[0])));
    }
    Ok(all)
}

pub fn parse_config(path: &Path) -> Result<Vec<ExperimentConfig>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
    parse_config_str(&text, path.parent().unwrap_or(Path::new(".")))
}
