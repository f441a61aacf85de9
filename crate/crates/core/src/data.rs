//! Synthetic identity datasets on the unit hypersphere, the dataset text
//! format, and 8-bit pixel normalisation.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{derive_seed, Stream};
use crate::tensor::{dot, norm, Mat};

/// Rejection attempts allowed per prototype before giving up.
const ATTEMPTS_PER_PROTOTYPE: usize = 2_000;

#[derive(Clone, Debug, PartialEq)]
pub struct IdentityPrototypes {
    /// `C × d`, unit rows.
    pub prototypes: Mat,
    pub seed: u64,
}

impl IdentityPrototypes {
    pub fn classes(&self) -> usize {
        self.prototypes.rows()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.cols()
    }

    /// Prototypes `range` as a new set (e.g. a disjoint test split).
    fn slice(&self, range: std::ops::Range<usize>) -> IdentityPrototypes {
        let rows: Vec<Vec<f64>> = range.map(|r| self.prototypes.row(r).to_vec()).collect();
        IdentityPrototypes {
            prototypes: Mat::from_rows(&rows).expect("uniform rows"),
            seed: self.seed,
        }
    }
}

fn gaussian_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// `C` random unit vectors in `d` dimensions, pairwise at least `min_angle`
/// apart, by rejection sampling with a bounded attempt budget.
pub fn generate_prototypes(classes: usize, dim: usize, min_angle: f64, seed: u64) -> Result<IdentityPrototypes> {
    if classes < 2 || dim < 2 {
        return Err(Error::InvalidConfig(format!(
            "prototypes need C >= 2 and d >= 2, got C={classes}, d={dim}"
        )));
    }
    if !(0.0..=std::f64::consts::PI).contains(&min_angle) {
        return Err(Error::InvalidConfig(format!("min_angle {min_angle} outside [0, pi]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_cos = min_angle.cos();
    let mut accepted: Vec<Vec<f64>> = Vec::with_capacity(classes);
    let budget = ATTEMPTS_PER_PROTOTYPE * classes;
    let mut attempts = 0;
    while accepted.len() < classes {
        if attempts == budget {
            return Err(Error::InfeasibleSeparation {
                classes,
                dim,
                min_angle,
                attempts,
            });
        }
        attempts += 1;
        let cand = gaussian_unit(&mut rng, dim);
        // compare angles, not cosines, so the floor holds exactly as stated
        if accepted
            .iter()
            .all(|p| dot(p, &cand) <= max_cos && dot(p, &cand).clamp(-1.0, 1.0).acos() >= min_angle)
        {
            accepted.push(cand);
        }
    }
    Ok(IdentityPrototypes {
        prototypes: Mat::from_rows(&accepted)?,
        seed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    /// `N × input_dim`.
    pub inputs: Mat,
    pub labels: Vec<usize>,
    pub classes: usize,
    /// Global identity index of each local class label.
    pub identities: Vec<usize>,
    pub split: Split,
}

impl SampleSet {
    pub fn new(inputs: Mat, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        if labels.len() != inputs.rows() {
            return Err(Error::mismatch("sample labels", inputs.rows(), labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Domain(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(SampleSet {
            inputs,
            labels,
            classes,
            identities: (0..classes).collect(),
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    /// Rows `idx` as a new matrix, with their labels.
    pub fn gather(&self, idx: &[usize]) -> (Mat, Vec<usize>) {
        let d = self.dim();
        let mut m = Mat::zeros(idx.len(), d);
        for (r, &i) in idx.iter().enumerate() {
            m.row_mut(r).copy_from_slice(self.inputs.row(i));
        }
        (m, idx.iter().map(|&i| self.labels[i]).collect())
    }
}

/// `per_class` noisy samples around every prototype: prototype plus isotropic
/// Gaussian noise of scale `noise_sigma`, re-normalised to unit length.
/// Samples are ordered class by class.
pub fn sample_dataset(protos: &IdentityPrototypes, per_class: usize, noise_sigma: f64, seed: u64) -> Result<SampleSet> {
    if per_class == 0 {
        return Err(Error::InvalidConfig("per_class must be >= 1".into()));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!("noise_sigma {noise_sigma} must be >= 0")));
    }
    let (c, d) = (protos.classes(), protos.dim());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Mat::zeros(c * per_class, d);
    let mut labels = Vec::with_capacity(c * per_class);
    for class in 0..c {
        let p = protos.prototypes.row(class);
        for k in 0..per_class {
            let row = inputs.row_mut(class * per_class + k);
            loop {
                for (v, &pv) in row.iter_mut().zip(p) {
                    let e: f64 = rng.sample(StandardNormal);
                    *v = pv + noise_sigma * e;
                }
                let n = norm(row);
                if n > 1e-9 {
                    row.iter_mut().for_each(|v| *v /= n);
                    break;
                }
            }
            labels.push(class);
        }
    }
    SampleSet::new(inputs, labels, c, Split::Train)
}

/// Synthetic train/test pair with disjoint identities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub train_ids: usize,
    pub train_per_class: usize,
    pub test_ids: usize,
    pub test_per_class: usize,
    pub dim: usize,
    pub noise_sigma: f64,
    /// Fraction of training labels reassigned to a different identity.
    pub label_noise: f64,
    pub min_angle: f64,
}

impl SyntheticSpec {
    /// Low-noise preset.
    pub fn syn_a() -> Self {
        SyntheticSpec {
            train_ids: 50,
            train_per_class: 40,
            test_ids: 20,
            test_per_class: 10,
            dim: 32,
            noise_sigma: 0.05,
            label_noise: 0.0,
            min_angle: std::f64::consts::FRAC_PI_4,
        }
    }

    /// Higher input noise plus 1% label noise.
    pub fn syn_b() -> Self {
        SyntheticSpec {
            noise_sigma: 0.07,
            label_noise: 0.01,
            ..Self::syn_a()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_ids < 2 || self.test_ids < 2 {
            return Err(Error::InvalidConfig("need at least 2 train and 2 test identities".into()));
        }
        if self.train_per_class == 0 || self.test_per_class < 2 {
            return Err(Error::InvalidConfig(
                "need train_per_class >= 1 and test_per_class >= 2".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(Error::InvalidConfig(format!("label_noise {} outside [0, 1]", self.label_noise)));
        }
        Ok(())
    }

    /// Generate `(train, test)`; identities `0..train_ids` go to training and
    /// the next `test_ids` to testing.
    pub fn generate(&self, seed: u64) -> Result<(SampleSet, SampleSet)> {
        self.validate()?;
        let total = self.train_ids + self.test_ids;
        let protos = generate_prototypes(total, self.dim, self.min_angle, derive_seed(seed, Stream::Data, 0))?;

        let mut train = sample_dataset(
            &protos.slice(0..self.train_ids),
            self.train_per_class,
            self.noise_sigma,
            derive_seed(seed, Stream::Data, 1),
        )?;
        let mut test = sample_dataset(
            &protos.slice(self.train_ids..total),
            self.test_per_class,
            self.noise_sigma,
            derive_seed(seed, Stream::Data, 2),
        )?;
        test.split = Split::Test;
        test.identities = (self.train_ids..total).collect();

        if self.label_noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::Data, 3));
            let flips = (self.label_noise * train.len() as f64).round() as usize;
            let mut idx: Vec<usize> = (0..train.len()).collect();
            idx.shuffle(&mut rng);
            for &i in idx.iter().take(flips) {
                let shift = rng.random_range(1..train.classes);
                train.labels[i] = (train.labels[i] + shift) % train.classes;
            }
        }
        Ok((train, test))
    }
}

/// `(raw − 127.5) / 128` for 8-bit intensities.
pub fn pixel_normalize(raw: &[f64]) -> Result<Vec<f64>> {
    raw.iter()
        .map(|&v| {
            if (0.0..=255.0).contains(&v) {
                Ok((v - 127.5) / 128.0)
            } else {
                Err(Error::Range(v))
            }
        })
        .collect()
}

pub fn pixel_normalize_u8(raw: &[u8]) -> Vec<f64> {
    raw.iter().map(|&v| (v as f64 - 127.5) / 128.0).collect()
}

const HEADER_PREFIX: &str = "#mllab-dataset v1";

pub fn format_sampleset(set: &SampleSet) -> String {
    let mut out = format!("{HEADER_PREFIX} dim={} classes={}\n", set.dim(), set.classes);
    for i in 0..set.len() {
        write!(out, "{}", set.labels[i]).unwrap();
        for v in set.inputs.row(i) {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn save_sampleset(set: &SampleSet, path: &Path) -> Result<()> {
    fs::write(path, format_sampleset(set))?;
    Ok(())
}

fn parse_header(line: &str) -> Result<(usize, usize)> {
    let err = |msg: &str| Error::Parse {
        line: 1,
        msg: msg.to_string(),
    };
    let rest = line
        .strip_prefix(HEADER_PREFIX)
        .ok_or_else(|| err("missing `#mllab-dataset v1` header"))?;
    let mut dim = None;
    let mut classes = None;
    for tok in rest.split_whitespace() {
        match tok.split_once('=') {
            Some(("dim", v)) => dim = v.parse().ok(),
            Some(("classes", v)) => classes = v.parse().ok(),
            _ => return Err(err(&format!("unexpected header token `{tok}`"))),
        }
    }
    match (dim, classes) {
        (Some(d), Some(c)) if d > 0 && c > 0 => Ok((d, c)),
        _ => Err(err("header needs positive dim=<d> and classes=<C>")),
    }
}

pub fn parse_sampleset(text: &str, split: Split) -> Result<SampleSet> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let (dim, classes) = parse_header(header.trim_end())?;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (k, raw) in lines.enumerate() {
        let line = k + 2;
        let row = raw.trim();
        if row.is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != dim + 1 {
            return Err(Error::Parse {
                line,
                msg: format!("expected {} fields (label + {dim} features), found {}", dim + 1, fields.len()),
            });
        }
        let label: usize = fields[0].trim().parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad label `{}`", fields[0]),
        })?;
        if label >= classes {
            return Err(Error::LabelOutOfRange { line, label, classes });
        }
        for f in &fields[1..] {
            let v: f64 = f.trim().parse().map_err(|_| Error::Parse {
                line,
                msg: format!("bad feature value `{f}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("non-finite feature value `{f}`"),
                });
            }
            data.push(v);
        }
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(Error::Parse {
            line: 2,
            msg: "dataset has a header but no samples".into(),
        });
    }
    SampleSet::new(Mat::from_vec(labels.len(), dim, data)?, labels, classes, split)
}

pub fn load_sampleset(path: &Path, split: Split) -> Result<SampleSet> {
    parse_sampleset(&fs::read_to_string(path)?, split)
}

/// Identity indices appearing in both sets (empty for generated pairs).
pub fn shared_identities(a: &SampleSet, b: &SampleSet) -> Vec<usize> {
    let left: HashSet<usize> = a.identities.iter().copied().collect();
    let mut out: Vec<usize> = b.identities.iter().copied().filter(|i| left.contains(i)).collect();
    out.sort_unstable();
    out
}
