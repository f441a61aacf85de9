//! Face-verification protocol over a test split (pair sampling, threshold
//! selection, k-fold accuracy) and the per-run summary metrics.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::EmbeddingNetwork;
use crate::data::SampleSet;
use crate::error::{Error, Result};
use crate::tensor::{l2_normalize, Mat};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VerificationPair {
    pub index_a: usize,
    pub index_b: usize,
    pub is_same: bool,
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    if a < b { (a, b) } else { (b, a) }
}

/// Draw `want` distinct unordered pairs from `universe` pairs described by
/// `pick`. Enumerates when the universe is small relative to the request and
/// rejection-samples otherwise.
fn sample_distinct(
    rng: &mut ChaCha8Rng,
    want: usize,
    universe: usize,
    enumerate: impl Fn() -> Vec<(usize, usize)>,
    mut pick: impl FnMut(&mut ChaCha8Rng) -> (usize, usize),
) -> Vec<(usize, usize)> {
    if universe <= 4 * want || universe <= 4096 {
        let mut all = enumerate();
        all.shuffle(rng);
        all.truncate(want);
        return all;
    }
    let mut seen = HashSet::with_capacity(want);
    let mut out = Vec::with_capacity(want);
    while out.len() < want {
        let (a, b) = pick(rng);
        let key = ordered(a, b);
        if seen.insert(key) {
            out.push(key);
        }
    }
    out
}

/// `num_pairs / 2` same-identity and `num_pairs / 2` different-identity pairs
/// over `labels`, with no unordered pair repeated. Positives come first.
pub fn make_pairs(labels: &[usize], num_pairs: usize, seed: u64) -> Result<Vec<VerificationPair>> {
    if num_pairs == 0 || !num_pairs.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!("num_pairs {num_pairs} must be even and positive")));
    }
    let half = num_pairs / 2;
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let groups: Vec<Vec<usize>> = groups.into_values().collect();
    let n = labels.len();
    let positives_available: usize = groups.iter().map(|g| g.len() * (g.len().saturating_sub(1)) / 2).sum();
    let total_pairs = n * n.saturating_sub(1) / 2;
    let negatives_available = total_pairs - positives_available;
    if positives_available < half {
        return Err(Error::InsufficientData(format!(
            "{half} same-identity pairs requested, {positives_available} available"
        )));
    }
    if negatives_available < half {
        return Err(Error::InsufficientData(format!(
            "{half} different-identity pairs requested, {negatives_available} available"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let multi: Vec<&Vec<usize>> = groups.iter().filter(|g| g.len() >= 2).collect();
    let pos = sample_distinct(
        &mut rng,
        half,
        positives_available,
        || {
            let mut v = Vec::new();
            for g in &groups {
                for (k, &a) in g.iter().enumerate() {
                    for &b in &g[k + 1..] {
                        v.push((a, b));
                    }
                }
            }
            v
        },
        |rng| {
            let g = multi[rng.random_range(0..multi.len())];
            let a = rng.random_range(0..g.len());
            let mut b = rng.random_range(0..g.len() - 1);
            if b >= a {
                b += 1;
            }
            (g[a], g[b])
        },
    );
    let neg = sample_distinct(
        &mut rng,
        half,
        negatives_available,
        || {
            let mut v = Vec::new();
            for a in 0..n {
                for b in (a + 1)..n {
                    if labels[a] != labels[b] {
                        v.push((a, b));
                    }
                }
            }
            v
        },
        |rng| loop {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if labels[a] != labels[b] {
                return (a, b);
            }
        },
    );
    let mut out: Vec<VerificationPair> = pos
        .into_iter()
        .map(|(a, b)| VerificationPair { index_a: a, index_b: b, is_same: true })
        .collect();
    out.extend(neg.into_iter().map(|(a, b)| VerificationPair { index_a: a, index_b: b, is_same: false }));
    Ok(out)
}

/// Squared Euclidean distance between the unit-normalised embeddings of each pair.
pub fn distances_from_embeddings(emb: &Mat, pairs: &[VerificationPair]) -> Result<Vec<f64>> {
    let unit: Vec<Vec<f64>> = (0..emb.rows()).map(|i| l2_normalize(emb.row(i))).collect::<Result<_>>()?;
    pairs
        .iter()
        .map(|p| {
            let (a, b) = (
                unit.get(p.index_a).ok_or_else(|| Error::mismatch("pair index", emb.rows(), p.index_a))?,
                unit.get(p.index_b).ok_or_else(|| Error::mismatch("pair index", emb.rows(), p.index_b))?,
            );
            Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
        })
        .collect()
}

pub fn pair_distances(net: &EmbeddingNetwork, testset: &SampleSet, pairs: &[VerificationPair]) -> Result<Vec<f64>> {
    distances_from_embeddings(&net.embed(&testset.inputs)?, pairs)
}

fn accuracy_at(distances: &[f64], same: &[bool], threshold: f64) -> f64 {
    let correct = distances
        .iter()
        .zip(same)
        .filter(|(&d, &s)| (d < threshold) == s)
        .count();
    100.0 * correct as f64 / distances.len() as f64
}

/// Threshold maximising verification accuracy, where a pair is predicted
/// "same" iff its distance is below the threshold.
///
/// Candidates are `min − 1`, the midpoints between consecutive distinct
/// distances, and `max + 1`; ties go to the smallest candidate. Returns
/// `(threshold, accuracy %)`.
pub fn best_threshold_accuracy(distances: &[f64], same: &[bool]) -> Result<(f64, f64)> {
    if distances.is_empty() {
        return Err(Error::EmptyInput);
    }
    if distances.len() != same.len() {
        return Err(Error::mismatch("distance/flag count", distances.len(), same.len()));
    }
    if distances.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("pair distances"));
    }
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]));

    let n = distances.len();
    // Below every distance nothing is predicted "same".
    let mut correct = same.iter().filter(|&&s| !s).count() as i64;
    let mut best = (distances[order[0]] - 1.0, correct);
    let mut k = 0;
    while k < n {
        let d = distances[order[k]];
        while k < n && distances[order[k]] == d {
            correct += if same[order[k]] { 1 } else { -1 };
            k += 1;
        }
        let threshold = if k < n {
            0.5 * (d + distances[order[k]])
        } else {
            d + 1.0
        };
        if correct > best.1 {
            best = (threshold, correct);
        }
    }
    Ok((best.0, 100.0 * best.1 as f64 / n as f64))
}

/// Mean held-out accuracy over `folds` contiguous folds of a seeded shuffle;
/// each fold is scored at the threshold chosen on the remaining folds.
pub fn kfold_verification(distances: &[f64], same: &[bool], folds: usize, seed: u64) -> Result<f64> {
    if distances.len() != same.len() {
        return Err(Error::mismatch("distance/flag count", distances.len(), same.len()));
    }
    if folds < 2 {
        return Err(Error::InvalidConfig(format!("folds {folds} must be >= 2")));
    }
    let n = distances.len();
    if n < folds {
        return Err(Error::TooFewPairs { pairs: n, folds });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let (base, extra) = (n / folds, n % folds);
    let mut start = 0;
    let mut total = 0.0;
    for f in 0..folds {
        let len = base + usize::from(f < extra);
        let held = &order[start..start + len];
        let (train_d, train_s): (Vec<f64>, Vec<bool>) = order[..start]
            .iter()
            .chain(&order[start + len..])
            .map(|&i| (distances[i], same[i]))
            .unzip();
        let (threshold, _) = best_threshold_accuracy(&train_d, &train_s)?;
        let held_d: Vec<f64> = held.iter().map(|&i| distances[i]).collect();
        let held_s: Vec<bool> = held.iter().map(|&i| same[i]).collect();
        total += accuracy_at(&held_d, &held_s, threshold);
        start += len;
    }
    Ok(total / folds as f64)
}

/// 1-based epoch of the first occurrence of the series maximum.
pub fn convergence_epoch(series: &[f64]) -> Result<usize> {
    if series.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(crate::tensor::argmax(series) + 1)
}

/// Mean and population standard deviation over epochs `lo..=hi` (1-based).
pub fn window_mean_std(series: &[f64], lo: usize, hi: usize) -> Result<(f64, f64)> {
    window_mean_std_with(series, lo, hi, false)
}

/// As [`window_mean_std`]; `sample_std` switches to the `n − 1` denominator.
pub fn window_mean_std_with(series: &[f64], lo: usize, hi: usize, sample_std: bool) -> Result<(f64, f64)> {
    if lo == 0 || lo > hi {
        return Err(Error::InvalidConfig(format!("window {lo}..={hi} is not a 1-based range")));
    }
    if series.len() < hi {
        return Err(Error::SeriesTooShort { len: series.len(), needed: hi });
    }
    let w = &series[lo - 1..hi];
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let ss: f64 = w.iter().map(|v| (v - mean) * (v - mean)).sum();
    let denom = if sample_std { n - 1.0 } else { n };
    let std = if denom > 0.0 { (ss / denom).sqrt() } else { 0.0 };
    Ok((mean, std))
}

pub const WINDOW_LO: usize = 10;
pub const WINDOW_HI: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub best_acc: f64,
    pub best_epoch: usize,
    /// `None` when the run is shorter than the averaging window.
    pub window_mean: Option<f64>,
    pub window_std: Option<f64>,
}

impl EvalReport {
    pub fn from_series(series: &[f64]) -> Result<Self> {
        let best_epoch = convergence_epoch(series)?;
        let (window_mean, window_std) = match window_mean_std(series, WINDOW_LO, WINDOW_HI) {
            Ok((m, s)) => (Some(m), Some(s)),
            Err(Error::SeriesTooShort { .. }) => (None, None),
            Err(e) => return Err(e),
        };
        Ok(EvalReport {
            best_acc: series[best_epoch - 1],
            best_epoch,
            window_mean,
            window_std,
        })
    }
}

/// Audit export: one `index_a,index_b,is_same` row per pair.
pub fn format_pairs(pairs: &[VerificationPair]) -> String {
    let mut out = String::with_capacity(pairs.len() * 12);
    for p in pairs {
        writeln!(out, "{},{},{}", p.index_a, p.index_b, u8::from(p.is_same)).unwrap();
    }
    out
}
