//! Central finite-difference verification of the analytic loss gradients.
//!
//! The error metric is `|analytic − numeric| / max(1, |analytic|, |numeric|)`:
//! relative for components larger than one, absolute below that, so that
//! near-zero components are not judged against round-off noise.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::loss::{evaluate_loss, ClassifierParams, LossKind, LossSpec};
use crate::tensor::{FeatureBatch, Mat};

/// Angular distance from `θ ∈ {0, π}` inside which A-Softmax and ArcFace
/// samples are excluded from checks.
pub const ARCCOS_EXCLUSION: f64 = 1e-3;

/// Marginal instances with a pair term this close to the hinge are resampled.
const HINGE_EXCLUSION: f64 = 1e-4;

#[derive(Clone, Copy, Debug)]
pub struct GradTolerance {
    pub step: f64,
    pub rel_tol: f64,
}

impl Default for GradTolerance {
    fn default() -> Self {
        GradTolerance {
            step: 1e-6,
            rel_tol: 1e-5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamGroup {
    Features,
    Weights,
    Biases,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<(ParamGroup, usize)>,
    pub rel_tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.rel_tol
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Compare every analytic gradient entry of `spec`'s loss against a central
/// difference.
pub fn check_loss_gradients(
    spec: &LossSpec,
    batch: &FeatureBatch,
    params: &ClassifierParams,
    tol: GradTolerance,
) -> Result<GradCheckReport> {
    let analytic = evaluate_loss(spec, batch, params)?;
    let h = tol.step;
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
        rel_tol: tol.rel_tol,
    };
    let mut record = |group, idx, a: f64, num: f64| {
        let e = rel_error(a, num);
        report.checked += 1;
        if e > report.max_rel_error || e.is_nan() {
            report.max_rel_error = if e.is_nan() { f64::INFINITY } else { e };
            report.worst = Some((group, idx));
        }
    };

    let mut b = batch.clone();
    for idx in 0..b.features.as_slice().len() {
        let orig = b.features.as_slice()[idx];
        b.features.as_mut_slice()[idx] = orig + h;
        let plus = evaluate_loss(spec, &b, params)?.loss;
        b.features.as_mut_slice()[idx] = orig - h;
        let minus = evaluate_loss(spec, &b, params)?.loss;
        b.features.as_mut_slice()[idx] = orig;
        record(
            ParamGroup::Features,
            idx,
            analytic.grad_features.as_slice()[idx],
            (plus - minus) / (2.0 * h),
        );
    }

    let mut p = params.clone();
    for idx in 0..p.weights.as_slice().len() {
        let orig = p.weights.as_slice()[idx];
        p.weights.as_mut_slice()[idx] = orig + h;
        let plus = evaluate_loss(spec, batch, &p)?.loss;
        p.weights.as_mut_slice()[idx] = orig - h;
        let minus = evaluate_loss(spec, batch, &p)?.loss;
        p.weights.as_mut_slice()[idx] = orig;
        record(
            ParamGroup::Weights,
            idx,
            analytic.grad_weights.as_slice()[idx],
            (plus - minus) / (2.0 * h),
        );
    }
    for idx in 0..p.biases.len() {
        let orig = p.biases[idx];
        p.biases[idx] = orig + h;
        let plus = evaluate_loss(spec, batch, &p)?.loss;
        p.biases[idx] = orig - h;
        let minus = evaluate_loss(spec, batch, &p)?.loss;
        p.biases[idx] = orig;
        record(
            ParamGroup::Biases,
            idx,
            analytic.grad_biases[idx],
            (plus - minus) / (2.0 * h),
        );
    }
    Ok(report)
}

fn near_arccos_endpoint(batch: &FeatureBatch, params: &ClassifierParams) -> bool {
    let Ok(cos) = crate::loss::cosine_logits(batch, params, true) else {
        return true;
    };
    batch.labels.iter().enumerate().any(|(i, &y)| {
        let theta = cos.get(i, y).acos();
        !(ARCCOS_EXCLUSION..=std::f64::consts::PI - ARCCOS_EXCLUSION).contains(&theta)
    })
}

fn near_hinge(batch: &FeatureBatch, spec: &LossSpec) -> bool {
    let n = batch.len();
    let unit: Vec<Vec<f64>> = (0..n)
        .map(|i| crate::tensor::l2_normalize(batch.features.row(i)).unwrap_or_default())
        .collect();
    for i in 0..n {
        for j in (i + 1)..n {
            let dist: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| (a - b).powi(2)).sum();
            let y = if batch.labels[i] == batch.labels[j] { 1.0 } else { -1.0 };
            let term = spec.error_margin - y * (spec.dist_threshold - dist);
            if term.abs() < HINGE_EXCLUSION {
                return true;
            }
        }
    }
    false
}

/// A small random `(batch, params)` instance suitable for checking `spec`.
///
/// Instances whose target angle lies within [`ARCCOS_EXCLUSION`] of 0 or π
/// (A-Softmax, ArcFace) or whose marginal pair terms sit on the hinge are
/// resampled, since the loss is not differentiable there.
pub fn random_instance(spec: &LossSpec, rng: &mut ChaCha8Rng) -> (FeatureBatch, ClassifierParams) {
    loop {
        let n = rng.random_range(2..=6);
        let d = rng.random_range(2..=5);
        let c = rng.random_range(2..=5);
        let feat_scale = rng.random_range(0.5..3.0);
        let x = Mat::from_fn(n, d, |_, _| feat_scale * rng.random_range(-1.0..1.0));
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
        let w = Mat::from_fn(d, c, |_, _| rng.random_range(-1.0..1.0));
        let b: Vec<f64> = (0..c).map(|_| rng.random_range(-0.5..0.5)).collect();
        let batch = FeatureBatch::new(x, labels, c).expect("valid random batch");
        let params = ClassifierParams::new(w, b).expect("valid random params");
        if crate::loss::cosine_logits(&batch, &params, true).is_err() {
            continue;
        }
        let excluded = match spec.kind {
            LossKind::AngularSoftmax | LossKind::ArcFace => near_arccos_endpoint(&batch, &params),
            LossKind::MarginalJoint => near_hinge(&batch, spec),
            _ => false,
        };
        if !excluded {
            return (batch, params);
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradcheckSummary {
    pub kind: LossKind,
    pub trials: usize,
    pub failures: usize,
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub rel_tol: f64,
}

impl GradcheckSummary {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Spec used for randomized checks of `kind`: library defaults, except that
/// the joint marginal loss uses `balance = 1` so the pairwise term is not
/// swamped by the cross-entropy part.
pub fn gradcheck_spec(kind: LossKind) -> LossSpec {
    let mut spec = LossSpec::new(kind);
    if kind == LossKind::MarginalJoint {
        spec.balance = 1.0;
    }
    spec
}

/// Run `trials` randomized finite-difference checks for `kind`.
pub fn run_gradcheck(kind: LossKind, trials: usize, seed: u64) -> Result<GradcheckSummary> {
    if trials == 0 {
        return Err(Error::config("gradcheck.trials", "must be at least 1"));
    }
    let spec = gradcheck_spec(kind);
    let tol = GradTolerance::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut summary = GradcheckSummary {
        kind,
        trials,
        failures: 0,
        coordinates: 0,
        max_rel_error: 0.0,
        rel_tol: tol.rel_tol,
    };
    for _ in 0..trials {
        let (batch, params) = random_instance(&spec, &mut rng);
        let report = check_loss_gradients(&spec, &batch, &params, tol)?;
        summary.coordinates += report.checked;
        summary.max_rel_error = summary.max_rel_error.max(report.max_rel_error);
        if !report.passed() {
            summary.failures += 1;
        }
    }
    Ok(summary)
}
