use std::f64::consts::PI;

use super::geometry::CosineGeometry;
use super::{softmax_head, ClassifierParams, LossOutput};
use crate::error::{Error, Result};
use crate::tensor::{FeatureBatch, Mat};

/// Interval index `k` with `theta ∈ [kπ/m, (k+1)π/m]`, clamped to `[0, m-1]`.
fn interval(theta: f64, m: u32) -> u32 {
    let k = (theta * m as f64 / PI).floor();
    (k.max(0.0) as u32).min(m - 1)
}

/// Piecewise monotone surrogate for `cos(mθ)`:
/// `ψ(θ) = (-1)^k cos(mθ) - 2k` on `[kπ/m, (k+1)π/m]`.
pub fn asoftmax_psi(theta: f64, m_int: u32) -> Result<f64> {
    if m_int < 1 {
        return Err(Error::InvalidConfig("m_int must be >= 1".into()));
    }
    if !(0.0..=PI).contains(&theta) {
        return Err(Error::Domain(format!("theta {theta} outside [0, pi]")));
    }
    Ok(psi_unchecked(theta, m_int))
}

fn psi_unchecked(theta: f64, m: u32) -> f64 {
    let k = interval(theta, m);
    let sign = if k.is_multiple_of(2) { 1.0 } else { -1.0 };
    sign * (m as f64 * theta).cos() - 2.0 * k as f64
}

/// Chebyshev polynomial of the second kind, `U_n(c) = sin((n+1)θ)/sin θ` for
/// `c = cos θ`. Gives `d cos(mθ)/d cos θ = m·U_{m-1}` without dividing by
/// `sin θ`.
fn chebyshev_u(n: u32, c: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, 2.0 * c);
    if n == 0 {
        return prev;
    }
    for _ in 1..n {
        let next = 2.0 * c * cur - prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// `ψ` as a function of the cosine, together with `dψ/dcos θ`.
fn psi_of_cos(c: f64, m: u32) -> (f64, f64) {
    let theta = c.acos();
    let k = interval(theta, m);
    let sign = if k.is_multiple_of(2) { 1.0 } else { -1.0 };
    let value = psi_unchecked(theta, m);
    let slope = sign * m as f64 * chebyshev_u(m - 1, c);
    (value, slope)
}

/// A-Softmax in its pure form: the target logit is `‖x_i‖·ψ(θ_{y_i,i})`,
/// the others `‖x_i‖·cos θ_{j,i}`, with unit class weights and no bias.
pub fn asoftmax_loss(batch: &FeatureBatch, params: &ClassifierParams, m_int: u32) -> Result<LossOutput> {
    asoftmax_loss_annealed(batch, params, m_int, 0.0, false)
}

/// A-Softmax with the optional annealing mixture: the target logit becomes
/// `‖x_i‖·(λ cos θ + ψ(θ)) / (1 + λ)`. With `normalize_features` the feature
/// norm is replaced by one.
pub fn asoftmax_loss_annealed(
    batch: &FeatureBatch,
    params: &ClassifierParams,
    m_int: u32,
    lambda: f64,
    normalize_features: bool,
) -> Result<LossOutput> {
    if m_int < 1 {
        return Err(Error::InvalidConfig("m_int must be >= 1".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!("annealing weight {lambda} must be >= 0")));
    }
    let geo = CosineGeometry::new(batch, params)?;
    let (n, c) = (batch.len(), params.classes());
    let mix = 1.0 / (1.0 + lambda);

    // f: logit before the radial factor; df: its derivative in cos θ.
    let mut f = geo.cos.clone();
    let mut df = Mat::from_fn(n, c, |_, _| 1.0);
    for (i, &y) in batch.labels.iter().enumerate() {
        let cy = geo.cos.get(i, y);
        let (psi, slope) = psi_of_cos(cy, m_int);
        f.set(i, y, (lambda * cy + psi) * mix);
        df.set(i, y, (lambda + slope) * mix);
    }

    let radius: Vec<f64> = if normalize_features {
        vec![1.0; n]
    } else {
        geo.x_norm.clone()
    };
    let mut logits = f.clone();
    for (i, r) in radius.iter().enumerate() {
        logits.row_mut(i).iter_mut().for_each(|z| *z *= r);
    }
    let (loss, grad_logits) = softmax_head(&logits, &batch.labels);

    let mut grad_cos = Mat::zeros(n, c);
    let mut radial = vec![0.0; n];
    for i in 0..n {
        for j in 0..c {
            let g = grad_logits.get(i, j);
            grad_cos.set(i, j, g * radius[i] * df.get(i, j));
            radial[i] += g * f.get(i, j);
        }
    }
    let (grad_features, grad_weights) =
        geo.backward(&grad_cos, (!normalize_features).then_some(radial.as_slice()));
    Ok(LossOutput {
        loss,
        grad_features,
        grad_weights,
        grad_biases: vec![0.0; c],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_loss_gradients, random_instance, GradTolerance};
    use crate::loss::{cosine_logits, cross_entropy_on_logits, LossKind, LossSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn psi_examples() {
        assert!(asoftmax_psi(0.25 * PI, 2).unwrap().abs() < 1e-15);
        for &t in &[0.0, 0.3, 1.7, PI] {
            assert!((asoftmax_psi(t, 1).unwrap() - t.cos()).abs() < 1e-15);
        }
        // k = 1: -cos(1.2π) - 2
        let v = asoftmax_psi(0.6 * PI, 2).unwrap();
        let direct = -(1.2 * PI).cos() - 2.0;
        assert!((v - direct).abs() < 1e-15);
        assert!((v - (-1.190983)).abs() < 1e-6);
        assert!(matches!(asoftmax_psi(-0.1, 2), Err(Error::Domain(_))));
        assert!(matches!(asoftmax_psi(PI + 1e-9, 2), Err(Error::Domain(_))));
    }

    #[test]
    fn psi_endpoint_value() {
        // ψ(π) = (-1)^(m-1) cos(mπ) - 2(m-1) = -1 - 2(m-1) = 1 - 2m
        for m in 1..=5 {
            assert!((asoftmax_psi(PI, m).unwrap() - (1.0 - 2.0 * m as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn chebyshev_matches_sine_ratio() {
        for n in 0..6u32 {
            for &t in &[0.2, 1.0, 2.5] {
                let expect = ((n + 1) as f64 * t).sin() / t.sin();
                assert!((chebyshev_u(n, t.cos()) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn on_weight_sample_hand_value() {
        let w = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let params = ClassifierParams::new(w, vec![0.0, 0.0]).unwrap();
        let batch = FeatureBatch::new(Mat::from_rows(&[vec![1.0, 0.0]]).unwrap(), vec![0], 2).unwrap();
        let out = asoftmax_loss(&batch, &params, 2).unwrap();
        let expect = (1.0 + (-1f64).exp()).ln();
        assert!((out.loss - expect).abs() < 1e-12);
        assert!((out.loss - 0.313262).abs() < 1e-6);
    }

    #[test]
    fn m1_is_norm_scaled_cosine_cross_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = LossSpec::new(LossKind::AngularSoftmax);
        for _ in 0..10 {
            let (batch, params) = random_instance(&spec, &mut rng);
            let out = asoftmax_loss(&batch, &params, 1).unwrap();
            let logits = cosine_logits(&batch, &params, false).unwrap();
            let reference = cross_entropy_on_logits(&logits, &batch.labels);
            assert!((out.loss - reference).abs() < 1e-12);
        }
    }

    #[test]
    fn finite_difference_agreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for m in 2..=4 {
            let mut spec = LossSpec::new(LossKind::AngularSoftmax);
            spec.m_int = m;
            for _ in 0..10 {
                let (batch, params) = random_instance(&spec, &mut rng);
                let report =
                    check_loss_gradients(&spec, &batch, &params, GradTolerance::default()).unwrap();
                assert!(report.passed(), "m={m}: {report:?}");
            }
        }
    }

    #[test]
    fn annealed_and_normalized_variants_pass_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut spec = LossSpec::new(LossKind::AngularSoftmax);
        spec.asoftmax_lambda = 5.0;
        spec.normalize_features = true;
        for _ in 0..10 {
            let (batch, params) = random_instance(&spec, &mut rng);
            let report = check_loss_gradients(&spec, &batch, &params, GradTolerance::default()).unwrap();
            assert!(report.passed(), "{report:?}");
        }
    }
}
