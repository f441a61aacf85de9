use std::f64::consts::PI;

use super::geometry::CosineGeometry;
use super::{softmax_head, ClassifierParams, LossOutput};
use crate::error::{Error, Result};
use crate::tensor::{FeatureBatch, Mat};

/// Floor for `sin θ` in the ArcFace slope `sin(θ+m)/sin θ`, which is
/// unbounded at the arccos endpoints.
const MIN_SIN: f64 = 1e-12;

fn check_scale(m_add: f64, s: f64) -> Result<()> {
    if !(m_add >= 0.0 && m_add.is_finite()) {
        return Err(Error::InvalidConfig(format!("margin {m_add} must be >= 0")));
    }
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::InvalidConfig(format!("scale {s} must be > 0")));
    }
    Ok(())
}

/// Shared body: logits `s·f(cos)` where only the target entry is transformed
/// by `target(c) -> (value, d value / d c)`.
fn scaled_cosine_loss(
    batch: &FeatureBatch,
    params: &ClassifierParams,
    s: f64,
    target: impl Fn(f64) -> (f64, f64),
) -> Result<LossOutput> {
    let geo = CosineGeometry::new(batch, params)?;
    let (n, c) = (batch.len(), params.classes());
    let mut logits = Mat::zeros(n, c);
    let mut slope = vec![0.0; n];
    for i in 0..n {
        let y = batch.labels[i];
        for j in 0..c {
            logits.set(i, j, s * geo.cos.get(i, j));
        }
        let (v, dv) = target(geo.cos.get(i, y));
        logits.set(i, y, s * v);
        slope[i] = dv;
    }
    let (loss, mut grad_cos) = softmax_head(&logits, &batch.labels);
    grad_cos.scale(s);
    for (i, &y) in batch.labels.iter().enumerate() {
        let g = grad_cos.get(i, y);
        grad_cos.set(i, y, g * slope[i]);
    }
    let (grad_features, grad_weights) = geo.backward(&grad_cos, None);
    Ok(LossOutput {
        loss,
        grad_features,
        grad_weights,
        grad_biases: vec![0.0; c],
    })
}

/// Additive cosine margin: target logit `s·(cos θ_y − m)`.
pub fn amsoftmax_loss(
    batch: &FeatureBatch,
    params: &ClassifierParams,
    m_add: f64,
    s: f64,
) -> Result<LossOutput> {
    check_scale(m_add, s)?;
    scaled_cosine_loss(batch, params, s, |c| (c - m_add, 1.0))
}

/// Additive angular margin: target logit `s·cos(θ_y + m)` with
/// `θ_y = arccos(cos θ_y)`.
pub fn arcface_loss(
    batch: &FeatureBatch,
    params: &ClassifierParams,
    m_add: f64,
    s: f64,
) -> Result<LossOutput> {
    check_scale(m_add, s)?;
    if m_add >= PI {
        return Err(Error::Domain(format!("ArcFace margin {m_add} outside [0, pi)")));
    }
    let (cos_m, sin_m) = (m_add.cos(), m_add.sin());
    scaled_cosine_loss(batch, params, s, |c| {
        let theta = c.acos();
        let value = (theta + m_add).cos();
        // d cos(θ+m)/d cos θ = sin(θ+m)/sin θ = cos m + cos θ · sin m / sin θ
        let sin_t = theta.sin().max(MIN_SIN);
        (value, cos_m + c * sin_m / sin_t)
    })
}
