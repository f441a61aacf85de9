use super::{check_shapes, softmax_head, ClassifierParams, LossOutput};
use crate::error::Result;
use crate::tensor::{FeatureBatch, Mat};

pub(crate) fn affine_logits(features: &Mat, params: &ClassifierParams) -> Mat {
    let (n, d, c) = (features.rows(), features.cols(), params.classes());
    let mut out = Mat::zeros(n, c);
    for i in 0..n {
        let x = features.row(i);
        let z = out.row_mut(i);
        z.copy_from_slice(&params.biases);
        for (k, &xk) in x.iter().enumerate().take(d) {
            if xk == 0.0 {
                continue;
            }
            for (zj, w) in z.iter_mut().zip(params.weights.row(k)) {
                *zj += xk * w;
            }
        }
    }
    out
}

/// Softmax loss on affine logits `W^T x_i + b`.
pub fn cross_entropy_loss(batch: &FeatureBatch, params: &ClassifierParams) -> Result<LossOutput> {
    check_shapes(batch, params)?;
    let logits = affine_logits(&batch.features, params);
    let (loss, grad_logits) = softmax_head(&logits, &batch.labels);

    let (n, d, c) = (batch.len(), batch.dim(), params.classes());
    let mut grad_features = Mat::zeros(n, d);
    let mut grad_weights = Mat::zeros(d, c);
    let mut grad_biases = vec![0.0; c];
    for i in 0..n {
        let g = grad_logits.row(i);
        let x = batch.features.row(i);
        for (b, gj) in grad_biases.iter_mut().zip(g) {
            *b += gj;
        }
        for k in 0..d {
            let w = params.weights.row(k);
            grad_features.set(i, k, crate::tensor::dot(w, g));
            let xk = x[k];
            for (gw, gj) in grad_weights.row_mut(k).iter_mut().zip(g) {
                *gw += xk * gj;
            }
        }
    }
    Ok(LossOutput {
        loss,
        grad_features,
        grad_weights,
        grad_biases,
    })
}

/// Mean cross-entropy of precomputed logits. Used as a reference by the
/// reduction identities between the softmax-family losses.
pub fn cross_entropy_on_logits(logits: &Mat, labels: &[usize]) -> f64 {
    softmax_head(logits, labels).0
}
