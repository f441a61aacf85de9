use super::{check_shapes, ClassifierParams};
use crate::error::{Error, Result};
use crate::tensor::{dot, norm, FeatureBatch, Mat, EPS_NORM};

/// Unit features, unit class weights and their cosine table for one batch,
/// kept around so the backward pass can chain through both normalisations.
pub(crate) struct CosineGeometry {
    /// `N × d` unit feature rows.
    pub unit_x: Mat,
    pub x_norm: Vec<f64>,
    /// `C × d`: row `j` is the unit class weight `W_j / ‖W_j‖`.
    pub unit_w: Mat,
    pub w_norm: Vec<f64>,
    /// `N × C` cosines, clamped into `[-1, 1]`.
    pub cos: Mat,
}

impl CosineGeometry {
    pub fn new(batch: &FeatureBatch, params: &ClassifierParams) -> Result<Self> {
        check_shapes(batch, params)?;
        let (n, d, c) = (batch.len(), batch.dim(), params.classes());

        let mut unit_x = Mat::zeros(n, d);
        let mut x_norm = Vec::with_capacity(n);
        for i in 0..n {
            let row = batch.features.row(i);
            let r = norm(row);
            if !(r >= EPS_NORM) {
                return Err(Error::ZeroVector { eps: EPS_NORM });
            }
            for (u, x) in unit_x.row_mut(i).iter_mut().zip(row) {
                *u = x / r;
            }
            x_norm.push(r);
        }

        let wt = params.weights.transpose();
        let mut unit_w = Mat::zeros(c, d);
        let mut w_norm = Vec::with_capacity(c);
        for j in 0..c {
            let col = wt.row(j);
            let r = norm(col);
            if !(r >= EPS_NORM) {
                return Err(Error::ZeroVector { eps: EPS_NORM });
            }
            for (u, w) in unit_w.row_mut(j).iter_mut().zip(col) {
                *u = w / r;
            }
            w_norm.push(r);
        }

        let mut cos = Mat::zeros(n, c);
        for i in 0..n {
            for j in 0..c {
                cos.set(i, j, dot(unit_x.row(i), unit_w.row(j)).clamp(-1.0, 1.0));
            }
        }
        Ok(CosineGeometry {
            unit_x,
            x_norm,
            unit_w,
            w_norm,
            cos,
        })
    }

    /// Chain `dL/dcos` (`N × C`) back to raw features and raw weights.
    ///
    /// `radial` optionally carries `dL/d‖x_i‖` per sample for losses whose
    /// logits are scaled by the feature norm.
    pub fn backward(&self, grad_cos: &Mat, radial: Option<&[f64]>) -> (Mat, Mat) {
        let (n, d) = (self.unit_x.rows(), self.unit_x.cols());
        let c = self.unit_w.rows();

        let mut grad_x = Mat::zeros(n, d);
        let mut grad_unit_w = Mat::zeros(c, d);
        let mut g_u = vec![0.0; d];
        for i in 0..n {
            g_u.iter_mut().for_each(|v| *v = 0.0);
            let u = self.unit_x.row(i);
            for j in 0..c {
                let g = grad_cos.get(i, j);
                if g == 0.0 {
                    continue;
                }
                for (acc, w) in g_u.iter_mut().zip(self.unit_w.row(j)) {
                    *acc += g * w;
                }
                for (acc, x) in grad_unit_w.row_mut(j).iter_mut().zip(u) {
                    *acc += g * x;
                }
            }
            let proj = dot(&g_u, u);
            let inv = 1.0 / self.x_norm[i];
            let radial_i = radial.map_or(0.0, |r| r[i]);
            for ((out, g), ui) in grad_x.row_mut(i).iter_mut().zip(&g_u).zip(u) {
                *out = (g - proj * ui) * inv + radial_i * ui;
            }
        }

        let mut grad_w = Mat::zeros(d, c);
        for j in 0..c {
            let w = self.unit_w.row(j);
            let g = grad_unit_w.row(j);
            let proj = dot(g, w);
            let inv = 1.0 / self.w_norm[j];
            for k in 0..d {
                grad_w.set(k, j, (g[k] - proj * w[k]) * inv);
            }
        }
        (grad_x, grad_w)
    }
}

/// `N × C` table of cosines between each feature and each class weight, or of
/// `‖x_i‖·cos θ_{j,i}` when `normalize_features` is false.
pub fn cosine_logits(
    batch: &FeatureBatch,
    params: &ClassifierParams,
    normalize_features: bool,
) -> Result<Mat> {
    let geo = CosineGeometry::new(batch, params)?;
    let mut out = geo.cos;
    if !normalize_features {
        for (i, r) in geo.x_norm.iter().enumerate() {
            out.row_mut(i).iter_mut().for_each(|v| *v *= r);
        }
    }
    Ok(out)
}
