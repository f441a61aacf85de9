//! Forward and analytic backward passes for the five face-recognition losses.
//!
//! Every loss consumes a [`FeatureBatch`] and (except the pure pairwise
//! marginal term) a [`ClassifierParams`] and returns a [`LossOutput`] holding
//! the batch-mean loss together with gradients for features, class weights and
//! biases. [`evaluate_loss`] dispatches on a [`LossSpec`].
//!
//! The margin losses (A-Softmax, AM-Softmax, ArcFace) read the class weight
//! columns in unit-normalised form and ignore the biases; their bias gradient
//! is identically zero.

mod additive;
mod angular;
mod cross_entropy;
mod geometry;
mod marginal;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{log_sum_exp, FeatureBatch, Mat};

pub use additive::{amsoftmax_loss, arcface_loss};
pub use angular::{asoftmax_loss, asoftmax_loss_annealed, asoftmax_psi};
pub use cross_entropy::{cross_entropy_loss, cross_entropy_on_logits};
pub use geometry::cosine_logits;
pub use marginal::{marginal_joint_loss, marginal_loss, marginal_loss_with};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LossKind {
    CrossEntropy,
    AngularSoftmax,
    AMSoftmax,
    ArcFace,
    MarginalJoint,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::CrossEntropy,
        LossKind::AngularSoftmax,
        LossKind::AMSoftmax,
        LossKind::ArcFace,
        LossKind::MarginalJoint,
    ];

    /// Short display token used in run labels, e.g. `ArcFace`.
    pub fn label(self) -> &'static str {
        match self {
            LossKind::CrossEntropy => "CE",
            LossKind::AngularSoftmax => "ASoftmax",
            LossKind::AMSoftmax => "AMSoftmax",
            LossKind::ArcFace => "ArcFace",
            LossKind::MarginalJoint => "Marginal",
        }
    }

    pub fn is_margin(self) -> bool {
        matches!(
            self,
            LossKind::AngularSoftmax | LossKind::AMSoftmax | LossKind::ArcFace
        )
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .trim()
            .chars()
            .filter(|c| !matches!(c, '-' | '_' | ' '))
            .flat_map(char::to_lowercase)
            .collect();
        Ok(match key.as_str() {
            "ce" | "crossentropy" | "softmax" => LossKind::CrossEntropy,
            "asoftmax" | "angularsoftmax" | "sphereface" => LossKind::AngularSoftmax,
            "amsoftmax" | "am" | "additivemarginsoftmax" | "cosface" => LossKind::AMSoftmax,
            "arcface" | "arc" => LossKind::ArcFace,
            "marginal" | "marginaljoint" | "marginalloss" => LossKind::MarginalJoint,
            _ => return Err(Error::UnknownLossKind(s.trim().to_string())),
        })
    }
}

/// Loss selection plus every hyperparameter any kind may read.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Integer angular margin of A-Softmax.
    pub m_int: u32,
    /// Additive margin: cosine units for AM-Softmax, radians for ArcFace.
    pub m_add: f64,
    /// Logit scale for AM-Softmax and ArcFace.
    pub s: f64,
    /// Squared-distance threshold of the marginal term.
    pub dist_threshold: f64,
    /// Slack of the marginal term.
    pub error_margin: f64,
    /// Weight of the marginal term in the joint loss.
    pub balance: f64,
    /// A-Softmax only: use unit features instead of `‖x‖`-scaled cosines.
    pub normalize_features: bool,
    /// A-Softmax only: annealing weight mixing `cos θ` into the target logit.
    /// Zero gives the pure form.
    pub asoftmax_lambda: f64,
    /// Clamp each marginal pair term at zero. `false` gives the literal
    /// un-hinged pairwise sum, which can go negative.
    pub marginal_hinge: bool,
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        let (m_add, s) = match kind {
            LossKind::ArcFace => (0.5, 64.0),
            _ => (0.35, 30.0),
        };
        LossSpec {
            kind,
            m_int: 4,
            m_add,
            s,
            dist_threshold: 1.0,
            error_margin: 0.5,
            balance: 0.01,
            normalize_features: false,
            asoftmax_lambda: 0.0,
            marginal_hinge: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        match self.kind {
            LossKind::AngularSoftmax => {
                if self.m_int < 1 {
                    return bad("m_int must be >= 1".into());
                }
                if !(self.asoftmax_lambda >= 0.0 && self.asoftmax_lambda.is_finite()) {
                    return bad(format!("asoftmax_lambda {} must be >= 0", self.asoftmax_lambda));
                }
            }
            LossKind::AMSoftmax | LossKind::ArcFace => {
                if !(self.m_add >= 0.0 && self.m_add.is_finite()) {
                    return bad(format!("m_add {} must be >= 0", self.m_add));
                }
                if !(self.s > 0.0 && self.s.is_finite()) {
                    return bad(format!("scale s {} must be > 0", self.s));
                }
                if self.kind == LossKind::ArcFace && self.m_add >= std::f64::consts::PI {
                    return Err(Error::Domain(format!(
                        "ArcFace margin {} outside [0, pi)",
                        self.m_add
                    )));
                }
            }
            LossKind::MarginalJoint => {
                if !(self.dist_threshold > 0.0 && self.dist_threshold.is_finite()) {
                    return bad(format!("dist_threshold {} must be > 0", self.dist_threshold));
                }
                if !(self.error_margin > 0.0 && self.error_margin.is_finite()) {
                    return bad(format!("error_margin {} must be > 0", self.error_margin));
                }
                if !(self.balance >= 0.0 && self.balance.is_finite()) {
                    return bad(format!("balance {} must be >= 0", self.balance));
                }
            }
            LossKind::CrossEntropy => {}
        }
        Ok(())
    }
}

/// Linear classifier on top of the embedding: `weights` is `d × C`, column
/// `j` being the class weight `W_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams {
    pub weights: Mat,
    pub biases: Vec<f64>,
}

impl ClassifierParams {
    pub fn new(weights: Mat, biases: Vec<f64>) -> Result<Self> {
        if biases.len() != weights.cols() {
            return Err(Error::mismatch("classifier biases", weights.cols(), biases.len()));
        }
        Ok(ClassifierParams { weights, biases })
    }

    pub fn dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn classes(&self) -> usize {
        self.weights.cols()
    }

    pub fn num_params(&self) -> usize {
        self.weights.rows() * self.weights.cols() + self.biases.len()
    }

    /// Weights (row-major) followed by biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.weights.as_slice().to_vec();
        out.extend_from_slice(&self.biases);
        out
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::mismatch("classifier parameters", self.num_params(), flat.len()));
        }
        let nw = self.weights.rows() * self.weights.cols();
        self.weights.as_mut_slice().copy_from_slice(&flat[..nw]);
        self.biases.copy_from_slice(&flat[nw..]);
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    /// `N × d`.
    pub grad_features: Mat,
    /// `d × C`.
    pub grad_weights: Mat,
    pub grad_biases: Vec<f64>,
}

impl LossOutput {
    /// Weight and bias gradients flattened in [`ClassifierParams::flatten`] order.
    pub fn flat_classifier_grad(&self) -> Vec<f64> {
        let mut out = self.grad_weights.as_slice().to_vec();
        out.extend_from_slice(&self.grad_biases);
        out
    }
}

pub(crate) fn check_shapes(batch: &FeatureBatch, params: &ClassifierParams) -> Result<()> {
    if batch.dim() != params.dim() {
        return Err(Error::mismatch("feature dim vs weight rows", params.dim(), batch.dim()));
    }
    if batch.classes > params.classes() {
        return Err(Error::mismatch(
            "batch classes vs weight columns",
            params.classes(),
            batch.classes,
        ));
    }
    if params.biases.len() != params.classes() {
        return Err(Error::mismatch("classifier biases", params.classes(), params.biases.len()));
    }
    Ok(())
}

/// Mean softmax cross-entropy over rows of `logits` and its gradient with
/// respect to the logits, `(softmax − one_hot) / N`.
pub(crate) fn softmax_head(logits: &Mat, labels: &[usize]) -> (f64, Mat) {
    let n = logits.rows();
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    let mut grad = Mat::zeros(n, logits.cols());
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let lse = log_sum_exp(row);
        total += lse - row[y];
        let g = grad.row_mut(i);
        for (gj, &z) in g.iter_mut().zip(row) {
            *gj = (z - lse).exp() * inv_n;
        }
        g[y] -= inv_n;
    }
    (total * inv_n, grad)
}

/// Dispatch to the loss selected by `spec.kind`.
pub fn evaluate_loss(
    spec: &LossSpec,
    batch: &FeatureBatch,
    params: &ClassifierParams,
) -> Result<LossOutput> {
    spec.validate()?;
    match spec.kind {
        LossKind::CrossEntropy => cross_entropy_loss(batch, params),
        LossKind::AngularSoftmax => asoftmax_loss_annealed(
            batch,
            params,
            spec.m_int,
            spec.asoftmax_lambda,
            spec.normalize_features,
        ),
        LossKind::AMSoftmax => amsoftmax_loss(batch, params, spec.m_add, spec.s),
        LossKind::ArcFace => arcface_loss(batch, params, spec.m_add, spec.s),
        LossKind::MarginalJoint => marginal_joint_loss(batch, params, spec),
    }
}

/// Margin-free logits used to score classification accuracy under `spec`:
/// affine logits for cross-entropy and the joint marginal loss, cosine logits
/// for the margin losses.
pub fn classification_logits(
    spec: &LossSpec,
    batch: &FeatureBatch,
    params: &ClassifierParams,
) -> Result<Mat> {
    match spec.kind {
        LossKind::CrossEntropy | LossKind::MarginalJoint => {
            check_shapes(batch, params)?;
            Ok(cross_entropy::affine_logits(&batch.features, params))
        }
        LossKind::AngularSoftmax => cosine_logits(batch, params, spec.normalize_features),
        LossKind::AMSoftmax | LossKind::ArcFace => cosine_logits(batch, params, true),
    }
}
