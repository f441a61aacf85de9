use super::{cross_entropy_loss, ClassifierParams, LossOutput, LossSpec};
use crate::error::{Error, Result};
use crate::tensor::{dot, norm, FeatureBatch, Mat, EPS_NORM};

/// Pairwise marginal loss with the per-pair hinge.
pub fn marginal_loss(batch: &FeatureBatch, dist_threshold: f64, error_margin: f64) -> Result<LossOutput> {
    marginal_loss_with(batch, dist_threshold, error_margin, true)
}

/// Mean over the `N² − N` ordered pairs of
/// `ξ − y_ij (θ − ‖x̂_i − x̂_j‖²)`, where `y_ij = ±1` marks same/different
/// identity. With `hinge` each term is clamped at zero.
///
/// The returned weight gradient is an all-zero `d × C` matrix: this term has
/// no classifier parameters.
pub fn marginal_loss_with(
    batch: &FeatureBatch,
    dist_threshold: f64,
    error_margin: f64,
    hinge: bool,
) -> Result<LossOutput> {
    let (n, d) = (batch.len(), batch.dim());
    if n < 2 {
        return Err(Error::BatchTooSmall(n));
    }
    let mut unit = Mat::zeros(n, d);
    let mut norms = Vec::with_capacity(n);
    for i in 0..n {
        let row = batch.features.row(i);
        let r = norm(row);
        if !(r >= EPS_NORM) {
            return Err(Error::ZeroVector { eps: EPS_NORM });
        }
        for (u, x) in unit.row_mut(i).iter_mut().zip(row) {
            *u = x / r;
        }
        norms.push(r);
    }

    let pairs = (n * n - n) as f64;
    let mut total = 0.0;
    let mut grad_unit = Mat::zeros(n, d);
    // Unordered traversal: (i, j) and (j, i) contribute identical terms.
    for i in 0..n {
        for j in (i + 1)..n {
            let (ui, uj) = (unit.row(i), unit.row(j));
            let dist: f64 = ui.iter().zip(uj).map(|(a, b)| (a - b) * (a - b)).sum();
            let y = if batch.labels[i] == batch.labels[j] { 1.0 } else { -1.0 };
            let term = error_margin - y * (dist_threshold - dist);
            if hinge && term <= 0.0 {
                continue;
            }
            total += 2.0 * term;
            // d term / d dist = y; d dist / d u_i = 2 (u_i - u_j); both orders counted
            let k = 2.0 * y * 2.0 / pairs;
            for t in 0..d {
                let diff = unit.get(i, t) - unit.get(j, t);
                grad_unit.add_at(i, t, k * diff);
                grad_unit.add_at(j, t, -k * diff);
            }
        }
    }

    let mut grad_features = Mat::zeros(n, d);
    for i in 0..n {
        let u = unit.row(i);
        let g = grad_unit.row(i);
        let proj = dot(g, u);
        let inv = 1.0 / norms[i];
        for (out, (gk, uk)) in grad_features.row_mut(i).iter_mut().zip(g.iter().zip(u)) {
            *out = (gk - proj * uk) * inv;
        }
    }
    Ok(LossOutput {
        loss: total / pairs,
        grad_features,
        grad_weights: Mat::zeros(d, batch.classes),
        grad_biases: vec![0.0; batch.classes],
    })
}

/// Cross-entropy plus `balance` times the marginal term. The classifier is
/// updated by the cross-entropy part only.
pub fn marginal_joint_loss(
    batch: &FeatureBatch,
    params: &ClassifierParams,
    spec: &LossSpec,
) -> Result<LossOutput> {
    let mut out = cross_entropy_loss(batch, params)?;
    if spec.balance == 0.0 {
        return Ok(out);
    }
    let marginal = marginal_loss_with(
        batch,
        spec.dist_threshold,
        spec.error_margin,
        spec.marginal_hinge,
    )?;
    out.loss += spec.balance * marginal.loss;
    out.grad_features.axpy(spec.balance, &marginal.grad_features)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_loss_gradients, random_instance, GradTolerance};
    use crate::loss::LossKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Literal ordered double loop over all i ≠ j.
    fn brute_force(batch: &FeatureBatch, theta: f64, xi: f64, hinge: bool) -> f64 {
        let n = batch.len();
        let unit: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let r = batch.features.row(i);
                let nr = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                r.iter().map(|v| v / nr).collect()
            })
            .collect();
        let mut sum = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let dist: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| (a - b).powi(2)).sum();
                let y = if batch.labels[i] == batch.labels[j] { 1.0 } else { -1.0 };
                let term = xi - y * (theta - dist);
                sum += if hinge { term.max(0.0) } else { term };
            }
        }
        sum / (n * n - n) as f64
    }

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize, classes: usize) -> FeatureBatch {
        let x = Mat::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0));
        let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
        FeatureBatch::new(x, labels, classes).unwrap()
    }

    #[test]
    fn satisfied_same_class_pair_is_zero() {
        let x = Mat::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        let batch = FeatureBatch::new(x, vec![0, 0], 1).unwrap();
        let out = marginal_loss(&batch, 1.0, 0.5).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grad_features.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn distances_at_threshold_give_error_margin() {
        // orthogonal unit vectors sit at squared distance 2
        let x = Mat::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 3.0]]).unwrap();
        let batch = FeatureBatch::new(x, vec![0, 1, 1], 2).unwrap();
        let out = marginal_loss(&batch, 2.0, 0.5).unwrap();
        assert!((out.loss - 0.5).abs() < 1e-15);
    }

    #[test]
    fn matches_double_loop_and_gradcheck() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let spec = LossSpec::new(LossKind::MarginalJoint);
        for _ in 0..20 {
            let batch = random_batch(&mut rng, 6, 4, 3);
            for hinge in [true, false] {
                let out = marginal_loss_with(&batch, 1.0, 0.5, hinge).unwrap();
                assert!((out.loss - brute_force(&batch, 1.0, 0.5, hinge)).abs() < 1e-12);
            }
        }
        let mut joint = spec.clone();
        joint.balance = 1.0;
        for _ in 0..10 {
            let (batch, params) = random_instance(&joint, &mut rng);
            let report = check_loss_gradients(&joint, &batch, &params, GradTolerance::default()).unwrap();
            assert!(report.passed(), "{report:?}");
        }
    }

    #[test]
    fn unhinged_form_can_go_negative() {
        let x = Mat::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let batch = FeatureBatch::new(x, vec![0, 0], 1).unwrap();
        let out = marginal_loss_with(&batch, 1.0, 0.5, false).unwrap();
        assert!((out.loss + 0.5).abs() < 1e-15);
    }

    #[test]
    fn permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch = random_batch(&mut rng, 8, 3, 3);
        let base = marginal_loss(&batch, 1.0, 0.5).unwrap().loss;
        let perm: Vec<usize> = vec![3, 0, 7, 1, 6, 2, 5, 4];
        let rows: Vec<Vec<f64>> = perm.iter().map(|&i| batch.features.row(i).to_vec()).collect();
        let labels = perm.iter().map(|&i| batch.labels[i]).collect();
        let shuffled = FeatureBatch::new(Mat::from_rows(&rows).unwrap(), labels, 3).unwrap();
        assert!((marginal_loss(&shuffled, 1.0, 0.5).unwrap().loss - base).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let batch = FeatureBatch::new(Mat::from_rows(&[vec![1.0]]).unwrap(), vec![0], 1).unwrap();
        assert!(matches!(marginal_loss(&batch, 1.0, 0.5), Err(Error::BatchTooSmall(1))));
        let batch = FeatureBatch::new(Mat::from_rows(&[vec![1.0], vec![0.0]]).unwrap(), vec![0, 0], 1).unwrap();
        assert!(matches!(marginal_loss(&batch, 1.0, 0.5), Err(Error::ZeroVector { .. })));
    }

    #[test]
    fn joint_balance_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut spec = LossSpec::new(LossKind::MarginalJoint);
        let (batch, params) = random_instance(&spec, &mut rng);
        let ce = cross_entropy_loss(&batch, &params).unwrap();
        spec.balance = 0.0;
        assert_eq!(marginal_joint_loss(&batch, &params, &spec).unwrap(), ce);

        spec.balance = 0.5;
        let m = marginal_loss(&batch, spec.dist_threshold, spec.error_margin).unwrap();
        let joint = marginal_joint_loss(&batch, &params, &spec).unwrap();
        assert!((joint.loss - (ce.loss + 0.5 * m.loss)).abs() < 1e-12);
        assert_eq!(joint.grad_weights, ce.grad_weights);
    }

    #[test]
    fn joint_with_satisfied_marginal_equals_ce() {
        let x = Mat::from_rows(&[vec![1.0, 0.2], vec![2.0, 0.4]]).unwrap();
        let batch = FeatureBatch::new(x, vec![1, 1], 2).unwrap();
        let params = ClassifierParams::new(
            Mat::from_rows(&[vec![0.3, -0.2], vec![0.1, 0.4]]).unwrap(),
            vec![0.05, -0.05],
        )
        .unwrap();
        let mut spec = LossSpec::new(LossKind::MarginalJoint);
        spec.balance = 1.0;
        let ce = cross_entropy_loss(&batch, &params).unwrap();
        let joint = marginal_joint_loss(&batch, &params, &spec).unwrap();
        assert_eq!(joint.loss, ce.loss);
    }
}
