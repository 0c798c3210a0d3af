//! Training objectives: the contrastive softmax loss over in-batch score
//! matrices, plus the mean-squared-error, negative-cosine, and triplet
//! ablation losses. Every loss returns its value together with the analytic
//! gradient needed by the training loop.

use crate::error::{Error, Result};
use crate::tensor::{dot, norm, Scalar, Tensor2D};
use serde::{Deserialize, Serialize};

/// Margin used by the triplet loss.
pub const TRIPLET_MARGIN: f64 = 1.0;

/// Norm floor guarding cosine divisions near zero.
pub const COSINE_NORM_FLOOR: f64 = 1e-12;

/// Which objective the trainer optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[serde(rename = "infonce")]
    InfoNce,
    Mse,
    NegCosine,
    Triplet,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [
        LossKind::Mse,
        LossKind::NegCosine,
        LossKind::Triplet,
        LossKind::InfoNce,
    ];

    /// Contrastive losses need at least one in-batch distractor.
    pub fn needs_distractors(self) -> bool {
        matches!(self, LossKind::InfoNce | LossKind::Triplet)
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::InfoNce => "infonce",
            LossKind::Mse => "mse",
            LossKind::NegCosine => "neg_cosine",
            LossKind::Triplet => "triplet",
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "infonce" => Ok(LossKind::InfoNce),
            "mse" => Ok(LossKind::Mse),
            "neg_cosine" | "neg-cosine" => Ok(LossKind::NegCosine),
            "triplet" => Ok(LossKind::Triplet),
            other => Err(Error::Config(format!(
                "unknown loss '{other}' (expected infonce, mse, neg_cosine, or triplet)"
            ))),
        }
    }
}

/// Pairwise dot products between estimated and target vectors of one batch.
///
/// Entry `(i, j)` is `<estimate_i, target_j>`, so the diagonal holds the
/// aligned pairs and the off-diagonal entries are the in-batch distractors.
#[derive(Debug, Clone)]
pub struct ScoreMatrix<F>(Tensor2D<F>);

impl<F: Scalar> ScoreMatrix<F> {
    /// Builds the full `B x B` score matrix from aligned batches.
    pub fn from_pairs(estimates: &Tensor2D<F>, targets: &Tensor2D<F>) -> Result<Self> {
        check_same_shape("ScoreMatrix::from_pairs", estimates, targets)?;
        let b = estimates.rows();
        let mut scores = Tensor2D::zeros(b, b);
        for i in 0..b {
            let e = estimates.row(i);
            for j in 0..b {
                scores.set(i, j, dot(e, targets.row(j)));
            }
        }
        scores.ensure_finite("score matrix")?;
        Ok(ScoreMatrix(scores))
    }

    pub fn from_matrix(scores: Tensor2D<F>) -> Result<Self> {
        if scores.rows() != scores.cols() {
            return Err(Error::shape(
                "ScoreMatrix::from_matrix",
                "square matrix",
                format!("{}x{}", scores.rows(), scores.cols()),
            ));
        }
        scores.ensure_finite("score matrix")?;
        Ok(ScoreMatrix(scores))
    }

    pub fn batch_size(&self) -> usize {
        self.0.rows()
    }

    pub fn inner(&self) -> &Tensor2D<F> {
        &self.0
    }
}

/// Contrastive softmax loss over a score matrix.
///
/// The loss is the mean over rows of the negative log-softmax at the aligned
/// column; the gradient w.r.t. the scores is `(softmax(row) - one_hot) / B`.
/// Log-sum-exp subtracts the row maximum before exponentiating.
pub fn infonce<F: Scalar>(scores: &ScoreMatrix<F>) -> Result<(F, Tensor2D<F>)> {
    let b = scores.batch_size();
    if b < 2 {
        return Err(Error::Config(format!(
            "contrastive loss needs a batch of at least 2 (got {b}): no distractors"
        )));
    }
    let inv_b = F::from_f64(1.0 / b as f64);
    let mut loss = F::zero();
    let mut grad = Tensor2D::zeros(b, b);
    for i in 0..b {
        let row = scores.inner().row(i);
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let mut sum_exp = F::zero();
        for &s in row {
            sum_exp = sum_exp + (s - max).exp();
        }
        let log_sum = max + sum_exp.ln();
        loss = loss + (log_sum - row[i]);
        for j in 0..b {
            let softmax = (row[j] - max).exp() / sum_exp;
            let target = if i == j { F::one() } else { F::zero() };
            grad.set(i, j, (softmax - target) * inv_b);
        }
    }
    Ok((loss * inv_b, grad))
}

/// Mean squared error, averaged over both batch and feature dimensions.
pub fn mse<F: Scalar>(estimates: &Tensor2D<F>, targets: &Tensor2D<F>) -> Result<(F, Tensor2D<F>)> {
    check_same_shape("mse", estimates, targets)?;
    let n = F::from_f64(estimates.len() as f64);
    let mut loss = F::zero();
    let mut grad = Tensor2D::zeros(estimates.rows(), estimates.cols());
    let two = F::from_f64(2.0);
    for (k, (e, t)) in estimates
        .as_slice()
        .iter()
        .zip(targets.as_slice())
        .enumerate()
    {
        let d = *e - *t;
        loss = loss + d * d;
        grad.as_mut_slice()[k] = two * d / n;
    }
    Ok((loss / n, grad))
}

/// Mean negative cosine similarity between aligned rows.
pub fn neg_cosine<F: Scalar>(
    estimates: &Tensor2D<F>,
    targets: &Tensor2D<F>,
) -> Result<(F, Tensor2D<F>)> {
    check_same_shape("neg_cosine", estimates, targets)?;
    let b = estimates.rows();
    if b == 0 {
        return Err(Error::Config("empty batch".into()));
    }
    let inv_b = F::from_f64(1.0 / b as f64);
    let mut loss = F::zero();
    let mut grad = Tensor2D::zeros(b, estimates.cols());
    for i in 0..b {
        let e = estimates.row(i);
        let t = targets.row(i);
        let t_norm = checked_target_norm(t, i)?;
        let e_norm = norm(e).max(F::from_f64(COSINE_NORM_FLOOR));
        let cos = dot(e, t) / (e_norm * t_norm);
        loss = loss - cos;
        // d(-cos)/de = -(t / (|e||t|) - cos * e / |e|^2)
        let g = grad.row_mut(i);
        for j in 0..e.len() {
            g[j] = -inv_b * (t[j] / (e_norm * t_norm) - cos * e[j] / (e_norm * e_norm));
        }
    }
    Ok((loss * inv_b, grad))
}

/// Triplet loss with cosine similarity and margin [`TRIPLET_MARGIN`].
///
/// Every other in-batch target serves as a negative; the hinge
/// `max(cos(e_i, t_j) - cos(e_i, t_i) + margin, 0)` is averaged over all
/// `(row, negative)` combinations.
pub fn triplet<F: Scalar>(
    estimates: &Tensor2D<F>,
    targets: &Tensor2D<F>,
) -> Result<(F, Tensor2D<F>)> {
    check_same_shape("triplet", estimates, targets)?;
    let b = estimates.rows();
    if b < 2 {
        return Err(Error::Config(format!(
            "contrastive loss needs a batch of at least 2 (got {b}): no distractors"
        )));
    }
    let margin = F::from_f64(TRIPLET_MARGIN);
    let floor = F::from_f64(COSINE_NORM_FLOOR);
    let count = F::from_f64((b * (b - 1)) as f64);
    let inv_count = F::one() / count;

    let mut loss = F::zero();
    let mut grad = Tensor2D::zeros(b, estimates.cols());
    for i in 0..b {
        let e = estimates.row(i);
        let e_norm = norm(e).max(floor);
        let t_pos = targets.row(i);
        let pos_norm = checked_target_norm(t_pos, i)?;
        let cos_pos = dot(e, t_pos) / (e_norm * pos_norm);

        for j in 0..b {
            if j == i {
                continue;
            }
            let t_neg = targets.row(j);
            let neg_norm = checked_target_norm(t_neg, j)?;
            let cos_neg = dot(e, t_neg) / (e_norm * neg_norm);
            let hinge = cos_neg - cos_pos + margin;
            if hinge > F::zero() {
                loss = loss + hinge;
                // d cos(e, t)/de = t / (|e||t|) - cos * e / |e|^2
                let g = grad.row_mut(i);
                for d in 0..e.len() {
                    let d_neg = t_neg[d] / (e_norm * neg_norm) - cos_neg * e[d] / (e_norm * e_norm);
                    let d_pos = t_pos[d] / (e_norm * pos_norm) - cos_pos * e[d] / (e_norm * e_norm);
                    g[d] = g[d] + inv_count * (d_neg - d_pos);
                }
            }
        }
    }
    Ok((loss * inv_count, grad))
}

/// Computes the configured loss for one batch and chains the gradient back to
/// the estimates, which is what the probe's backward pass consumes.
pub fn batch_loss<F: Scalar>(
    kind: LossKind,
    estimates: &Tensor2D<F>,
    targets: &Tensor2D<F>,
) -> Result<(F, Tensor2D<F>)> {
    match kind {
        LossKind::Mse => mse(estimates, targets),
        LossKind::NegCosine => neg_cosine(estimates, targets),
        LossKind::Triplet => triplet(estimates, targets),
        LossKind::InfoNce => {
            let scores = ScoreMatrix::from_pairs(estimates, targets)?;
            let (loss, d_scores) = infonce(&scores)?;
            // d loss / d estimate_i = sum_j d_scores[i][j] * target_j
            let b = estimates.rows();
            let mut grad = Tensor2D::zeros(b, estimates.cols());
            for i in 0..b {
                let g = grad.row_mut(i);
                for j in 0..b {
                    let w = d_scores.get(i, j);
                    for (gd, td) in g.iter_mut().zip(targets.row(j)) {
                        *gd = *gd + w * *td;
                    }
                }
            }
            Ok((loss, grad))
        }
    }
}

fn check_same_shape<F: Scalar>(op: &str, a: &Tensor2D<F>, b: &Tensor2D<F>) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::shape(
            op,
            format!("{}x{}", a.rows(), a.cols()),
            format!("{}x{}", b.rows(), b.cols()),
        ));
    }
    Ok(())
}

fn checked_target_norm<F: Scalar>(t: &[F], row: usize) -> Result<F> {
    let n = norm(t);
    if n == F::zero() {
        return Err(Error::Numeric(format!(
            "zero-norm target vector at batch row {row}: cosine undefined"
        )));
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tensor(rows: usize, cols: usize, data: &[f64]) -> Tensor2D<f64> {
        Tensor2D::from_vec(rows, cols, data.to_vec()).unwrap()
    }

    fn random_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor2D<f64> {
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor2D::from_vec(rows, cols, data).unwrap()
    }

    /// Central finite differences on the loss w.r.t. the estimates.
    fn fd_gradient(
        kind: LossKind,
        estimates: &Tensor2D<f64>,
        targets: &Tensor2D<f64>,
    ) -> Tensor2D<f64> {
        let eps = 1e-6;
        let mut fd = Tensor2D::zeros(estimates.rows(), estimates.cols());
        let mut work = estimates.clone();
        for k in 0..estimates.len() {
            let orig = work.as_slice()[k];
            work.as_mut_slice()[k] = orig + eps;
            let (up, _) = batch_loss(kind, &work, targets).unwrap();
            work.as_mut_slice()[k] = orig - eps;
            let (down, _) = batch_loss(kind, &work, targets).unwrap();
            work.as_mut_slice()[k] = orig;
            fd.as_mut_slice()[k] = (up - down) / (2.0 * eps);
        }
        fd
    }

    fn assert_grad_close(analytic: &Tensor2D<f64>, fd: &Tensor2D<f64>) {
        for (a, f) in analytic.as_slice().iter().zip(fd.as_slice()) {
            let denom = a.abs().max(f.abs()).max(1e-8);
            assert!(
                ((a - f) / denom).abs() <= 1e-4,
                "gradient mismatch: analytic {a} vs fd {f}"
            );
        }
    }

    #[test]
    fn loss_names_round_trip_through_serde_and_parsing() {
        for kind in LossKind::ALL {
            let json = serde_json::to_string(&kind).unwrap();
            assert_eq!(json, format!("\"{}\"", kind.name()));
            let back: LossKind = serde_json::from_str(&json).unwrap();
            assert_eq!(back, kind);
            assert_eq!(kind.name().parse::<LossKind>().unwrap(), kind);
        }
    }

    #[test]
    fn infonce_uniform_scores_give_log_batch_size() {
        for b in [2usize, 3, 7] {
            let scores =
                ScoreMatrix::from_matrix(tensor(b, b, &vec![0.3; b * b])).unwrap();
            let (loss, grad) = infonce(&scores).unwrap();
            assert_relative_eq!(loss, (b as f64).ln(), epsilon = 1e-12);
            for i in 0..b {
                let row_sum: f64 = grad.row(i).iter().sum();
                assert!(row_sum.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn infonce_strong_diagonal_approaches_zero() {
        let scores =
            ScoreMatrix::from_matrix(tensor(2, 2, &[10.0, 0.0, 0.0, 10.0])).unwrap();
        let (loss, _) = infonce(&scores).unwrap();
        let expected = (1.0 + (-10.0f64).exp()).ln();
        assert_relative_eq!(loss, expected, max_relative = 1e-10);
        assert_relative_eq!(loss, 4.5399e-5, max_relative = 1e-3);
    }

    #[test]
    fn infonce_matches_brute_force_softmax() {
        // Independent per-row oracle: materialize softmax probabilities
        // without the log-sum-exp shortcut.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let raw = random_tensor(3, 3, &mut rng);
        let scores = ScoreMatrix::from_matrix(raw.clone()).unwrap();
        let (loss, _) = infonce(&scores).unwrap();

        let mut expected = 0.0;
        for i in 0..3 {
            let exps: Vec<f64> = raw.row(i).iter().map(|s| s.exp()).collect();
            let total: f64 = exps.iter().sum();
            expected -= (exps[i] / total).ln();
        }
        expected /= 3.0;
        assert_relative_eq!(loss, expected, epsilon = 1e-10);
    }

    #[test]
    fn infonce_rejects_singleton_batch() {
        let scores = ScoreMatrix::from_matrix(tensor(1, 1, &[3.0])).unwrap();
        assert!(matches!(infonce(&scores), Err(Error::Config(_))));
    }

    #[test]
    fn mse_anchors() {
        let v = tensor(2, 3, &[0.1, 0.2, 0.3, -0.4, 0.5, -0.6]);
        let (loss, _) = mse(&v, &v).unwrap();
        assert_eq!(loss, 0.0);

        let (loss, _) = mse(&tensor(1, 2, &[0.0, 0.0]), &tensor(1, 2, &[1.0, 1.0])).unwrap();
        assert_relative_eq!(loss, 1.0);
    }

    #[test]
    fn mse_shape_mismatch_is_an_error() {
        let a = tensor(1, 2, &[0.0, 0.0]);
        let b = tensor(2, 1, &[1.0, 1.0]);
        assert!(matches!(mse(&a, &b), Err(Error::Shape { .. })));
    }

    #[test]
    fn neg_cosine_anchors() {
        let v = tensor(1, 2, &[0.3, 0.4]);
        let (loss, _) = neg_cosine(&v, &v).unwrap();
        assert_relative_eq!(loss, -1.0, epsilon = 1e-12);

        let orth = (
            tensor(1, 2, &[1.0, 0.0]),
            tensor(1, 2, &[0.0, 2.0]),
        );
        let (loss, _) = neg_cosine(&orth.0, &orth.1).unwrap();
        assert_relative_eq!(loss, 0.0, epsilon = 1e-12);

        let flipped = tensor(1, 2, &[-0.3, -0.4]);
        let (loss, _) = neg_cosine(&v, &flipped).unwrap();
        assert_relative_eq!(loss, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn neg_cosine_zero_norm_target_names_the_row() {
        let e = tensor(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        let t = tensor(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        match neg_cosine(&e, &t) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("row 1"), "{msg}"),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn triplet_margin_only_when_positive_equals_negative() {
        // Identical targets make every hinge exactly the margin.
        let e = tensor(2, 2, &[1.0, 0.0, 0.5, 0.5]);
        let t = tensor(2, 2, &[0.0, 1.0, 0.0, 1.0]);
        let (loss, _) = triplet(&e, &t).unwrap();
        assert_relative_eq!(loss, TRIPLET_MARGIN, epsilon = 1e-12);
    }

    #[test]
    fn triplet_perfect_alignment_is_zero() {
        let e = tensor(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        let t = e.clone();
        let (loss, _) = triplet(&e, &t).unwrap();
        assert_relative_eq!(loss, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn triplet_hinge_arithmetic() {
        // Row 0: cos(e0, t0) = 0.2, cos(e0, t1) = 0.5 -> hinge 1.3.
        // Row 1: e1 = t1 orthogonal to t0 -> hinge max(0, 0) = 0.
        let z = (1.0f64 - 0.04 - 0.25).sqrt();
        let e = tensor(2, 3, &[0.2, 0.5, z, 0.0, 1.0, 0.0]);
        let t = tensor(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let (loss, _) = triplet(&e, &t).unwrap();
        assert_relative_eq!(loss, 1.3 / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn all_losses_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let estimates = random_tensor(4, 5, &mut rng);
        let targets = random_tensor(4, 5, &mut rng);
        for kind in LossKind::ALL {
            let (_, analytic) = batch_loss(kind, &estimates, &targets).unwrap();
            let fd = fd_gradient(kind, &estimates, &targets);
            assert_grad_close(&analytic, &fd);
        }
    }

    proptest! {
        /// Adding a constant to one score row leaves the loss unchanged
        /// and gradient rows keep summing to zero.
        #[test]
        fn infonce_row_shift_invariance(seed in 0u64..500, shift in -5.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = 4;
            let raw = random_tensor(b, b, &mut rng);
            let (base, grad) = infonce(&ScoreMatrix::from_matrix(raw.clone()).unwrap()).unwrap();

            let mut shifted = raw;
            for v in shifted.row_mut(2) {
                *v += shift;
            }
            let (moved, _) = infonce(&ScoreMatrix::from_matrix(shifted).unwrap()).unwrap();
            prop_assert!((base - moved).abs() < 1e-9);
            prop_assert!(base >= 0.0);
            for i in 0..b {
                let s: f64 = grad.row(i).iter().sum();
                prop_assert!(s.abs() < 1e-12);
            }
        }

        /// Cosine bounds keep every triplet hinge inside [0, 2 + margin].
        #[test]
        fn triplet_hinge_bounds(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let estimates = random_tensor(3, 4, &mut rng);
            let targets = random_tensor(3, 4, &mut rng);
            let (loss, _) = triplet(&estimates, &targets).unwrap();
            prop_assert!(loss >= 0.0);
            prop_assert!(loss <= 2.0 + TRIPLET_MARGIN);
        }
    }
}
