//! Binary cross-entropy, supervised contrastive loss, and their weighted sum,
//! each returning exact gradients with respect to its inputs.

use crate::model::Label;
use crate::numcore::{l2_normalize, l2_normalize_backward, NumError, Tensor};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Probabilities are clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]` before the log.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("batch fields disagree on size: {0}")]
    Inconsistent(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("degenerate batch: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Num(#[from] NumError),
}

/// Per-anchor weight in the contrastive sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SupConNorm {
    /// `1/(Ñ − 1)` for every anchor.
    #[default]
    Paper,
    /// `1/|P(i)|`, the count of the anchor's positives.
    Positives,
}

/// `−(1/n) Σ [y log s + (1−y) log(1−s)]` and its gradient with respect to `s`.
///
/// Where the clamp is active the gradient is zero.
pub fn ce_loss(scores: &[f64], labels: &[Label]) -> Result<(f64, Vec<f64>), LossError> {
    if scores.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    if scores.len() != labels.len() {
        return Err(LossError::Inconsistent(format!(
            "{} scores, {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n = scores.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(scores.len());
    for (&s, &label) in scores.iter().zip(labels) {
        let y = label.as_f64();
        let clamped = s.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        loss -= y * clamped.ln() + (1.0 - y) * (1.0 - clamped).ln();
        let active = clamped == s;
        grad.push(if active {
            -(y / clamped - (1.0 - y) / (1.0 - clamped)) / n
        } else {
            0.0
        });
    }
    Ok((loss / n, grad))
}

/// True when at least one sample shares its label with another.
pub fn has_positive_pair(labels: &[Label]) -> bool {
    let reals = labels.iter().filter(|&&l| l == Label::Real).count();
    reals >= 2 || labels.len() - reals >= 2
}

/// Supervised contrastive loss over L2-normalized embeddings:
///
/// `Σᵢ cᵢ Σ_{j∈P(i)} −log( exp(ẑᵢ·ẑⱼ/β) / Σ_{ℓ≠i} exp(ẑᵢ·ẑℓ/β) )`
///
/// with `P(i)` the other samples of anchor `i`'s class and `cᵢ` set by `norm`.
/// Anchors with no positives contribute nothing. Returns the loss and its
/// gradient with respect to the raw (unnormalized) embeddings.
pub fn supcon_loss(
    embeddings: &Tensor,
    labels: &[Label],
    beta: f64,
    norm: SupConNorm,
) -> Result<(f64, Tensor), LossError> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(LossError::Parameter(format!("temperature must be positive, got {beta}")));
    }
    let (n, d) = embeddings.dims2()?;
    if n != labels.len() {
        return Err(LossError::Inconsistent(format!("{n} embeddings, {} labels", labels.len())));
    }
    if n < 2 {
        return Err(LossError::Degenerate("need at least two samples".into()));
    }
    if !has_positive_pair(labels) {
        return Err(LossError::Degenerate("no sample has a same-class partner".into()));
    }
    let z = l2_normalize(embeddings)?;
    let zd = z.data();

    let mut logits = vec![0.0; n * n];
    for i in 0..n {
        for l in i + 1..n {
            let dot: f64 = zd[i * d..(i + 1) * d]
                .iter()
                .zip(&zd[l * d..(l + 1) * d])
                .map(|(a, b)| a * b)
                .sum();
            logits[i * n + l] = dot / beta;
            logits[l * n + i] = dot / beta;
        }
    }

    let mut loss = 0.0;
    let mut grad_z = vec![0.0; n * d];
    let mut coef = vec![0.0; n];
    for i in 0..n {
        let positives = (0..n).filter(|&j| j != i && labels[j] == labels[i]).count();
        if positives == 0 {
            continue;
        }
        let weight = match norm {
            SupConNorm::Paper => 1.0 / (n - 1) as f64,
            SupConNorm::Positives => 1.0 / positives as f64,
        };
        let row = &logits[i * n..(i + 1) * n];
        let max = (0..n).filter(|&l| l != i).map(|l| row[l]).fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = (0..n).filter(|&l| l != i).map(|l| (row[l] - max).exp()).sum();
        let lse = max + sum_exp.ln();
        for j in 0..n {
            if j != i && labels[j] == labels[i] {
                loss += weight * (lse - row[j]);
            }
        }
        // ∂loss_i/∂logit_il = weight·(|P|·p_il − [l ∈ P])
        for l in 0..n {
            if l == i {
                coef[l] = 0.0;
                continue;
            }
            let p = (row[l] - lse).exp();
            let pos = if labels[l] == labels[i] { 1.0 } else { 0.0 };
            coef[l] = weight * (positives as f64 * p - pos) / beta;
        }
        for l in 0..n {
            let c = coef[l];
            if c == 0.0 {
                continue;
            }
            for k in 0..d {
                grad_z[i * d + k] += c * zd[l * d + k];
                grad_z[l * d + k] += c * zd[i * d + k];
            }
        }
    }
    let grad_z = Tensor::new(vec![n, d], grad_z)?;
    let grad = l2_normalize_backward(embeddings, &z, &grad_z);
    Ok((loss, grad))
}

/// One mini-batch as seen by the adaptation objective.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub embeddings: &'a Tensor,
    pub scores: &'a [f64],
    pub labels: &'a [Label],
    pub styles: &'a [String],
}

impl Batch<'_> {
    fn check(&self) -> Result<usize, LossError> {
        let n = self.scores.len();
        if n == 0 {
            return Err(LossError::EmptyBatch);
        }
        let rows = self.embeddings.dims2()?.0;
        if rows != n || self.labels.len() != n || self.styles.len() != n {
            return Err(LossError::Inconsistent(format!(
                "{rows} embeddings, {n} scores, {} labels, {} styles",
                self.labels.len(),
                self.styles.len()
            )));
        }
        Ok(n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CombinedLoss {
    pub total: f64,
    pub ce: f64,
    pub sc: f64,
    pub grad_scores: Vec<f64>,
    pub grad_embeddings: Tensor,
}

/// `L_CE + λ·L_SC`. With `λ = 0` the contrastive term is not evaluated and
/// the result equals the cross-entropy exactly.
pub fn combined_loss(
    batch: &Batch<'_>,
    lambda: f64,
    beta: f64,
    norm: SupConNorm,
) -> Result<CombinedLoss, LossError> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(LossError::Parameter(format!("λ must be nonnegative, got {lambda}")));
    }
    batch.check()?;
    let (ce, grad_scores) = ce_loss(batch.scores, batch.labels)?;
    if lambda == 0.0 {
        return Ok(CombinedLoss {
            total: ce,
            ce,
            sc: 0.0,
            grad_scores,
            grad_embeddings: Tensor::zeros(batch.embeddings.shape().to_vec()),
        });
    }
    let (sc, grad_sc) = supcon_loss(batch.embeddings, batch.labels, beta, norm)?;
    Ok(CombinedLoss {
        total: ce + lambda * sc,
        ce,
        sc,
        grad_scores,
        grad_embeddings: grad_sc.map(|g| lambda * g),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::grad_check;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use Label::{Real as R, Synthetic as S};

    /// Direct double sum, no max subtraction, separate normalization.
    fn brute_force_supcon(rows: &[Vec<f64>], labels: &[Label], beta: f64) -> f64 {
        let n = rows.len();
        let unit: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
                r.iter().map(|x| x / norm).collect()
            })
            .collect();
        let dot = |a: &Vec<f64>, b: &Vec<f64>| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut total = 0.0;
        for i in 0..n {
            let mut inner = 0.0;
            for j in 0..n {
                if j == i || labels[j] != labels[i] {
                    continue;
                }
                let num = (dot(&unit[i], &unit[j]) / beta).exp();
                let mut den = 0.0;
                for l in 0..n {
                    if l != i {
                        den += (dot(&unit[i], &unit[l]) / beta).exp();
                    }
                }
                inner += -(num / den).ln();
            }
            total += inner / (n - 1) as f64;
        }
        total
    }

    fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    fn to_tensor(rows: &[Vec<f64>]) -> Tensor {
        Tensor::matrix(rows.len(), rows[0].len(), rows.concat()).unwrap()
    }

    #[test]
    fn ce_examples() {
        let (l, _) = ce_loss(&[0.5], &[S]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let (l, _) = ce_loss(&[1.0, 0.0], &[S, R]).unwrap();
        assert!(l <= 1e-11);
        let (l, _) = ce_loss(&[0.9, 0.2], &[S, R]).unwrap();
        let expected = (-(0.9f64).ln() - (0.8f64).ln()) / 2.0;
        assert!((l - expected).abs() < 1e-15);
        assert!((l - 0.164252).abs() < 1e-6);
        assert_eq!(ce_loss(&[], &[]), Err(LossError::EmptyBatch));
    }

    #[test]
    fn ce_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let scores: Vec<f64> = (0..8).map(|_| rng.random_range(0.05..0.95)).collect();
        let labels: Vec<Label> = (0..8).map(|i| if i % 3 == 0 { S } else { R }).collect();
        let f = |ps: &[Tensor]| {
            let (l, g) = ce_loss(ps[0].data(), &labels).map_err(|_| NumError::NotScalar { shape: vec![] })?;
            Ok((l, vec![Tensor::vector(g)]))
        };
        let err = grad_check(f, &[Tensor::vector(scores)], 1e-5).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn supcon_two_sample_cases() {
        let z = Tensor::matrix(2, 3, vec![0.2, 0.4, 0.1, 0.2, 0.4, 0.1]).unwrap();
        let (l, _) = supcon_loss(&z, &[S, S], 0.1, SupConNorm::Paper).unwrap();
        assert_eq!(l, 0.0);
        assert!(matches!(
            supcon_loss(&z, &[S, R], 0.1, SupConNorm::Paper),
            Err(LossError::Degenerate(_))
        ));
    }

    #[test]
    fn supcon_zero_positive_anchor_contributes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let rows = random_rows(&mut rng, 3, 4);
        // the lone synthetic anchor has no positives
        let labels = [R, R, S];
        let (l, _) = supcon_loss(&to_tensor(&rows), &labels, 0.5, SupConNorm::Paper).unwrap();
        assert!((l - brute_force_supcon(&rows, &labels, 0.5)).abs() < 1e-12);
    }

    #[test]
    fn supcon_matches_brute_force_fixed_batches() {
        let rows4 = vec![
            vec![0.5, -0.2, 0.1],
            vec![0.4, -0.1, 0.3],
            vec![-0.3, 0.6, 0.2],
            vec![-0.1, 0.5, -0.4],
        ];
        let labels4 = [S, S, R, R];
        let (l, _) = supcon_loss(&to_tensor(&rows4), &labels4, 0.1, SupConNorm::Paper).unwrap();
        assert!((l - brute_force_supcon(&rows4, &labels4, 0.1)).abs() < 1e-10);
    }

    #[test]
    fn supcon_parameter_errors() {
        let z = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(matches!(
            supcon_loss(&z, &[S, S], 0.0, SupConNorm::Paper),
            Err(LossError::Parameter(_))
        ));
        assert!(matches!(
            supcon_loss(&z, &[S, S], -1.0, SupConNorm::Paper),
            Err(LossError::Parameter(_))
        ));
    }

    #[test]
    fn supcon_gradient_check_both_norms() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let rows = random_rows(&mut rng, 6, 5);
        let labels = [S, R, S, R, R, S];
        for norm in [SupConNorm::Paper, SupConNorm::Positives] {
            let f = |ps: &[Tensor]| {
                let (l, g) = supcon_loss(&ps[0], &labels, 0.1, norm)
                    .map_err(|_| NumError::NotScalar { shape: vec![] })?;
                Ok((l, vec![g]))
            };
            let err = grad_check(f, &[to_tensor(&rows)], 1e-5).unwrap();
            assert!(err < 1e-4, "{norm:?}: {err}");
        }
    }

    #[test]
    fn positives_norm_uses_positive_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let rows = random_rows(&mut rng, 5, 3);
        let labels = [S, S, S, R, R];
        let (paper, _) = supcon_loss(&to_tensor(&rows), &labels, 0.2, SupConNorm::Paper).unwrap();
        let (pos, _) = supcon_loss(&to_tensor(&rows), &labels, 0.2, SupConNorm::Positives).unwrap();
        // per-anchor sums weighted by (n−1)/|P(i)|; recompute from the paper form per anchor
        let mut expected = 0.0;
        for i in 0..5 {
            let sub_labels: Vec<Label> = labels.to_vec();
            let positives = (0..5).filter(|&j| j != i && labels[j] == labels[i]).count() as f64;
            let single = anchor_term(&rows, &sub_labels, i, 0.2);
            expected += single / positives;
        }
        assert!((pos - expected).abs() < 1e-12);
        assert!((paper - brute_force_supcon(&rows, &labels, 0.2)).abs() < 1e-12);
    }

    fn anchor_term(rows: &[Vec<f64>], labels: &[Label], i: usize, beta: f64) -> f64 {
        let unit: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
                r.iter().map(|x| x / n).collect()
            })
            .collect();
        let dot = |a: &Vec<f64>, b: &Vec<f64>| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let den: f64 = (0..rows.len()).filter(|&l| l != i).map(|l| (dot(&unit[i], &unit[l]) / beta).exp()).sum();
        (0..rows.len())
            .filter(|&j| j != i && labels[j] == labels[i])
            .map(|j| -((dot(&unit[i], &unit[j]) / beta).exp() / den).ln())
            .sum()
    }

    #[test]
    fn combined_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rows = random_rows(&mut rng, 4, 3);
        let emb = to_tensor(&rows);
        let scores = [0.8, 0.3, 0.6, 0.1];
        let labels = [S, R, S, R];
        let styles: Vec<String> = ["a", "b", "a", "b"].iter().map(|s| s.to_string()).collect();
        let batch = Batch {
            embeddings: &emb,
            scores: &scores,
            labels: &labels,
            styles: &styles,
        };
        let (ce, _) = ce_loss(&scores, &labels).unwrap();
        let (sc, _) = supcon_loss(&emb, &labels, 0.1, SupConNorm::Paper).unwrap();

        let zero = combined_loss(&batch, 0.0, 0.1, SupConNorm::Paper).unwrap();
        assert_eq!(zero.total, ce);

        let c1 = combined_loss(&batch, 0.1, 0.1, SupConNorm::Paper).unwrap();
        assert!((c1.total - (ce + 0.1 * sc)).abs() < 1e-12);
        let c2 = combined_loss(&batch, 0.2, 0.1, SupConNorm::Paper).unwrap();
        assert!(((c2.total - ce) - 2.0 * (c1.total - ce)).abs() < 1e-12);

        assert!(combined_loss(&batch, -0.1, 0.1, SupConNorm::Paper).is_err());
    }

    #[test]
    fn increasing_positive_similarity_decreases_loss() {
        // Two positives (0, 1) and two negatives. Rotating row 1 toward row 0
        // within a plane orthogonal to the other rows increases ẑ₀·ẑ₁ only.
        let base = |angle: f64| {
            vec![
                vec![1.0, 0.0, 0.0, 0.0],
                vec![angle.cos(), angle.sin(), 0.0, 0.0],
                vec![0.0, 0.0, 1.0, 0.0],
                vec![0.0, 0.0, 0.0, 1.0],
            ]
        };
        let labels = [S, S, R, R];
        let mut prev = f64::INFINITY;
        for angle in [1.4, 1.0, 0.6, 0.2] {
            let (l, _) = supcon_loss(&to_tensor(&base(angle)), &labels, 0.1, SupConNorm::Paper).unwrap();
            assert!(l < prev);
            prev = l;
        }
    }

    proptest! {
        #[test]
        fn supcon_nonnegative_and_permutation_invariant(
            seed in 0u64..1000,
            n in 3usize..8,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows = random_rows(&mut rng, n, 4);
            let mut labels: Vec<Label> = (0..n).map(|i| if i % 2 == 0 { S } else { R }).collect();
            labels[0] = S;
            labels[1] = S;
            let (l, _) = supcon_loss(&to_tensor(&rows), &labels, 0.1, SupConNorm::Paper).unwrap();
            prop_assert!(l >= 0.0);

            let mut perm: Vec<usize> = (0..n).collect();
            perm.reverse();
            perm.rotate_left(seed as usize % n);
            let rows_p: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
            let labels_p: Vec<Label> = perm.iter().map(|&i| labels[i]).collect();
            let (lp, _) = supcon_loss(&to_tensor(&rows_p), &labels_p, 0.1, SupConNorm::Paper).unwrap();
            prop_assert!((l - lp).abs() < 1e-10 * l.max(1.0));
        }

        #[test]
        fn supcon_scale_invariant_for_powers_of_two(seed in 0u64..1000, exp in -3i32..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows = random_rows(&mut rng, 5, 3);
            let labels = [S, R, S, R, S];
            let c = 2f64.powi(exp);
            let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|x| x * c).collect()).collect();
            let (a, _) = supcon_loss(&to_tensor(&rows), &labels, 0.1, SupConNorm::Paper).unwrap();
            let (b, _) = supcon_loss(&to_tensor(&scaled), &labels, 0.1, SupConNorm::Paper).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn ce_is_nonnegative(scores in proptest::collection::vec(0.0f64..=1.0, 1..10)) {
            let labels: Vec<Label> = (0..scores.len()).map(|i| if i % 2 == 0 { S } else { R }).collect();
            let (l, _) = ce_loss(&scores, &labels).unwrap();
            prop_assert!(l >= 0.0);
        }
    }
}
