//! Scoring, probability mapping, and the loss functions.
//!
//! The printed sum of `y·log p + (1−y)·log(1−p)` is a log-likelihood; the
//! trainable objective is its negation, averaged over the batch so step
//! sizes do not depend on batch size. Probabilities are clamped away from
//! {0, 1} before any log.

use crate::diffcore::{sigmoid, Array, Element, Tape, ValueId};
use crate::error::{Error, Result};

/// Probabilities are kept inside [ε, 1−ε] with this ε.
pub const PROB_CLAMP: f64 = 1e-7;

/// Per-category scores and their clamped sigmoid probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector<F: Element> {
    pub scores: Array<F>,
    pub probabilities: Array<F>,
}

// ── Tape builders ────────────────────────────────────────────────────────

/// Row-wise dot products: `s_c = w*_c · o_c`, shape [C].
pub fn score_on_tape<F: Element>(
    tape: &mut Tape<F>,
    features: ValueId,
    classifiers: ValueId,
) -> Result<ValueId> {
    let prod = tape.mul(features, classifiers)?;
    tape.sum_axis(prod, 1)
}

/// Clamped sigmoid probabilities.
pub fn probabilities_on_tape<F: Element>(tape: &mut Tape<F>, scores: ValueId) -> ValueId {
    let p = tape.sigmoid(scores);
    tape.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// `−Σ [y·ln p + (1−y)·ln(1−p)]` over all elements of `probs`.
pub fn bce_on_tape<F: Element>(
    tape: &mut Tape<F>,
    probs: ValueId,
    labels: ValueId,
) -> Result<ValueId> {
    let p = tape.clamp(probs, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let ln_p = tape.ln(p);
    let neg_p = tape.scale(p, -1.0);
    let one_minus_p = tape.shift(neg_p, 1.0);
    let ln_q = tape.ln(one_minus_p);
    let neg_y = tape.scale(labels, -1.0);
    let one_minus_y = tape.shift(neg_y, 1.0);
    let pos_term = tape.mul(labels, ln_p)?;
    let neg_term = tape.mul(one_minus_y, ln_q)?;
    let per_entry = tape.add(pos_term, neg_term)?;
    let total = tape.sum(per_entry);
    Ok(tape.scale(total, -1.0))
}

/// `Σ (p − y)²` over all elements, for the squared-error loss variant.
pub fn euclidean_on_tape<F: Element>(
    tape: &mut Tape<F>,
    probs: ValueId,
    labels: ValueId,
) -> Result<ValueId> {
    let diff = tape.sub(probs, labels)?;
    let sq = tape.square(diff);
    Ok(tape.sum(sq))
}

/// `Σ_c ‖w*_c‖²`, the classifier-weight regularizer.
pub fn weight_penalty_on_tape<F: Element>(tape: &mut Tape<F>, classifiers: ValueId) -> ValueId {
    let sq = tape.square(classifiers);
    tape.sum(sq)
}

// ── Standalone (eager) forms ─────────────────────────────────────────────

/// Scores each category by the dot product of its classifier row with its
/// contextualized feature row, then maps through the clamped sigmoid.
pub fn score<F: Element>(features: &Array<F>, classifiers: &Array<F>) -> Result<ScoreVector<F>> {
    if features.shape() != classifiers.shape() || features.rank() != 2 {
        return Err(Error::ShapeMismatch {
            op: "score",
            lhs: features.shape_string(),
            rhs: classifiers.shape_string(),
        });
    }
    let c = features.shape()[0];
    let mut scores = Vec::with_capacity(c);
    for row in 0..c {
        let mut dot = F::zero();
        for (a, b) in features.row(row).iter().zip(classifiers.row(row)) {
            dot = dot + *a * *b;
        }
        scores.push(dot);
    }
    let lo = F::from_f64(PROB_CLAMP);
    let hi = F::from_f64(1.0 - PROB_CLAMP);
    let probabilities = scores
        .iter()
        .map(|&s| {
            let p = sigmoid(s);
            if p < lo {
                lo
            } else if p > hi {
                hi
            } else {
                p
            }
        })
        .collect();
    Ok(ScoreVector {
        scores: Array::vector(scores),
        probabilities: Array::vector(probabilities),
    })
}

fn check_prob_shapes<F: Element>(probs: &Array<F>, labels: &Array<F>) -> Result<usize> {
    if probs.shape() != labels.shape() {
        return Err(Error::ShapeMismatch {
            op: "loss",
            lhs: probs.shape_string(),
            rhs: labels.shape_string(),
        });
    }
    if !probs.all_finite() {
        return Err(Error::NanProbability);
    }
    // Rank 2 is a batch of M rows; anything else is a single sample.
    Ok(if probs.rank() == 2 { probs.shape()[0] } else { 1 })
}

/// Binary cross entropy, summed over categories and batch entries, divided
/// by batch size.
pub fn bce_loss<F: Element>(probs: &Array<F>, labels: &Array<F>) -> Result<f64> {
    let batch = check_prob_shapes(probs, labels)?;
    let mut total = 0.0;
    for (&p, &y) in probs.data().iter().zip(labels.data()) {
        let p = p.to_f64().clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let y = y.to_f64();
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    Ok(total / batch as f64)
}

/// Squared-error loss between probabilities and targets (config variant).
pub fn euclidean_loss<F: Element>(probs: &Array<F>, labels: &Array<F>) -> Result<f64> {
    let batch = check_prob_shapes(probs, labels)?;
    let total: f64 = probs
        .data()
        .iter()
        .zip(labels.data())
        .map(|(&p, &y)| (p.to_f64() - y.to_f64()).powi(2))
        .sum();
    Ok(total / batch as f64)
}

/// Cross entropy plus `γ·Σ_c ‖w*_c‖²` on the refined classifier weights.
pub fn stage2_loss<F: Element>(
    probs: &Array<F>,
    labels: &Array<F>,
    classifiers: &Array<F>,
    gamma: f64,
) -> Result<f64> {
    assert!(gamma >= 0.0, "gamma must be nonnegative");
    let bce = bce_loss(probs, labels)?;
    let penalty: f64 = classifiers.data().iter().map(|&w| w.to_f64().powi(2)).sum();
    Ok(bce + gamma * penalty)
}
