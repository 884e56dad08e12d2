//! Multi-label evaluation: per-class AP and mAP, plus overall and per-class
//! precision/recall/F1 under the top-3 and 0.5-threshold protocols.
//!
//! Ranking ties always break by ascending index, so reports are
//! bit-reproducible. Ratios with a zero denominator count as 0 rather than
//! propagating NaN through degenerate predictors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores (or probabilities) and ground truth for M samples × C categories.
#[derive(Debug, Clone)]
pub struct EvalBatch {
    samples: usize,
    categories: usize,
    scores: Vec<f64>, // row-major M×C
    truth: Vec<bool>, // row-major M×C
}

impl EvalBatch {
    pub fn new(samples: usize, categories: usize, scores: Vec<f64>, truth: Vec<bool>) -> Result<Self> {
        if scores.len() != samples * categories || truth.len() != samples * categories {
            return Err(Error::ShapeMismatch {
                op: "eval_batch",
                lhs: format!("[{samples}, {categories}]"),
                rhs: format!("scores {}, truth {}", scores.len(), truth.len()),
            });
        }
        Ok(EvalBatch {
            samples,
            categories,
            scores,
            truth,
        })
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    #[inline]
    pub fn score(&self, i: usize, c: usize) -> f64 {
        self.scores[i * self.categories + c]
    }

    #[inline]
    pub fn positive(&self, i: usize, c: usize) -> bool {
        self.truth[i * self.categories + c]
    }

    pub fn score_row(&self, i: usize) -> &[f64] {
        &self.scores[i * self.categories..(i + 1) * self.categories]
    }
}

/// Binary prediction matrix produced by [`binarize`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMatrix {
    samples: usize,
    categories: usize,
    data: Vec<bool>,
}

impl BinaryMatrix {
    pub fn new(samples: usize, categories: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), samples * categories);
        BinaryMatrix {
            samples,
            categories,
            data,
        }
    }

    #[inline]
    pub fn get(&self, i: usize, c: usize) -> bool {
        self.data[i * self.categories + c]
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn categories(&self) -> usize {
        self.categories
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    /// Top-3 scoring labels per image; optionally also require p > 0.5.
    Top3,
    /// Predict a label iff p > 0.5.
    Threshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApVariant {
    /// Mean precision at each positive's rank.
    NonInterpolated,
    /// 11-point interpolation at recalls 0.0, 0.1, …, 1.0.
    ElevenPoint,
}

/// Sample indices ranked by descending score, ties by ascending index.
fn ranked_indices(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("scores must not be NaN")
            .then(a.cmp(&b))
    });
    order
}

/// Average precision of one score column; `None` when it has no positive.
pub fn average_precision(scores: &[f64], labels: &[bool], variant: ApVariant) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 {
        return None;
    }
    let order = ranked_indices(scores);
    match variant {
        ApVariant::NonInterpolated => {
            let mut hits = 0usize;
            let mut total = 0.0;
            for (rank0, &idx) in order.iter().enumerate() {
                if labels[idx] {
                    hits += 1;
                    total += hits as f64 / (rank0 + 1) as f64;
                }
            }
            Some(total / positives as f64)
        }
        ApVariant::ElevenPoint => {
            // Precision/recall at every rank, then max precision at recall
            // ≥ each of the 11 anchors.
            let mut prec_at = Vec::with_capacity(order.len());
            let mut rec_at = Vec::with_capacity(order.len());
            let mut hits = 0usize;
            for (rank0, &idx) in order.iter().enumerate() {
                if labels[idx] {
                    hits += 1;
                }
                prec_at.push(hits as f64 / (rank0 + 1) as f64);
                rec_at.push(hits as f64 / positives as f64);
            }
            let mut total = 0.0;
            for step in 0..=10 {
                let anchor = step as f64 / 10.0;
                let best = prec_at
                    .iter()
                    .zip(&rec_at)
                    .filter(|(_, &r)| r >= anchor - 1e-12)
                    .map(|(&p, _)| p)
                    .fold(0.0, f64::max);
                total += best;
            }
            Some(total / 11.0)
        }
    }
}

/// Per-class AP and their mean; classes without positives are excluded
/// from the mean with a warning.
pub fn mean_average_precision(batch: &EvalBatch, variant: ApVariant) -> (Vec<Option<f64>>, f64) {
    let mut per_class = Vec::with_capacity(batch.categories);
    let mut total = 0.0;
    let mut counted = 0usize;
    for c in 0..batch.categories {
        let scores: Vec<f64> = (0..batch.samples).map(|i| batch.score(i, c)).collect();
        let labels: Vec<bool> = (0..batch.samples).map(|i| batch.positive(i, c)).collect();
        match average_precision(&scores, &labels, variant) {
            Some(ap) => {
                total += ap;
                counted += 1;
                per_class.push(Some(ap));
            }
            None => {
                log::warn!("class {c} has no positive sample; excluded from mAP");
                per_class.push(None);
            }
        }
    }
    let map = if counted == 0 { 0.0 } else { total / counted as f64 };
    (per_class, map)
}

/// Turn probabilities into binary predictions under the given protocol.
/// `top3_filter` additionally requires p > 0.5 inside the top-3 protocol.
pub fn binarize(
    probabilities: &EvalBatch,
    protocol: Protocol,
    top3_filter: bool,
) -> BinaryMatrix {
    let (m, c) = (probabilities.samples, probabilities.categories);
    let mut data = vec![false; m * c];
    for i in 0..m {
        let row = probabilities.score_row(i);
        match protocol {
            Protocol::Threshold => {
                for (j, &p) in row.iter().enumerate() {
                    data[i * c + j] = p > 0.5;
                }
            }
            Protocol::Top3 => {
                let order = ranked_indices(row);
                for &j in order.iter().take(3) {
                    data[i * c + j] = !top3_filter || row[j] > 0.5;
                }
            }
        }
    }
    BinaryMatrix::new(m, c, data)
}

/// Overall and per-class precision/recall/F1 for one prediction rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrfBlock {
    pub op: f64,
    pub or: f64,
    pub of1: f64,
    pub cp: f64,
    pub cr: f64,
    pub cf1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Per-class correct/predicted/ground-truth counts folded into the six
/// P/R/F1 metrics. Zero-denominator per-class ratios contribute 0.
pub fn prf_metrics(predictions: &BinaryMatrix, truth: &BinaryMatrix) -> PrfBlock {
    assert_eq!(predictions.samples, truth.samples, "sample count mismatch");
    assert_eq!(
        predictions.categories, truth.categories,
        "category count mismatch"
    );
    let (m, c) = (truth.samples, truth.categories);
    let mut correct = vec![0u64; c];
    let mut predicted = vec![0u64; c];
    let mut actual = vec![0u64; c];
    for i in 0..m {
        for j in 0..c {
            let p = predictions.get(i, j);
            let t = truth.get(i, j);
            if p {
                predicted[j] += 1;
            }
            if t {
                actual[j] += 1;
            }
            if p && t {
                correct[j] += 1;
            }
        }
    }
    let sum = |v: &[u64]| v.iter().sum::<u64>() as f64;
    let op = ratio(sum(&correct), sum(&predicted));
    let or = ratio(sum(&correct), sum(&actual));
    let mut cp = 0.0;
    let mut cr = 0.0;
    for j in 0..c {
        cp += ratio(correct[j] as f64, predicted[j] as f64);
        cr += ratio(correct[j] as f64, actual[j] as f64);
    }
    cp /= c as f64;
    cr /= c as f64;
    PrfBlock {
        op,
        or,
        of1: f1(op, or),
        cp,
        cr,
        cf1: f1(cp, cr),
    }
}

/// Full evaluation report: ranking quality plus both prediction protocols.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub map: f64,
    pub per_class_ap: Vec<Option<f64>>,
    pub top3: PrfBlock,
    pub all: PrfBlock,
}

impl MetricReport {
    /// Evaluate a batch of probabilities against ground truth.
    pub fn compute(batch: &EvalBatch, variant: ApVariant, top3_filter: bool) -> MetricReport {
        let (per_class_ap, map) = mean_average_precision(batch, variant);
        let truth = BinaryMatrix::new(
            batch.samples,
            batch.categories,
            (0..batch.samples * batch.categories)
                .map(|k| batch.truth[k])
                .collect(),
        );
        let top3_pred = binarize(batch, Protocol::Top3, top3_filter);
        let all_pred = binarize(batch, Protocol::Threshold, top3_filter);
        MetricReport {
            map,
            per_class_ap,
            top3: prf_metrics(&top3_pred, &truth),
            all: prf_metrics(&all_pred, &truth),
        }
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

impl std::fmt::Display for MetricReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "mAP: {:.4}", self.map)?;
        writeln!(f, "           OP      OR      OF1     CP      CR      CF1")?;
        for (name, block) in [("top-3", &self.top3), ("all  ", &self.all)] {
            writeln!(
                f,
                "{name}    {:.4}  {:.4}  {:.4}  {:.4}  {:.4}  {:.4}",
                block.op, block.or, block.of1, block.cp, block.cr, block.cf1
            )?;
        }
        write!(f, "per-class AP:")?;
        for ap in &self.per_class_ap {
            match ap {
                Some(v) => write!(f, " {v:.4}")?,
                None => write!(f, " n/a")?,
            }
        }
        Ok(())
    }
}
