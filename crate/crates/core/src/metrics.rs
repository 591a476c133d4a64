//! Accuracy, AUROC and AUPRC.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Scores with their binary labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::contract(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::contract("scores must be finite"));
        }
        Ok(ScoredSet { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    /// Indices ordered by descending score.
    fn descending(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        idx
    }
}

/// Fraction of samples with `(score ≥ threshold) == label`.
pub fn accuracy(s: &ScoredSet, threshold: f64) -> Result<f64> {
    if s.is_empty() {
        return Err(Error::contract("accuracy of an empty set"));
    }
    let hits = s
        .scores
        .iter()
        .zip(&s.labels)
        .filter(|&(&p, &y)| (p >= threshold) == y)
        .count();
    Ok(hits as f64 / s.len() as f64)
}

/// Mann–Whitney AUROC with half credit for ties, via tie-averaged ranks.
pub fn auroc(s: &ScoredSet) -> Result<f64> {
    let pos = s.positives();
    let neg = s.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("AUROC needs both classes".into()));
    }
    let mut idx = s.descending();
    idx.reverse();
    // 1-based ranks in ascending order; tied groups share their mean rank
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && s.scores[idx[j + 1]] == s.scores[idx[i]] {
            j += 1;
        }
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        let group_pos = idx[i..=j].iter().filter(|&&k| s.labels[k]).count();
        rank_sum_pos += mean_rank * group_pos as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision: Σ Δrecall · precision over descending-score cuts, with
/// tied scores entering as one cut.
pub fn auprc(s: &ScoredSet) -> Result<f64> {
    let pos = s.positives();
    if pos == 0 {
        return Err(Error::UndefinedMetric("AUPRC needs at least one positive".into()));
    }
    let idx = s.descending();
    let (mut tp, mut seen, mut area) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && s.scores[idx[j + 1]] == s.scores[idx[i]] {
            j += 1;
        }
        let group_tp = idx[i..=j].iter().filter(|&&k| s.labels[k]).count();
        tp += group_tp;
        seen += j - i + 1;
        if group_tp > 0 {
            area += (group_tp as f64 / pos as f64) * (tp as f64 / seen as f64);
        }
        i = j + 1;
    }
    Ok(area)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub auroc: f64,
    pub auprc: f64,
}

impl Metrics {
    pub fn evaluate(s: &ScoredSet) -> Result<Self> {
        Ok(Metrics {
            accuracy: accuracy(s, DEFAULT_THRESHOLD)?,
            auroc: auroc(s)?,
            auprc: auprc(s)?,
        })
    }

    /// Arithmetic mean of each metric.
    pub fn mean(all: &[Metrics]) -> Result<Self> {
        if all.is_empty() {
            return Err(Error::contract("mean of zero metric sets"));
        }
        let n = all.len() as f64;
        Ok(Metrics {
            accuracy: all.iter().map(|m| m.accuracy).sum::<f64>() / n,
            auroc: all.iter().map(|m| m.auroc).sum::<f64>() / n,
            auprc: all.iter().map(|m| m.auprc).sum::<f64>() / n,
        })
    }
}
