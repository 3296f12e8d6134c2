//! Threshold-free ranking metrics for binary scores.

use crate::error::{Error, Result};

/// Paired scores and binary labels (1 = pneumonia).
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredLabels {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl ScoredLabels {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.is_empty() || scores.len() != labels.len() {
            return Err(Error::invalid(format!(
                "need equal non-empty score/label lists, got {} and {}",
                scores.len(),
                labels.len()
            )));
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::invalid("labels must be 0 or 1"));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("scores must be finite"));
        }
        Ok(ScoredLabels { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    /// Materialize a resample from index draws.
    pub fn select(&self, idx: &[usize]) -> ScoredLabels {
        ScoredLabels {
            scores: idx.iter().map(|&i| self.scores[i]).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Items sorted by descending score, cut into groups of equal score.
#[derive(Debug, Clone)]
pub(crate) struct Ranked {
    order: Vec<usize>,
    group_ends: Vec<usize>,
}

impl Ranked {
    pub(crate) fn new(data: &ScoredLabels) -> Self {
        let s = &data.scores;
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
        let mut group_ends = Vec::new();
        for k in 1..order.len() {
            if s[order[k]] != s[order[k - 1]] {
                group_ends.push(k);
            }
        }
        group_ends.push(order.len());
        Ranked { order, group_ends }
    }

    pub(crate) fn order(&self) -> &[usize] {
        &self.order
    }

    /// (positive weight, negative weight) per tie group, highest score first.
    fn groups<'a>(
        &'a self,
        data: &'a ScoredLabels,
        weights: Option<&'a [u32]>,
    ) -> impl Iterator<Item = (f64, f64)> + 'a {
        let mut start = 0;
        self.group_ends.iter().map(move |&end| {
            let (mut p, mut q) = (0.0, 0.0);
            for &i in &self.order[start..end] {
                let w = weights.map_or(1.0, |w| w[i] as f64);
                if data.labels[i] == 1 {
                    p += w;
                } else {
                    q += w;
                }
            }
            start = end;
            (p, q)
        })
    }
}

pub(crate) fn auroc_ranked(
    data: &ScoredLabels,
    ranked: &Ranked,
    weights: Option<&[u32]>,
) -> Result<f64> {
    let (mut above, mut pairs_won, mut pos, mut neg) = (0.0, 0.0, 0.0, 0.0);
    for (p, q) in ranked.groups(data, weights) {
        // negatives in this group lose to every positive above, tie with those here
        pairs_won += q * above + 0.5 * p * q;
        above += p;
        pos += p;
        neg += q;
    }
    if pos == 0.0 || neg == 0.0 {
        return Err(Error::UndefinedMetric(
            "AUROC needs both classes present".into(),
        ));
    }
    Ok(pairs_won / (pos * neg))
}

pub(crate) fn aupr_ranked(
    data: &ScoredLabels,
    ranked: &Ranked,
    weights: Option<&[u32]>,
) -> Result<f64> {
    let total_pos: f64 = match weights {
        None => data.positives() as f64,
        Some(w) => data
            .labels
            .iter()
            .zip(w)
            .filter(|(&l, _)| l == 1)
            .map(|(_, &w)| w as f64)
            .sum(),
    };
    if total_pos == 0.0 {
        return Err(Error::UndefinedMetric(
            "AUPR needs at least one positive".into(),
        ));
    }
    let (mut tp, mut fp, mut ap, mut prev_recall) = (0.0, 0.0, 0.0, 0.0);
    for (p, q) in ranked.groups(data, weights) {
        tp += p;
        fp += q;
        if p == 0.0 {
            continue;
        }
        let recall = tp / total_pos;
        ap += (recall - prev_recall) * (tp / (tp + fp));
        prev_recall = recall;
    }
    Ok(ap)
}

/// Tie-aware AUROC: P(score_pos > score_neg) + ½·P(score_pos = score_neg)
/// over all positive-negative pairs.
pub fn auroc(data: &ScoredLabels) -> Result<f64> {
    auroc_ranked(data, &Ranked::new(data), None)
}

/// Average precision, Σ (R_k − R_{k−1})·P_k over descending thresholds with
/// tied scores handled as one threshold.
pub fn aupr(data: &ScoredLabels) -> Result<f64> {
    aupr_ranked(data, &Ranked::new(data), None)
}

/// Fraction of positives; the chance level of AUPR.
pub fn prevalence_baseline(labels: &[u8]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::invalid("prevalence of an empty label list"));
    }
    Ok(labels.iter().filter(|&&l| l == 1).count() as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankingMetric {
    Auroc,
    Aupr,
}

impl RankingMetric {
    pub fn name(self) -> &'static str {
        match self {
            RankingMetric::Auroc => "auroc",
            RankingMetric::Aupr => "aupr",
        }
    }

    pub fn compute(self, data: &ScoredLabels) -> Result<f64> {
        match self {
            RankingMetric::Auroc => auroc(data),
            RankingMetric::Aupr => aupr(data),
        }
    }

    pub(crate) fn compute_weighted(
        self,
        data: &ScoredLabels,
        ranked: &Ranked,
        weights: &[u32],
    ) -> Result<f64> {
        match self {
            RankingMetric::Auroc => auroc_ranked(data, ranked, Some(weights)),
            RankingMetric::Aupr => aupr_ranked(data, ranked, Some(weights)),
        }
    }
}
