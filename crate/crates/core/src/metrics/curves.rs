//! ROC and precision-recall curve points for plotting.

use std::path::Path;

use serde::Serialize;

use super::ranking::{Ranked, ScoredLabels};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// One ROC point per distinct score (predict positive when score ≥
/// threshold), preceded by the (0, 0) corner at threshold +∞.
pub fn roc_curve(data: &ScoredLabels) -> Result<Vec<RocPoint>> {
    let pos = data.positives() as f64;
    let neg = data.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(Error::UndefinedMetric("ROC curve needs both classes".into()));
    }
    let mut out = vec![RocPoint {
        threshold: f64::INFINITY,
        tpr: 0.0,
        fpr: 0.0,
    }];
    let (mut tp, mut fp) = (0.0, 0.0);
    for (threshold, p, q) in sweep(data) {
        tp += p;
        fp += q;
        out.push(RocPoint {
            threshold,
            tpr: tp / pos,
            fpr: fp / neg,
        });
    }
    Ok(out)
}

pub fn pr_curve(data: &ScoredLabels) -> Result<Vec<PrPoint>> {
    let pos = data.positives() as f64;
    if pos == 0.0 {
        return Err(Error::UndefinedMetric("PR curve needs a positive".into()));
    }
    let (mut tp, mut fp) = (0.0, 0.0);
    Ok(sweep(data)
        .map(|(threshold, p, q)| {
            tp += p;
            fp += q;
            PrPoint {
                threshold,
                precision: tp / (tp + fp),
                recall: tp / pos,
            }
        })
        .collect())
}

fn sweep(data: &ScoredLabels) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
    let ranked = Ranked::new(data);
    let mut groups = Vec::new();
    let mut prev: Option<f64> = None;
    for &i in ranked.order() {
        let s = data.scores()[i];
        let is_pos = data.labels()[i] == 1;
        if prev != Some(s) {
            groups.push((s, 0.0, 0.0));
            prev = Some(s);
        }
        let g = groups.last_mut().expect("pushed above");
        if is_pos {
            g.1 += 1.0;
        } else {
            g.2 += 1.0;
        }
    }
    groups.into_iter()
}

pub fn write_roc_csv(points: &[RocPoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::invalid(e.to_string()))?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_pr_csv(points: &[PrPoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::invalid(e.to_string()))?;
    for p in points {
        w.serialize(p)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ranking::auroc;

    #[test]
    fn trapezoid_under_roc_equals_auroc() {
        let d = ScoredLabels::new(
            vec![0.1, 0.4, 0.35, 0.8, 0.4, 0.2, 0.9],
            vec![0, 0, 1, 1, 1, 0, 0],
        )
        .unwrap();
        let roc = roc_curve(&d).unwrap();
        let area: f64 = roc
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
            .sum();
        assert!((area - auroc(&d).unwrap()).abs() < 1e-12);
        let last = roc.last().unwrap();
        assert_eq!((last.tpr, last.fpr), (1.0, 1.0));
    }

    #[test]
    fn pr_ends_at_full_recall() {
        let d = ScoredLabels::new(vec![0.9, 0.8, 0.7], vec![1, 0, 1]).unwrap();
        let pr = pr_curve(&d).unwrap();
        assert_eq!(pr.len(), 3);
        assert_eq!(pr[0].precision, 1.0);
        assert_eq!(pr[2].recall, 1.0);
    }

    #[test]
    fn csv_has_header() {
        let dir = tempfile::tempdir().unwrap();
        let d = ScoredLabels::new(vec![0.3, 0.6], vec![0, 1]).unwrap();
        let p = dir.path().join("roc.csv");
        write_roc_csv(&roc_curve(&d).unwrap(), &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("threshold,tpr,fpr\n"));
    }
}
