//! Agreement between a clustering and reference labels.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

fn choose2(n: u64) -> f64 {
    (n * n.saturating_sub(1) / 2) as f64
}

/// Pair-counting adjusted Rand index from the contingency table,
/// (Index − Expected) / (Max − Expected). When Max equals Expected both
/// partitions are trivial in the same way (all singletons or one block) and
/// the index is 1.
pub fn adjusted_rand_index(assignments: &[usize], labels: &[usize]) -> Result<f64> {
    if assignments.len() != labels.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} assignments vs {} labels",
            assignments.len(),
            labels.len()
        )));
    }
    if assignments.len() < 2 {
        return Err(Error::invalid("ARI needs at least two items"));
    }
    let mut table: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, u64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, u64> = BTreeMap::new();
    for (&a, &l) in assignments.iter().zip(labels) {
        *table.entry((a, l)).or_default() += 1;
        *rows.entry(a).or_default() += 1;
        *cols.entry(l).or_default() += 1;
    }
    let index: f64 = table.values().map(|&n| choose2(n)).sum();
    let sum_rows: f64 = rows.values().map(|&n| choose2(n)).sum();
    let sum_cols: f64 = cols.values().map(|&n| choose2(n)).sum();
    let total = choose2(assignments.len() as u64);
    let expected = sum_rows * sum_cols / total;
    let max = 0.5 * (sum_rows + sum_cols);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Best agreement over injective relabelings of cluster ids onto class ids.
pub fn cluster_accuracy(assignments: &[usize], labels: &[usize]) -> Result<f64> {
    if assignments.len() != labels.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} assignments vs {} labels",
            assignments.len(),
            labels.len()
        )));
    }
    if assignments.is_empty() {
        return Err(Error::invalid("accuracy of an empty assignment"));
    }
    let mut clusters: Vec<usize> = assignments.to_vec();
    clusters.sort_unstable();
    clusters.dedup();
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if clusters.len() > classes.len().max(2) {
        return Err(Error::invalid(format!(
            "{} clusters but only {} classes",
            clusters.len(),
            classes.len().max(2)
        )));
    }
    if classes.len() > 8 {
        return Err(Error::invalid("permutation matching supports at most 8 classes"));
    }
    // pad with an unused class id so a single-class label set still gives
    // two targets for a two-cluster assignment
    while classes.len() < clusters.len().max(2) {
        classes.push(classes.iter().max().map_or(0, |m| m + 1));
    }
    let cluster_pos: BTreeMap<usize, usize> =
        clusters.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let class_pos: BTreeMap<usize, usize> =
        classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut counts = vec![vec![0usize; classes.len()]; clusters.len()];
    for (a, l) in assignments.iter().zip(labels) {
        counts[cluster_pos[a]][class_pos[l]] += 1;
    }
    let mut best = 0;
    let mut perm: Vec<usize> = (0..classes.len()).collect();
    permute(&mut perm, 0, &mut |p| {
        let agree: usize = (0..clusters.len()).map(|c| counts[c][p[c]]).sum();
        best = best.max(agree);
    });
    Ok(best as f64 / assignments.len() as f64)
}

fn permute(v: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == v.len() {
        visit(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, visit);
        v.swap(k, i);
    }
}
