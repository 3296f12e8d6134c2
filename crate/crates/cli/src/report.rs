//! Consolidates the metric reports found under an output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Result;
use cxrsynth::metrics::MetricReport;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub run: String,
    pub dataset: String,
    pub model_tag: String,
    /// metric name -> report
    pub metrics: BTreeMap<String, MetricReport>,
}

#[derive(Debug, Default, Serialize)]
pub struct Summary {
    pub rows: Vec<Row>,
    pub skipped: Vec<PathBuf>,
}

/// Every `*.json` inside a `metrics/` directory below `root`. Files that do
/// not parse as a metric report are skipped with a warning.
pub fn collect(root: &Path) -> Result<Summary> {
    let mut found: BTreeMap<(String, String, String), BTreeMap<String, MetricReport>> = BTreeMap::new();
    let mut summary = Summary::default();
    let mut paths = Vec::new();
    if root.is_dir() {
        visit(root, &mut paths)?;
    }
    paths.sort();
    for path in paths {
        let parsed = std::fs::read_to_string(&path)
            .map_err(|e| e.to_string())
            .and_then(|t| serde_json::from_str::<MetricReport>(&t).map_err(|e| e.to_string()));
        match parsed {
            Ok(r) => {
                let run = path
                    .parent()
                    .and_then(Path::parent)
                    .and_then(|p| p.strip_prefix(root).ok())
                    .map(|p| p.display().to_string())
                    .unwrap_or_default();
                found
                    .entry((run, r.dataset.clone(), r.model_tag.clone()))
                    .or_default()
                    .insert(r.metric.clone(), r);
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                summary.skipped.push(path);
            }
        }
    }
    summary.rows = found
        .into_iter()
        .map(|((run, dataset, model_tag), metrics)| Row {
            run,
            dataset,
            model_tag,
            metrics,
        })
        .collect();
    Ok(summary)
}

fn visit(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            visit(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "json")
            && path.parent().and_then(Path::file_name).is_some_and(|n| n == "metrics")
        {
            out.push(path);
        }
    }
    Ok(())
}

fn cell(r: Option<&MetricReport>) -> String {
    match r {
        Some(r) => format!("{:.3} [{:.3}, {:.3}]", r.point, r.ci_low, r.ci_high),
        None => "-".into(),
    }
}

pub fn markdown(summary: &Summary) -> String {
    let mut s = String::from("| dataset | model | AUROC | AUPR | run |\n|---|---|---|---|---|\n");
    for row in &summary.rows {
        s += &format!(
            "| {} | {} | {} | {} | {} |\n",
            row.dataset,
            row.model_tag,
            cell(row.metrics.get("auroc")),
            cell(row.metrics.get("aupr")),
            row.run
        );
    }
    s
}
