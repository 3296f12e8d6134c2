//! Per-invocation output directory and its `run.json` record.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use cxrsynth::metrics::MetricReport;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub command: String,
    pub config: RunConfig,
    pub code_version: String,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub status: String,
    pub timings: Vec<StageTiming>,
    /// Relative to the run directory.
    pub artifacts: Vec<PathBuf>,
    pub metrics: Vec<MetricReport>,
}

pub struct Run {
    pub dir: PathBuf,
    pub record: RunRecord,
}

pub fn code_version() -> String {
    match option_env!("CXRSYNTH_GIT_REV") {
        Some(rev) => format!("{} ({rev})", env!("CARGO_PKG_VERSION")),
        None => env!("CARGO_PKG_VERSION").to_string(),
    }
}

impl Run {
    /// Creates `{output_dir}/{timestamp}-{config hash}`; a numeric suffix
    /// keeps ids unique when two runs start within the same millisecond.
    pub fn start(cfg: &RunConfig, command: &str) -> Result<Self> {
        let now = chrono::Local::now();
        let base = format!("{}-{}", now.format("%Y%m%dT%H%M%S%3f"), cfg.short_hash());
        let root = &cfg.paths.output_dir;
        std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        let mut run_id = base.clone();
        let mut n = 1;
        let dir = loop {
            let dir = root.join(&run_id);
            match std::fs::create_dir(&dir) {
                Ok(()) => break dir,
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    run_id = format!("{base}-{n}");
                    n += 1;
                }
                Err(e) => return Err(e).with_context(|| format!("creating {}", dir.display())),
            }
        };
        log::info!("run directory {}", dir.display());
        Ok(Run {
            dir,
            record: RunRecord {
                run_id,
                command: command.to_string(),
                config: cfg.clone(),
                code_version: code_version(),
                started_at: now.to_rfc3339(),
                finished_at: None,
                status: "running".into(),
                timings: Vec::new(),
                artifacts: Vec::new(),
                metrics: Vec::new(),
            },
        })
    }

    pub fn path(&self, name: impl AsRef<Path>) -> PathBuf {
        self.dir.join(name)
    }

    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        log::info!("{name}...");
        let t0 = Instant::now();
        let out = f(self);
        self.record.timings.push(StageTiming {
            stage: name.to_string(),
            seconds: t0.elapsed().as_secs_f64(),
        });
        out
    }

    pub fn artifact(&mut self, path: &Path) {
        let rel = path.strip_prefix(&self.dir).unwrap_or(path).to_path_buf();
        self.record.artifacts.push(rel);
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.path(name);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let text = serde_json::to_string_pretty(value)? + "\n";
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        self.artifact(&path);
        Ok(path)
    }

    /// Writes `run.json` and appends the record to `{output_dir}/runs.jsonl`.
    pub fn finish(mut self, outcome: &Result<()>) -> Result<PathBuf> {
        self.record.finished_at = Some(chrono::Local::now().to_rfc3339());
        self.record.status = match outcome {
            Ok(()) => "ok".into(),
            Err(e) => format!("failed: {e:#}"),
        };
        let path = self.path("run.json");
        std::fs::write(&path, serde_json::to_string_pretty(&self.record)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        let log_path = self.record.config.paths.output_dir.join("runs.jsonl");
        let mut log = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .with_context(|| format!("opening {}", log_path.display()))?;
        writeln!(log, "{}", serde_json::to_string(&self.record)?)?;
        Ok(self.dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn runs_get_distinct_dirs_and_an_appended_log() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = RunConfig::default().effective(None, Some(tmp.path().to_path_buf()));
        let a = Run::start(&cfg, "report").unwrap();
        let b = Run::start(&cfg, "report").unwrap();
        assert_ne!(a.dir, b.dir);
        assert!(a.record.run_id.ends_with(&cfg.short_hash()) || a.record.run_id.contains(&cfg.short_hash()));
        a.finish(&Ok(())).unwrap();
        b.finish(&Err(anyhow::anyhow!("boom"))).unwrap();
        let log = std::fs::read_to_string(tmp.path().join("runs.jsonl")).unwrap();
        assert_eq!(log.lines().count(), 2);
        assert!(log.contains("failed: boom"));
    }
}
