use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Serialize;

use super::{tally, ClassLabel, DatasetManifest};
use crate::par::Execution;
use crate::raster::Raster;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Issue {
    MissingFile { id: String, path: PathBuf },
    Undecodable { id: String, path: PathBuf, message: String },
    /// Decoded pixels no longer hash to the recorded value.
    HashMismatch { id: String },
    DuplicateContent { first: String, second: String },
    ClassCountMismatch { label: ClassLabel, recorded: usize, actual: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Check files, decodability, duplicate pixel content and class counts.
/// Never modifies the manifest.
pub fn validate_manifest(manifest: &DatasetManifest) -> ValidationReport {
    let mut issues = Vec::new();
    let checks = Execution::Parallel.map_slice(manifest.records(), |r| {
        if !r.path.is_file() {
            return Some(Issue::MissingFile {
                id: r.id.clone(),
                path: r.path.clone(),
            });
        }
        match Raster::load(&r.path) {
            Err(e) => Some(Issue::Undecodable {
                id: r.id.clone(),
                path: r.path.clone(),
                message: e.to_string(),
            }),
            Ok(raster) if raster.content_hash() != r.content_hash => {
                Some(Issue::HashMismatch { id: r.id.clone() })
            }
            Ok(_) => None,
        }
    });
    issues.extend(checks.into_iter().flatten());

    let mut first_with_hash = BTreeMap::new();
    for r in manifest.records() {
        match first_with_hash.get(&r.content_hash) {
            Some(first) => issues.push(Issue::DuplicateContent {
                first: String::clone(first),
                second: r.id.clone(),
            }),
            None => {
                first_with_hash.insert(r.content_hash, r.id.clone());
            }
        }
    }

    let actual = tally(manifest.records());
    for label in ClassLabel::ALL {
        let recorded = manifest.class_counts().get(&label).copied().unwrap_or(0);
        let actual = actual.get(&label).copied().unwrap_or(0);
        if recorded != actual {
            issues.push(Issue::ClassCountMismatch {
                label,
                recorded,
                actual,
            });
        }
    }
    ValidationReport { issues }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ImageRecord, Provenance, Source, Split};

    fn stored(dir: &std::path::Path, id: &str, v: u8) -> ImageRecord {
        let r = Raster::from_gray_fn(3, 2, |y, x| v.wrapping_add((y + x) as u8));
        let path = dir.join(format!("{id}.png"));
        r.save_png(&path).unwrap();
        ImageRecord {
            id: id.into(),
            path,
            label: ClassLabel::Healthy,
            source: Source::ProceduralStub,
            split: Split::Unassigned,
            content_hash: r.content_hash(),
        }
    }

    #[test]
    fn clean_manifest_has_no_issues() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest::new(
            vec![stored(dir.path(), "a", 1), stored(dir.path(), "b", 50)],
            Provenance::new("t", 0),
        )
        .unwrap();
        assert!(validate_manifest(&m).is_clean());
    }

    #[test]
    fn deleted_file_reported_by_id() {
        let dir = tempfile::tempdir().unwrap();
        let b = stored(dir.path(), "b", 50);
        std::fs::remove_file(&b.path).unwrap();
        let m = DatasetManifest::new(vec![stored(dir.path(), "a", 1), b], Provenance::new("t", 0))
            .unwrap();
        let before = m.clone();
        let report = validate_manifest(&m);
        assert_eq!(report.issues.len(), 1);
        assert!(matches!(&report.issues[0], Issue::MissingFile { id, .. } if id == "b"));
        assert_eq!(m, before);
    }

    #[test]
    fn identical_pixels_pair_ids() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest::new(
            vec![stored(dir.path(), "a", 9), stored(dir.path(), "b", 9)],
            Provenance::new("t", 0),
        )
        .unwrap();
        let report = validate_manifest(&m);
        assert_eq!(
            report.issues,
            vec![Issue::DuplicateContent {
                first: "a".into(),
                second: "b".into()
            }]
        );
    }

    #[test]
    fn recorded_counts_checked() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest::new(vec![stored(dir.path(), "a", 1)], Provenance::new("t", 0))
            .unwrap();
        let json = m.to_json(None).unwrap().replace("\"healthy\": 1", "\"healthy\": 4");
        let tampered = DatasetManifest::from_json(&json, None).unwrap();
        let report = validate_manifest(&tampered);
        assert!(report
            .issues
            .iter()
            .any(|i| matches!(i, Issue::ClassCountMismatch { recorded: 4, actual: 1, .. })));
    }
}
