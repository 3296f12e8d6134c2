//! Dataset data model: labeled image records, manifests and their JSON file
//! form, plus ingestion of the real-world validation corpora.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::ContentHash;

mod ingest;
pub mod medical;
mod split;
mod validate;

pub use ingest::{ingest_chest_xray_folder, ingest_rsna, Ingested, RsnaClass, Skipped};
pub use split::{stratified_split, SplitSizes};
pub use validate::{validate_manifest, Issue, ValidationReport};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    Healthy,
    Pneumonia,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 2] = [ClassLabel::Healthy, ClassLabel::Pneumonia];

    /// 0 for healthy, 1 for pneumonia (the positive class).
    pub fn index(self) -> usize {
        match self {
            ClassLabel::Healthy => 0,
            ClassLabel::Pneumonia => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(ClassLabel::Healthy),
            1 => Some(ClassLabel::Pneumonia),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Healthy => "healthy",
            ClassLabel::Pneumonia => "pneumonia",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "healthy" | "normal" => Ok(ClassLabel::Healthy),
            "pneumonia" => Ok(ClassLabel::Pneumonia),
            _ => Err(Error::invalid(format!("unknown class label {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    NanoBanana,
    RoentgenV2,
    ChestXrayCorpus,
    RsnaCorpus,
    ProceduralStub,
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_string()))
            .map_err(|_| Error::invalid(format!("unknown source {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    EvalExternal,
    Unassigned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub path: PathBuf,
    pub label: ClassLabel,
    pub source: Source,
    pub split: Split,
    pub content_hash: ContentHash,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub description: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(description: impl Into<String>, seed: u64) -> Self {
        Provenance {
            description: description.into(),
            seed,
        }
    }
}

pub type ClassCounts = BTreeMap<ClassLabel, usize>;

/// Ordered, immutable inventory of labeled images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    records: Vec<ImageRecord>,
    class_counts: ClassCounts,
    provenance: Provenance,
}

pub fn tally(records: &[ImageRecord]) -> ClassCounts {
    let mut counts: ClassCounts = ClassLabel::ALL.iter().map(|&c| (c, 0)).collect();
    for r in records {
        *counts.entry(r.label).or_default() += 1;
    }
    counts
}

impl DatasetManifest {
    /// Build a manifest; ids must be unique.
    pub fn new(records: Vec<ImageRecord>, provenance: Provenance) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::invalid(format!("duplicate record id {:?}", r.id)));
            }
        }
        let class_counts = tally(&records);
        Ok(DatasetManifest {
            records,
            class_counts,
            provenance,
        })
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn class_counts(&self) -> &ClassCounts {
        &self.class_counts
    }

    pub fn count(&self, label: ClassLabel) -> usize {
        self.class_counts.get(&label).copied().unwrap_or(0)
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Records of one split, as a new manifest sharing the provenance.
    pub fn subset(&self, split: Split) -> DatasetManifest {
        let records: Vec<_> = self.records.iter().filter(|r| r.split == split).cloned().collect();
        DatasetManifest {
            class_counts: tally(&records),
            records,
            provenance: self.provenance.clone(),
        }
    }

    pub fn with_split(&self, split: Split) -> DatasetManifest {
        let records: Vec<_> = self
            .records
            .iter()
            .cloned()
            .map(|mut r| {
                r.split = split;
                r
            })
            .collect();
        DatasetManifest {
            class_counts: tally(&records),
            records,
            provenance: self.provenance.clone(),
        }
    }

    pub fn labels(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.label.index() as u8).collect()
    }

    pub(crate) fn from_parts_unchecked(
        records: Vec<ImageRecord>,
        class_counts: ClassCounts,
        provenance: Provenance,
    ) -> Self {
        DatasetManifest {
            records,
            class_counts,
            provenance,
        }
    }

    /// JSON text. Record paths inside `base_dir` are written relative to it
    /// so a manifest and its store can be moved together.
    pub fn to_json(&self, base_dir: Option<&Path>) -> Result<String> {
        let records = self
            .records
            .iter()
            .map(|r| {
                let mut r = r.clone();
                if let Some(base) = base_dir {
                    if let Ok(rel) = r.path.strip_prefix(base) {
                        r.path = rel.to_path_buf();
                    }
                }
                r
            })
            .collect();
        let file = ManifestFile {
            version: MANIFEST_VERSION,
            provenance: self.provenance.description.clone(),
            seed: self.provenance.seed,
            class_counts: self.class_counts.clone(),
            records,
        };
        let mut s = serde_json::to_string_pretty(&file)?;
        s.push('\n');
        Ok(s)
    }

    /// Parse JSON text; relative record paths are resolved against `base_dir`.
    pub fn from_json(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let file: ManifestFile = serde_json::from_str(text)?;
        if file.version != MANIFEST_VERSION {
            return Err(Error::invalid(format!(
                "unsupported manifest version {}",
                file.version
            )));
        }
        let records: Vec<ImageRecord> = file
            .records
            .into_iter()
            .map(|mut r| {
                if let Some(base) = base_dir {
                    if r.path.is_relative() {
                        r.path = base.join(&r.path);
                    }
                }
                r
            })
            .collect();
        let mut m = DatasetManifest::new(records, Provenance::new(file.provenance, file.seed))?;
        m.class_counts = file.class_counts;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let base = path.parent().filter(|p| !p.as_os_str().is_empty());
        if let Some(dir) = base {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let base = base.map(absolute);
        let text = self.to_json(base.as_deref())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(absolute);
        Self::from_json(&text, base.as_deref())
    }
}

fn absolute(p: &Path) -> PathBuf {
    if p.as_os_str().is_empty() {
        return std::env::current_dir().unwrap_or_default();
    }
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    version: u32,
    provenance: String,
    seed: u64,
    class_counts: ClassCounts,
    records: Vec<ImageRecord>,
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::raster::Raster;

    pub fn record(id: &str, label: ClassLabel, split: Split) -> ImageRecord {
        let r = Raster::from_gray_fn(2, 2, |y, x| (id.len() * 7 + y * 2 + x) as u8);
        ImageRecord {
            id: id.to_string(),
            path: PathBuf::from(format!("/nonexistent/{id}.png")),
            label,
            source: Source::ProceduralStub,
            split,
            content_hash: r.content_hash(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::record;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn counts_follow_records() {
        let m = DatasetManifest::new(
            vec![
                record("a", ClassLabel::Healthy, Split::Unassigned),
                record("b", ClassLabel::Pneumonia, Split::Unassigned),
                record("c", ClassLabel::Pneumonia, Split::Unassigned),
            ],
            Provenance::new("t", 1),
        )
        .unwrap();
        assert_eq!(m.count(ClassLabel::Healthy), 1);
        assert_eq!(m.count(ClassLabel::Pneumonia), 2);
        assert_eq!(m.class_counts().values().sum::<usize>(), m.len());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let r = record("a", ClassLabel::Healthy, Split::Unassigned);
        assert!(DatasetManifest::new(vec![r.clone(), r], Provenance::new("t", 0)).is_err());
    }

    #[test]
    fn relative_paths_inside_base() {
        let mut r = record("a", ClassLabel::Healthy, Split::Train);
        r.path = PathBuf::from("/store/healthy/a.png");
        let m = DatasetManifest::new(vec![r], Provenance::new("t", 0)).unwrap();
        let json = m.to_json(Some(Path::new("/store"))).unwrap();
        assert!(json.contains("\"healthy/a.png\""));
        let back = DatasetManifest::from_json(&json, Some(Path::new("/store"))).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn file_has_documented_fields() {
        let m = DatasetManifest::new(
            vec![record("a", ClassLabel::Healthy, Split::EvalExternal)],
            Provenance::new("desc", 9),
        )
        .unwrap();
        let v: serde_json::Value = serde_json::from_str(&m.to_json(None).unwrap()).unwrap();
        assert_eq!(v["version"], 1);
        assert_eq!(v["provenance"], "desc");
        assert_eq!(v["seed"], 9);
        let rec = &v["records"][0];
        assert_eq!(rec["label"], "healthy");
        assert_eq!(rec["split"], "eval_external");
        assert_eq!(rec["source"], "procedural_stub");
        assert_eq!(rec["content_hash"].as_str().unwrap().len(), 64);
    }

    fn arb_record(i: usize) -> impl Strategy<Value = ImageRecord> {
        (
            prop::bool::ANY,
            prop::sample::select(vec![
                Split::Train,
                Split::Val,
                Split::Test,
                Split::EvalExternal,
                Split::Unassigned,
            ]),
            prop::sample::select(vec![
                Source::NanoBanana,
                Source::RoentgenV2,
                Source::ChestXrayCorpus,
                Source::RsnaCorpus,
                Source::ProceduralStub,
            ]),
            any::<[u8; 32]>(),
            "[a-z/]{1,12}",
        )
            .prop_map(move |(pos, split, source, hash, path)| ImageRecord {
                id: format!("id-{i}"),
                path: PathBuf::from(format!("/{path}")),
                label: if pos {
                    ClassLabel::Pneumonia
                } else {
                    ClassLabel::Healthy
                },
                source,
                split,
                content_hash: ContentHash(hash),
            })
    }

    proptest! {
        #[test]
        fn json_round_trip_is_identity(
            records in (0usize..20).prop_flat_map(|n| (0..n).map(arb_record).collect::<Vec<_>>()),
            seed in any::<u64>(),
            desc in ".{0,30}",
        ) {
            let m = DatasetManifest::new(records, Provenance::new(desc, seed)).unwrap();
            let back = DatasetManifest::from_json(&m.to_json(None).unwrap(), None).unwrap();
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(back.class_counts().values().sum::<usize>(), back.len());
        }
    }
}
