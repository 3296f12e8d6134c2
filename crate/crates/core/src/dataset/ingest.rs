use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::medical::{to_gray8, MedicalDecoder};
use super::{ClassLabel, DatasetManifest, ImageRecord, Provenance, Source, Split};
use crate::error::{Error, Result};
use crate::par::Execution;
use crate::raster::{ContentHash, Raster};

/// An input that could not be turned into a record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Skipped {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub manifest: DatasetManifest,
    pub skipped: Vec<Skipped>,
}

const IMAGE_EXTENSIONS: &[&str] = &["jpeg", "jpg", "png"];

fn has_image_extension(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.iter().any(|x| e.eq_ignore_ascii_case(x)))
}

fn class_from_dir(name: &str) -> Option<ClassLabel> {
    match name.to_ascii_uppercase().as_str() {
        "NORMAL" => Some(ClassLabel::Healthy),
        "PNEUMONIA" => Some(ClassLabel::Pneumonia),
        _ => None,
    }
}

/// Ingest the pediatric Chest X-Ray corpus: every image under a `NORMAL` or
/// `PNEUMONIA` directory anywhere below `root`, across all of its
/// train/val/test partitions, becomes one `eval_external` record. Record ids
/// are the slash-separated path relative to `root`. Hidden entries and
/// `__MACOSX` folders are ignored.
pub fn ingest_chest_xray_folder(root: &Path) -> Result<Ingested> {
    if !root.is_dir() {
        return Err(Error::MissingRoot(root.to_path_buf()));
    }
    let mut candidates = Vec::new();
    let walker = walkdir::WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| {
            let name = e.file_name().to_string_lossy();
            e.depth() == 0 || !(name.starts_with('.') || name == "__MACOSX")
        });
    for entry in walker {
        let entry = entry.map_err(|e| {
            let path = e.path().map(Path::to_path_buf).unwrap_or_else(|| root.to_path_buf());
            Error::io(path, e.into())
        })?;
        if !entry.file_type().is_file() || !has_image_extension(entry.path()) {
            continue;
        }
        let Some(label) = entry
            .path()
            .parent()
            .and_then(|p| p.file_name())
            .and_then(|n| class_from_dir(&n.to_string_lossy()))
        else {
            continue;
        };
        let rel = entry.path().strip_prefix(root).unwrap_or(entry.path());
        let id = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        candidates.push((id, entry.path().to_path_buf(), label));
    }

    let decoded = Execution::Parallel.map_slice(&candidates, |(_, path, _)| {
        Raster::load(path).map(|r| r.content_hash())
    });
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for ((id, path, label), hash) in candidates.into_iter().zip(decoded) {
        match hash {
            Ok(content_hash) => records.push(ImageRecord {
                id,
                path,
                label,
                source: Source::ChestXrayCorpus,
                split: Split::EvalExternal,
                content_hash,
            }),
            Err(e) => skipped.push(Skipped {
                path,
                reason: e.to_string(),
            }),
        }
    }
    finish(
        records,
        skipped,
        root,
        format!(
            "chest x-ray corpus at {}; all partitions merged into eval_external",
            root.display()
        ),
    )
}

/// The three class strings of the RSNA detailed class table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RsnaClass {
    LungOpacity,
    Normal,
    NoLungOpacityNotNormal,
}

impl RsnaClass {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "Lung Opacity" => Some(RsnaClass::LungOpacity),
            "Normal" => Some(RsnaClass::Normal),
            "No Lung Opacity / Not Normal" => Some(RsnaClass::NoLungOpacityNotNormal),
            _ => None,
        }
    }

    /// Lung Opacity is pneumonia, Normal is healthy, the third class is
    /// excluded from evaluation.
    pub fn label(self) -> Option<ClassLabel> {
        match self {
            RsnaClass::LungOpacity => Some(ClassLabel::Pneumonia),
            RsnaClass::Normal => Some(ClassLabel::Healthy),
            RsnaClass::NoLungOpacityNotNormal => None,
        }
    }
}

const ID_COLUMNS: &[&str] = &["patientid", "patient_id", "image_id", "imageid", "id"];
const CLASS_COLUMNS: &[&str] = &["class", "label", "class_name"];

fn find_column(headers: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    headers
        .iter()
        .position(|h| names.contains(&h.trim().to_ascii_lowercase().as_str()))
}

/// Parse the RSNA label table into (id, label) in first-seen order. Repeated
/// ids (one row per bounding box) collapse to one entry.
pub(crate) fn read_rsna_table(labels_table: &Path) -> Result<Vec<(String, ClassLabel)>> {
    let mut reader = csv::Reader::from_path(labels_table).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(labels_table, io),
        other => Error::invalid(format!("{}: {other:?}", labels_table.display())),
    })?;
    let headers = reader.headers()?.clone();
    let id_col = find_column(&headers, ID_COLUMNS)
        .ok_or_else(|| Error::invalid(format!("{}: no image id column", labels_table.display())))?;
    let class_col = find_column(&headers, CLASS_COLUMNS)
        .ok_or_else(|| Error::invalid(format!("{}: no class column", labels_table.display())))?;

    let mut order = Vec::new();
    let mut seen: HashMap<String, Option<ClassLabel>> = HashMap::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        // header is line 1
        let line = i + 2;
        let id = row.get(id_col).unwrap_or("").trim().to_string();
        let raw = row.get(class_col).unwrap_or("");
        let class = RsnaClass::parse(raw).ok_or_else(|| Error::UnmappedClass {
            row: line,
            value: raw.to_string(),
        })?;
        if id.is_empty() {
            return Err(Error::invalid(format!("empty image id at row {line}")));
        }
        let label = class.label();
        match seen.get(&id) {
            Some(prev) if *prev != label => {
                return Err(Error::invalid(format!(
                    "conflicting classes for id {id:?} at row {line}"
                )))
            }
            Some(_) => {}
            None => {
                seen.insert(id.clone(), label);
                order.push(id);
            }
        }
    }
    Ok(order
        .into_iter()
        .filter_map(|id| seen[&id].map(|l| (id, l)))
        .collect())
}

fn locate_rsna_image(images_dir: &Path, id: &str) -> Option<PathBuf> {
    ["dcm", "png", "jpg", "jpeg"]
        .iter()
        .map(|ext| images_dir.join(format!("{id}.{ext}")))
        .find(|p| p.is_file())
}

fn rsna_hash(path: &Path, decoder: &dyn MedicalDecoder) -> Result<ContentHash> {
    let is_dicom = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("dcm"));
    let raster = if is_dicom {
        to_gray8(&decoder.decode(path)?)?
    } else {
        Raster::load(path)?
    };
    Ok(raster.content_hash())
}

/// Ingest the RSNA pneumonia corpus. `Lung Opacity` rows become pneumonia,
/// `Normal` rows healthy; `No Lung Opacity / Not Normal` rows are dropped and
/// any other class string aborts with the offending row.
pub fn ingest_rsna(
    images_dir: &Path,
    labels_table: &Path,
    decoder: &dyn MedicalDecoder,
) -> Result<Ingested> {
    if !images_dir.is_dir() {
        return Err(Error::MissingRoot(images_dir.to_path_buf()));
    }
    let rows = read_rsna_table(labels_table)?;
    let mut located = Vec::with_capacity(rows.len());
    let mut skipped = Vec::new();
    for (id, label) in rows {
        match locate_rsna_image(images_dir, &id) {
            Some(path) => located.push((id, path, label)),
            None => skipped.push(Skipped {
                path: images_dir.join(format!("{id}.dcm")),
                reason: format!("no image file for id {id}"),
            }),
        }
    }
    let hashes = Execution::Parallel.map_slice(&located, |(_, path, _)| rsna_hash(path, decoder));
    let mut records = Vec::with_capacity(located.len());
    for ((id, path, label), hash) in located.into_iter().zip(hashes) {
        match hash {
            Ok(content_hash) => records.push(ImageRecord {
                id,
                path,
                label,
                source: Source::RsnaCorpus,
                split: Split::EvalExternal,
                content_hash,
            }),
            Err(e) => skipped.push(Skipped {
                path,
                reason: e.to_string(),
            }),
        }
    }
    finish(
        records,
        skipped,
        images_dir,
        format!(
            "rsna corpus at {} labels {}; Lung Opacity=pneumonia, Normal=healthy, \
             'No Lung Opacity / Not Normal' excluded; duplicate ids collapsed to one record",
            images_dir.display(),
            labels_table.display()
        ),
    )
}

fn finish(
    mut records: Vec<ImageRecord>,
    skipped: Vec<Skipped>,
    root: &Path,
    description: String,
) -> Result<Ingested> {
    if records.is_empty() {
        return Err(Error::NoRecords(root.to_path_buf()));
    }
    records.sort_by(|a, b| a.id.cmp(&b.id));
    let manifest = DatasetManifest::new(records, Provenance::new(description, 0))?;
    log::info!(
        "ingested {} records ({} healthy, {} pneumonia), {} skipped",
        manifest.len(),
        manifest.count(ClassLabel::Healthy),
        manifest.count(ClassLabel::Pneumonia),
        skipped.len()
    );
    Ok(Ingested { manifest, skipped })
}

#[cfg(test)]
mod tests {
    use super::super::medical::{MedicalPixels, Photometric};
    use super::*;
    use std::fs;

    fn write_png(path: &Path, v: u8) {
        Raster::from_gray_fn(4, 3, |y, x| v.wrapping_add((y * 3 + x) as u8))
            .save_png(path)
            .unwrap();
    }

    #[test]
    fn chest_xray_tally_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        for (i, sub) in ["train/NORMAL", "test/NORMAL"].iter().enumerate() {
            fs::create_dir_all(root.join(sub)).unwrap();
            write_png(&root.join(sub).join(format!("n{i}.png")), i as u8);
        }
        fs::create_dir_all(root.join("val/PNEUMONIA")).unwrap();
        for i in 0..3 {
            write_png(&root.join(format!("val/PNEUMONIA/p{i}.jpeg")), 50 + i);
        }
        // wrong name; ignored
        fs::create_dir_all(root.join("other")).unwrap();
        write_png(&root.join("other/x.png"), 1);

        let out = ingest_chest_xray_folder(root).unwrap();
        let m = &out.manifest;
        assert_eq!(m.len(), 5);
        assert_eq!(m.count(ClassLabel::Healthy), 2);
        assert_eq!(m.count(ClassLabel::Pneumonia), 3);
        assert!(m.records().iter().all(|r| r.split == Split::EvalExternal));
        assert_eq!(m.get("train/NORMAL/n0.png").unwrap().label, ClassLabel::Healthy);
        let ids: Vec<_> = m.records().iter().map(|r| r.id.as_str()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
        assert!(ids.contains(&"val/PNEUMONIA/p1.jpeg"));
    }

    #[test]
    fn unreadable_image_is_skipped_not_fatal() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("NORMAL")).unwrap();
        write_png(&dir.path().join("NORMAL/a.png"), 3);
        fs::write(dir.path().join("NORMAL/broken.png"), b"not a png").unwrap();
        let out = ingest_chest_xray_folder(dir.path()).unwrap();
        assert_eq!(out.manifest.len(), 1);
        assert_eq!(out.skipped.len(), 1);
        assert!(out.skipped[0].path.ends_with("broken.png"));
    }

    #[test]
    fn empty_root_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let err = ingest_chest_xray_folder(dir.path()).unwrap_err();
        assert!(err.to_string().contains("no records ingested"));
        assert!(matches!(
            ingest_chest_xray_folder(&dir.path().join("missing")),
            Err(Error::MissingRoot(_))
        ));
    }

    struct FakeDecoder;

    impl MedicalDecoder for FakeDecoder {
        fn decode(&self, path: &Path) -> Result<MedicalPixels> {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let v: u16 = text.trim().parse().map_err(|_| Error::Decode {
                path: path.to_path_buf(),
                message: "bad".into(),
            })?;
            Ok(MedicalPixels {
                rows: 2,
                columns: 2,
                samples: vec![0, v, v / 2, 4095],
                photometric: Photometric::BlackIsLow,
            })
        }
    }

    fn rsna_fixture(table: &str, ids: &[&str]) -> (tempfile::TempDir, PathBuf, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let images = dir.path().join("images");
        fs::create_dir_all(&images).unwrap();
        for (i, id) in ids.iter().enumerate() {
            fs::write(images.join(format!("{id}.dcm")), format!("{}", 100 + i * 10)).unwrap();
        }
        let csv = dir.path().join("labels.csv");
        fs::write(&csv, table).unwrap();
        (dir, images, csv)
    }

    #[test]
    fn rsna_maps_excludes_and_collapses() {
        let table = "patientId,class\n\
                     a,Lung Opacity\n\
                     a,Lung Opacity\n\
                     b,Normal\n\
                     c,No Lung Opacity / Not Normal\n\
                     d,Normal\n";
        let (_d, images, csv) = rsna_fixture(table, &["a", "b", "c"]);
        let out = ingest_rsna(&images, &csv, &FakeDecoder).unwrap();
        let m = &out.manifest;
        assert_eq!(m.len(), 2);
        assert_eq!(m.get("a").unwrap().label, ClassLabel::Pneumonia);
        assert_eq!(m.get("b").unwrap().label, ClassLabel::Healthy);
        assert!(m.get("c").is_none());
        // d has no file
        assert_eq!(out.skipped.len(), 1);
        assert!(out.skipped[0].reason.contains("d"));
    }

    #[test]
    fn rsna_unknown_class_names_row() {
        let table = "patientId,class\na,Normal\nb,Pleural Effusion\n";
        let (_d, images, csv) = rsna_fixture(table, &["a", "b"]);
        match ingest_rsna(&images, &csv, &FakeDecoder) {
            Err(Error::UnmappedClass { row, value }) => {
                assert_eq!(row, 3);
                assert_eq!(value, "Pleural Effusion");
            }
            other => panic!("expected unmapped class, got {other:?}"),
        }
    }
}
