use std::collections::HashSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::RawImage;
use crate::dataset::{ClassLabel, DatasetManifest, ImageRecord, Provenance, Source, Split};
use crate::error::{Error, Result};
use crate::raster::Raster;

/// Number of rows kept when the lower `fraction` of `height` rows is cut:
/// ceil(height · (1 − fraction)). A relative slack of 1e-9 absorbs binary
/// rounding of the fraction (0.3 is not exact in floating point).
pub(crate) fn kept_rows(height: usize, fraction: f64) -> usize {
    let exact = height as f64 * (1.0 - fraction);
    let keep = (exact - 1e-9 * exact.max(1.0)).ceil() as usize;
    keep.clamp(1, height)
}

/// Drop the lower `fraction` of the rows; the retained top rows are
/// bit-identical to the input.
pub fn crop_lower_fraction(image: &Raster, fraction: f64) -> Result<Raster> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::invalid(format!(
            "crop fraction {fraction} outside [0, 1)"
        )));
    }
    if image.height() < 2 {
        return Err(Error::invalid("crop needs an image at least 2 rows tall"));
    }
    Ok(image.top_rows(kept_rows(image.height(), fraction)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationConfig {
    pub crop_fraction: f64,
    pub source: Source,
    /// Allowed |healthy − pneumonia| after curation.
    pub balance_tolerance: usize,
    pub store_root: PathBuf,
    /// Prefix of generated record ids.
    pub id_prefix: String,
}

impl CurationConfig {
    pub fn new(store_root: impl Into<PathBuf>) -> Self {
        CurationConfig {
            crop_fraction: 0.30,
            source: Source::NanoBanana,
            balance_tolerance: 0,
            store_root: store_root.into(),
            id_prefix: "syn".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejection {
    /// Position in the input list.
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Curated {
    pub manifest: DatasetManifest,
    pub rejections: Vec<Rejection>,
    /// Input index of every manifest record, in manifest order.
    pub origins: Vec<usize>,
}

/// Crop, filter and store a list of generated images.
///
/// Images are processed in input order. Non-portrait inputs (checked before
/// cropping) and images whose cropped pixels duplicate an earlier survivor
/// are rejected. Survivors are written to `{store_root}/{class}/{id}.png`
/// with the provider metadata alongside in `{id}.json`.
pub fn curate_dataset(
    raw: &[(RawImage, ClassLabel)],
    cfg: &CurationConfig,
    seed: u64,
) -> Result<Curated> {
    if raw.is_empty() {
        return Err(Error::invalid("nothing to curate"));
    }
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    let mut rejections = Vec::new();
    let mut per_class = [0usize; 2];
    let mut origins = Vec::new();
    for (index, (img, label)) in raw.iter().enumerate() {
        if !img.pixels.is_portrait() {
            rejections.push(Rejection {
                index,
                reason: "not portrait".into(),
            });
            continue;
        }
        let cropped = crop_lower_fraction(&img.pixels, cfg.crop_fraction)?;
        let hash = cropped.content_hash();
        if !seen.insert(hash) {
            rejections.push(Rejection {
                index,
                reason: "duplicate".into(),
            });
            continue;
        }
        per_class[label.index()] += 1;
        let id = format!("{}-{}-{:04}", cfg.id_prefix, label, per_class[label.index()]);
        let path = cfg.store_root.join(label.as_str()).join(format!("{id}.png"));
        cropped.save_png(&path)?;
        let meta = path.with_extension("json");
        std::fs::write(&meta, &img.provider_metadata).map_err(|e| Error::io(&meta, e))?;
        origins.push(index);
        records.push(ImageRecord {
            id,
            path,
            label: *label,
            source: cfg.source,
            split: Split::Unassigned,
            content_hash: hash,
        });
    }
    for r in &rejections {
        log::info!("rejected input {}: {}", r.index, r.reason);
    }
    let [healthy, pneumonia] = per_class;
    if healthy.abs_diff(pneumonia) > cfg.balance_tolerance {
        return Err(Error::ClassImbalance { healthy, pneumonia });
    }
    let manifest = DatasetManifest::new(
        records,
        Provenance::new(
            format!(
                "curated {:?} images: lower {} of rows cropped, portrait-only, pixel duplicates removed",
                cfg.source, cfg.crop_fraction
            ),
            seed,
        ),
    )?;
    Ok(Curated {
        manifest,
        rejections,
        origins,
    })
}
