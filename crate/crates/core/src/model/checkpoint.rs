//! Self-describing checkpoint container.
//!
//! Layout: 8-byte magic, u32 LE format version, u64 LE header length, JSON
//! header (metadata plus a tensor table), then raw little-endian f32 blobs at
//! the offsets recorded in the table.

use std::path::Path;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use super::backbone::BackboneDescriptor;
use super::nn::State;
use super::train::{SelectionMetric, TrainConfig};
use super::{device, ClassifierModel};
use crate::dataset::Provenance;
use crate::error::{Error, Result};
use crate::preprocess::AugmentConfig;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CXRCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Selected epoch (1-based); 0 for a model that was never trained.
    pub epoch: usize,
    pub val_metric: Option<f64>,
    pub selection_metric: Option<SelectionMetric>,
    pub train_config: Option<TrainConfig>,
    pub augment: Option<AugmentConfig>,
    pub provenance: Option<Provenance>,
    pub backbone: BackboneDescriptor,
    pub hidden_width: usize,
    pub head_seed: u64,
}

impl CheckpointMeta {
    pub(crate) fn trained(
        model: &ClassifierModel,
        epoch: usize,
        val_metric: f64,
        cfg: TrainConfig,
        aug: AugmentConfig,
        provenance: Provenance,
    ) -> Self {
        CheckpointMeta {
            epoch,
            val_metric: Some(val_metric),
            selection_metric: Some(cfg.selection_metric),
            train_config: Some(cfg),
            augment: Some(aug),
            provenance: Some(provenance),
            backbone: model.descriptor().clone(),
            hidden_width: model.hidden_width(),
            head_seed: model.head_seed(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset from the start of the blob section.
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(meta: CheckpointMeta, tensors: Vec<(String, Tensor)>) -> Self {
        Checkpoint { meta, tensors }
    }

    /// Snapshot of an untrained model (e.g. a pretrained backbone with a
    /// fresh head).
    pub fn untrained(model: &ClassifierModel) -> Result<Self> {
        let tensors = model
            .state()
            .into_iter()
            .map(|(n, t)| Ok((n, t.copy()?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Checkpoint {
            meta: CheckpointMeta {
                epoch: 0,
                val_metric: None,
                selection_metric: None,
                train_config: None,
                augment: None,
                provenance: None,
                backbone: model.descriptor().clone(),
                hidden_width: model.hidden_width(),
                head_seed: model.head_seed(),
            },
            tensors,
        })
    }

    pub fn tensor_names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    /// Independent model instance holding a copy of the stored parameters.
    pub fn model(&self) -> Result<ClassifierModel> {
        let state: State = self.tensors.iter().cloned().collect();
        ClassifierModel::from_state(
            &self.meta.backbone,
            self.meta.hidden_width,
            self.meta.head_seed,
            &state,
        )
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut blobs = Vec::new();
        for (name, t) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.dims().to_vec(),
                offset: blobs.len() as u64,
            });
            for v in t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()? {
                blobs.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = serde_json::to_vec(&Header {
            meta: self.meta.clone(),
            tensors: entries,
        })?;
        let mut out = Vec::with_capacity(20 + header.len() + blobs.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&blobs);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("missing checkpoint magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = 20usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[20..header_end])?;
        let blobs = &bytes[header_end..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start + 4 * n;
            if end > blobs.len() {
                return Err(Error::Checkpoint(format!("tensor {} out of bounds", e.name)));
            }
            let values: Vec<f32> = blobs[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push((e.name, Tensor::from_vec(values, e.shape, &device())?));
        }
        Ok(Checkpoint {
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
