//! Backbone + two-layer head classifier: training, selection, checkpoints,
//! inference, feature extraction and Grad-CAM.

use candle_core::{DType, Device, Tensor, Var};

use crate::dataset::ImageRecord;
use crate::error::{Error, Result};
use crate::preprocess::{resize_normalize, ModelInput, INPUT_SIZE};
use crate::raster::Raster;

mod backbone;
mod cam;
mod checkpoint;
mod head;
mod infer;
pub(crate) mod nn;
mod resnet;
mod train;

pub use backbone::{load_backbone, Backbone, BackboneArch, BackboneDescriptor, StubCnn, STUB_WIDTHS};
pub use cam::{cam_from_maps, grad_cam, CamMap, CamTarget};
pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use head::{Head, NUM_CLASSES};
pub use infer::{extract_features, predict_proba, predict_proba_inputs};
pub use nn::State;
pub use resnet::{ResNet50, RESNET50_D};
pub use train::{
    read_epoch_log, select_best_epoch, train, EpochLog, SelectionMetric, TrainConfig, TrainOutcome,
};

pub const DEFAULT_HIDDEN_WIDTH: usize = 512;

/// Backbone plus classification head. Parameters live in candle `Var`s and
/// are updated in place by training.
pub struct ClassifierModel {
    backbone: Box<dyn Backbone>,
    head: Head,
    head_seed: u64,
}

impl std::fmt::Debug for ClassifierModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClassifierModel")
            .field("backbone", self.backbone.descriptor())
            .field("hidden", &self.head.hidden_width())
            .finish()
    }
}

pub struct Forward {
    pub maps: Tensor,
    pub pooled: Tensor,
    pub logits: Tensor,
}

/// Attach a freshly initialized head to `backbone`. The backbone's declared
/// feature width is checked against a dry run.
pub fn build_model(
    backbone: Box<dyn Backbone>,
    hidden_width: usize,
    seed: u64,
) -> Result<ClassifierModel> {
    if hidden_width == 0 {
        return Err(Error::invalid("hidden_width must be at least 1"));
    }
    let d = backbone.descriptor().d;
    let probe = Tensor::zeros((1, 3, 64, 64), DType::F32, &device())?;
    let actual = backbone.pooled(&probe)?.dim(1)?;
    if actual != d {
        return Err(Error::invalid(format!(
            "backbone {} declares d = {d} but produces {actual} features",
            backbone.descriptor().name
        )));
    }
    let head = Head::new(d, hidden_width, seed, DType::F32, &device())?;
    Ok(ClassifierModel {
        backbone,
        head,
        head_seed: seed,
    })
}

pub fn device() -> Device {
    Device::Cpu
}

impl ClassifierModel {
    pub fn descriptor(&self) -> &BackboneDescriptor {
        self.backbone.descriptor()
    }

    pub fn backbone(&self) -> &dyn Backbone {
        self.backbone.as_ref()
    }

    pub fn head(&self) -> &Head {
        &self.head
    }

    pub fn hidden_width(&self) -> usize {
        self.head.hidden_width()
    }

    pub fn head_seed(&self) -> u64 {
        self.head_seed
    }

    pub fn forward(&self, x: &Tensor) -> Result<Forward> {
        let maps = self.backbone.forward_maps(x)?;
        let pooled = nn::global_avg_pool(&maps)?;
        let logits = self.head.forward(&pooled)?;
        Ok(Forward {
            maps,
            pooled,
            logits,
        })
    }

    pub fn trainable_vars(&self) -> Vec<Var> {
        let mut v = self.backbone.trainable();
        v.extend(self.head.vars());
        v
    }

    /// Every tensor of the model, prefixed `backbone.` / `head.`.
    pub fn state(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self
            .backbone
            .state()
            .into_iter()
            .map(|(n, t)| (format!("backbone.{n}"), t))
            .collect();
        out.extend(
            self.head
                .state()
                .into_iter()
                .map(|(n, t)| (format!("head.{n}"), t)),
        );
        out
    }

    pub(crate) fn from_state(
        desc: &BackboneDescriptor,
        hidden_width: usize,
        head_seed: u64,
        state: &State,
    ) -> Result<Self> {
        let strip = |prefix: &str| -> State {
            state
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
                .collect()
        };
        let backbone = load_backbone(desc, &strip("backbone."))?;
        let head = Head::load(&strip("head."), desc.d, hidden_width)?;
        Ok(ClassifierModel {
            backbone,
            head,
            head_seed,
        })
    }
}

/// Decode and preprocess one record for evaluation (no augmentation).
pub fn load_input(record: &ImageRecord) -> Result<ModelInput> {
    let raster = load_raster(record)?;
    Ok(resize_normalize(&raster, record.id.clone()))
}

pub(crate) fn load_raster(record: &ImageRecord) -> Result<Raster> {
    Raster::load(&record.path).map_err(|e| Error::Record {
        id: record.id.clone(),
        source: Box::new(e),
    })
}

/// Stack inputs into a `[B, 3, 224, 224]` tensor.
pub fn stack_inputs(inputs: &[&ModelInput]) -> Result<Tensor> {
    let mut flat = Vec::with_capacity(inputs.len() * ModelInput::LEN);
    for i in inputs {
        if i.tensor.len() != ModelInput::LEN {
            return Err(Error::invalid(format!(
                "input {} has {} values, expected {}",
                i.record_id,
                i.tensor.len(),
                ModelInput::LEN
            )));
        }
        flat.extend_from_slice(&i.tensor);
    }
    Ok(Tensor::from_vec(
        flat,
        (inputs.len(), 3, INPUT_SIZE, INPUT_SIZE),
        &device(),
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_checks_hidden_width() {
        let b = StubCnn::new(0, &device()).unwrap();
        assert!(build_model(Box::new(b), 0, 0).is_err());
    }

    #[test]
    fn resnet_head_maps_2048_to_512_to_2() {
        let b = ResNet50::random(0, &device()).unwrap();
        let m = build_model(Box::new(b), 512, 0).unwrap();
        let x = Tensor::zeros((1, 3, INPUT_SIZE, INPUT_SIZE), DType::F32, &device()).unwrap();
        let out = m.forward(&x).unwrap();
        assert_eq!(out.maps.dims(), &[1, 2048, 7, 7]);
        assert_eq!(out.pooled.dims(), &[1, 2048]);
        assert_eq!(out.logits.dims(), &[1, 2]);
    }

    struct Liar(StubCnn, BackboneDescriptor);

    impl Backbone for Liar {
        fn descriptor(&self) -> &BackboneDescriptor {
            &self.1
        }
        fn forward_maps(&self, x: &Tensor) -> Result<Tensor> {
            self.0.forward_maps(x)
        }
        fn trainable(&self) -> Vec<Var> {
            self.0.trainable()
        }
        fn state(&self) -> Vec<(String, Tensor)> {
            self.0.state()
        }
    }

    #[test]
    fn descriptor_mismatch_is_fatal() {
        let stub = StubCnn::new(0, &device()).unwrap();
        let desc = BackboneDescriptor {
            d: 2048,
            ..stub.descriptor().clone()
        };
        assert!(build_model(Box::new(Liar(stub, desc)), 8, 0).is_err());
    }
}
