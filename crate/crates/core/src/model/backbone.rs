use candle_core::{DType, Device, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::nn::{global_avg_pool, Conv, Init, State};
use super::resnet::ResNet50;
use crate::error::{Error, Result};

/// Architecture needed to rebuild a backbone from stored tensors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case")]
pub enum BackboneArch {
    Stub { widths: [usize; 3] },
    Resnet50,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneDescriptor {
    pub name: String,
    /// Width of the pooled feature vector.
    pub d: usize,
    pub pretrained_corpus: String,
    pub arch: BackboneArch,
}

/// Convolutional feature extractor. `forward_maps` returns the last
/// convolutional feature maps `[B, K, h, w]`; pooled features are their
/// spatial mean, so `d == K`.
pub trait Backbone: Send + Sync {
    fn descriptor(&self) -> &BackboneDescriptor;

    fn forward_maps(&self, x: &Tensor) -> Result<Tensor>;

    fn pooled(&self, x: &Tensor) -> Result<Tensor> {
        global_avg_pool(&self.forward_maps(x)?)
    }

    fn trainable(&self) -> Vec<Var>;

    /// All tensors needed to rebuild the backbone, trainable or not.
    fn state(&self) -> Vec<(String, Tensor)>;

    /// Whether gradients can flow from the output back to the feature maps.
    fn differentiable(&self) -> bool {
        true
    }
}

/// Rebuild a backbone of the given architecture from named tensors.
pub fn load_backbone(desc: &BackboneDescriptor, state: &State) -> Result<Box<dyn Backbone>> {
    let b: Box<dyn Backbone> = match desc.arch {
        BackboneArch::Stub { widths } => Box::new(StubCnn::load(state, widths, desc.clone())?),
        BackboneArch::Resnet50 => Box::new(ResNet50::load(state, desc.pretrained_corpus.clone())?),
    };
    if b.descriptor().d != desc.d {
        return Err(Error::Checkpoint(format!(
            "descriptor d = {} but architecture yields {}",
            desc.d,
            b.descriptor().d
        )));
    }
    Ok(b)
}

/// Small seeded CNN with the backbone contract, for tests and offline runs.
///
/// 224 input -> 4×4 average pool -> three 3×3 conv + ReLU layers (the last
/// two with stride 2) -> `[B, widths[2], 14, 14]` maps.
#[derive(Debug)]
pub struct StubCnn {
    convs: [Conv; 3],
    desc: BackboneDescriptor,
}

const HE: f64 = 2.449_489_742_783_178;

pub const STUB_WIDTHS: [usize; 3] = [16, 32, 64];

impl StubCnn {
    pub fn new(seed: u64, device: &Device) -> Result<Self> {
        Self::with_widths(seed, STUB_WIDTHS, device)
    }

    pub fn with_widths(seed: u64, widths: [usize; 3], device: &Device) -> Result<Self> {
        let mut init = Init::new(seed, DType::F32, device);
        let convs = [
            Conv::init_gain(&mut init, 3, widths[0], 3, 1, 1, true, HE)?,
            Conv::init_gain(&mut init, widths[0], widths[1], 3, 2, 1, true, HE)?,
            Conv::init_gain(&mut init, widths[1], widths[2], 3, 2, 1, true, HE)?,
        ];
        Ok(StubCnn {
            convs,
            desc: Self::descriptor_for(widths, format!("seeded random init ({seed})")),
        })
    }

    fn descriptor_for(widths: [usize; 3], corpus: String) -> BackboneDescriptor {
        BackboneDescriptor {
            name: "stub_cnn".into(),
            d: widths[2],
            pretrained_corpus: corpus,
            arch: BackboneArch::Stub { widths },
        }
    }

    fn load(state: &State, widths: [usize; 3], desc: BackboneDescriptor) -> Result<Self> {
        let shapes = [
            [widths[0], 3, 3, 3],
            [widths[1], widths[0], 3, 3],
            [widths[2], widths[1], 3, 3],
        ];
        let strides = [1, 2, 2];
        let mut convs = Vec::with_capacity(3);
        for i in 0..3 {
            convs.push(Conv::load(state, &format!("conv{i}"), shapes[i], strides[i], 1, true)?);
        }
        let convs: [Conv; 3] = convs.try_into().expect("three layers");
        Ok(StubCnn {
            convs,
            desc: BackboneDescriptor {
                d: widths[2],
                ..desc
            },
        })
    }
}

impl Backbone for StubCnn {
    fn descriptor(&self) -> &BackboneDescriptor {
        &self.desc
    }

    fn forward_maps(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.avg_pool2d(4)?;
        for c in &self.convs {
            h = c.forward(&h)?.relu()?;
        }
        Ok(h)
    }

    fn trainable(&self) -> Vec<Var> {
        let mut v = Vec::new();
        for c in &self.convs {
            c.vars(&mut v);
        }
        v
    }

    fn state(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            c.collect(&format!("conv{i}"), &mut out);
        }
        out
    }
}
