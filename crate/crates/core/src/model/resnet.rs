//! ResNet-50 (v1.5, stride in the 3×3 conv) with torchvision/timm tensor
//! names, so ImageNet weights exported as safetensors load directly.

use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};

use super::backbone::{Backbone, BackboneArch, BackboneDescriptor};
use super::nn::{Conv, FrozenBatchNorm, Init, State};
use crate::error::{Error, Result};

const LAYERS: [usize; 4] = [3, 4, 6, 3];
const WIDTHS: [usize; 4] = [64, 128, 256, 512];
const EXPANSION: usize = 4;
pub const RESNET50_D: usize = 2048;

#[derive(Debug)]
struct Bottleneck {
    conv1: Conv,
    bn1: FrozenBatchNorm,
    conv2: Conv,
    bn2: FrozenBatchNorm,
    conv3: Conv,
    bn3: FrozenBatchNorm,
    downsample: Option<(Conv, FrozenBatchNorm)>,
}

impl Bottleneck {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.bn1.forward(&self.conv1.forward(x)?)?.relu()?;
        let h = self.bn2.forward(&self.conv2.forward(&h)?)?.relu()?;
        let h = self.bn3.forward(&self.conv3.forward(&h)?)?;
        let skip = match &self.downsample {
            Some((c, bn)) => bn.forward(&c.forward(x)?)?,
            None => x.clone(),
        };
        Ok((h + skip)?.relu()?)
    }

    fn collect(&self, p: &str, out: &mut Vec<(String, Tensor)>) {
        self.conv1.collect(&format!("{p}.conv1"), out);
        self.bn1.collect(&format!("{p}.bn1"), out);
        self.conv2.collect(&format!("{p}.conv2"), out);
        self.bn2.collect(&format!("{p}.bn2"), out);
        self.conv3.collect(&format!("{p}.conv3"), out);
        self.bn3.collect(&format!("{p}.bn3"), out);
        if let Some((c, bn)) = &self.downsample {
            c.collect(&format!("{p}.downsample.0"), out);
            bn.collect(&format!("{p}.downsample.1"), out);
        }
    }

    fn vars(&self, out: &mut Vec<Var>) {
        for (c, bn) in [
            (&self.conv1, &self.bn1),
            (&self.conv2, &self.bn2),
            (&self.conv3, &self.bn3),
        ] {
            c.vars(out);
            bn.vars(out);
        }
        if let Some((c, bn)) = &self.downsample {
            c.vars(out);
            bn.vars(out);
        }
    }
}

/// Source of conv / batch-norm layers: fresh seeded init or stored tensors.
enum Builder<'a> {
    Init(Init),
    Load(&'a State),
}

impl Builder<'_> {
    fn conv(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Conv> {
        match self {
            Builder::Init(init) => Conv::init(init, cin, cout, k, stride, padding, false),
            Builder::Load(state) => Conv::load(state, name, [cout, cin, k, k], stride, padding, false),
        }
    }

    fn bn(&mut self, name: &str, c: usize) -> Result<FrozenBatchNorm> {
        match self {
            Builder::Init(init) => FrozenBatchNorm::init(init, c),
            Builder::Load(state) => FrozenBatchNorm::load(state, name, c),
        }
    }
}

#[derive(Debug)]
pub struct ResNet50 {
    conv1: Conv,
    bn1: FrozenBatchNorm,
    blocks: Vec<(String, Bottleneck)>,
    desc: BackboneDescriptor,
}

impl ResNet50 {
    fn build(mut b: Builder<'_>, corpus: String) -> Result<Self> {
        let conv1 = b.conv("conv1", 3, 64, 7, 2, 3)?;
        let bn1 = b.bn("bn1", 64)?;
        let mut blocks = Vec::new();
        let mut cin = 64;
        for (li, (&n, &width)) in LAYERS.iter().zip(&WIDTHS).enumerate() {
            for bi in 0..n {
                let p = format!("layer{}.{bi}", li + 1);
                let stride = if bi == 0 && li > 0 { 2 } else { 1 };
                let cout = width * EXPANSION;
                let downsample = if bi == 0 {
                    Some((
                        b.conv(&format!("{p}.downsample.0"), cin, cout, 1, stride, 0)?,
                        b.bn(&format!("{p}.downsample.1"), cout)?,
                    ))
                } else {
                    None
                };
                let block = Bottleneck {
                    conv1: b.conv(&format!("{p}.conv1"), cin, width, 1, 1, 0)?,
                    bn1: b.bn(&format!("{p}.bn1"), width)?,
                    conv2: b.conv(&format!("{p}.conv2"), width, width, 3, stride, 1)?,
                    bn2: b.bn(&format!("{p}.bn2"), width)?,
                    conv3: b.conv(&format!("{p}.conv3"), width, cout, 1, 1, 0)?,
                    bn3: b.bn(&format!("{p}.bn3"), cout)?,
                    downsample,
                };
                blocks.push((p, block));
                cin = cout;
            }
        }
        Ok(ResNet50 {
            conv1,
            bn1,
            blocks,
            desc: BackboneDescriptor {
                name: "resnet50".into(),
                d: RESNET50_D,
                pretrained_corpus: corpus,
                arch: BackboneArch::Resnet50,
            },
        })
    }

    /// Seeded random weights (identity batch-norm statistics).
    pub fn random(seed: u64, device: &Device) -> Result<Self> {
        Self::build(
            Builder::Init(Init::new(seed, DType::F32, device)),
            format!("none (seeded random init {seed})"),
        )
    }

    pub fn load(state: &State, corpus: String) -> Result<Self> {
        Self::build(Builder::Load(state), corpus)
    }

    /// Load torchvision/timm-named weights from a safetensors file. Extra
    /// tensors (the original `fc` classifier) are ignored.
    pub fn from_safetensors(path: &Path, corpus: &str, device: &Device) -> Result<Self> {
        if !path.exists() {
            return Err(Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "weights file not found"),
            ));
        }
        let state: State = candle_core::safetensors::load(path, device)?;
        Self::load(&state, corpus.to_string())
    }
}

impl Backbone for ResNet50 {
    fn descriptor(&self) -> &BackboneDescriptor {
        &self.desc
    }

    fn forward_maps(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.bn1.forward(&self.conv1.forward(x)?)?.relu()?;
        // post-ReLU activations are >= 0, so zero padding matches -inf padding
        let h = h.pad_with_zeros(2, 1, 1)?.pad_with_zeros(3, 1, 1)?;
        let mut h = h.max_pool2d_with_stride(3, 2)?;
        for (_, block) in &self.blocks {
            h = block.forward(&h)?;
        }
        Ok(h)
    }

    fn trainable(&self) -> Vec<Var> {
        let mut v = Vec::new();
        self.conv1.vars(&mut v);
        self.bn1.vars(&mut v);
        for (_, b) in &self.blocks {
            b.vars(&mut v);
        }
        v
    }

    fn state(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.conv1.collect("conv1", &mut out);
        self.bn1.collect("bn1", &mut out);
        for (p, b) in &self.blocks {
            b.collect(p, &mut out);
        }
        out
    }
}
