use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use super::infer::pneumonia_probability;
use super::nn::global_avg_pool;
use super::{stack_inputs, ClassifierModel};
use crate::dataset::ClassLabel;
use crate::error::{Error, Result};
use crate::preprocess::{resize_plane, ModelInput, INPUT_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CamTarget {
    #[default]
    Predicted,
    Class(ClassLabel),
}

/// Grad-CAM heat map on the model input grid, values in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CamMap {
    pub record_id: String,
    pub target_class: ClassLabel,
    /// P(pneumonia) of the explained input.
    pub score: f64,
    pub height: usize,
    pub width: usize,
    /// Row-major.
    pub values: Vec<f32>,
}

impl CamMap {
    pub fn at(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }
}

/// Grad-CAM from feature maps `A` and gradients `∂y/∂A`, both `[k, h, w]`
/// row-major: `relu(Σ_k mean(∂y/∂A_k) · A_k)`, bilinearly upsampled to
/// `out_h × out_w` and min-max normalized. A map that is identically zero
/// after the ReLU stays zero.
pub fn cam_from_maps(
    maps: &[f32],
    grads: &[f32],
    k: usize,
    h: usize,
    w: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<f32> {
    let plane = h * w;
    assert_eq!(maps.len(), k * plane, "maps size");
    assert_eq!(grads.len(), k * plane, "grads size");
    let mut raw = vec![0f64; plane];
    for c in 0..k {
        let g = &grads[c * plane..(c + 1) * plane];
        let weight = g.iter().map(|&v| v as f64).sum::<f64>() / plane as f64;
        if weight == 0.0 {
            continue;
        }
        for (r, &a) in raw.iter_mut().zip(&maps[c * plane..(c + 1) * plane]) {
            *r += weight * a as f64;
        }
    }
    let raw: Vec<f32> = raw.into_iter().map(|v| v.max(0.0) as f32).collect();
    if raw.iter().all(|&v| v == 0.0) {
        return vec![0.0; out_h * out_w];
    }
    let up = resize_plane(&raw, h, w, out_h, out_w);
    let (lo, hi) = up
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi <= lo {
        return vec![1.0; out_h * out_w];
    }
    up.into_iter()
        .map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
        .collect()
}

/// Grad-CAM over the backbone's last convolutional maps for one input.
pub fn grad_cam(model: &ClassifierModel, input: &ModelInput, target: CamTarget) -> Result<CamMap> {
    if !model.backbone().differentiable() {
        return Err(Error::NotDifferentiable(model.descriptor().name.clone()));
    }
    let x = stack_inputs(&[input])?;
    let maps = model.backbone().forward_maps(&x)?.detach();
    let (_, k, h, w) = maps.dims4()?;
    let a = Var::from_tensor(&maps)?;
    let logits = model.head().forward(&global_avg_pool(a.as_tensor())?)?;
    let l = logits.to_vec2::<f32>()?;
    let score = pneumonia_probability(l[0][0], l[0][1]);
    let class = match target {
        CamTarget::Class(c) => c,
        CamTarget::Predicted if score > 0.5 => ClassLabel::Pneumonia,
        CamTarget::Predicted => ClassLabel::Healthy,
    };
    let y: Tensor = logits.get(0)?.get(class.index())?;
    let grads = y.backward()?;
    let g = grads
        .get(a.as_tensor())
        .ok_or_else(|| Error::NotDifferentiable(model.descriptor().name.clone()))?;
    let flat = |t: &Tensor| -> Result<Vec<f32>> { Ok(t.flatten_all()?.to_vec1::<f32>()?) };
    let values = cam_from_maps(
        &flat(a.as_tensor())?,
        &flat(g)?,
        k,
        h,
        w,
        INPUT_SIZE,
        INPUT_SIZE,
    );
    Ok(CamMap {
        record_id: input.record_id.clone(),
        target_class: class,
        score,
        height: INPUT_SIZE,
        width: INPUT_SIZE,
        values,
    })
}
