use super::{load_input, stack_inputs, ClassifierModel};
use crate::dataset::DatasetManifest;
use crate::error::Result;
use crate::par::Execution;
use crate::preprocess::ModelInput;
use crate::representation::FeatureMatrix;

pub(crate) const INFER_BATCH: usize = 16;

/// P(pneumonia) from two logits, computed so that the healthy probability is
/// exactly `1 - p`.
pub(crate) fn pneumonia_probability(l0: f32, l1: f32) -> f64 {
    1.0 / (1.0 + (l0 as f64 - l1 as f64).exp())
}

/// Scores for preprocessed inputs, in input order.
pub fn predict_proba_inputs(model: &ClassifierModel, inputs: &[ModelInput]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(INFER_BATCH) {
        let refs: Vec<&ModelInput> = chunk.iter().collect();
        let logits = model.forward(&stack_inputs(&refs)?)?.logits.to_vec2::<f32>()?;
        out.extend(logits.iter().map(|l| pneumonia_probability(l[0], l[1])));
    }
    Ok(out)
}

fn for_each_batch(
    manifest: &DatasetManifest,
    exec: Execution,
    mut f: impl FnMut(&[ModelInput]) -> Result<()>,
) -> Result<()> {
    for chunk in manifest.records().chunks(INFER_BATCH) {
        let inputs = exec.try_map_slice(chunk, load_input)?;
        f(&inputs)?;
    }
    Ok(())
}

/// `(record_id, P(pneumonia))` in manifest order. Decoding runs on the
/// execution pool; the forward passes are batched in order.
pub fn predict_proba(
    model: &ClassifierModel,
    manifest: &DatasetManifest,
    exec: Execution,
) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::with_capacity(manifest.len());
    for_each_batch(manifest, exec, |inputs| {
        let scores = predict_proba_inputs(model, inputs)?;
        out.extend(inputs.iter().map(|i| i.record_id.clone()).zip(scores));
        Ok(())
    })?;
    Ok(out)
}

/// Pooled backbone features (the head's input), one row per record.
pub fn extract_features(
    model: &ClassifierModel,
    manifest: &DatasetManifest,
    model_tag: &str,
    exec: Execution,
) -> Result<FeatureMatrix> {
    let d = model.descriptor().d;
    let mut data = Vec::with_capacity(manifest.len() * d);
    let mut ids = Vec::with_capacity(manifest.len());
    for_each_batch(manifest, exec, |inputs| {
        let refs: Vec<&ModelInput> = inputs.iter().collect();
        let pooled = model.backbone().pooled(&stack_inputs(&refs)?)?;
        for row in pooled.to_vec2::<f32>()? {
            data.extend(row.into_iter().map(f64::from));
        }
        ids.extend(inputs.iter().map(|i| i.record_id.clone()));
        Ok(())
    })?;
    FeatureMatrix::new(data, d, ids, model_tag)
}
