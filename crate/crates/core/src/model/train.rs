use std::io::Write;
use std::path::Path;
use std::time::Instant;

use candle_core::Tensor;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointMeta};
use super::infer::predict_proba_inputs;
use super::{device, load_input, load_raster, stack_inputs, ClassifierModel};
use crate::dataset::{ClassLabel, DatasetManifest};
use crate::error::{Error, Result};
use crate::metrics::{auroc, ScoredLabels};
use crate::par::Execution;
use crate::preprocess::{augment, item_rng, normalize, AugmentConfig, ModelInput};
use crate::raster::Raster;

/// Named trainable tensors captured at the best epoch.
type Snapshot = Vec<(String, Tensor)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    AurocVal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub selection_metric: SelectionMetric,
    /// Where augmentation and decoding run; never changes results.
    #[serde(default)]
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            learning_rate: 5e-5,
            batch_size: 16,
            seed: 0,
            selection_metric: SelectionMetric::AurocVal,
            execution: Execution::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        Ok(())
    }
}

/// One line of the JSON-lines training log. Epochs are numbered from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auroc: f64,
    pub wall_time_s: f64,
}

pub fn read_epoch_log(path: &Path) -> Result<Vec<EpochLog>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// Index of the best value; the earliest wins ties and NaN never wins.
pub fn select_best_epoch(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

fn check_split(m: &DatasetManifest, name: &str) -> Result<()> {
    if m.is_empty() {
        return Err(Error::Split(format!("empty {name} split")));
    }
    if m.count(ClassLabel::Healthy) == 0 || m.count(ClassLabel::Pneumonia) == 0 {
        return Err(Error::Split(format!("single-class {name} split")));
    }
    Ok(())
}

fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Fine-tune `model` in place with Adam (no weight decay, fixed learning
/// rate) on cross-entropy over augmented training images, evaluating
/// validation AUROC after every epoch. Returns the checkpoint of the best
/// epoch together with the full log; when `log_path` is given each epoch is
/// appended there as it finishes.
pub fn train(
    model: &ClassifierModel,
    train_set: &DatasetManifest,
    val_set: &DatasetManifest,
    cfg: &TrainConfig,
    aug: &AugmentConfig,
    log_path: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    aug.validate()?;
    check_split(train_set, "training")?;
    check_split(val_set, "validation")?;
    let exec = cfg.execution;

    let rasters: Vec<Raster> = exec.try_map_slice(train_set.records(), load_raster)?;
    let targets: Vec<u32> = train_set.records().iter().map(|r| r.label.index() as u32).collect();
    let val_inputs: Vec<ModelInput> = exec.try_map_slice(val_set.records(), load_input)?;
    let val_labels = val_set.labels();

    let mut log_file = match log_path {
        Some(p) => {
            if let Some(dir) = p.parent() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            Some((std::fs::File::create(p).map_err(|e| Error::io(p, e))?, p))
        }
        None => None,
    };

    let mut opt = AdamW::new(
        model.trainable_vars(),
        ParamsAdamW {
            lr: cfg.learning_rate,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;

    let ids: Vec<&str> = train_set.records().iter().map(|r| r.id.as_str()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, Snapshot)> = None;
    let started = Instant::now();

    for epoch in 1..=cfg.epochs {
        let order = epoch_order(cfg.seed, epoch, rasters.len());
        let (mut loss_sum, mut seen) = (0.0f64, 0usize);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let inputs: Vec<ModelInput> = exec.map_slice(batch, |&i| {
                let mut rng = item_rng(cfg.seed, epoch, ids[i]);
                normalize(&augment(&rasters[i], aug, &mut rng), ids[i])
            });
            let refs: Vec<&ModelInput> = inputs.iter().collect();
            let x = stack_inputs(&refs)?;
            let y_vals: Vec<u32> = batch.iter().map(|&i| targets[i]).collect();
            let y = Tensor::new(y_vals.as_slice(), &device())?;
            let logits = model.forward(&x)?.logits;
            let loss = candle_nn::loss::cross_entropy(&logits, &y)?;
            let value = loss.to_scalar::<f32>()? as f64;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            opt.backward_step(&loss)?;
            loss_sum += value * batch.len() as f64;
            seen += batch.len();
        }

        let scores = predict_proba_inputs(model, &val_inputs)?;
        let val_auroc = auroc(&ScoredLabels::new(scores, val_labels.clone())?)?;
        let entry = EpochLog {
            epoch,
            train_loss: loss_sum / seen as f64,
            val_auroc,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}/{}: loss {:.5}, val AUROC {:.4}",
            cfg.epochs,
            entry.train_loss,
            entry.val_auroc
        );
        if let Some((f, p)) = log_file.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&entry)?).map_err(|e| Error::io(*p, e))?;
        }
        log.push(entry);

        if best.as_ref().is_none_or(|(_, b, _)| val_auroc > *b) {
            let snapshot = model
                .state()
                .into_iter()
                .map(|(n, t)| Ok((n, t.copy()?)))
                .collect::<Result<Vec<_>>>()?;
            best = Some((epoch, val_auroc, snapshot));
        }
    }

    let (epoch, val_metric, tensors) = best.expect("at least one epoch ran");
    debug_assert_eq!(
        select_best_epoch(&log.iter().map(|e| e.val_auroc).collect::<Vec<_>>()),
        Some(epoch - 1)
    );
    let meta = CheckpointMeta::trained(
        model,
        epoch,
        val_metric,
        cfg.clone(),
        *aug,
        train_set.provenance().clone(),
    );
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(meta, tensors),
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_is_earliest_argmax() {
        assert_eq!(select_best_epoch(&[0.5, 0.9, 0.7, 0.9]), Some(1));
        assert_eq!(select_best_epoch(&[1.0, 1.0]), Some(0));
        assert_eq!(select_best_epoch(&[f64::NAN, 0.2, 0.1]), Some(1));
        assert_eq!(select_best_epoch(&[]), None);
    }

    #[test]
    fn epoch_orders_are_permutations_and_differ() {
        let a = epoch_order(1, 1, 50);
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_ne!(a, epoch_order(1, 2, 50));
        assert_eq!(a, epoch_order(1, 1, 50));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
    }
}
