use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cxrsynth::dataset::SplitSizes;
use cxrsynth::metrics::BootstrapConfig;
use cxrsynth::model::TrainConfig;
use cxrsynth::preprocess::AugmentConfig;
use cxrsynth::representation::EmbedMethod;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Where curated images go; defaults to `store/` inside the run directory.
    pub curated_store: Option<PathBuf>,
    pub chest_xray_root: Option<PathBuf>,
    pub rsna_images: Option<PathBuf>,
    pub rsna_labels: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            curated_store: None,
            chest_xray_root: None,
            rsna_images: None,
            rsna_labels: None,
            output_dir: PathBuf::from("runs"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderConfig {
    #[default]
    Stub,
    /// Token comes from the environment only.
    Remote { endpoint: String, name: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackboneConfig {
    #[default]
    Stub,
    /// torchvision-named safetensors weights.
    Resnet50 { weights: PathBuf, corpus: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Single seed for every stochastic stage; copied into `train.seed`.
    pub seed: u64,
    pub paths: Paths,
    pub crop_fraction: f64,
    pub images_per_class: usize,
    pub generation_batch: usize,
    pub split: SplitSizes,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub bootstrap: BootstrapConfig,
    pub provider: ProviderConfig,
    pub backbone: BackboneConfig,
    pub hidden_width: usize,
    pub model_tag: String,
    pub kmeans_restarts: usize,
    pub standardize_features: bool,
    pub embed_method: EmbedMethod,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            paths: Paths::default(),
            crop_fraction: 0.30,
            images_per_class: 150,
            generation_batch: 10,
            split: SplitSizes::default(),
            train: TrainConfig::default(),
            augment: AugmentConfig::default(),
            bootstrap: BootstrapConfig::default(),
            provider: ProviderConfig::Stub,
            backbone: BackboneConfig::Stub,
            hidden_width: cxrsynth::model::DEFAULT_HIDDEN_WIDTH,
            model_tag: "cropped".into(),
            kmeans_restarts: 10,
            standardize_features: false,
            embed_method: EmbedMethod::NeighborhoodUmapStyle,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Apply global overrides and propagate the seed.
    pub fn effective(mut self, seed: Option<u64>, output_dir: Option<PathBuf>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(d) = output_dir {
            self.paths.output_dir = d;
        }
        self.train.seed = self.seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.crop_fraction) {
            bail!("crop_fraction {} outside [0, 1)", self.crop_fraction);
        }
        if self.images_per_class == 0 || self.generation_batch == 0 {
            bail!("images_per_class and generation_batch must be positive");
        }
        if self.hidden_width == 0 || self.kmeans_restarts == 0 {
            bail!("hidden_width and kmeans_restarts must be positive");
        }
        if self.model_tag.is_empty() || self.model_tag.contains(['/', '\\']) {
            bail!("model_tag {:?} must be a non-empty file-name-safe string", self.model_tag);
        }
        self.train.validate()?;
        self.augment.validate()?;
        if self.bootstrap.n_boot == 0 || !(0.0 < self.bootstrap.alpha && self.bootstrap.alpha < 1.0) {
            bail!("bootstrap needs n_boot >= 1 and alpha in (0, 1)");
        }
        let inputs = [
            ("paths.chest_xray_root", self.paths.chest_xray_root.as_deref()),
            ("paths.rsna_images", self.paths.rsna_images.as_deref()),
            ("paths.rsna_labels", self.paths.rsna_labels.as_deref()),
        ];
        for (name, p) in inputs {
            if let Some(p) = p {
                if !p.exists() {
                    bail!("{name}: {} does not exist", p.display());
                }
            }
        }
        if let BackboneConfig::Resnet50 { weights, .. } = &self.backbone {
            if !weights.exists() {
                bail!("backbone.weights: {} does not exist", weights.display());
            }
        }
        Ok(())
    }

    /// First 8 hex digits of the SHA-256 of the canonical JSON.
    pub fn short_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(json)[..4])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default() {
        let c: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        c.validate().unwrap();
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"sead": 3}"#).is_err());
    }

    #[test]
    fn seed_propagates_and_changes_hash() {
        let a = RunConfig::default().effective(Some(5), None);
        assert_eq!(a.train.seed, 5);
        let b = RunConfig::default().effective(Some(6), None);
        assert_ne!(a.short_hash(), b.short_hash());
        assert_eq!(a.short_hash().len(), 8);
    }

    #[test]
    fn tagged_sections_parse() {
        let c: RunConfig = serde_json::from_str(
            r#"{"provider": {"kind": "remote", "endpoint": "http://h/g", "name": "nano_banana"},
                "backbone": {"kind": "stub"}, "train": {"epochs": 2, "learning_rate": 0.001,
                "batch_size": 8, "seed": 0, "selection_metric": "auroc_val"}}"#,
        )
        .unwrap();
        assert!(matches!(c.provider, ProviderConfig::Remote { .. }));
        assert_eq!(c.train.epochs, 2);
    }

    #[test]
    fn missing_input_paths_fail_validation() {
        let mut c = RunConfig::default();
        c.paths.chest_xray_root = Some("/definitely/not/here".into());
        assert!(c.validate().is_err());
        let c = RunConfig {
            crop_fraction: 1.0,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
