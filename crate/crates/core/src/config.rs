//! Experiment configuration, read from TOML.
//!
//! Every field has a default, so an empty file is a valid ERM experiment on
//! the default rotated-Gaussian benchmark. Unknown keys are rejected and
//! errors name the offending key path, for example `loss.temperature`.
//!
//! ```toml
//! name = "full"
//! seeds = [0, 1, 2]
//!
//! [loss]
//! cdc_enabled = true
//! pma_enabled = true
//! gt_enabled = true
//! aggressive_augmentation = true
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{DenominatorMode, LossConfig};
use crate::nets::{AnchorConfig, ModelConfig};
use crate::synthdata::{self, Augmentation, Dataset, RotatedGaussians};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    pub out_dir: String,
    /// Concurrent runs in `loo` and `ablate`; 0 uses every core.
    pub workers: usize,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub loss: LossSection,
    pub optimizer: OptimizerSection,
    pub protocol: ProtocolSection,
    pub augmentation: AugmentationSection,
    pub anchor: AnchorSection,
    pub output: OutputSection,
    pub ablation: AblationSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            seeds: vec![0, 1, 2],
            out_dir: "runs".into(),
            workers: 1,
            dataset: DatasetSection::default(),
            model: ModelSection::default(),
            loss: LossSection::default(),
            optimizer: OptimizerSection::default(),
            protocol: ProtocolSection::default(),
            augmentation: AugmentationSection::default(),
            anchor: AnchorSection::default(),
            output: OutputSection::default(),
            ablation: AblationSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    RotatedGaussians,
    Toy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub generator: GeneratorKind,
    pub domains: usize,
    pub classes: usize,
    /// Samples per (domain, class).
    pub per_domain_class: usize,
    pub rotation_step: f64,
    pub class_separation: f64,
    pub noise_std: f64,
    pub dim: usize,
    pub seed: u64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let g = RotatedGaussians::default();
        Self {
            generator: GeneratorKind::RotatedGaussians,
            domains: g.domains,
            classes: g.classes,
            per_domain_class: g.per_domain_class,
            rotation_step: g.rotation_step,
            class_separation: g.class_separation,
            noise_std: g.noise_std,
            dim: g.dim,
            seed: 0,
        }
    }
}

impl DatasetSection {
    pub fn generate(&self) -> Result<Dataset> {
        match self.generator {
            GeneratorKind::RotatedGaussians => synthdata::gen_rotated_gaussians(&RotatedGaussians {
                domains: self.domains,
                classes: self.classes,
                per_domain_class: self.per_domain_class,
                rotation_step: self.rotation_step,
                class_separation: self.class_separation,
                noise_std: self.noise_std,
                dim: self.dim,
                seed: self.seed,
            }),
            GeneratorKind::Toy => {
                let d1 = synthdata::gen_toy(self.per_domain_class, 1, self.seed)?;
                let d2 = synthdata::gen_toy(self.per_domain_class, 2, self.seed.wrapping_add(1))?;
                let mut all = d1;
                all.samples.extend(d2.samples);
                all.generator.params = vec![("n_per_class".into(), self.per_domain_class.to_string())];
                Ok(all)
            }
        }
    }

    /// Input width and class count of the generated data.
    pub fn shape(&self) -> (usize, usize, usize) {
        match self.generator {
            GeneratorKind::RotatedGaussians => (self.dim, self.classes, self.domains),
            GeneratorKind::Toy => (2, 2, 2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub encoder_widths: Vec<usize>,
    pub head_hidden: usize,
    pub embed_dim: usize,
    pub batch_norm: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            encoder_widths: m.encoder_widths,
            head_hidden: m.head_hidden,
            embed_dim: m.embed_dim,
            batch_norm: m.batch_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSection {
    pub lambda: f64,
    pub beta: f64,
    pub temperature: f64,
    pub cdc_enabled: bool,
    pub pma_enabled: bool,
    pub gt_enabled: bool,
    pub self_contrast_only: bool,
    pub aggressive_augmentation: bool,
    pub denominator_mode: String,
    pub pma_probability: f64,
    pub anchor_negatives: bool,
}

impl Default for LossSection {
    fn default() -> Self {
        Self::from(&LossConfig::default())
    }
}

impl From<&LossConfig> for LossSection {
    fn from(c: &LossConfig) -> Self {
        Self {
            lambda: c.lambda,
            beta: c.beta,
            temperature: c.temperature,
            cdc_enabled: c.cdc_enabled,
            pma_enabled: c.pma_enabled,
            gt_enabled: c.gt_enabled,
            self_contrast_only: c.self_contrast_only,
            aggressive_augmentation: c.aggressive_augmentation,
            denominator_mode: c.denominator_mode.to_string(),
            pma_probability: c.pma_probability,
            anchor_negatives: c.anchor_negatives,
        }
    }
}

impl LossSection {
    pub fn to_loss_config(&self) -> Result<LossConfig> {
        Ok(LossConfig {
            lambda: self.lambda,
            beta: self.beta,
            temperature: self.temperature,
            cdc_enabled: self.cdc_enabled,
            pma_enabled: self.pma_enabled,
            gt_enabled: self.gt_enabled,
            self_contrast_only: self.self_contrast_only,
            aggressive_augmentation: self.aggressive_augmentation,
            denominator_mode: self.denominator_mode.parse::<DenominatorMode>()?,
            pma_probability: self.pma_probability,
            anchor_negatives: self.anchor_negatives,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub eval_every: usize,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            steps: 2000,
            batch_size: 24,
            eval_every: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolSection {
    /// Held-out domain for `train`; `loo` and `ablate` hold out each in turn.
    pub held_out: usize,
    pub split_fraction: f64,
    pub label_ratio: f64,
    /// Start encoder and head from the anchor's weights.
    pub init_from_anchor: bool,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        Self {
            held_out: 0,
            split_fraction: 0.8,
            label_ratio: 1.0,
            init_from_anchor: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentationKind {
    AdditiveUniform,
    CoordinateScaling,
    Compose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationSection {
    pub kind: AugmentationKind,
    pub standard_intensity: f64,
    pub aggressive_intensity: f64,
}

impl Default for AugmentationSection {
    fn default() -> Self {
        Self {
            kind: AugmentationKind::AdditiveUniform,
            standard_intensity: 0.1,
            aggressive_intensity: 0.5,
        }
    }
}

impl AugmentationSection {
    pub fn build(&self, aggressive: bool) -> Augmentation {
        let a = if aggressive {
            self.aggressive_intensity
        } else {
            self.standard_intensity
        };
        match self.kind {
            AugmentationKind::AdditiveUniform => Augmentation::AdditiveUniform(a),
            AugmentationKind::CoordinateScaling => Augmentation::CoordinateScaling(a),
            AugmentationKind::Compose => Augmentation::Compose(vec![
                Augmentation::AdditiveUniform(a),
                Augmentation::CoordinateScaling(a / 2.0),
            ]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorSection {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for AnchorSection {
    fn default() -> Self {
        let a = AnchorConfig::default();
        Self {
            steps: a.steps,
            lr: a.lr,
            batch_size: a.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub save_checkpoints: bool,
    pub dump_embeddings: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            save_checkpoints: true,
            dump_embeddings: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    /// Row names; see `harness::AblationRow`.
    pub rows: Vec<String>,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            rows: crate::harness::AblationRow::ALL.iter().map(|r| r.name().to_string()).collect(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            let reason = e.inner().message().trim().to_string();
            Error::config(if key == "." { "<root>".into() } else { key }, reason)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn model_config(&self) -> ModelConfig {
        let (input_dim, classes, _) = self.dataset.shape();
        ModelConfig {
            input_dim,
            encoder_widths: self.model.encoder_widths.clone(),
            head_hidden: self.model.head_hidden,
            embed_dim: self.model.embed_dim,
            classes,
            batch_norm: self.model.batch_norm,
        }
    }

    pub fn anchor_config(&self) -> AnchorConfig {
        AnchorConfig {
            steps: self.anchor.steps,
            lr: self.anchor.lr,
            batch_size: self.anchor.batch_size,
        }
    }

    pub fn loss_config(&self) -> Result<LossConfig> {
        self.loss.to_loss_config()
    }

    /// Whether runs of this configuration need an anchor.
    pub fn needs_anchor(&self) -> Result<bool> {
        Ok(self.protocol.init_from_anchor || self.loss_config()?.needs_anchor())
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.generator == GeneratorKind::RotatedGaussians {
            if d.domains < 2 {
                return Err(Error::config("dataset.domains", "need at least 2 domains"));
            }
            if d.classes < 2 {
                return Err(Error::config("dataset.classes", "need at least 2 classes"));
            }
            if d.dim < 2 {
                return Err(Error::config("dataset.dim", "must be at least 2"));
            }
            if !(d.noise_std >= 0.0) {
                return Err(Error::config("dataset.noise_std", "must be non-negative"));
            }
            if !(d.class_separation > 0.0) {
                return Err(Error::config("dataset.class_separation", "must be positive"));
            }
        }
        if d.per_domain_class == 0 {
            return Err(Error::config("dataset.per_domain_class", "must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "need at least one seed"));
        }
        if self.model.encoder_widths.is_empty() || self.model.encoder_widths.contains(&0) {
            return Err(Error::config("model.encoder_widths", "need at least one positive width"));
        }
        if self.model.head_hidden == 0 || self.model.embed_dim == 0 {
            return Err(Error::config("model.embed_dim", "head widths must be positive"));
        }
        let o = &self.optimizer;
        if !(o.lr > 0.0) || !o.lr.is_finite() {
            return Err(Error::config("optimizer.lr", "must be positive"));
        }
        if o.steps == 0 {
            return Err(Error::config("optimizer.steps", "must be positive"));
        }
        if o.eval_every == 0 {
            return Err(Error::config("optimizer.eval_every", "must be positive"));
        }
        let p = &self.protocol;
        let (_, _, domains) = d.shape();
        if p.held_out >= domains {
            return Err(Error::config(
                "protocol.held_out",
                format!("domain {} does not exist ({domains} domains)", p.held_out),
            ));
        }
        if !(p.split_fraction > 0.0 && p.split_fraction < 1.0) {
            return Err(Error::config("protocol.split_fraction", "must lie in (0, 1)"));
        }
        if !(p.label_ratio > 0.0 && p.label_ratio <= 1.0) {
            return Err(Error::config("protocol.label_ratio", "must lie in (0, 1]"));
        }
        let a = &self.augmentation;
        if !(a.standard_intensity >= 0.0) || !(a.aggressive_intensity >= 0.0) {
            return Err(Error::config("augmentation", "intensities must be non-negative"));
        }
        if self.anchor.steps == 0 || !(self.anchor.lr > 0.0) {
            return Err(Error::config("anchor", "steps and lr must be positive"));
        }
        let loss = self.loss_config()?;
        loss.validate(self.needs_anchor()?)?;
        for r in &self.ablation.rows {
            r.parse::<crate::harness::AblationRow>()
                .map_err(|e| Error::config("ablation.rows", e.to_string()))?;
        }
        Ok(())
    }
}
