use super::HarnessError;
use crate::losses::SupConNorm;
use crate::model::Architecture;
use crate::optim::AdamWConfig;
use crate::styledata::{default_protocol_styles, StyleClass, StyleSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashSet;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaseConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Stratified share of the initial training set held out for model selection.
    pub validation_fraction: f64,
}

impl Default for BaseConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 256,
            validation_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub shots: usize,
    pub replay: bool,
    /// Round-robin styles within each shuffled epoch instead of a plain shuffle.
    pub balanced_batches: bool,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            shots: 100,
            replay: true,
            balanced_batches: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda: f64,
    pub beta: f64,
    pub supcon_norm: SupConNorm,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            beta: 0.1,
            supcon_norm: SupConNorm::Paper,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub tau: f64,
    pub fdr_target: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            fdr_target: 0.001,
        }
    }
}

/// Per-style sample counts. Raw patches are rendered at the model's patch size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub real_train: usize,
    pub real_test: usize,
    pub base_train: usize,
    pub base_test: usize,
    /// Adaptation shots are the first `shots` samples of this pool.
    pub adapt_pool: usize,
    pub adapt_test: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            real_train: 1000,
            real_test: 200,
            base_train: 2000,
            base_test: 500,
            adapt_pool: 200,
            adapt_test: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
    pub shots: Vec<usize>,
    pub lambdas: Vec<f64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3],
            shots: vec![10, 50, 100, 200],
            lambdas: vec![0.0, 0.01, 0.1, 1.0],
        }
    }
}

/// Everything that determines a run. Styles are listed in protocol order:
/// real-analog styles anywhere, the first synthetic style is the base
/// style, and the remaining synthetic styles are the adaptation sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub replay_quota: usize,
    pub architecture: Architecture,
    pub base: BaseConfig,
    pub adaptation: AdaptConfig,
    pub optimizer: AdamWConfig,
    pub loss: LossConfig,
    pub eval: EvalConfig,
    pub data: DataConfig,
    pub ablation: AblationConfig,
    #[serde(rename = "style")]
    pub styles: Vec<StyleSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            replay_quota: 100,
            architecture: Architecture::default(),
            base: BaseConfig::default(),
            adaptation: AdaptConfig::default(),
            optimizer: AdamWConfig {
                lr_max: 1e-3,
                lr_min: 1e-4,
                ..AdamWConfig::default()
            },
            loss: LossConfig::default(),
            eval: EvalConfig::default(),
            data: DataConfig::default(),
            ablation: AblationConfig::default(),
            styles: default_protocol_styles(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let config: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML rendering, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn real_styles(&self) -> impl Iterator<Item = &StyleSpec> {
        self.styles.iter().filter(|s| s.class == StyleClass::Real)
    }

    pub fn base_style(&self) -> &StyleSpec {
        self.styles
            .iter()
            .find(|s| s.class == StyleClass::Synthetic)
            .expect("validated config has a synthetic style")
    }

    pub fn adaptation_styles(&self) -> Vec<&StyleSpec> {
        self.styles.iter().filter(|s| s.class == StyleClass::Synthetic).skip(1).collect()
    }

    /// Synthetic styles in protocol order: base style first.
    pub fn synthetic_styles(&self) -> Vec<&StyleSpec> {
        self.styles.iter().filter(|s| s.class == StyleClass::Synthetic).collect()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: String| Err(HarnessError::Config(m));
        self.architecture.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.base.epochs == 0 || self.adaptation.epochs == 0 {
            return fail("epoch counts must be at least 1".into());
        }
        if self.base.batch_size == 0 || self.adaptation.batch_size == 0 {
            return fail("batch sizes must be at least 1".into());
        }
        if !(self.base.validation_fraction > 0.0 && self.base.validation_fraction < 1.0) {
            return fail("validation_fraction must lie in (0, 1)".into());
        }
        if self.adaptation.shots == 0 || self.adaptation.shots > self.data.adapt_pool {
            return fail(format!(
                "shots must lie in [1, adapt_pool = {}], got {}",
                self.data.adapt_pool, self.adaptation.shots
            ));
        }
        if self.replay_quota == 0 {
            return fail("replay_quota must be at least 1".into());
        }
        let o = &self.optimizer;
        if !(o.lr_max > 0.0 && o.lr_min >= 0.0 && o.lr_min <= o.lr_max) {
            return fail("learning rates must satisfy 0 ≤ lr_min ≤ lr_max, lr_max > 0".into());
        }
        if !(o.weight_decay >= 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0) {
            return fail("invalid AdamW hyperparameters".into());
        }
        if !(self.loss.lambda >= 0.0 && self.loss.beta > 0.0) {
            return fail("λ must be ≥ 0 and β > 0".into());
        }
        if !(0.0..=1.0).contains(&self.eval.tau) || !(0.0..=1.0).contains(&self.eval.fdr_target) {
            return fail("τ and fdr_target must lie in [0, 1]".into());
        }
        let d = &self.data;
        if [d.real_train, d.real_test, d.base_train, d.base_test, d.adapt_test].contains(&0) {
            return fail("every data count must be at least 1".into());
        }
        let mut tags = HashSet::new();
        for s in &self.styles {
            s.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
            if !tags.insert(s.tag.as_str()) {
                return fail(format!("style `{}` listed twice", s.tag));
            }
        }
        if self.real_styles().next().is_none() {
            return fail("protocol needs at least one real-analog style".into());
        }
        if self.synthetic_styles().is_empty() {
            return fail("protocol needs a base synthetic style".into());
        }
        if self.ablation.lambdas.iter().any(|l| !(*l >= 0.0)) {
            return fail("ablation λ values must be ≥ 0".into());
        }
        if self.ablation.shots.iter().any(|&n| n == 0 || n > self.data.adapt_pool) {
            return fail("ablation shot counts must lie in [1, adapt_pool]".into());
        }
        Ok(())
    }
}
