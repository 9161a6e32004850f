//! JSON experiment configuration.
//!
//! One file drives every subcommand; all fields have defaults, so a config
//! can be as small as `{}`. `--seed` and `--out` flags override the file.

use std::path::{Path, PathBuf};

use roast_core::adversarial::NormScope;
use roast_core::masking::{MaskMode, SigmoidSign, Strategy};
use roast_core::model::{ModelKind, ModelSpec};
use roast_core::trainer::RoastConfig;
use serde::{Deserialize, Serialize};

use crate::data::SyntheticSpec;
use crate::CliError;

/// Hyper-parameter candidate grids for manual tuning. These are documented
/// constants, not an automated search: the step size is fixed, the
/// consistency weight and smoothness come from small sets, and the masking
/// threshold from a bounded range.
pub mod candidates {
    pub const DELTA: f64 = 0.1;
    pub const LAMBDAS: [f64; 3] = [0.01, 0.1, 0.5];
    pub const ALPHA_RANGE: (f64, f64) = (0.6, 0.95);
    pub const BETAS: [f64; 3] = [1.0, 5.0, 10.0];
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_kind")]
    pub kind: String,
    #[serde(default = "default_vocab")]
    pub vocab_size: usize,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden_dims: Vec<usize>,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    #[serde(default)]
    pub blocks: usize,
}

fn default_kind() -> String {
    "mlp".into()
}
fn default_vocab() -> usize {
    200
}
fn default_embed_dim() -> usize {
    16
}
fn default_hidden() -> Vec<usize> {
    vec![32]
}
fn default_classes() -> usize {
    3
}

impl Default for ModelConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl ModelConfig {
    pub fn to_spec(&self) -> Result<ModelSpec, CliError> {
        let kind = match self.kind.as_str() {
            "linear" => ModelKind::Linear,
            "mlp" => ModelKind::Mlp,
            "tiny-transformer" => ModelKind::TinyTransformer,
            other => {
                return Err(CliError::Validation(format!(
                    "unknown model kind '{other}' (expected linear, mlp or tiny-transformer)"
                )))
            }
        };
        let spec = ModelSpec {
            kind,
            vocab_size: self.vocab_size,
            embed_dim: self.embed_dim,
            hidden_dims: self.hidden_dims.clone(),
            num_classes: self.num_classes,
            blocks: self.blocks,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_spec(spec: &ModelSpec) -> Self {
        ModelConfig {
            kind: match spec.kind {
                ModelKind::Linear => "linear".into(),
                ModelKind::Mlp => "mlp".into(),
                ModelKind::TinyTransformer => "tiny-transformer".into(),
            },
            vocab_size: spec.vocab_size,
            embed_dim: spec.embed_dim,
            hidden_dims: spec.hidden_dims.clone(),
            num_classes: spec.num_classes,
            blocks: spec.blocks,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoastParams {
    #[serde(default = "d_delta")]
    pub delta: f64,
    #[serde(default = "d_lambda")]
    pub lambda: f64,
    #[serde(default = "d_scope")]
    pub norm_scope: String,
    #[serde(default = "d_alpha")]
    pub alpha: f64,
    #[serde(default = "d_beta")]
    pub beta: f64,
    #[serde(default = "d_eta")]
    pub eta: f64,
    /// Refresh period in iterations; omitted = once per epoch.
    #[serde(default)]
    pub mask_refresh: Option<usize>,
    #[serde(default = "d_scaling")]
    pub scaling: bool,
    #[serde(default = "d_strategy")]
    pub strategy: String,
    #[serde(default = "d_mask_mode")]
    pub mask_mode: String,
    #[serde(default = "d_sign")]
    pub sigmoid_sign: String,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
}

fn d_delta() -> f64 {
    0.1
}
fn d_lambda() -> f64 {
    0.1
}
fn d_scope() -> String {
    "per-example".into()
}
fn d_alpha() -> f64 {
    0.7
}
fn d_beta() -> f64 {
    5.0
}
fn d_eta() -> f64 {
    0.3
}
fn d_scaling() -> bool {
    true
}
fn d_strategy() -> String {
    "max".into()
}
fn d_mask_mode() -> String {
    "sample".into()
}
fn d_sign() -> String {
    "rising".into()
}
fn d_epochs() -> usize {
    10
}
fn d_batch() -> usize {
    32
}

impl Default for RoastParams {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl RoastParams {
    /// Builds the core config; the training objective and masking overrides
    /// come from the method, the seed from the run.
    pub fn to_core(&self, seed: u64) -> Result<RoastConfig, CliError> {
        let norm_scope = match self.norm_scope.as_str() {
            "per-example" => NormScope::PerExample,
            "per-token" => NormScope::PerToken,
            other => {
                return Err(CliError::Validation(format!(
                    "unknown norm scope '{other}'"
                )))
            }
        };
        let strategy = match self.strategy.as_str() {
            "max" => Strategy::Max,
            "min" => Strategy::Min,
            "rand" => Strategy::Rand,
            other => {
                return Err(CliError::Validation(format!("unknown strategy '{other}'")))
            }
        };
        let mask_mode = match self.mask_mode.as_str() {
            "sample" => MaskMode::Sample,
            "hard-threshold" => MaskMode::HardThreshold,
            "soft-scale" => MaskMode::SoftScale,
            "off" => MaskMode::Off,
            other => {
                return Err(CliError::Validation(format!("unknown mask mode '{other}'")))
            }
        };
        let sigmoid_sign = match self.sigmoid_sign.as_str() {
            "rising" => SigmoidSign::Rising,
            "as-printed" => SigmoidSign::Falling,
            other => {
                return Err(CliError::Validation(format!(
                    "unknown sigmoid sign '{other}' (expected rising or as-printed)"
                )))
            }
        };
        let cfg = RoastConfig {
            delta: self.delta,
            lambda: self.lambda,
            norm_scope,
            alpha: self.alpha,
            beta: self.beta,
            eta: self.eta,
            mask_refresh: self.mask_refresh,
            scaling: self.scaling,
            strategy,
            mask_mode,
            sigmoid_sign,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            ..RoastConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Synthetic(SyntheticSpec),
    Jsonl {
        train: PathBuf,
        r#in: PathBuf,
        #[serde(default)]
        shift: Vec<PathBuf>,
        #[serde(default)]
        adv: Vec<PathBuf>,
        #[serde(default)]
        anomaly: Vec<PathBuf>,
    },
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig::Synthetic(SyntheticSpec::default())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub roast: RoastParams,
    #[serde(default)]
    pub data: DataConfig,
    /// l-inf step of the transfer attack that builds the adversarial split.
    #[serde(default = "d_attack_delta")]
    pub attack_delta: f64,
    /// Training seed of the frozen attack reference model; kept outside the
    /// default evaluation seeds so the attack stays a transfer attack.
    #[serde(default = "d_reference_seed")]
    pub reference_seed: u64,
    /// Plain-training epochs of the shared warm-start model that stands in
    /// for a pretrained one; every (method, seed) run fine-tunes a clone of
    /// it, with seeds varying only the fine-tuning phase.
    #[serde(default = "d_pretrain_epochs")]
    pub pretrain_epochs: usize,
    /// Init and shuffle seed of the shared warm-start model.
    #[serde(default = "d_pretrain_seed")]
    pub pretrain_seed: u64,
    /// Method names for `benchmark`; empty = the full registry.
    #[serde(default)]
    pub methods: Vec<String>,
    #[serde(default = "d_seeds")]
    pub seeds: Vec<u64>,
    /// Method for `train`.
    #[serde(default)]
    pub method: Option<String>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Evaluation batch size.
    #[serde(default = "d_eval_batch")]
    pub eval_batch: usize,
}

fn d_attack_delta() -> f64 {
    0.15
}
fn d_reference_seed() -> u64 {
    100
}
fn d_pretrain_epochs() -> usize {
    3
}
fn d_pretrain_seed() -> u64 {
    42
}
fn d_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}
fn d_eval_batch() -> usize {
    64
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("read {}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_str(&raw)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.seeds.is_empty() {
            return Err(CliError::Validation("need at least one seed".into()));
        }
        if self.attack_delta < 0.0 {
            return Err(CliError::Validation(
                "attack_delta must be non-negative".into(),
            ));
        }
        if self.eval_batch == 0 {
            return Err(CliError::Validation("eval_batch must be >= 1".into()));
        }
        self.model.to_spec()?;
        self.roast.to_core(0)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str("{}").unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.seeds, vec![1, 2, 3]);
        assert_eq!(cfg.roast.alpha, 0.7);
    }

    #[test]
    fn unknown_fields_rejected() {
        let r: Result<ExperimentConfig, _> = serde_json::from_str("{\"rost\": {}}");
        assert!(r.is_err());
    }

    #[test]
    fn bad_mask_mode_rejected() {
        let cfg: ExperimentConfig =
            serde_json::from_str("{\"roast\": {\"mask_mode\": \"banana\"}}").unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn model_config_round_trip() {
        let spec = ModelConfig::default().to_spec().unwrap();
        let back = ModelConfig::from_spec(&spec).to_spec().unwrap();
        assert_eq!(spec, back);
    }

    #[test]
    fn defaults_sit_inside_the_candidate_grids() {
        let p = RoastParams::default();
        assert_eq!(p.delta, candidates::DELTA);
        assert!(candidates::LAMBDAS.contains(&p.lambda));
        assert!(p.alpha >= candidates::ALPHA_RANGE.0 && p.alpha <= candidates::ALPHA_RANGE.1);
        assert!(candidates::BETAS.contains(&p.beta));
    }
}
