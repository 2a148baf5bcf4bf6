use serde::{Deserialize, Serialize};

use crate::autodiff::OptimizerConfig;
use crate::error::{Error, Result};
use crate::model::{normalize_heads, ContextMode, Head, LossWeights, ModelConfig, ModelSpec};

fn default_heads() -> Vec<Head> {
    vec![Head::Sacti, Head::Morph, Head::Dep]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub lr: f64,
    pub dep_loss_weight: f64,
    pub morph_loss_weight: f64,
    /// Weight of each case, lemma and relation loss.
    pub aux_loss_weight: f64,
    pub enabled_heads: Vec<Head>,
    pub context_mode: ContextMode,
    pub seed: u64,
    /// Evaluate on the dev set every this many epochs (and after the last).
    pub eval_every: usize,
    /// Stop after this many dev evaluations without a macro-F1 improvement.
    pub patience: Option<usize>,
    pub optimizer: OptimizerConfig,
    /// Fixed semantic label inventory, in id order. Collected from the
    /// training data when absent.
    pub labels: Option<Vec<String>>,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 70,
            batch_size: 50,
            dropout: 0.3,
            lr: 0.001,
            dep_loss_weight: 0.01,
            morph_loss_weight: 1.0,
            aux_loss_weight: 1.0,
            enabled_heads: default_heads(),
            context_mode: ContextMode::With,
            seed: 42,
            eval_every: 1,
            patience: None,
            optimizer: OptimizerConfig::default(),
            labels: None,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr {} must be positive", self.lr));
        }
        for (name, w) in [
            ("dep_loss_weight", self.dep_loss_weight),
            ("morph_loss_weight", self.morph_loss_weight),
            ("aux_loss_weight", self.aux_loss_weight),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return bad(format!("{name} {w} must be a non-negative number"));
            }
        }
        if let Some(clip) = self.optimizer.grad_clip {
            if !(clip.is_finite() && clip > 0.0) {
                return bad(format!("grad_clip {clip} must be positive"));
            }
        }
        self.model.validate()
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            model: self.model.clone(),
            heads: normalize_heads(&self.enabled_heads),
            context: self.context_mode,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            morph: self.morph_loss_weight,
            dep: self.dep_loss_weight,
            aux: self.aux_loss_weight,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_partial_json() {
        let c = TrainConfig::default();
        assert_eq!((c.epochs, c.batch_size), (70, 50));
        assert_eq!((c.dropout, c.lr, c.dep_loss_weight), (0.3, 0.001, 0.01));
        assert!(c.validate().is_ok());
        let c: TrainConfig = serde_json::from_str(r#"{"epochs": 3, "enabled_heads": ["morph"]}"#).unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.model_spec().heads, vec![Head::Sacti, Head::Morph]);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 3}"#).is_err());
    }

    #[test]
    fn rejects_bad_values() {
        for patch in [
            r#"{"batch_size": 0}"#,
            r#"{"dropout": 1.0}"#,
            r#"{"lr": 0}"#,
            r#"{"dep_loss_weight": -1}"#,
            r#"{"eval_every": 0}"#,
        ] {
            let c: TrainConfig = serde_json::from_str(patch).unwrap();
            assert!(c.validate().is_err(), "{patch}");
        }
    }
}
