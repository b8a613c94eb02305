use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::adversary::{PerturbConfig, PerturbSubset};
use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Training hyperparameters; `cs_*` keys keep their conventional names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Epoch count; when absent, 10 for adversarial runs and 5 otherwise.
    pub cs_train_steps: Option<usize>,
    pub cs_lr: f64,
    /// Keep probability of the dropout in front of the classifier.
    pub cs_kp_cls: f64,
    pub cs_batch_size_reg: usize,
    pub cs_batch_size_adv: usize,
    /// Norm bound of the perturbation.
    pub cs_perturb_norm_length: f64,
    /// Weight of the adversarial loss.
    pub cs_lambda: f64,
    /// When false the optimizer sees only the weighted adversarial loss.
    pub cs_combine_reg_adv_loss: bool,
    pub cs_perturb_id: PerturbSubset,
    pub adversarial: bool,
    pub seed: u64,
    /// Freeze the embedding groups. When absent they are frozen exactly
    /// when training starts from a pretrained checkpoint.
    pub freeze_embeddings: Option<bool>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            cs_train_steps: None,
            cs_lr: 5e-5,
            cs_kp_cls: 0.7,
            cs_batch_size_reg: 24,
            cs_batch_size_adv: 12,
            cs_perturb_norm_length: 2.0,
            cs_lambda: 0.1,
            cs_combine_reg_adv_loss: true,
            cs_perturb_id: PerturbSubset::TOK,
            adversarial: true,
            seed: 0,
            freeze_embeddings: None,
        }
    }
}

impl TrainConfig {
    pub fn epochs(&self) -> usize {
        self.cs_train_steps
            .unwrap_or(if self.adversarial { 10 } else { 5 })
    }

    pub fn batch_size(&self) -> usize {
        if self.adversarial {
            self.cs_batch_size_adv
        } else {
            self.cs_batch_size_reg
        }
    }

    pub fn perturb(&self) -> PerturbConfig {
        PerturbConfig {
            subset: self.cs_perturb_id,
            epsilon: self.cs_perturb_norm_length,
            lambda: self.cs_lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.cs_batch_size_reg == 0 || self.cs_batch_size_adv == 0 {
            return Err(Error::Config("batch sizes must be at least 1".into()));
        }
        if !(self.cs_lr.is_finite() && self.cs_lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.cs_lr)));
        }
        if !(self.cs_kp_cls > 0.0 && self.cs_kp_cls <= 1.0) {
            return Err(Error::Config(format!("cs_kp_cls {} outside (0, 1]", self.cs_kp_cls)));
        }
        if self.epochs() == 0 {
            return Err(Error::Config("cs_train_steps must be at least 1".into()));
        }
        if self.adversarial {
            self.perturb().validate()?;
        }
        Ok(())
    }
}

/// A flat JSON config holding both the training keys and the model shape.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn keys_of<T: Serialize>(value: &T) -> Vec<String> {
    match serde_json::to_value(value) {
        Ok(Value::Object(map)) => map.keys().cloned().collect(),
        _ => Vec::new(),
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let Value::Object(map) = serde_json::from_str(text)? else {
            return Err(Error::Config("config must be a JSON object".into()));
        };
        let model_keys = keys_of(&ModelConfig::default());
        let train_keys = keys_of(&TrainConfig::default());
        let (mut model, mut train) = (Map::new(), Map::new());
        for (k, v) in map {
            if model_keys.contains(&k) {
                model.insert(k, v);
            } else if train_keys.contains(&k) {
                train.insert(k, v);
            } else {
                return Err(Error::Config(format!("unknown config key {k:?}")));
            }
        }
        let config = Self {
            model: serde_json::from_value(Value::Object(model))
                .map_err(|e| Error::Config(e.to_string()))?,
            train: serde_json::from_value(Value::Object(train))
                .map_err(|e| Error::Config(e.to_string()))?,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    pub fn to_json(&self) -> Value {
        let mut map = Map::new();
        for part in [
            serde_json::to_value(&self.model).expect("serializable"),
            serde_json::to_value(&self.train).expect("serializable"),
        ] {
            if let Value::Object(m) = part {
                map.extend(m);
            }
        }
        Value::Object(map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_defaults() {
        let c = TrainConfig::default();
        assert_eq!(c.epochs(), 10);
        assert_eq!(c.batch_size(), 12);
        let std = TrainConfig {
            adversarial: false,
            ..c
        };
        assert_eq!(std.epochs(), 5);
        assert_eq!(std.batch_size(), 24);
    }

    #[test]
    fn flat_file_with_both_sections() {
        let c = RunConfig::from_json(r#"{"cs_lr": 0.001, "hidden_size": 32, "cs_perturb_id": 5}"#).unwrap();
        assert_eq!(c.model.hidden_size, 32);
        assert_eq!(c.model.layers, 2);
        assert_eq!(c.train.cs_perturb_id.id(), 5);
        assert_eq!(RunConfig::from_json(&c.to_json().to_string()).unwrap(), c);
    }

    #[test]
    fn unknown_and_invalid_keys() {
        assert!(matches!(RunConfig::from_json(r#"{"cs_foo": 1}"#), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_json(r#"{"cs_perturb_id": 9}"#), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_json(r#"{"cs_kp_cls": 0}"#), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_json(r#"{"hidden_size": 30, "heads": 4}"#), Err(Error::Config(_))));
    }
}
