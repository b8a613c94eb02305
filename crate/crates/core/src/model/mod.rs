//! Transformer claim classifier: three-part embeddings with an addition gate
//! for perturbations, an encoder stack, a [CLS] pooler and a softmax head.

mod forward;
mod params;

pub use forward::{
    classify, embed, pool, predict, predict_batch, transform, EmbeddingBundle, EmbeddingNodes, ExampleMasks, ForwardNodes,
    ParamNodes, Prediction, ATTENTION_MASK_VALUE,
};
pub use params::{xavier_bound, ParamGroup, ParamTensor, Params};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of output classes (NCS, CFS).
pub const NUM_CLASSES: usize = 2;

/// Shape of the classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Encoder layer count.
    pub layers: usize,
    /// Attention heads per layer.
    pub heads: usize,
    /// Hidden size, divisible by `heads`.
    pub hidden_size: usize,
    /// Fixed input length.
    pub seq_len: usize,
    /// Vocabulary size.
    pub vocab_size: usize,
    /// Leading encoder layers excluded from training.
    pub frozen_layers: usize,
    /// Keep probability of the dropout inside the encoder.
    pub keep_prob: f64,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 2,
            hidden_size: 64,
            seq_len: 32,
            vocab_size: 8192,
            frozen_layers: 0,
            keep_prob: 0.9,
            num_classes: NUM_CLASSES,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.heads == 0 || self.hidden_size == 0 || !self.hidden_size.is_multiple_of(self.heads) {
            return fail(format!(
                "hidden size {} must be a positive multiple of {} heads",
                self.hidden_size, self.heads
            ));
        }
        if self.frozen_layers > self.layers {
            return fail(format!(
                "cannot freeze {} of {} layers",
                self.frozen_layers, self.layers
            ));
        }
        if self.seq_len < 2 {
            return fail(format!("sequence length {} below 2", self.seq_len));
        }
        if self.vocab_size < 5 {
            return fail(format!("vocabulary size {} below 5", self.vocab_size));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return fail(format!("keep probability {} outside (0, 1]", self.keep_prob));
        }
        if self.num_classes != NUM_CLASSES {
            return fail(format!("class count must be {NUM_CLASSES}, got {}", self.num_classes));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.heads
    }

    pub fn intermediate_size(&self) -> usize {
        4 * self.hidden_size
    }
}
