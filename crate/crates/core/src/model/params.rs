use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::ModelConfig;
use crate::error::{Error, Result};

/// Which part of the network a parameter belongs to; freezing acts on groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Token,
    Segment,
    Position,
    /// Layer normalization applied to the summed embeddings.
    EmbeddingNorm,
    Layer(usize),
    Pool,
    Classifier,
}

impl ParamGroup {
    pub fn is_embedding(self) -> bool {
        matches!(
            self,
            ParamGroup::Token | ParamGroup::Segment | ParamGroup::Position | ParamGroup::EmbeddingNorm
        )
    }
}

/// One named parameter, stored in 32-bit precision.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
    pub group: ParamGroup,
    pub trainable: bool,
}

impl ParamTensor {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// All model parameters in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    config: ModelConfig,
    tensors: Vec<ParamTensor>,
}

// Per-layer tensor order.
pub(crate) const LAYER_TENSORS: [&str; 16] = [
    "attention.query.weight",
    "attention.query.bias",
    "attention.key.weight",
    "attention.key.bias",
    "attention.value.weight",
    "attention.value.bias",
    "attention.output.weight",
    "attention.output.bias",
    "attention.norm.gamma",
    "attention.norm.beta",
    "ffn.intermediate.weight",
    "ffn.intermediate.bias",
    "ffn.output.weight",
    "ffn.output.bias",
    "ffn.norm.gamma",
    "ffn.norm.beta",
];

pub(crate) const EMBEDDING_TENSORS: usize = 5;

/// Manifest entries `(name, shape, group)` for a config.
pub(crate) fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>, ParamGroup)> {
    let h = config.hidden_size;
    let ff = config.intermediate_size();
    let mut out = vec![
        ("embeddings.token".into(), vec![config.vocab_size, h], ParamGroup::Token),
        ("embeddings.segment".into(), vec![2, h], ParamGroup::Segment),
        ("embeddings.position".into(), vec![config.seq_len, h], ParamGroup::Position),
        ("embeddings.norm.gamma".into(), vec![h], ParamGroup::EmbeddingNorm),
        ("embeddings.norm.beta".into(), vec![h], ParamGroup::EmbeddingNorm),
    ];
    for n in 0..config.layers {
        for name in LAYER_TENSORS {
            let shape = match name {
                "ffn.intermediate.weight" => vec![h, ff],
                "ffn.intermediate.bias" => vec![ff],
                "ffn.output.weight" => vec![ff, h],
                n if n.ends_with("weight") => vec![h, h],
                _ => vec![h],
            };
            out.push((format!("layer.{n}.{name}"), shape, ParamGroup::Layer(n)));
        }
    }
    out.push(("pooler.weight".into(), vec![h, h], ParamGroup::Pool));
    out.push(("pooler.bias".into(), vec![h], ParamGroup::Pool));
    out.push(("classifier.weight".into(), vec![h, config.num_classes], ParamGroup::Classifier));
    out.push(("classifier.bias".into(), vec![config.num_classes], ParamGroup::Classifier));
    out
}

/// Samples from N(0, std²) truncated to two standard deviations.
fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f32 {
    let normal = Normal::new(0.0, std).expect("positive std");
    loop {
        let v: f64 = normal.sample(rng);
        if v.abs() <= 2.0 * std {
            return v as f32;
        }
    }
}

/// Half-width of the Xavier-uniform interval for a dense layer.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl Params {
    /// Zero-valued parameters with every group trainable.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let tensors = layout(config)
            .into_iter()
            .map(|(name, shape, group)| ParamTensor {
                values: vec![0.0; shape.iter().product()],
                name,
                shape,
                group,
                trainable: true,
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            tensors,
        })
    }

    /// Truncated-normal (std 0.02) weights and embeddings, unit layer-norm
    /// gains, zero biases, and a Xavier-uniform classifier.
    pub fn init_random<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        let mut params = Self::zeros(config)?;
        for t in &mut params.tensors {
            if t.name.ends_with("gamma") {
                t.values.fill(1.0);
            } else if t.name.ends_with("bias") || t.name.ends_with("beta") {
                // zero
            } else if t.group == ParamGroup::Classifier {
                continue;
            } else {
                for v in &mut t.values {
                    *v = truncated_normal(rng, 0.02);
                }
            }
        }
        params.init_classifier(rng);
        Ok(params)
    }

    /// Xavier-uniform classifier weights, zero bias.
    pub fn init_classifier<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let h = self.config.hidden_size;
        let k = self.config.num_classes;
        let bound = xavier_bound(h, k);
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let n = self.tensors.len();
        for v in &mut self.tensors[n - 2].values {
            *v = dist.sample(rng) as f32;
        }
        self.tensors[n - 1].values.fill(0.0);
    }

    /// Assembles parameters from manifest-ordered tensors, checking every
    /// name and shape against the config.
    pub fn from_tensors(config: &ModelConfig, tensors: Vec<(String, Vec<usize>, Vec<f32>)>) -> Result<Self> {
        config.validate()?;
        let expected = layout(config);
        if expected.len() != tensors.len() {
            return Err(crate::CheckpointError::Manifest(format!(
                "expected {} tensors, found {}",
                expected.len(),
                tensors.len()
            ))
            .into());
        }
        let mut out = Vec::with_capacity(tensors.len());
        for ((name, shape, group), (got_name, got_shape, values)) in expected.into_iter().zip(tensors) {
            if name != got_name {
                return Err(crate::CheckpointError::Manifest(format!(
                    "expected parameter {name}, found {got_name}"
                ))
                .into());
            }
            if shape != got_shape {
                return Err(crate::CheckpointError::Shape {
                    name,
                    expected: shape,
                    found: got_shape,
                }
                .into());
            }
            if values.len() != shape.iter().product::<usize>() {
                return Err(Error::Dimension {
                    op: "params",
                    lhs: shape,
                    rhs: vec![values.len()],
                });
            }
            out.push(ParamTensor {
                name,
                shape,
                values,
                group,
                trainable: true,
            });
        }
        Ok(Self {
            config: config.clone(),
            tensors: out,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[ParamTensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [ParamTensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamTensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(ParamTensor::len).sum()
    }

    /// Applies the freezing rule: the first `frozen_layers` encoder layers are
    /// frozen, and the embedding groups too when `freeze_embeddings` is set.
    pub fn apply_freezing(&mut self, freeze_embeddings: bool) {
        let frozen = self.config.frozen_layers;
        for t in &mut self.tensors {
            t.trainable = match t.group {
                g if g.is_embedding() => !freeze_embeddings,
                ParamGroup::Layer(n) => n >= frozen,
                _ => true,
            };
        }
    }

    /// Index of the first tensor of encoder layer `n`.
    pub(crate) fn layer_offset(n: usize) -> usize {
        EMBEDDING_TENSORS + n * LAYER_TENSORS.len()
    }
}
