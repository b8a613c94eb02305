use rand::Rng;
use serde::Serialize;

use super::params::Params;
use super::ModelConfig;
use crate::autodiff::{Graph, NodeId, Real, Tensor};
use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::text::EncodedInput;

/// Added to attention scores of padding columns before the softmax.
pub const ATTENTION_MASK_VALUE: Real = -1e9;

/// Dropout masks for one example, drawn once per batch by the trainer.
#[derive(Debug, Clone, PartialEq)]
pub struct ExampleMasks {
    pub hidden_keep_prob: Real,
    pub classifier_keep_prob: Real,
    /// `T×H`, applied after the embedding layer norm.
    pub embedding: Vec<bool>,
    /// Per layer, `T×H`, applied to the attention output projection.
    pub attention: Vec<Vec<bool>>,
    /// Per layer, `T×H`, applied to the feed-forward output.
    pub ffn: Vec<Vec<bool>>,
    /// `H`, applied to the pooled vector before the classifier.
    pub classifier: Vec<bool>,
}

impl ExampleMasks {
    pub fn sample<R: Rng + ?Sized>(config: &ModelConfig, classifier_keep_prob: Real, rng: &mut R) -> Self {
        let th = config.seq_len * config.hidden_size;
        let hidden = config.keep_prob;
        let mut draw = |n: usize, keep: Real| -> Vec<bool> { (0..n).map(|_| rng.random::<Real>() < keep).collect() };
        let embedding = draw(th, hidden);
        let mut attention = Vec::with_capacity(config.layers);
        let mut ffn = Vec::with_capacity(config.layers);
        for _ in 0..config.layers {
            attention.push(draw(th, hidden));
            ffn.push(draw(th, hidden));
        }
        let classifier = draw(config.hidden_size, classifier_keep_prob);
        Self {
            hidden_keep_prob: hidden,
            classifier_keep_prob,
            embedding,
            attention,
            ffn,
            classifier,
        }
    }
}

/// Graph leaves for every parameter tensor, in manifest order.
#[derive(Debug, Clone)]
pub struct ParamNodes {
    ids: Vec<NodeId>,
    config: ModelConfig,
}

/// The three embedding components of one example inside a graph.
#[derive(Debug, Clone, Copy)]
pub struct EmbeddingNodes {
    pub tok: NodeId,
    pub seg: NodeId,
    pub pos: NodeId,
}

/// Nodes of one example's full forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardNodes {
    pub embeddings: EmbeddingNodes,
    /// `s` (or `s'` when perturbed): the input to the encoder stack.
    pub encoder_input: NodeId,
    pub hidden: NodeId,
    pub pooled: NodeId,
    pub logits: NodeId,
}

impl ParamNodes {
    /// Adds every parameter as a leaf; frozen tensors do not request gradients.
    pub fn bind(g: &mut Graph, params: &Params) -> Result<Self> {
        let mut ids = Vec::with_capacity(params.tensors().len());
        for t in params.tensors() {
            let values = t.values.iter().map(|&v| Real::from(v)).collect();
            let tensor = Tensor::new(t.shape.clone(), values)?.with_requires_grad(t.trainable);
            ids.push(g.leaf(tensor)?);
        }
        Ok(Self {
            ids,
            config: params.config().clone(),
        })
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn layer(&self, n: usize, offset: usize) -> NodeId {
        self.ids[Params::layer_offset(n) + offset]
    }

    fn pool_ids(&self) -> (NodeId, NodeId) {
        let o = Params::layer_offset(self.config.layers);
        (self.ids[o], self.ids[o + 1])
    }

    fn classifier_ids(&self) -> (NodeId, NodeId) {
        let o = Params::layer_offset(self.config.layers) + 2;
        (self.ids[o], self.ids[o + 1])
    }

    /// Token, segment and position lookups for one input.
    pub fn embed(&self, g: &mut Graph, input: &EncodedInput) -> Result<EmbeddingNodes> {
        let t = self.config.seq_len;
        if input.seq_len() != t || input.segment_ids.len() != t {
            return Err(Error::Dimension {
                op: "embed",
                lhs: vec![input.seq_len()],
                rhs: vec![t],
            });
        }
        let tok = g.gather(self.ids[0], &input.token_ids)?;
        let seg = g.gather(self.ids[1], &input.segment_ids)?;
        let positions: Vec<usize> = (0..t).collect();
        let pos = g.gather(self.ids[2], &positions)?;
        Ok(EmbeddingNodes { tok, seg, pos })
    }

    /// `s = s_tok + s_seg + s_pos`, always summed in this order.
    pub fn sum_embeddings(&self, g: &mut Graph, e: &EmbeddingNodes) -> Result<NodeId> {
        let ts = g.add(e.tok, e.seg)?;
        g.add(ts, e.pos)
    }

    /// Embedding layer norm and dropout followed by the encoder layers.
    pub fn transform(
        &self,
        g: &mut Graph,
        s: NodeId,
        input: &EncodedInput,
        masks: Option<&ExampleMasks>,
    ) -> Result<NodeId> {
        let cfg = &self.config;
        let mut x = g.layer_norm(s, self.ids[3], self.ids[4])?;
        if let Some(m) = masks {
            x = g.dropout(x, &m.embedding, m.hidden_keep_prob)?;
        }
        let mask_row: Vec<Real> = (0..cfg.seq_len)
            .map(|i| if i < input.true_length { 0.0 } else { ATTENTION_MASK_VALUE })
            .collect();
        let mask_row = g.constant(Tensor::from_vec(mask_row))?;
        for n in 0..cfg.layers {
            x = self.encoder_layer(g, x, n, mask_row, masks)?;
        }
        Ok(x)
    }

    fn dense(&self, g: &mut Graph, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xw = g.matmul(x, w)?;
        g.add_row(xw, b)
    }

    fn encoder_layer(
        &self,
        g: &mut Graph,
        x: NodeId,
        n: usize,
        mask_row: NodeId,
        masks: Option<&ExampleMasks>,
    ) -> Result<NodeId> {
        let cfg = &self.config;
        let p = |i| self.layer(n, i);
        let q = self.dense(g, x, p(0), p(1))?;
        let k = self.dense(g, x, p(2), p(3))?;
        let v = self.dense(g, x, p(4), p(5))?;
        let d = cfg.head_dim();
        let scale = 1.0 / (d as Real).sqrt();
        let mut heads = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let (lo, hi) = (h * d, (h + 1) * d);
            let qh = g.slice(q, 1, lo, hi)?;
            let kh = g.slice(k, 1, lo, hi)?;
            let vh = g.slice(v, 1, lo, hi)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale)?;
            let scores = g.add_row(scores, mask_row)?;
            let weights = g.softmax(scores)?;
            heads.push(g.matmul(weights, vh)?);
        }
        let context = if heads.len() == 1 { heads[0] } else { g.concat(&heads, 1)? };
        let mut attn = self.dense(g, context, p(6), p(7))?;
        if let Some(m) = masks {
            attn = g.dropout(attn, &m.attention[n], m.hidden_keep_prob)?;
        }
        let res = g.add(x, attn)?;
        let x1 = g.layer_norm(res, p(8), p(9))?;

        let inter = self.dense(g, x1, p(10), p(11))?;
        let inter = g.gelu(inter)?;
        let mut out = self.dense(g, inter, p(12), p(13))?;
        if let Some(m) = masks {
            out = g.dropout(out, &m.ffn[n], m.hidden_keep_prob)?;
        }
        let res = g.add(x1, out)?;
        g.layer_norm(res, p(14), p(15))
    }

    /// `h = tanh(v[0] · W + b)`, a `1×H` row.
    pub fn pool(&self, g: &mut Graph, v: NodeId) -> Result<NodeId> {
        let (w, b) = self.pool_ids();
        let cls = g.slice(v, 0, 0, 1)?;
        let z = self.dense(g, cls, w, b)?;
        g.tanh(z)
    }

    /// Logits `z = dropout(h) · W + b`, a `1×k` row.
    pub fn classify(&self, g: &mut Graph, h: NodeId, masks: Option<&ExampleMasks>) -> Result<NodeId> {
        let (w, b) = self.classifier_ids();
        let h = match masks {
            Some(m) => g.dropout(h, &m.classifier, m.classifier_keep_prob)?,
            None => h,
        };
        self.dense(g, h, w, b)
    }

    /// Full pass for one example. `perturbation`, when given, is added to `s`
    /// as a constant (the addition gate). Components listed in `track` get
    /// their gradients computed by a later backward pass.
    pub fn forward_example(
        &self,
        g: &mut Graph,
        input: &EncodedInput,
        perturbation: Option<&[Real]>,
        masks: Option<&ExampleMasks>,
        track: &[crate::adversary::Component],
    ) -> Result<ForwardNodes> {
        let embeddings = self.embed(g, input)?;
        for c in track {
            g.track_grad(c.node(&embeddings))?;
        }
        let s = self.sum_embeddings(g, &embeddings)?;
        let encoder_input = match perturbation {
            Some(r) => {
                let shape = g.shape(s).to_vec();
                let r = g.constant(Tensor::new(shape, r.to_vec())?)?;
                g.add(s, r)?
            }
            None => s,
        };
        let hidden = self.transform(g, encoder_input, input, masks)?;
        let pooled = self.pool(g, hidden)?;
        let logits = self.classify(g, pooled, masks)?;
        Ok(ForwardNodes {
            embeddings,
            encoder_input,
            hidden,
            pooled,
            logits,
        })
    }
}

/// Output of the softmax head for one sentence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub logits: Vec<Real>,
    pub probabilities: Vec<Real>,
    /// Check-worthiness score: the probability of the CFS class.
    pub cws: Real,
    pub label: Label,
}

impl Prediction {
    pub fn from_logits(logits: &[Real]) -> Self {
        let max = logits.iter().copied().fold(Real::NEG_INFINITY, Real::max);
        let exps: Vec<Real> = logits.iter().map(|z| (z - max).exp()).collect();
        let total: Real = exps.iter().sum();
        let probabilities: Vec<Real> = exps.iter().map(|e| e / total).collect();
        let cws = probabilities[Label::Cfs.index()];
        let label = if probabilities[Label::Cfs.index()] > probabilities[Label::Ncs.index()] {
            Label::Cfs
        } else {
            Label::Ncs
        };
        Self {
            logits: logits.to_vec(),
            probabilities,
            cws,
            label,
        }
    }
}

/// The three component embeddings of one input and their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBundle {
    pub tok: Tensor,
    pub seg: Tensor,
    pub pos: Tensor,
    pub sum: Tensor,
}

fn tensor_of(g: &Graph, id: NodeId) -> Tensor {
    let values = g.value(id).expect("node evaluated").to_vec();
    Tensor::new(g.shape(id).to_vec(), values).expect("shape preserved")
}

/// Looks up the three embeddings of `input`.
pub fn embed(input: &EncodedInput, params: &Params) -> Result<EmbeddingBundle> {
    let mut g = Graph::new();
    let p = ParamNodes::bind(&mut g, params)?;
    let e = p.embed(&mut g, input)?;
    let s = p.sum_embeddings(&mut g, &e)?;
    g.forward(s)?;
    Ok(EmbeddingBundle {
        tok: tensor_of(&g, e.tok),
        seg: tensor_of(&g, e.seg),
        pos: tensor_of(&g, e.pos),
        sum: tensor_of(&g, s),
    })
}

/// Encoder stack applied to `s_in` (inference mode, no dropout).
pub fn transform(s_in: &Tensor, input: &EncodedInput, params: &Params) -> Result<Tensor> {
    let mut g = Graph::new();
    let p = ParamNodes::bind(&mut g, params)?;
    let s = g.constant(s_in.clone())?;
    let v = p.transform(&mut g, s, input, None)?;
    g.forward(v)?;
    Ok(tensor_of(&g, v))
}

/// Pooled `[CLS]` representation of hidden states `v` (`T×H`).
pub fn pool(v: &Tensor, params: &Params) -> Result<Tensor> {
    let mut g = Graph::new();
    let p = ParamNodes::bind(&mut g, params)?;
    let v = g.constant(v.clone())?;
    let h = p.pool(&mut g, v)?;
    g.forward(h)?;
    Ok(tensor_of(&g, h))
}

/// Softmax head over pooled vector `h`; `mask` applies classifier dropout.
pub fn classify(h: &Tensor, params: &Params, mask: Option<(&[bool], Real)>) -> Result<Prediction> {
    let cfg = params.config();
    let mut g = Graph::new();
    let p = ParamNodes::bind(&mut g, params)?;
    let h = g.constant(Tensor::new(vec![1, cfg.hidden_size], h.values().to_vec())?)?;
    let h = match mask {
        Some((m, keep)) => g.dropout(h, m, keep)?,
        None => h,
    };
    let z = p.classify(&mut g, h, None)?;
    let z = g.forward(z)?;
    Ok(Prediction::from_logits(z.values()))
}

/// End-to-end inference for one encoded input.
pub fn predict(input: &EncodedInput, params: &Params) -> Result<Prediction> {
    let mut g = Graph::new();
    let p = ParamNodes::bind(&mut g, params)?;
    let nodes = p.forward_example(&mut g, input, None, None, &[])?;
    let z = g.forward(nodes.logits)?;
    Ok(Prediction::from_logits(z.values()))
}

/// Inference over many inputs, sharing one parameter binding per chunk.
pub fn predict_batch(inputs: &[EncodedInput], params: &Params) -> Result<Vec<Prediction>> {
    const CHUNK: usize = 64;
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(CHUNK) {
        let mut g = Graph::new();
        let p = ParamNodes::bind(&mut g, params)?;
        let mut logits = Vec::with_capacity(chunk.len());
        for input in chunk {
            logits.push(p.forward_example(&mut g, input, None, None, &[])?.logits);
        }
        let Some(&last) = logits.last() else { continue };
        g.forward(last)?;
        for z in logits {
            out.push(Prediction::from_logits(g.value(z).expect("evaluated")));
        }
    }
    Ok(out)
}
