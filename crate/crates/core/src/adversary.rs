//! Gradient-based adversarial perturbation of the input embeddings: the
//! perturbable subsets, the normalized worst-case direction, the perturbed
//! embedding, and the standard, adversarial and compound losses.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Real, Tensor};
use crate::error::{Error, Result};
use crate::model::{EmbeddingBundle, EmbeddingNodes, ExampleMasks, ForwardNodes, ParamNodes, Params};
use crate::text::EncodedInput;

/// One of the three additive embedding components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Pos,
    Seg,
    Tok,
}

impl Component {
    pub fn name(self) -> &'static str {
        match self {
            Component::Pos => "pos",
            Component::Seg => "seg",
            Component::Tok => "tok",
        }
    }

    /// The graph node holding this component for one example.
    pub fn node(self, e: &EmbeddingNodes) -> NodeId {
        match self {
            Component::Pos => e.pos,
            Component::Seg => e.seg,
            Component::Tok => e.tok,
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

use Component::{Pos, Seg, Tok};

const SUBSETS: [&[Component]; 7] = [
    &[Pos, Seg, Tok],
    &[Pos, Seg],
    &[Pos, Tok],
    &[Seg, Tok],
    &[Pos],
    &[Seg],
    &[Tok],
];

/// A non-empty subset of embedding components, identified by `0..=6`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct PerturbSubset(u8);

impl PerturbSubset {
    /// Perturb the token embeddings only.
    pub const TOK: PerturbSubset = PerturbSubset(6);

    pub fn from_id(id: u8) -> Result<Self> {
        if usize::from(id) < SUBSETS.len() {
            Ok(Self(id))
        } else {
            Err(Error::Config(format!("perturbation subset id {id} outside 0..=6")))
        }
    }

    /// Subset containing exactly `components` (order and repeats ignored).
    pub fn from_components(components: &[Component]) -> Option<Self> {
        let mut wanted: Vec<Component> = components.to_vec();
        wanted.sort();
        wanted.dedup();
        SUBSETS
            .iter()
            .position(|s| *s == wanted.as_slice())
            .map(|i| Self(i as u8))
    }

    pub fn id(self) -> u8 {
        self.0
    }

    /// Members in `pos, seg, tok` order.
    pub fn components(self) -> &'static [Component] {
        SUBSETS[usize::from(self.0)]
    }

    pub fn label(self) -> String {
        self.components()
            .iter()
            .map(|c| c.name())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl Default for PerturbSubset {
    fn default() -> Self {
        Self::TOK
    }
}

impl TryFrom<u8> for PerturbSubset {
    type Error = Error;

    fn try_from(id: u8) -> Result<Self> {
        Self::from_id(id)
    }
}

impl From<PerturbSubset> for u8 {
    fn from(s: PerturbSubset) -> u8 {
        s.0
    }
}

/// All seven perturbable subsets, indexed by id.
pub fn perturbable_set() -> Vec<PerturbSubset> {
    (0..SUBSETS.len() as u8).map(PerturbSubset).collect()
}

/// Which components to perturb, the norm bound and the loss balance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbConfig {
    pub subset: PerturbSubset,
    pub epsilon: Real,
    pub lambda: Real,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            subset: PerturbSubset::TOK,
            epsilon: 2.0,
            lambda: 0.1,
        }
    }
}

impl PerturbConfig {
    pub fn new(subset: PerturbSubset, epsilon: Real, lambda: Real) -> Result<Self> {
        let c = Self {
            subset,
            epsilon,
            lambda,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon {} must be positive", self.epsilon)));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda {} must be non-negative", self.lambda)));
        }
        Ok(())
    }
}

/// Losses of one batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossReport {
    pub reg: Real,
    pub adv: Option<Real>,
    pub total: Real,
    pub batch_size: usize,
}

impl LossReport {
    pub fn standard(reg: Real, batch_size: usize) -> Self {
        Self {
            reg,
            adv: None,
            total: reg,
            batch_size,
        }
    }

    pub fn adversarial(reg: Real, adv: Real, lambda: Real, batch_size: usize) -> Self {
        Self {
            reg,
            adv: Some(adv),
            total: compound_objective(reg, adv, lambda),
            batch_size,
        }
    }
}

/// `reg + lambda * adv`.
pub fn compound_objective(reg: Real, adv: Real, lambda: Real) -> Real {
    reg + lambda * adv
}

/// A batch forward pass with its mean negative log-likelihood, kept alive so
/// gradients can be read after `backward`.
#[derive(Debug, Clone)]
pub struct BatchPass {
    graph: Graph,
    params: ParamNodes,
    examples: Vec<ForwardNodes>,
    example_losses: Vec<NodeId>,
    loss: NodeId,
    tracked: Vec<Component>,
    loss_value: Real,
}

impl BatchPass {
    /// Builds and evaluates the loss graph. `perturbations`, when given, are
    /// added to each example's summed embedding before the encoder.
    fn build(
        batch: &[EncodedInput],
        params: &Params,
        perturbations: Option<&[Tensor]>,
        masks: Option<&[ExampleMasks]>,
        track: &[Component],
    ) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        if let Some(m) = masks {
            if m.len() != batch.len() {
                return Err(Error::Contract(format!("{} masks for {} examples", m.len(), batch.len())));
            }
        }
        if let Some(r) = perturbations {
            if r.len() != batch.len() {
                return Err(Error::Contract(format!(
                    "{} perturbations for {} examples",
                    r.len(),
                    batch.len()
                )));
            }
        }
        let mut g = Graph::new();
        let p = ParamNodes::bind(&mut g, params)?;
        let mut examples = Vec::with_capacity(batch.len());
        let mut example_losses = Vec::with_capacity(batch.len());
        for (n, input) in batch.iter().enumerate() {
            let label = input
                .label
                .ok_or_else(|| Error::Contract(format!("batch example {n} has no label")))?;
            let r = perturbations.map(|r| r[n].values());
            let nodes = p.forward_example(&mut g, input, r, masks.map(|m| &m[n]), track)?;
            let logp = g.log_softmax(nodes.logits)?;
            let y = label.index();
            let picked = g.slice(logp, 1, y, y + 1)?;
            example_losses.push(g.scale(picked, -1.0)?);
            examples.push(nodes);
        }
        let stacked = if example_losses.len() == 1 {
            example_losses[0]
        } else {
            g.concat(&example_losses, 0)?
        };
        let loss = g.mean(stacked)?;
        let loss_value = g.forward(loss)?.values()[0];
        Ok(Self {
            graph: g,
            params: p,
            examples,
            example_losses,
            loss,
            tracked: track.to_vec(),
            loss_value,
        })
    }

    pub fn loss(&self) -> Real {
        self.loss_value
    }

    pub fn batch_size(&self) -> usize {
        self.examples.len()
    }

    /// Per-example negative log-likelihoods.
    pub fn example_losses(&self) -> Vec<Real> {
        self.example_losses
            .iter()
            .map(|&id| self.graph.value(id).expect("evaluated")[0])
            .collect()
    }

    pub fn examples(&self) -> &[ForwardNodes] {
        &self.examples
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    /// Backpropagates the mean loss. Idempotent.
    pub fn backward(&mut self) -> Result<()> {
        if self.graph.grad(self.loss).is_none() {
            self.graph.backward(self.loss)?;
        }
        Ok(())
    }

    /// Loss gradient for each parameter tensor in manifest order; `None` for
    /// frozen tensors. Requires [`BatchPass::backward`].
    pub fn param_grads(&self) -> Result<Vec<Option<&[Real]>>> {
        if self.graph.grad(self.loss).is_none() {
            return Err(Error::State("parameter gradients read before backward".into()));
        }
        Ok(self
            .params
            .ids()
            .iter()
            .map(|&id| self.graph.grad(id))
            .collect())
    }

    /// Gradient of example `n`'s log-likelihood with respect to the sum of
    /// the components in `subset`, flattened `T×H`.
    ///
    /// The sum is an identity-weighted part of `s`, so this equals the
    /// gradient with respect to any one selected component; it is read from
    /// the first one.
    pub fn likelihood_gradient(&self, n: usize, subset: PerturbSubset) -> Result<Vec<Real>> {
        let component = subset.components()[0];
        if !self.tracked.contains(&component) {
            return Err(Error::Contract(format!(
                "component {component} was not tracked in this pass"
            )));
        }
        let node = component.node(&self.examples[n].embeddings);
        let grad = self
            .graph
            .grad(node)
            .ok_or_else(|| Error::State("embedding gradient read before backward".into()))?;
        // The loss is the batch mean of negative log-likelihoods.
        let scale = -(self.examples.len() as Real);
        Ok(grad.iter().map(|g| g * scale).collect())
    }
}

/// Mean negative log-likelihood of a labeled batch. Components in `track`
/// become gradient targets for a later perturbation.
pub fn standard_loss(
    batch: &[EncodedInput],
    params: &Params,
    masks: Option<&[ExampleMasks]>,
    track: &[Component],
) -> Result<BatchPass> {
    BatchPass::build(batch, params, None, masks, track)
}

/// Second pass with `perturbations[n]` added to example `n`'s summed
/// embedding.
pub fn adversarial_loss(
    batch: &[EncodedInput],
    perturbations: &[Tensor],
    params: &Params,
    masks: Option<&[ExampleMasks]>,
) -> Result<BatchPass> {
    BatchPass::build(batch, params, Some(perturbations), masks, &[])
}

/// `-epsilon * omega / ||omega||`, or `None` when `omega` is zero.
pub fn perturbation_from_gradient(omega: &[Real], epsilon: Real) -> Option<Vec<Real>> {
    let norm = omega.iter().map(|w| w * w).sum::<Real>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return None;
    }
    Some(omega.iter().map(|w| -epsilon * w / norm).collect())
}

/// Perturbation for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub r: Tensor,
    /// The gradient vanished, so `r` is zero.
    pub degenerate: bool,
}

/// Per-example perturbations of norm `epsilon` along the direction that
/// increases each example's loss, from the gradients of a standard pass.
/// Runs the backward pass if it has not happened yet.
pub fn adversarial_perturbation(pass: &mut BatchPass, subset: PerturbSubset, epsilon: Real) -> Result<Vec<Perturbation>> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon {epsilon} must be positive")));
    }
    pass.backward()?;
    let cfg = pass.params.config();
    let shape = vec![cfg.seq_len, cfg.hidden_size];
    (0..pass.batch_size())
        .map(|n| {
            let omega = pass.likelihood_gradient(n, subset)?;
            Ok(match perturbation_from_gradient(&omega, epsilon) {
                Some(r) => Perturbation {
                    r: Tensor::new(shape.clone(), r)?,
                    degenerate: false,
                },
                None => Perturbation {
                    r: Tensor::zeros(shape.clone()),
                    degenerate: true,
                },
            })
        })
        .collect()
}

/// `s' = s_tok + s_seg + s_pos + r`.
pub fn perturbed_embedding(bundle: &EmbeddingBundle, r: &Tensor) -> Result<Tensor> {
    for part in [&bundle.tok, &bundle.seg, &bundle.pos] {
        if part.shape() != r.shape() {
            return Err(Error::Dimension {
                op: "perturbed_embedding",
                lhs: part.shape().to_vec(),
                rhs: r.shape().to_vec(),
            });
        }
    }
    let values = bundle
        .tok
        .values()
        .iter()
        .zip(bundle.seg.values())
        .zip(bundle.pos.values())
        .zip(r.values())
        .map(|(((t, s), p), r)| ((t + s) + p) + r)
        .collect();
    Tensor::new(r.shape().to_vec(), values)
}
