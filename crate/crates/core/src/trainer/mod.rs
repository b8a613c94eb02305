//! The adversarial training loop: initialization and freezing, the shared
//! dropout masks, the standard and perturbed passes of each batch, Adam
//! updates on the compound objective, and validation-based epoch selection.

mod config;

pub use config::{RunConfig, TrainConfig};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::adversary::{adversarial_loss, adversarial_perturbation, standard_loss, LossReport};
use crate::autodiff::{PassCounts, Real, Tensor};
use crate::error::{Error, Result};
use crate::metrics::classification_report;
use crate::model::{predict_batch, ExampleMasks, ModelConfig, Params};
use crate::text::EncodedInput;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam moments, one pair per parameter tensor; frozen tensors have none.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    lr: f64,
    step: u64,
    moments: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl Adam {
    pub fn new(params: &Params, lr: f64) -> Self {
        let moments = params
            .tensors()
            .iter()
            .map(|t| t.trainable.then(|| (vec![0.0; t.len()], vec![0.0; t.len()])))
            .collect();
        Self { lr, step: 0, moments }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Whether moments exist for tensor `i`.
    pub fn tracks(&self, i: usize) -> bool {
        self.moments.get(i).is_some_and(Option::is_some)
    }

    /// Applies one update. `grads[i]` is ignored for frozen tensors and a
    /// missing gradient counts as zero.
    pub fn update(&mut self, params: &mut Params, grads: &[Option<Vec<Real>>]) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for (i, tensor) in params.tensors_mut().iter_mut().enumerate() {
            let Some((m, v)) = self.moments[i].as_mut() else {
                continue;
            };
            let grad = grads.get(i).and_then(Option::as_deref);
            for j in 0..tensor.values.len() {
                let g = grad.map_or(0.0, |g| g[j]);
                m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g;
                v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g * g;
                let update = self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + ADAM_EPS);
                tensor.values[j] = (f64::from(tensor.values[j]) - update) as f32;
            }
        }
    }
}

/// Everything that changes across training steps.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: Params,
    pub optimizer: Adam,
    pub epoch: usize,
    pub rng: ChaCha8Rng,
    /// Forward and backward passes run so far.
    pub counts: PassCounts,
}

/// Builds the initial state. With `pretrained`, every parameter except the
/// classifier is copied from it; the classifier is always freshly
/// Xavier-initialized.
pub fn initialize(model: &ModelConfig, config: &TrainConfig, pretrained: Option<&Params>) -> Result<TrainState> {
    model.validate()?;
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = match pretrained {
        Some(p) => {
            let mut loaded = Params::from_tensors(
                model,
                p.tensors()
                    .iter()
                    .map(|t| (t.name.clone(), t.shape.clone(), t.values.clone()))
                    .collect(),
            )?;
            loaded.init_classifier(&mut rng);
            loaded
        }
        None => Params::init_random(model, &mut rng)?,
    };
    params.apply_freezing(config.freeze_embeddings.unwrap_or(pretrained.is_some()));
    let optimizer = Adam::new(&params, config.cs_lr);
    Ok(TrainState {
        params,
        optimizer,
        epoch: 0,
        rng,
        counts: PassCounts::default(),
    })
}

fn add_counts(total: &mut PassCounts, more: PassCounts) {
    total.forward += more.forward;
    total.backward += more.backward;
}

fn owned_grads(grads: Vec<Option<&[Real]>>) -> Vec<Option<Vec<Real>>> {
    grads.into_iter().map(|g| g.map(<[Real]>::to_vec)).collect()
}

/// How the perturbation of an adversarial step is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PerturbationSource {
    /// The normalized loss-gradient direction.
    #[default]
    Gradient,
    /// A zero perturbation; the perturbed pass repeats the standard one.
    Zero,
}

/// One optimizer step on `batch` with the given per-example dropout masks.
pub fn train_step(
    state: &mut TrainState,
    batch: &[EncodedInput],
    masks: &[ExampleMasks],
    config: &TrainConfig,
    source: PerturbationSource,
) -> Result<LossReport> {
    let n = batch.len();
    if !config.adversarial {
        let mut pass = standard_loss(batch, &state.params, Some(masks), &[])?;
        pass.backward()?;
        add_counts(&mut state.counts, pass.graph().counts());
        let report = LossReport::standard(pass.loss(), n);
        let grads = owned_grads(pass.param_grads()?);
        ensure_finite(&report)?;
        state.optimizer.update(&mut state.params, &grads);
        return Ok(report);
    }

    let perturb = config.perturb();
    let mut first = standard_loss(batch, &state.params, Some(masks), perturb.subset.components())?;
    let perturbations: Vec<Tensor> = match source {
        PerturbationSource::Gradient => adversarial_perturbation(&mut first, perturb.subset, perturb.epsilon)?
            .into_iter()
            .map(|p| p.r)
            .collect(),
        PerturbationSource::Zero => {
            first.backward()?;
            let cfg = state.params.config();
            vec![Tensor::zeros(vec![cfg.seq_len, cfg.hidden_size]); n]
        }
    };
    add_counts(&mut state.counts, first.graph().counts());
    let mut second = adversarial_loss(batch, &perturbations, &state.params, Some(masks))?;
    second.backward()?;
    add_counts(&mut state.counts, second.graph().counts());

    let report = LossReport::adversarial(first.loss(), second.loss(), perturb.lambda, n);
    ensure_finite(&report)?;
    let reg_grads = first.param_grads()?;
    let adv_grads = second.param_grads()?;
    let lambda = perturb.lambda;
    let grads: Vec<Option<Vec<Real>>> = reg_grads
        .into_iter()
        .zip(adv_grads)
        .map(|(reg, adv)| match (config.cs_combine_reg_adv_loss, reg, adv) {
            // A zero weight leaves the standard gradient untouched bit for bit.
            (true, Some(r), _) if lambda == 0.0 => Some(r.to_vec()),
            (true, Some(r), Some(a)) => Some(r.iter().zip(a).map(|(r, a)| r + lambda * a).collect()),
            (true, r, None) => r.map(<[Real]>::to_vec),
            (true, None, Some(a)) => Some(a.iter().map(|a| lambda * a).collect()),
            (false, _, a) => a.map(|a| a.iter().map(|a| lambda * a).collect()),
        })
        .collect();
    state.optimizer.update(&mut state.params, &grads);
    Ok(report)
}

fn ensure_finite(report: &LossReport) -> Result<()> {
    if report.total.is_finite() && report.reg.is_finite() && report.adv.is_none_or(Real::is_finite) {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss { batch: 0 })
    }
}

/// Mean losses of one epoch, weighted by batch size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub reg_loss: Real,
    pub adv_loss: Option<Real>,
    pub total_loss: Real,
    pub batches: usize,
    pub validation_weighted_f1: Option<Real>,
}

/// Draws dropout masks for `count` examples.
pub fn sample_masks(state: &mut TrainState, config: &TrainConfig, count: usize) -> Vec<ExampleMasks> {
    let model = state.params.config().clone();
    (0..count)
        .map(|_| ExampleMasks::sample(&model, config.cs_kp_cls, &mut state.rng))
        .collect()
}

/// One pass over `data` in a freshly shuffled order.
pub fn train_epoch(state: &mut TrainState, data: &[EncodedInput], config: &TrainConfig) -> Result<EpochReport> {
    if data.is_empty() {
        return Err(Error::Input("cannot train on an empty dataset".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut state.rng);
    let (mut reg, mut adv, mut total) = (0.0, 0.0, 0.0);
    let mut batches = 0;
    for (b, chunk) in order.chunks(config.batch_size()).enumerate() {
        let batch: Vec<EncodedInput> = chunk.iter().map(|&i| data[i].clone()).collect();
        let masks = sample_masks(state, config, batch.len());
        let report = match train_step(state, &batch, &masks, config, PerturbationSource::Gradient) {
            Err(e) if e.is_numeric() => return Err(Error::NonFiniteLoss { batch: b }),
            other => other?,
        };
        let w = batch.len() as Real;
        reg += report.reg * w;
        adv += report.adv.unwrap_or(0.0) * w;
        total += report.total * w;
        batches += 1;
    }
    state.epoch += 1;
    let n = data.len() as Real;
    Ok(EpochReport {
        epoch: state.epoch,
        reg_loss: reg / n,
        adv_loss: config.adversarial.then_some(adv / n),
        total_loss: total / n,
        batches,
        validation_weighted_f1: None,
    })
}

/// Weighted F1 of `params` on labeled inputs.
pub fn evaluate_weighted_f1(params: &Params, data: &[EncodedInput]) -> Result<Real> {
    let predictions = predict_batch(data, params)?;
    let gold = data
        .iter()
        .map(|d| d.label.ok_or_else(|| Error::Contract("validation example without label".into())))
        .collect::<Result<Vec<_>>>()?;
    let predicted: Vec<_> = predictions.iter().map(|p| p.label).collect();
    Ok(classification_report(&predicted, &gold)?.weighted_f1)
}

/// Result of a full training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the selected epoch.
    pub params: Params,
    pub best_epoch: usize,
    pub best_weighted_f1: Real,
    pub history: Vec<EpochReport>,
    pub counts: PassCounts,
}

/// Trains for the configured number of epochs and returns the epoch with
/// the highest validation weighted F1; the earliest epoch wins ties.
pub fn train(
    train_set: &[EncodedInput],
    validation: &[EncodedInput],
    model: &ModelConfig,
    config: &TrainConfig,
    pretrained: Option<&Params>,
) -> Result<TrainOutcome> {
    if validation.is_empty() {
        return Err(Error::Config("validation split is empty".into()));
    }
    let mut state = initialize(model, config, pretrained)?;
    let mut best: Option<(Real, usize, Params)> = None;
    let mut history = Vec::with_capacity(config.epochs());
    for _ in 0..config.epochs() {
        let mut report = train_epoch(&mut state, train_set, config)?;
        let f1 = evaluate_weighted_f1(&state.params, validation)?;
        report.validation_weighted_f1 = Some(f1);
        if best.as_ref().is_none_or(|(b, _, _)| f1 > *b) {
            best = Some((f1, report.epoch, state.params.clone()));
        }
        history.push(report);
    }
    let (best_weighted_f1, best_epoch, params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        params,
        best_epoch,
        best_weighted_f1,
        history,
        counts: state.counts,
    })
}
