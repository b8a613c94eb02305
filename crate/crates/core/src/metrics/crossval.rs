use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use super::{classification_report, ndcg, ClassificationReport};
use crate::autodiff::Real;
use crate::corpus::{stratified_folds, stratified_holdout, Label, LabeledSentence};
use crate::error::{Error, Result};
use crate::model::{predict_batch, Prediction};
use crate::text::{encode_labeled, Tokenizer, Vocab};
use crate::trainer::{train, RunConfig};

/// Protocol settings for [`cross_validate`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossValOptions {
    pub folds: usize,
    /// Seeds fold assignment and the validation slices.
    pub seed: u64,
    /// Fraction of each fold's non-test items held out for epoch selection.
    pub validation_fraction: f64,
    /// Folds trained concurrently.
    pub jobs: usize,
}

impl Default for CrossValOptions {
    fn default() -> Self {
        Self {
            folds: 4,
            seed: 0,
            validation_fraction: 0.1,
            jobs: 1,
        }
    }
}

/// Outcome of one fold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_size: usize,
    pub validation_size: usize,
    pub test_size: usize,
    pub vocab_size: usize,
    pub best_epoch: usize,
    pub validation_weighted_f1: Real,
    pub report: ClassificationReport,
    pub ndcg: Real,
}

/// Pooled and per-fold results.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossValReport {
    pub folds: usize,
    pub seed: u64,
    pub config: serde_json::Value,
    /// Report over the test predictions of all folds together.
    pub pooled: ClassificationReport,
    /// nDCG of all test items ranked as one list.
    pub pooled_ndcg: Real,
    /// Mean of the per-fold nDCG values.
    pub mean_fold_ndcg: Real,
    pub per_fold: Vec<FoldReport>,
}

struct FoldOutcome {
    report: FoldReport,
    test: Vec<usize>,
    predictions: Vec<Prediction>,
}

fn run_fold(
    fold: usize,
    sentences: &[LabeledSentence],
    labels: &[Label],
    assignment: &[usize],
    config: &RunConfig,
    tokenizer: &dyn Tokenizer,
    options: &CrossValOptions,
) -> Result<FoldOutcome> {
    let test: Vec<usize> = (0..sentences.len()).filter(|&i| assignment[i] == fold).collect();
    let rest: Vec<usize> = (0..sentences.len()).filter(|&i| assignment[i] != fold).collect();
    let fold_seed = options.seed.wrapping_add(fold as u64);
    let (train_idx, val_idx) = stratified_holdout(&rest, labels, options.validation_fraction, fold_seed)?;
    for (name, split) in [("test", &test), ("training", &train_idx)] {
        for class in Label::ALL {
            if !split.iter().any(|&i| labels[i] == class) {
                return Err(Error::Stratification(format!("fold {fold} {name} split has no {class}")));
            }
        }
    }
    let pick = |idx: &[usize]| idx.iter().map(|&i| sentences[i].clone()).collect::<Vec<_>>();
    let (train_s, val_s, test_s) = (pick(&train_idx), pick(&val_idx), pick(&test));

    let texts: Vec<&str> = train_s.iter().map(|s| s.text.as_str()).collect();
    let vocab = Vocab::build(&texts, config.model.vocab_size, tokenizer)?;
    let mut model = config.model.clone();
    model.vocab_size = vocab.len();
    let mut train_cfg = config.train.clone();
    train_cfg.seed = train_cfg.seed.wrapping_add(fold as u64);

    let encode = |s: &[LabeledSentence]| encode_labeled(s, &vocab, tokenizer, model.seq_len);
    let (train_e, val_e, test_e) = (encode(&train_s)?, encode(&val_s)?, encode(&test_s)?);
    let outcome = train(&train_e, &val_e, &model, &train_cfg, None)?;
    let predictions = predict_batch(&test_e, &outcome.params)?;
    let gold: Vec<Label> = test_s.iter().map(|s| s.label).collect();
    let predicted: Vec<Label> = predictions.iter().map(|p| p.label).collect();
    let ranked: Vec<(Real, bool)> = predictions
        .iter()
        .zip(&gold)
        .map(|(p, &g)| (p.cws, g == Label::Cfs))
        .collect();
    Ok(FoldOutcome {
        report: FoldReport {
            fold,
            train_size: train_idx.len(),
            validation_size: val_idx.len(),
            test_size: test.len(),
            vocab_size: vocab.len(),
            best_epoch: outcome.best_epoch,
            validation_weighted_f1: outcome.best_weighted_f1,
            report: classification_report(&predicted, &gold)?,
            ndcg: ndcg(&ranked, ranked.len()),
        },
        test,
        predictions,
    })
}

/// Stratified k-fold evaluation. Each fold builds its vocabulary from its
/// training split, trains with validation-based epoch selection, and
/// predicts its test split; the pooled report covers every test prediction.
/// Results do not depend on `jobs`.
pub fn cross_validate(
    sentences: &[LabeledSentence],
    config: &RunConfig,
    tokenizer: &dyn Tokenizer,
    options: &CrossValOptions,
) -> Result<CrossValReport> {
    config.validate()?;
    let labels: Vec<Label> = sentences.iter().map(|s| s.label).collect();
    let assignment = stratified_folds(&labels, options.folds, options.seed)?;

    let slots: Vec<Mutex<Option<Result<FoldOutcome>>>> = (0..options.folds).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = options.jobs.clamp(1, options.folds);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let fold = next.fetch_add(1, Ordering::SeqCst);
                if fold >= options.folds {
                    break;
                }
                let result = run_fold(fold, sentences, &labels, &assignment, config, tokenizer, options);
                *slots[fold].lock().expect("slot lock") = Some(result);
            });
        }
    });

    let mut cws = vec![0.0; sentences.len()];
    let mut predicted = vec![Label::Ncs; sentences.len()];
    let mut per_fold = Vec::with_capacity(options.folds);
    for slot in slots {
        let outcome = slot.into_inner().expect("slot lock").expect("every fold ran")?;
        for (&i, p) in outcome.test.iter().zip(&outcome.predictions) {
            cws[i] = p.cws;
            predicted[i] = p.label;
        }
        per_fold.push(outcome.report);
    }
    let ranked: Vec<(Real, bool)> = cws.iter().zip(&labels).map(|(&c, &l)| (c, l == Label::Cfs)).collect();
    Ok(CrossValReport {
        folds: options.folds,
        seed: options.seed,
        config: config.to_json(),
        pooled: classification_report(&predicted, &labels)?,
        pooled_ndcg: ndcg(&ranked, ranked.len()),
        mean_fold_ndcg: per_fold.iter().map(|f| f.ndcg).sum::<Real>() / per_fold.len() as Real,
        per_fold,
    })
}
