use serde::{Deserialize, Serialize};

use super::Label;
use crate::error::{Error, Result};

/// Screening weight when the coder matches the expert label.
pub const AGREE_WEIGHT: f64 = -0.2;
/// Screening weight when the coder contradicts the expert label.
pub const DISAGREE_WEIGHT: f64 = 2.5;

/// A survey participant's labeling history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoderRecord {
    pub coder_id: String,
    /// `(given, expert)` label pairs on screening sentences.
    pub screening: Vec<(Label, Label)>,
    pub answered: usize,
    pub skipped: usize,
    /// Mean token length of the sentences this coder labeled.
    pub mean_length: f64,
    /// Mean token length over the whole corpus.
    pub corpus_mean_length: f64,
}

/// Mean screening weight; lower is better.
pub fn coder_quality(record: &CoderRecord) -> Result<f64> {
    if record.screening.is_empty() {
        return Err(Error::Input(format!(
            "coder {} has no screening answers",
            record.coder_id
        )));
    }
    let total: f64 = record
        .screening
        .iter()
        .map(|(given, expert)| if given == expert { AGREE_WEIGHT } else { DISAGREE_WEIGHT })
        .sum();
    Ok(total / record.screening.len() as f64)
}

/// Pay per sentence in cents:
/// `(mean_length / corpus_mean_length)^1.5 * (3 - 7 * quality / 0.2) * 0.6^(skipped / answered)`.
pub fn pay_rate(record: &CoderRecord) -> Result<f64> {
    if !(record.corpus_mean_length > 0.0) {
        return Err(Error::Input(format!(
            "corpus mean length {} must be positive",
            record.corpus_mean_length
        )));
    }
    if record.answered == 0 {
        return Err(Error::Input(format!("coder {} answered nothing", record.coder_id)));
    }
    let quality = coder_quality(record)?;
    let length = (record.mean_length / record.corpus_mean_length).powf(1.5);
    let accuracy = 3.0 - 7.0 * quality / 0.2;
    let skipping = 0.6f64.powf(record.skipped as f64 / record.answered as f64);
    Ok(length * accuracy * skipping)
}

/// Thresholds a coder must meet for their labels to count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityRule {
    /// Minimum pay rate in cents.
    pub min_pay_rate: f64,
    pub min_answered: usize,
}

impl Default for QualityRule {
    fn default() -> Self {
        Self {
            min_pay_rate: 5.0,
            min_answered: 100,
        }
    }
}

impl QualityRule {
    pub fn is_high_quality(&self, record: &CoderRecord) -> Result<bool> {
        Ok(record.answered >= self.min_answered && pay_rate(record)? >= self.min_pay_rate)
    }
}

/// The label given unanimously by at least two high-quality coders, if any.
/// Labels from other coders are ignored.
pub fn consensus_label(labels: &[(Label, bool)]) -> Option<Label> {
    let mut qualified = labels.iter().filter(|(_, hq)| *hq).map(|(l, _)| *l);
    let first = qualified.next()?;
    let mut count = 1;
    for l in qualified {
        if l != first {
            return None;
        }
        count += 1;
    }
    (count >= 2).then_some(first)
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Cfs, Ncs};

    fn record(screening: Vec<(Label, Label)>, answered: usize, skipped: usize) -> CoderRecord {
        CoderRecord {
            coder_id: "p".into(),
            screening,
            answered,
            skipped,
            mean_length: 12.0,
            corpus_mean_length: 12.0,
        }
    }

    #[test]
    fn quality_mixed() {
        let r = record(vec![(Ncs, Ncs), (Cfs, Cfs), (Ncs, Ncs), (Cfs, Ncs)], 10, 0);
        let oracle = (3.0 * -0.2 + 2.5) / 4.0;
        assert!((coder_quality(&r).unwrap() - oracle).abs() < 1e-12);
        assert!((oracle - 0.475).abs() < 1e-12);
    }

    #[test]
    fn quality_extremes() {
        assert!((coder_quality(&record(vec![(Cfs, Cfs); 3], 3, 0)).unwrap() + 0.2).abs() < 1e-12);
        assert!((coder_quality(&record(vec![(Cfs, Ncs); 3], 3, 0)).unwrap() - 2.5).abs() < 1e-12);
        assert!(matches!(coder_quality(&record(vec![], 3, 0)), Err(Error::Input(_))));
    }

    #[test]
    fn pay_rate_examples() {
        // Quality zero needs agreements and disagreements in ratio 25:2.
        let mut zero = vec![(Ncs, Ncs); 25];
        zero.extend([(Ncs, Cfs); 2]);
        assert!(coder_quality(&record(zero.clone(), 1, 0)).unwrap().abs() < 1e-12);
        assert!((pay_rate(&record(zero.clone(), 50, 0)).unwrap() - 3.0).abs() < 1e-9);
        assert!((pay_rate(&record(zero, 50, 50)).unwrap() - 1.8).abs() < 1e-9);
        assert!((pay_rate(&record(vec![(Cfs, Cfs)], 50, 0)).unwrap() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn pay_rate_scales_length_ratio() {
        let mut r = record(vec![(Cfs, Cfs)], 10, 0);
        r.mean_length = 24.0;
        assert!((pay_rate(&r).unwrap() - 10.0 * 2f64.powf(1.5)).abs() < 1e-9);
        r.corpus_mean_length = 0.0;
        assert!(matches!(pay_rate(&r), Err(Error::Input(_))));
        let r = record(vec![(Cfs, Cfs)], 0, 0);
        assert!(matches!(pay_rate(&r), Err(Error::Input(_))));
    }

    #[test]
    fn high_quality_thresholds() {
        let rule = QualityRule::default();
        assert!(rule.is_high_quality(&record(vec![(Cfs, Cfs)], 100, 0)).unwrap());
        assert!(!rule.is_high_quality(&record(vec![(Cfs, Cfs)], 99, 0)).unwrap());
        assert!(!rule.is_high_quality(&record(vec![(Cfs, Ncs)], 500, 0)).unwrap());
    }

    #[test]
    fn consensus_rules() {
        assert_eq!(consensus_label(&[(Cfs, true), (Cfs, true)]), Some(Cfs));
        assert_eq!(consensus_label(&[(Cfs, true), (Ncs, true), (Cfs, true)]), None);
        assert_eq!(consensus_label(&[(Cfs, true), (Cfs, false)]), None);
        assert_eq!(consensus_label(&[(Ncs, true), (Cfs, false), (Ncs, true)]), Some(Ncs));
        assert_eq!(consensus_label(&[]), None);
    }
}
