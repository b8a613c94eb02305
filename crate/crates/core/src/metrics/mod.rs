//! Classification and ranking metrics, score histograms, and the stratified
//! cross-validation protocol.

mod crossval;

pub use crossval::{cross_validate, CrossValOptions, CrossValReport, FoldReport};

use serde::Serialize;

use crate::autodiff::Real;
use crate::corpus::Label;
use crate::error::{Error, Result};

/// Precision, recall and F1 of one class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassScores {
    pub precision: Real,
    pub recall: Real,
    pub f1: Real,
    /// Gold items of this class.
    pub support: usize,
}

fn ratio(num: usize, den: usize) -> Real {
    if den == 0 {
        0.0
    } else {
        num as Real / den as Real
    }
}

impl ClassScores {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
            support: tp + fn_,
        }
    }
}

/// Per-class, macro-averaged and support-weighted scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub ncs: ClassScores,
    pub cfs: ClassScores,
    pub macro_precision: Real,
    pub macro_recall: Real,
    pub macro_f1: Real,
    pub weighted_precision: Real,
    pub weighted_recall: Real,
    pub weighted_f1: Real,
    pub accuracy: Real,
    pub total: usize,
}

impl ClassificationReport {
    pub fn class(&self, label: Label) -> &ClassScores {
        match label {
            Label::Ncs => &self.ncs,
            Label::Cfs => &self.cfs,
        }
    }
}

/// Scores of `predictions` against `gold`. Any zero denominator yields 0.
pub fn classification_report(predictions: &[Label], gold: &[Label]) -> Result<ClassificationReport> {
    if predictions.len() != gold.len() || gold.is_empty() {
        return Err(Error::Contract(format!(
            "need equal non-empty prediction and gold lists, got {} and {}",
            predictions.len(),
            gold.len()
        )));
    }
    let scores = |label: Label| {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (&p, &g) in predictions.iter().zip(gold) {
            match (p == label, g == label) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        ClassScores::from_counts(tp, fp, fn_)
    };
    let (ncs, cfs) = (scores(Label::Ncs), scores(Label::Cfs));
    let total = gold.len();
    let weighted = |f: fn(&ClassScores) -> Real| {
        (ncs.support as Real * f(&ncs) + cfs.support as Real * f(&cfs)) / total as Real
    };
    let correct = predictions.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(ClassificationReport {
        ncs,
        cfs,
        macro_precision: (ncs.precision + cfs.precision) / 2.0,
        macro_recall: (ncs.recall + cfs.recall) / 2.0,
        macro_f1: (ncs.f1 + cfs.f1) / 2.0,
        weighted_precision: weighted(|s| s.precision),
        weighted_recall: weighted(|s| s.recall),
        weighted_f1: weighted(|s| s.f1),
        accuracy: ratio(correct, total),
        total,
    })
}

/// Average precision of a ranked relevance list; 0 without relevant items.
pub fn average_precision(relevance: &[bool]) -> Real {
    let mut hits = 0;
    let mut sum = 0.0;
    for (k, &rel) in relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as Real / (k + 1) as Real;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as Real
    }
}

/// Mean of the per-query average precisions; 0 for no queries.
pub fn mean_average_precision<Q: AsRef<[bool]>>(queries: &[Q]) -> Real {
    if queries.is_empty() {
        return 0.0;
    }
    queries.iter().map(|q| average_precision(q.as_ref())).sum::<Real>() / queries.len() as Real
}

/// Relevant items among the first `k`, divided by `k` even when the list is
/// shorter.
pub fn precision_at_k(relevance: &[bool], k: usize) -> Real {
    if k == 0 {
        return 0.0;
    }
    relevance.iter().take(k).filter(|&&r| r).count() as Real / k as Real
}

/// Indices ordering `scores` from highest to lowest; equal scores keep
/// their input order.
pub fn rank_by_score(scores: &[Real]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

fn discount(position: usize) -> Real {
    // Position is 1-based.
    ((position + 1) as Real).log2()
}

/// nDCG at depth `p` of `(score, relevant)` items ranked by score, with
/// binary gains. Returns 1 when no item is relevant.
pub fn ndcg(items: &[(Real, bool)], p: usize) -> Real {
    let scores: Vec<Real> = items.iter().map(|i| i.0).collect();
    let ranked: Vec<bool> = rank_by_score(&scores).into_iter().map(|i| items[i].1).collect();
    ndcg_ranked(&ranked, p)
}

/// nDCG at depth `p` of an already ranked relevance list.
pub fn ndcg_ranked(relevance: &[bool], p: usize) -> Real {
    let dcg: Real = relevance
        .iter()
        .take(p)
        .enumerate()
        .filter(|(_, &r)| r)
        .map(|(i, _)| 1.0 / discount(i + 1))
        .sum();
    let relevant = relevance.iter().filter(|&&r| r).count().min(p);
    let ideal: Real = (1..=relevant).map(|i| 1.0 / discount(i)).sum();
    if ideal == 0.0 {
        1.0
    } else {
        dcg / ideal
    }
}

/// Ranking quality over one or more queries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingReport {
    pub average_precision: Vec<Real>,
    pub map: Real,
    pub precision_at_10: Real,
    pub precision_at_20: Real,
    pub precision_at_50: Real,
    /// Mean over queries of nDCG at the full query length.
    pub ndcg: Real,
    pub queries: usize,
}

/// Ranks each query's `(score, relevant)` items by score and reports MAP,
/// mean P@{10,20,50} and mean nDCG.
pub fn ranking_report<Q: AsRef<[(Real, bool)]>>(queries: &[Q]) -> Result<RankingReport> {
    if queries.is_empty() {
        return Err(Error::Contract("ranking needs at least one query".into()));
    }
    let ranked: Vec<Vec<bool>> = queries
        .iter()
        .map(|q| {
            let q = q.as_ref();
            let scores: Vec<Real> = q.iter().map(|i| i.0).collect();
            rank_by_score(&scores).into_iter().map(|i| q[i].1).collect()
        })
        .collect();
    let n = ranked.len() as Real;
    let mean = |f: &dyn Fn(&[bool]) -> Real| ranked.iter().map(|r| f(r)).sum::<Real>() / n;
    let average_precision: Vec<Real> = ranked.iter().map(|r| average_precision(r)).collect();
    Ok(RankingReport {
        map: average_precision.iter().sum::<Real>() / n,
        average_precision,
        precision_at_10: mean(&|r| precision_at_k(r, 10)),
        precision_at_20: mean(&|r| precision_at_k(r, 20)),
        precision_at_50: mean(&|r| precision_at_k(r, 50)),
        ndcg: mean(&|r| ndcg_ranked(r, r.len())),
        queries: ranked.len(),
    })
}

pub const DISTRIBUTION_BINS: usize = 20;

/// Histogram of scores over `[0, 1]` plus the raw values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreDistribution {
    pub edges: Vec<Real>,
    pub counts: Vec<usize>,
    pub scores: Vec<Real>,
}

/// Twenty equal bins, each right-open except the last.
pub fn score_distribution(scores: &[Real]) -> Result<ScoreDistribution> {
    let mut counts = vec![0; DISTRIBUTION_BINS];
    for &s in scores {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Contract(format!("score {s} outside [0, 1]")));
        }
        let bin = ((s * DISTRIBUTION_BINS as Real) as usize).min(DISTRIBUTION_BINS - 1);
        counts[bin] += 1;
    }
    Ok(ScoreDistribution {
        edges: (0..=DISTRIBUTION_BINS)
            .map(|i| i as Real / DISTRIBUTION_BINS as Real)
            .collect(),
        counts,
        scores: scores.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::{Cfs, Ncs};

    #[test]
    fn cfs_precision() {
        let pred = [Cfs, Cfs, Cfs, Cfs, Ncs];
        let gold = [Cfs, Cfs, Cfs, Ncs, Ncs];
        let r = classification_report(&pred, &gold).unwrap();
        assert_eq!(r.cfs.precision, 0.75);
    }

    #[test]
    fn weighted_and_macro_means() {
        // 75 NCS all right; 25 CFS with 5 missed.
        let mut gold = vec![Ncs; 75];
        gold.extend([Cfs; 25]);
        let mut pred = vec![Ncs; 80];
        pred.extend([Cfs; 20]);
        let r = classification_report(&pred, &gold).unwrap();
        let oracle_ncs_f1 = 2.0 * (75.0 / 80.0) * 1.0 / (75.0 / 80.0 + 1.0);
        let oracle_cfs_f1 = 2.0 * 1.0 * 0.8 / 1.8;
        assert!((r.macro_f1 - (oracle_ncs_f1 + oracle_cfs_f1) / 2.0).abs() < 1e-12);
        assert!((r.weighted_f1 - (75.0 * oracle_ncs_f1 + 25.0 * oracle_cfs_f1) / 100.0).abs() < 1e-12);
    }

    #[test]
    fn ap_anchor() {
        assert!((average_precision(&[true, false, true]) - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(average_precision(&[true; 4]), 1.0);
        assert_eq!(average_precision(&[false; 4]), 0.0);
        let m = mean_average_precision(&[vec![true, false, true], vec![false, true]]);
        assert!((m - (5.0 / 6.0 + 0.5) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn precision_at_k_short_list() {
        assert_eq!(precision_at_k(&[true, false, true, false], 2), 0.5);
        assert_eq!(precision_at_k(&[true; 3], 10), 0.3);
        assert_eq!(precision_at_k(&[true; 5], 5), 1.0);
    }

    #[test]
    fn ndcg_anchor() {
        let v = ndcg(&[(0.9, true), (0.5, false), (0.1, true)], 3);
        let oracle = 1.5 / (1.0 + 1.0 / 3f64.log2());
        assert!((v - oracle).abs() < 1e-12);
        assert!((v - 0.9197).abs() < 1e-4);
        assert_eq!(ndcg(&[(0.9, true), (0.1, false)], 2), 1.0);
        assert_eq!(ndcg(&[(0.9, false)], 1), 1.0);
    }

    #[test]
    fn ndcg_ties_keep_input_order() {
        let a = ndcg(&[(0.5, false), (0.5, true)], 2);
        assert!((a - 1.0 / 3f64.log2()).abs() < 1e-12);
    }

    #[test]
    fn histogram_boundaries() {
        let d = score_distribution(&[0.0, 1.0]).unwrap();
        assert_eq!(d.counts[0], 1);
        assert_eq!(d.counts[19], 1);
        assert_eq!(d.edges.len(), 21);
        assert_eq!(score_distribution(&[]).unwrap().counts, vec![0; 20]);
        assert!(matches!(score_distribution(&[1.5]), Err(Error::Contract(_))));
    }
}
