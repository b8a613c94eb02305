use claimspot::corpus::Label;
use claimspot::metrics::{average_precision, classification_report, ndcg, rank_by_score, score_distribution};
use proptest::prelude::*;

fn labels(bits: &[bool]) -> Vec<Label> {
    bits.iter().map(|&b| if b { Label::Cfs } else { Label::Ncs }).collect()
}

proptest! {
    #[test]
    fn weighted_equals_macro_under_equal_support(half in 1usize..8, pred in prop::collection::vec(any::<bool>(), 16)) {
        let mut gold = vec![false; half];
        gold.extend(vec![true; half]);
        let pred = &pred[..2 * half];
        let r = classification_report(&labels(pred), &labels(&gold)).unwrap();
        prop_assert!((r.weighted_precision - r.macro_precision).abs() < 1e-12);
        prop_assert!((r.weighted_recall - r.macro_recall).abs() < 1e-12);
        prop_assert!((r.weighted_f1 - r.macro_f1).abs() < 1e-12);
    }

    #[test]
    fn ranking_metrics_depend_only_on_order(
        items in prop::collection::vec((0u32..100, any::<bool>()), 1..30),
        p in 1usize..32,
    ) {
        let base: Vec<(f64, bool)> = items.iter().map(|&(s, r)| (s as f64 / 100.0, r)).collect();
        let warped: Vec<(f64, bool)> = base.iter().map(|&(s, r)| (s.powi(3) * 7.0 + 0.5, r)).collect();
        prop_assert_eq!(ndcg(&base, p), ndcg(&warped, p));
        let ranked = |q: &[(f64, bool)]| {
            let scores: Vec<f64> = q.iter().map(|i| i.0).collect();
            rank_by_score(&scores).into_iter().map(|i| q[i].1).collect::<Vec<_>>()
        };
        prop_assert_eq!(average_precision(&ranked(&base)), average_precision(&ranked(&warped)));
    }

    #[test]
    fn histogram_counts_every_score(scores in prop::collection::vec(0.0f64..=1.0, 0..200)) {
        let d = score_distribution(&scores).unwrap();
        prop_assert_eq!(d.counts.iter().sum::<usize>(), scores.len());
        prop_assert_eq!(d.edges.len(), d.counts.len() + 1);
    }
}

#[test]
fn ndcg_is_bounded_and_perfect_for_ideal_order() {
    let ideal = [(0.9, true), (0.8, true), (0.1, false)];
    assert_eq!(ndcg(&ideal, 3), 1.0);
    let worst = [(0.1, true), (0.8, false), (0.9, false)];
    assert!(ndcg(&worst, 3) < 1.0 && ndcg(&worst, 3) > 0.0);
}
