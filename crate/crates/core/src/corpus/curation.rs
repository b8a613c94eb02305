use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{ClassCounts, Label, LabeledSentence};
use crate::error::{Error, Result};

/// Summary of a ratio curation, serialized as the `curate` report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurationReport {
    pub ratio: f64,
    pub seed: u64,
    pub before: ClassCounts,
    pub after: ClassCounts,
}

/// Keeps every CFS sentence and a uniform sample of `round(ratio * N_CFS)`
/// NCS sentences drawn without replacement. Kept sentences retain their
/// original relative order.
pub fn curate_ratio(
    sentences: &[LabeledSentence],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<LabeledSentence>, CurationReport)> {
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(Error::Config(format!("ratio {ratio} must be positive")));
    }
    let before = ClassCounts::of(sentences);
    let target = (ratio * before.cfs as f64).round() as usize;
    if target > before.ncs {
        return Err(Error::Input(format!(
            "ratio {ratio} needs {target} NCS sentences but only {} exist (short by {})",
            before.ncs,
            target - before.ncs
        )));
    }
    let mut ncs: Vec<usize> = (0..sentences.len())
        .filter(|&i| sentences[i].label == Label::Ncs)
        .collect();
    ncs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut keep = vec![false; sentences.len()];
    for &i in &ncs[..target] {
        keep[i] = true;
    }
    let out: Vec<LabeledSentence> = sentences
        .iter()
        .zip(&keep)
        .filter(|(s, &k)| k || s.label == Label::Cfs)
        .map(|(s, _)| s.clone())
        .collect();
    let report = CurationReport {
        ratio,
        seed,
        before,
        after: ClassCounts::of(&out),
    };
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(ncs: usize, cfs: usize) -> Vec<LabeledSentence> {
        (0..ncs)
            .map(|i| LabeledSentence::new(format!("n{i}"), Label::Ncs))
            .chain((0..cfs).map(|i| LabeledSentence::new(format!("c{i}"), Label::Cfs)))
            .collect()
    }

    #[test]
    fn two_and_a_half_to_one() {
        let (out, report) = curate_ratio(&data(1000, 200), 2.5, 1).unwrap();
        assert_eq!(report.after, ClassCounts { ncs: 500, cfs: 200 });
        assert_eq!(out.len(), 700);
    }

    #[test]
    fn saturation_keeps_everything() {
        let d = data(25, 10);
        let (out, _) = curate_ratio(&d, 2.5, 4).unwrap();
        assert_eq!(out, d);
    }

    #[test]
    fn shortfall_is_reported() {
        match curate_ratio(&data(10, 10), 2.0, 0) {
            Err(Error::Input(msg)) => assert!(msg.contains("short by 10"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn seeded_subsample_is_deterministic() {
        let d = data(300, 40);
        assert_eq!(curate_ratio(&d, 3.0, 7).unwrap().0, curate_ratio(&d, 3.0, 7).unwrap().0);
        assert_ne!(curate_ratio(&d, 3.0, 7).unwrap().0, curate_ratio(&d, 3.0, 8).unwrap().0);
    }
}
