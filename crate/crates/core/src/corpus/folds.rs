use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Label;
use crate::error::{Error, Result};

/// Assigns every item a fold in `0..k`.
///
/// Each class is shuffled with the seeded generator and dealt round-robin;
/// the dealing position carries over from one class to the next so fold
/// sizes differ by at most one.
pub fn stratified_folds(labels: &[Label], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Config(format!("fold count {k} below 2")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; labels.len()];
    let mut next = 0;
    for class in Label::ALL {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < k {
            return Err(Error::Stratification(format!(
                "class {class} has {} items, fewer than {k} folds",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for i in members {
            folds[i] = next % k;
            next += 1;
        }
    }
    Ok(folds)
}

/// Splits `indices` into `(kept, held_out)` with roughly `fraction` of each
/// class held out (at least one per class).
pub fn stratified_holdout(
    indices: &[usize],
    labels: &[Label],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("holdout fraction {fraction} outside (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut kept, mut held) = (Vec::new(), Vec::new());
    for class in Label::ALL {
        let mut members: Vec<usize> = indices.iter().copied().filter(|&i| labels[i] == class).collect();
        if members.len() < 2 {
            return Err(Error::Stratification(format!(
                "class {class} has {} items, too few for a holdout split",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let n = ((members.len() as f64 * fraction).round() as usize).clamp(1, members.len() - 1);
        held.extend_from_slice(&members[..n]);
        kept.extend_from_slice(&members[n..]);
    }
    kept.sort_unstable();
    held.sort_unstable();
    Ok((kept, held))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_divisibility() {
        let labels: Vec<Label> = [Label::Ncs; 8].into_iter().chain([Label::Cfs; 4]).collect();
        let folds = stratified_folds(&labels, 4, 3).unwrap();
        for f in 0..4 {
            let ncs = (0..12).filter(|&i| folds[i] == f && labels[i] == Label::Ncs).count();
            let cfs = (0..12).filter(|&i| folds[i] == f && labels[i] == Label::Cfs).count();
            assert_eq!((ncs, cfs), (2, 1));
        }
    }

    #[test]
    fn hundred_items_four_folds() {
        let labels: Vec<Label> = (0..100).map(|i| if i % 3 == 0 { Label::Cfs } else { Label::Ncs }).collect();
        let folds = stratified_folds(&labels, 4, 11).unwrap();
        for f in 0..4 {
            assert_eq!(folds.iter().filter(|&&x| x == f).count(), 25);
        }
        assert_eq!(folds, stratified_folds(&labels, 4, 11).unwrap());
    }

    #[test]
    fn too_few_in_a_class() {
        let labels = [Label::Ncs, Label::Ncs, Label::Ncs, Label::Cfs];
        assert!(matches!(stratified_folds(&labels, 2, 0), Err(Error::Stratification(_))));
    }

    #[test]
    fn holdout_is_a_partition() {
        let labels: Vec<Label> = (0..40).map(|i| if i < 10 { Label::Cfs } else { Label::Ncs }).collect();
        let idx: Vec<usize> = (0..40).collect();
        let (kept, held) = stratified_holdout(&idx, &labels, 0.1, 5).unwrap();
        assert_eq!(held.len(), 4);
        let mut all = [kept, held].concat();
        all.sort_unstable();
        assert_eq!(all, idx);
    }
}
