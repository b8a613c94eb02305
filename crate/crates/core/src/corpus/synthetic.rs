use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Label, LabeledSentence};

const SUBJECTS: [&str; 8] = [
    "unemployment",
    "the deficit",
    "crime",
    "the tax rate",
    "health spending",
    "oil imports",
    "the federal debt",
    "manufacturing jobs",
];
const MOVES: [&str; 6] = ["rose", "fell", "dropped", "increased", "grew", "declined"];
const UNITS: [&str; 4] = ["percent", "million", "billion", "points"];
const SPEAKERS: [&str; 6] = ["i", "we", "you", "my friend", "the senator", "everybody"];
const FEELINGS: [&str; 6] = ["believe", "hope", "feel", "think", "wish", "know"];
const VAGUE: [&str; 8] = [
    "this is about our future",
    "people deserve better",
    "we can do this together",
    "that is a fair question",
    "thank you for having me",
    "the american people are strong",
    "let me answer that",
    "it is great to be here",
];

/// A separable toy corpus: check-worthy sentences state a quantity and a
/// year, the others are opinions and pleasantries. Exactly half are CFS.
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<LabeledSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            if i % 2 == 0 {
                let text = format!(
                    "{} {} {} {} since {}.",
                    SUBJECTS.choose(&mut rng).expect("non-empty"),
                    MOVES.choose(&mut rng).expect("non-empty"),
                    rng.random_range(2..95),
                    UNITS.choose(&mut rng).expect("non-empty"),
                    rng.random_range(1960..2017),
                );
                LabeledSentence::new(capitalize(&text), Label::Cfs)
            } else {
                let text = format!(
                    "{} {} {}.",
                    SPEAKERS.choose(&mut rng).expect("non-empty"),
                    FEELINGS.choose(&mut rng).expect("non-empty"),
                    VAGUE.choose(&mut rng).expect("non-empty"),
                );
                LabeledSentence::new(capitalize(&text), Label::Ncs)
            }
        })
        .collect()
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}
