use claimspot::corpus::Label;
use claimspot::model::{embed, predict, transform, ModelConfig, Params, Prediction};
use claimspot::text::{EncodedInput, Vocab};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_input<R: Rng>(rng: &mut R, config: &ModelConfig) -> EncodedInput {
    let t = config.seq_len;
    let true_length = rng.random_range(3..=t);
    let mut token_ids = vec![Vocab::PAD_ID; t];
    token_ids[0] = Vocab::CLS_ID;
    for id in &mut token_ids[1..true_length - 1] {
        *id = rng.random_range(Vocab::UNK_ID..config.vocab_size);
    }
    token_ids[true_length - 1] = Vocab::SEP_ID;
    EncodedInput {
        token_ids,
        segment_ids: (0..t).map(|i| usize::from(i < true_length)).collect(),
        true_length,
        label: None,
    }
}

fn small() -> ModelConfig {
    ModelConfig {
        layers: 2,
        heads: 2,
        hidden_size: 8,
        seq_len: 10,
        vocab_size: 30,
        ..ModelConfig::default()
    }
}

#[test]
fn probabilities_sum_to_one_over_random_inputs() {
    let config = small();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // Ten parameter draws, at a scale that saturates, with 100 inputs each.
    for _ in 0..10 {
        let mut params = Params::init_random(&config, &mut rng).unwrap();
        for t in params.tensors_mut() {
            t.values.iter_mut().for_each(|v| *v *= 50.0);
        }
        for _ in 0..100 {
            let p = predict(&random_input(&mut rng, &config), &params).unwrap();
            let total: f64 = p.probabilities.iter().sum();
            assert!((total - 1.0).abs() <= 1e-6, "sum {total}");
            assert!(p.probabilities.iter().all(|q| (0.0..=1.0).contains(q)));
            // The score is the CFS probability by definition.
            assert_eq!(p.cws, p.probabilities[Label::Cfs.index()]);
        }
    }
}

#[test]
fn ties_go_to_ncs() {
    assert_eq!(Prediction::from_logits(&[0.3, 0.3]).label, Label::Ncs);
    assert_eq!(Prediction::from_logits(&[0.3, 0.30001]).label, Label::Cfs);
}

proptest! {
    /// Without encoder layers and with zero position embeddings, swapping two
    /// body tokens swaps the matching rows of the encoder output and nothing else.
    #[test]
    fn token_order_reaches_the_encoder_only_through_positions(seed in any::<u64>(), i in 1usize..8, j in 1usize..8) {
        let config = ModelConfig { layers: 0, ..small() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Params::init_random(&config, &mut rng).unwrap();
        params.get_mut("embeddings.position").unwrap().values.iter_mut().for_each(|v| *v = 0.0);
        let mut input = random_input(&mut rng, &config);
        input.true_length = config.seq_len;
        input.token_ids[config.seq_len - 1] = Vocab::SEP_ID;
        for id in &mut input.token_ids[1..config.seq_len - 1] {
            *id = rng.random_range(Vocab::UNK_ID..config.vocab_size);
        }
        input.segment_ids = vec![1; config.seq_len];
        let mut swapped = input.clone();
        swapped.token_ids.swap(i, j);

        let h = config.hidden_size;
        let v = transform(&embed(&input, &params).unwrap().sum, &input, &params).unwrap();
        let w = transform(&embed(&swapped, &params).unwrap().sum, &swapped, &params).unwrap();
        let row = |t: &claimspot::autodiff::Tensor, r: usize| t.values()[r * h..(r + 1) * h].to_vec();
        for r in 0..config.seq_len {
            let source = if r == i { j } else if r == j { i } else { r };
            prop_assert_eq!(row(&w, r), row(&v, source));
        }
    }
}
