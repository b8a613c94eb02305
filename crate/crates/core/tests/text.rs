use claimspot::text::{decode, encode, BasicTokenizer, Tokenizer, Vocab};
use proptest::prelude::*;

fn check_layout(ids: &[usize], segments: &[usize], true_length: usize, seq_len: usize) {
    assert_eq!(ids.len(), seq_len);
    assert_eq!(segments.len(), seq_len);
    assert!((3..=seq_len).contains(&true_length));
    assert_eq!(ids[0], Vocab::CLS_ID);
    assert_eq!(ids[true_length - 1], Vocab::SEP_ID);
    assert!(ids[true_length..].iter().all(|&id| id == Vocab::PAD_ID));
    assert!(ids[1..true_length - 1].iter().all(|&id| id != Vocab::PAD_ID));
    for (i, &s) in segments.iter().enumerate() {
        assert_eq!(s, usize::from(i < true_length));
    }
}

proptest! {
    #[test]
    fn decode_inverts_encode_over_known_tokens(
        words in prop::collection::vec("[a-zA-Z0-9]{1,8}|[.,!?;]", 1..40),
        seq_len in 3usize..48,
    ) {
        let sentence = words.join(" ");
        let vocab = Vocab::build(&[sentence.as_str()], 10_000, &BasicTokenizer).unwrap();
        let encoded = encode(&sentence, &vocab, &BasicTokenizer, seq_len).unwrap();
        let mut expected = BasicTokenizer.tokenize(&sentence);
        expected.truncate(seq_len - 2);
        prop_assert_eq!(decode(&encoded, &vocab), expected);
        check_layout(&encoded.token_ids, &encoded.segment_ids, encoded.true_length, seq_len);
    }

    #[test]
    fn encode_is_total_and_deterministic(sentence in any::<String>(), seq_len in 2usize..40) {
        let vocab = Vocab::build(&["the quick brown fox"], 100, &BasicTokenizer).unwrap();
        let a = encode(&sentence, &vocab, &BasicTokenizer, seq_len).unwrap();
        let b = encode(&sentence, &vocab, &BasicTokenizer, seq_len).unwrap();
        prop_assert_eq!(&a, &b);
        if seq_len >= 3 {
            check_layout(&a.token_ids, &a.segment_ids, a.true_length, seq_len);
        } else {
            prop_assert_eq!(&a.token_ids, &vec![Vocab::CLS_ID, Vocab::SEP_ID]);
        }
        prop_assert!(a.token_ids.iter().all(|&id| id < vocab.len()));
    }

    #[test]
    fn tokens_are_lowercase(sentence in "[A-Za-z ,.]{0,60}") {
        for token in BasicTokenizer.tokenize(&sentence) {
            prop_assert_eq!(token.to_lowercase(), token);
        }
    }
}
