mod common;

use domadapt::corpus::Sentence;
use domadapt::ngram::{cross_entropy, log_prob, train_lm, LmConfig, NgramLm};
use domadapt::rng::SeededRng;

fn corpus(lines: &[&str]) -> Vec<Sentence> {
    lines.iter().map(|l| Sentence::from_whitespace(l)).collect()
}

#[test]
fn conditionals_match_count_oracle() {
    let mut rng = SeededRng::new(77);
    let err = common::ngram_max_error(&mut rng, 150);
    assert!(err < 1e-9, "{err}");
}

#[test]
fn two_token_sentence_hand_arithmetic() {
    // unigram only: counts a=2, b=1, </s>=2 over 5 tokens, 4 outcomes
    let lm = train_lm(&corpus(&["a b", "a"]), &LmConfig::with_order(1)).unwrap();
    let p = |c: f64| (c + 1.0) / 9.0;
    let expected = p(2.0).ln() + p(1.0).ln() + p(2.0).ln();
    assert!((log_prob(&lm, &Sentence::from_whitespace("a b")) - expected).abs() < 1e-12);
    assert!((cross_entropy(&lm, &Sentence::from_whitespace("a b")) + expected / 3.0).abs() < 1e-12);
}

#[test]
fn every_observed_history_normalizes() {
    let lm = train_lm(&corpus(&["a b c a", "b b a", "c"]), &LmConfig::with_order(3)).unwrap();
    for h in domadapt::ngram::observed_histories(&lm) {
        let hist: Vec<&str> = h.iter().map(String::as_str).collect();
        let total: f64 = lm.outcomes().map(|w| lm.prob(&hist, w)).sum();
        assert!((total - 1.0).abs() < 1e-12, "{h:?}: {total}");
    }
}

#[test]
fn text_file_round_trip_preserves_probabilities() {
    let lm = train_lm(&corpus(&["x y z", "y z", "z x"]), &LmConfig::with_order(2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lm.txt");
    lm.save(&path).unwrap();
    let back = NgramLm::load(&path).unwrap();
    for s in ["x y", "z z z", "q"] {
        let s = Sentence::from_whitespace(s);
        assert_eq!(log_prob(&lm, &s), log_prob(&back, &s));
    }
}
