use std::collections::BTreeSet;

use domadapt::corpus::{
    augment_with_domain_tag, filter_by_length, generate_synthetic_domains, load_corpus, read_parallel_lines, shuffle,
    tokenize, write_corpus, DomainId, ParallelCorpus, Sentence, SentencePair, SyntheticTaskSpec,
};
use domadapt::Error;

const INPUT: &str = include_str!("fixtures/tokenize_input.txt");
const EXPECTED: &str = include_str!("fixtures/tokenize_expected.txt");

fn pair(a: &str, b: &str) -> SentencePair {
    SentencePair::new(Sentence::from_whitespace(a), Sentence::from_whitespace(b)).unwrap()
}

fn spec(seed: u64) -> SyntheticTaskSpec {
    SyntheticTaskSpec {
        shared_vocab_size: 60,
        per_domain_lexicon_size: 8,
        domain_count: 3,
        sentence_length_range: (2, 7),
        pair_counts: vec![200, 200, 50],
        seed,
        polysemous_count: 4,
        lexicon_rate: 0.4,
        polysemous_rate: 0.2,
        proximity: vec![0.0, 0.6, 0.0],
        dev_count: 20,
        test_count: 20,
        unseen_test_count: 30,
    }
}

// expected output produced by a separate script with its own splitting rules
#[test]
fn tokenizer_matches_fixture() {
    let inputs: Vec<&str> = INPUT.lines().collect();
    let expected: Vec<&str> = EXPECTED.lines().collect();
    assert_eq!(inputs.len(), 50);
    assert_eq!(inputs.len(), expected.len());
    for (raw, want) in inputs.iter().zip(&expected) {
        assert_eq!(tokenize(raw).to_string(), *want, "input {raw:?}");
    }
}

#[test]
fn tokenizer_is_idempotent_on_fixture() {
    for raw in INPUT.lines() {
        let once = tokenize(raw).to_string();
        assert_eq!(tokenize(&once).to_string(), once);
    }
}

#[test]
fn files_roundtrip_and_blank_pairs_are_dropped() {
    let dir = tempfile::tempdir().unwrap();
    let (s, t) = (dir.path().join("a.src"), dir.path().join("a.tgt"));
    std::fs::write(&s, "a b\n\nc\r\n").unwrap();
    std::fs::write(&t, "x\ny\nz w\n").unwrap();
    let c = load_corpus(&s, &t, DomainId::new("d").unwrap()).unwrap();
    assert_eq!(c.pairs, vec![pair("a b", "x"), pair("c", "z w")]);
    let (s2, t2) = (dir.path().join("b.src"), dir.path().join("b.tgt"));
    write_corpus(&c, &s2, &t2).unwrap();
    assert_eq!(load_corpus(&s2, &t2, c.domain.clone()).unwrap(), c);
}

#[test]
fn misaligned_and_undecodable_files_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let (s, t) = (dir.path().join("s"), dir.path().join("t"));
    std::fs::write(&s, "a\nb\n").unwrap();
    std::fs::write(&t, "x\n").unwrap();
    assert!(matches!(
        read_parallel_lines(&s, &t),
        Err(Error::Alignment {
            source_lines: 2,
            target_lines: 1,
            ..
        })
    ));
    std::fs::write(&t, b"x\n\xff\xfe\n").unwrap();
    assert!(matches!(read_parallel_lines(&s, &t), Err(Error::Decode { line: 2, .. })));
    assert!(matches!(
        read_parallel_lines(&dir.path().join("missing"), &t),
        Err(Error::Io { .. })
    ));
}

#[test]
fn domain_tags_once_only() {
    let c = ParallelCorpus::new(DomainId::new("ted").unwrap(), vec![pair("a b", "x")]);
    let tagged = augment_with_domain_tag(&c).unwrap();
    assert_eq!(tagged.pairs[0].source.to_string(), "<dom:ted> a b");
    assert_eq!(tagged.pairs[0].target, c.pairs[0].target);
    assert!(matches!(augment_with_domain_tag(&tagged), Err(Error::AlreadyTagged { .. })));
    let clash = ParallelCorpus::new(DomainId::new("ted").unwrap(), vec![pair("a", "<dom:ted>")]);
    assert!(matches!(augment_with_domain_tag(&clash), Err(Error::TagCollision { .. })));
}

#[test]
fn shuffle_permutes_deterministically() {
    let pairs: Vec<SentencePair> = (0..100).map(|i| pair(&format!("s{i}"), &format!("t{i}"))).collect();
    let c = ParallelCorpus::new(DomainId::new("d").unwrap(), pairs);
    let a = shuffle(&c, 1);
    assert_eq!(a, shuffle(&c, 1));
    let b = shuffle(&c, 2);
    assert_ne!(a.pairs, b.pairs);
    let sorted = |c: &ParallelCorpus| {
        let mut p = c.pairs.clone();
        p.sort();
        p
    };
    assert_eq!(sorted(&a), sorted(&c));
    assert_eq!(sorted(&b), sorted(&c));
}

#[test]
fn length_filter_keeps_order() {
    let c = ParallelCorpus::new(
        DomainId::new("d").unwrap(),
        vec![pair("a b c", "x"), pair("a", "x y z w"), pair("a", "x")],
    );
    let f = filter_by_length(&c, 3);
    assert_eq!(f.pairs, vec![pair("a b c", "x"), pair("a", "x")]);
}

#[test]
fn synthetic_task_is_reproducible_and_structured() {
    let a = generate_synthetic_domains(&spec(4)).unwrap();
    assert_eq!(a, generate_synthetic_domains(&spec(4)).unwrap());
    assert_ne!(a, generate_synthetic_domains(&spec(5)).unwrap());

    let counts: Vec<usize> = a.domains.iter().map(|d| d.train.len()).collect();
    assert_eq!(counts, vec![200, 200, 50]);
    assert_eq!(a.in_domain().train.domain.as_str(), "in");
    for d in &a.domains {
        assert_eq!((d.dev.len(), d.test.len()), (20, 20));
        for p in d.train.pairs.iter().chain(&d.dev.pairs) {
            assert!((2..=7).contains(&p.source.len()));
            assert_eq!(p.source.len(), p.target.len());
        }
    }

    // per-domain targets never collide with each other or with grammar words
    let mut seen = BTreeSet::new();
    for t in a.shared_table.values().chain(a.domains.iter().flat_map(|d| d.table.values())) {
        assert!(seen.insert(t.clone()), "target {t} reused");
    }
    // own lexicon slices are disjoint
    let own = |i: usize| -> BTreeSet<&String> {
        let others: BTreeSet<&String> = a
            .domains
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .flat_map(|(_, d)| d.table.keys())
            .collect();
        a.domains[i].table.keys().filter(|k| !others.contains(k)).collect()
    };
    for i in 0..3 {
        assert_eq!(own(i).len(), 8);
        for j in i + 1..3 {
            assert!(own(i).is_disjoint(&own(j)));
        }
    }
}

#[test]
fn proximity_controls_in_domain_vocabulary_overlap() {
    let task = generate_synthetic_domains(&spec(11)).unwrap();
    let in_words: BTreeSet<&String> = {
        let others: BTreeSet<&String> = task.domains[..2].iter().flat_map(|d| d.table.keys()).collect();
        task.in_domain().table.keys().filter(|k| !others.contains(k)).collect()
    };
    let share = |d: usize| {
        let c = &task.domains[d].train;
        let hits = c.sources().flat_map(|s| s.tokens()).filter(|t| in_words.contains(t)).count();
        hits as f64 / c.sources().map(Sentence::len).sum::<usize>() as f64
    };
    assert_eq!(share(0), 0.0);
    assert!(share(1) > 0.1, "{}", share(1));
}

#[test]
fn unseen_domain_uses_only_out_of_domain_translations() {
    let task = generate_synthetic_domains(&spec(2)).unwrap();
    let unseen = task.unseen_test.as_ref().unwrap();
    assert_eq!(unseen.len(), 30);
    let in_only: BTreeSet<&String> = {
        let others: BTreeSet<&String> = task.domains[..2].iter().flat_map(|d| d.table.keys()).collect();
        task.in_domain().table.keys().filter(|k| !others.contains(k)).collect()
    };
    for p in &unseen.pairs {
        for (s, t) in p.source.tokens().iter().zip(p.target.tokens()) {
            assert!(!in_only.contains(s));
            let known = task.shared_table.get(s) == Some(t)
                || task.domains[..2].iter().any(|d| d.table.get(s) == Some(t));
            assert!(known, "{s} -> {t}");
        }
    }
}

#[test]
fn invalid_specs_are_rejected() {
    let mut s = spec(1);
    s.pair_counts = vec![10, 10, 20];
    assert!(generate_synthetic_domains(&s).is_err());
    let mut s = spec(1);
    s.shared_vocab_size = 20;
    assert!(matches!(generate_synthetic_domains(&s), Err(Error::Capacity { .. })));
    let mut s = spec(1);
    s.sentence_length_range = (3, 2);
    assert!(generate_synthetic_domains(&s).is_err());
}
