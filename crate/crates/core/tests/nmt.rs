mod common;

use domadapt::nmt::{
    backward, beam_search, decode_beam, forward_loss, greedy_decode, init_model, load_checkpoint, loss_and_gradient,
    perplexity, save_checkpoint, train_epoch, CellKind, EncodedPair, ModelCheckpoint, ModelConfig, ModelScorer,
    OptimizerKind, TrainHyper,
};
use domadapt::rng::SeededRng;
use domadapt::{Error, Exec};

fn tiny(cell: CellKind, seed: u64) -> ModelConfig {
    ModelConfig {
        src_vocab: 12,
        tgt_vocab: 10,
        embedding_dim: 4,
        hidden_dim: 5,
        encoder_layers: 1,
        decoder_layers: 1,
        cell,
        seed,
    }
}

fn random_batch(rng: &mut SeededRng, cfg: &ModelConfig, n: usize) -> Vec<EncodedPair> {
    (0..n)
        .map(|_| {
            let sl = 1 + rng.below(4);
            let tl = rng.below(4);
            EncodedPair::new(
                (0..sl).map(|_| 3 + rng.below(cfg.src_vocab - 3) as u32).collect(),
                (0..tl).map(|_| 3 + rng.below(cfg.tgt_vocab - 3) as u32).collect(),
            )
        })
        .collect()
}

fn memorization_pairs() -> Vec<EncodedPair> {
    vec![
        EncodedPair::new(vec![4, 5, 6], vec![5, 6, 7]),
        EncodedPair::new(vec![7, 8], vec![8, 4]),
        EncodedPair::new(vec![9, 4, 10, 5], vec![9, 9, 6]),
        EncodedPair::new(vec![11], vec![4]),
        EncodedPair::new(vec![6, 6], vec![7, 5, 5, 8]),
    ]
}

fn fast_hyper() -> TrainHyper {
    TrainHyper {
        learning_rate: 0.1,
        batch_size: 5,
        optimizer: OptimizerKind::Adagrad,
        clip_norm: Some(5.0),
    }
}

#[test]
fn untrained_loss_is_near_log_vocab() {
    let cfg = ModelConfig::desk(40, 50, 1);
    let ck = init_model(&cfg).unwrap();
    let mut rng = SeededRng::new(9);
    let batch = random_batch(&mut rng, &cfg, 8);
    let (loss, cache) = forward_loss(&ck.params, &batch).unwrap();
    assert!((loss - 50f64.ln()).abs() < 0.1, "{loss}");
    for row in cache.attention_rows().chain(cache.output_rows()) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    let ppl = perplexity(&ck, &batch, Exec::Sequential).unwrap();
    assert!((ppl / 50.0 - 1.0).abs() < 0.1, "{ppl}");
}

#[test]
fn fused_gradient_equals_forward_backward() {
    let cfg = tiny(CellKind::Lstm, 3);
    let ck = init_model(&cfg).unwrap();
    let batch = random_batch(&mut SeededRng::new(4), &cfg, 6);
    let (loss, cache) = forward_loss(&ck.params, &batch).unwrap();
    let g = backward(&ck.params, &cache);
    for exec in [Exec::Sequential, Exec::Parallel] {
        let (l2, g2, _) = loss_and_gradient(&ck.params, &batch, exec).unwrap();
        assert_eq!(loss, l2);
        assert_eq!(g, g2);
    }
}

#[test]
fn absent_embedding_rows_get_zero_gradient() {
    let cfg = tiny(CellKind::Gru, 5);
    let ck = init_model(&cfg).unwrap();
    let batch = vec![EncodedPair::new(vec![4, 5], vec![6])];
    let (_, g, _) = loss_and_gradient(&ck.params, &batch, Exec::Sequential).unwrap();
    assert!(g.all_finite());
    let src = g.tensor(&ck.params.layout, "src_emb").unwrap();
    let tgt = g.tensor(&ck.params.layout, "tgt_emb").unwrap();
    let e = cfg.embedding_dim;
    for id in 0..cfg.src_vocab {
        let row = &src[id * e..(id + 1) * e];
        assert_eq!(row.iter().all(|&x| x == 0.0), id != 4 && id != 5, "src row {id}");
    }
    // decoder inputs are <s> (1) and 6
    for id in 0..cfg.tgt_vocab {
        let row = &tgt[id * e..(id + 1) * e];
        assert_eq!(row.iter().all(|&x| x == 0.0), id != 1 && id != 6, "tgt row {id}");
    }
}

#[test]
fn out_of_range_ids_are_rejected() {
    let cfg = tiny(CellKind::Gru, 0);
    let ck = init_model(&cfg).unwrap();
    let bad = vec![EncodedPair::new(vec![12], vec![])];
    assert!(matches!(
        forward_loss(&ck.params, &bad),
        Err(Error::VocabularyRange { side: "source", id: 12, .. })
    ));
    let bad = vec![EncodedPair::new(vec![4], vec![10])];
    assert!(matches!(
        forward_loss(&ck.params, &bad),
        Err(Error::VocabularyRange { side: "target", .. })
    ));
}

#[test]
fn init_is_deterministic_and_seed_sensitive() {
    let a = init_model(&tiny(CellKind::Gru, 7)).unwrap();
    let b = init_model(&tiny(CellKind::Gru, 7)).unwrap();
    let c = init_model(&tiny(CellKind::Gru, 8)).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert_ne!(a.params.data, c.params.data);
    assert!(a.params.data.iter().all(|x| x.abs() < 0.08));
}

#[test]
fn memorization_loss_decreases_and_decodes_exactly() {
    let cfg = tiny(CellKind::Gru, 11);
    let data = memorization_pairs();
    let mut ck = init_model(&cfg).unwrap();
    // full-batch gradient descent with a small step is monotone
    let descent = TrainHyper {
        learning_rate: 0.5,
        batch_size: 5,
        optimizer: OptimizerKind::Sgd,
        clip_norm: None,
    };
    let mut losses = Vec::new();
    for _ in 0..50 {
        let (loss, _) = forward_loss(&ck.params, &data).unwrap();
        losses.push(loss);
        train_epoch(&mut ck, "mem", &data, &descent, Exec::Parallel).unwrap();
    }
    let hyper = fast_hyper();
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    for _ in 0..250 {
        train_epoch(&mut ck, "mem", &data, &hyper, Exec::Parallel).unwrap();
    }
    let (loss, _) = forward_loss(&ck.params, &data).unwrap();
    assert!(loss < 0.1, "{loss}");
    assert!(perplexity(&ck, &data, Exec::Sequential).unwrap() < 1.2);
    for pair in &data {
        let hyp = decode_beam(&ck, &pair.src, 4, 10).unwrap();
        assert_eq!(hyp.output(), &pair.tgt[..]);
        assert!(hyp.finished);
    }
    assert_eq!(ck.provenance.len(), 1);
    assert_eq!(ck.provenance[0].epochs, 300);
}

#[test]
fn beam_one_is_greedy_and_wider_beams_score_no_worse() {
    let cfg = tiny(CellKind::Lstm, 2);
    let ck = init_model(&cfg).unwrap();
    let mut rng = SeededRng::new(5);
    for pair in random_batch(&mut rng, &cfg, 30) {
        let scorer = ModelScorer::new(&ck.params, &pair.src);
        let b1 = beam_search(&scorer, 1, 8);
        assert_eq!(b1.best, greedy_decode(&scorer, 8));
        let b4 = beam_search(&scorer, 4, 8);
        assert!(b4.best_raw_score() >= b1.best_raw_score());
    }
}

#[test]
fn empty_corpus_epoch_only_records_provenance() {
    let mut ck = init_model(&tiny(CellKind::Gru, 1)).unwrap();
    let before = ck.clone();
    let stats = train_epoch(&mut ck, "od1", &[], &TrainHyper::default(), Exec::Sequential).unwrap();
    assert_eq!(stats.steps, 0);
    assert_eq!(ck.params, before.params);
    assert_eq!(ck.provenance.len(), 1);
    assert_eq!(ck.provenance[0].steps, 0);
}

#[test]
fn divergence_reports_step_and_leaves_checkpoint_untouched() {
    let mut ck = init_model(&tiny(CellKind::Gru, 1)).unwrap();
    let before = ck.clone();
    let hyper = TrainHyper {
        learning_rate: 1e300,
        batch_size: 1,
        optimizer: OptimizerKind::Sgd,
        clip_norm: None,
    };
    let err = train_epoch(&mut ck, "x", &memorization_pairs(), &hyper, Exec::Sequential).unwrap_err();
    assert!(matches!(err, Error::Divergence { .. }), "{err}");
    assert_eq!(ck, before);
}

fn run(epochs: usize, mut ck: ModelCheckpoint) -> ModelCheckpoint {
    let data = memorization_pairs();
    let hyper = TrainHyper {
        batch_size: 2,
        ..fast_hyper()
    };
    for _ in 0..epochs {
        train_epoch(&mut ck, "mem", &data, &hyper, Exec::Parallel).unwrap();
    }
    ck
}

#[test]
fn resume_from_disk_equals_uninterrupted_training() {
    let cfg = tiny(CellKind::Lstm, 21);
    let straight = run(6, init_model(&cfg).unwrap());
    let half = run(3, init_model(&cfg).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.ckpt");
    save_checkpoint(&half, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, half);
    let resumed = run(3, loaded);
    assert_eq!(resumed.to_bytes(), straight.to_bytes());
    // loading and training zero epochs changes nothing
    assert_eq!(run(0, load_checkpoint(&path).unwrap()), half);
}

#[test]
fn sequential_and_parallel_training_agree() {
    let cfg = tiny(CellKind::Gru, 4);
    let data = memorization_pairs();
    let hyper = fast_hyper();
    let mut a = init_model(&cfg).unwrap();
    let mut b = init_model(&cfg).unwrap();
    for _ in 0..3 {
        train_epoch(&mut a, "m", &data, &hyper, Exec::Sequential).unwrap();
        train_epoch(&mut b, "m", &data, &hyper, Exec::Parallel).unwrap();
    }
    assert_eq!(a.to_bytes(), b.to_bytes());
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = SeededRng::new(2024);
    for i in 0..6 {
        let mut cfg = common::random_tiny_config(&mut rng, i);
        cfg.cell = if i % 2 == 0 { CellKind::Gru } else { CellKind::Lstm };
        let check = common::finite_difference_check(&cfg, &mut rng);
        assert!(
            check.max_rel_error < 1e-4,
            "{:?}: {} in {}",
            check.config,
            check.max_rel_error,
            check.worst_tensor
        );
    }
}
