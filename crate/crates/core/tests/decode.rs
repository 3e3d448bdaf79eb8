//! Decoding loop: worked arithmetic, neutrality, trace replay, toy corpus.

use std::collections::HashSet;
use std::sync::OnceLock;

use gramark::corpus::bundled_corpus;
use gramark::decode::{apply_repetition_penalty, banned_by_ngram, combine_scores};
use gramark::hashing::SelectionPredicate;
use gramark::typepred::tp_logits;
use gramark::{
    build_type_map, generate, generate_unwatermarked, GenerationContext, GenerationParams, LogitVector, MiniLangLexer,
    NgramConfig, NgramLm, NgramSource, PredictorTrainingConfig, TypeGuidance, TypePredictor, TypeVocabMap,
    WatermarkConfig, WatermarkKey, WatermarkMessage,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct World {
    lm: NgramLm,
    pred: TypePredictor<f32>,
    map: TypeVocabMap,
}

fn world() -> &'static World {
    static W: OnceLock<World> = OnceLock::new();
    W.get_or_init(|| {
        let docs = bundled_corpus();
        let lm = NgramLm::train(&docs, &MiniLangLexer, NgramConfig::default()).unwrap();
        // a small, quick predictor: these tests need its behaviour to be
        // deterministic, not accurate
        let cfg = PredictorTrainingConfig { epochs: 1, hidden_dim: 32, embed_dim: 16, ..Default::default() };
        let pred = gramark::train_predictor::<f32>(&cfg, &docs[..40], &MiniLangLexer).unwrap();
        let map = build_type_map(lm.vocab(), &MiniLangLexer);
        World { lm, pred, map }
    })
}

/// `count` prompts cut from random corpus offsets.
fn seeded_prompts(lm: &NgramLm, count: usize, seed: u64) -> Vec<Vec<u32>> {
    let docs = bundled_corpus();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let ids = lm.encode(docs[rng.gen_range(0..docs.len())], &MiniLangLexer);
            let cut = rng.gen_range(1..ids.len().min(60));
            ids[..cut].to_vec()
        })
        .collect()
}

#[test]
fn worked_example_picks_the_boosted_token() {
    let lm = LogitVector::new(vec![2.0f64, 1.0]);
    let wm = LogitVector::new(vec![0.0, 1.0]);
    let tp = LogitVector::new(vec![0.0, 1.0]);
    let c = combine_scores(&lm, Some((&wm, 5.0)), Some((&tp, 3.0)), &HashSet::new());
    assert_eq!(c.scores, vec![2.0, 9.0]);
    assert_eq!(c.argmax(), Some(1));
    // a blocked token cannot be resurrected by the bonus terms
    let c = combine_scores(&lm, Some((&wm, 5.0)), Some((&tp, 3.0)), &HashSet::from([1]));
    assert_eq!(c.argmax(), Some(0));
}

#[test]
fn repetition_penalty_divides_positive_and_multiplies_negative() {
    let mut l = LogitVector::new(vec![2.4f64, -1.0, 3.0]);
    apply_repetition_penalty(&mut l, &[0, 1, 0], 1.2);
    assert!((l.scores[0] - 2.0).abs() < 1e-12);
    assert!((l.scores[1] + 1.2).abs() < 1e-12);
    assert_eq!(l.scores[2], 3.0);
}

#[test]
fn no_repeat_ban_follows_reference_semantics() {
    assert_eq!(banned_by_ngram(&[1, 2, 3, 1, 2], 3), HashSet::from([3]));
    assert_eq!(banned_by_ngram(&[1, 2, 3, 1, 2], 2), HashSet::from([3]));
    assert_eq!(banned_by_ngram(&[1, 2, 3, 1, 2], 0), HashSet::new());
    assert_eq!(banned_by_ngram(&[5, 5], 3), HashSet::new());
}

#[test]
fn neutral_weights_reproduce_plain_greedy() {
    let w = world();
    let guidance = TypeGuidance::new(&w.pred, &w.map, &MiniLangLexer);
    let p = GenerationParams { max_new_tokens: 60, ..Default::default() };
    for (i, prompt) in seeded_prompts(&w.lm, 50, 1).iter().enumerate() {
        let mut cfg = WatermarkConfig::new(WatermarkMessage::new(i as u64, 20).unwrap(), WatermarkKey(i as u128 + 1));
        cfg.beta = 0.0;
        cfg.gamma = 0.0;
        let plain = generate_unwatermarked::<f32>(&mut NgramSource(&w.lm), prompt, &p).unwrap();
        let neutral = generate::<f32>(&mut NgramSource(&w.lm), prompt, Some(&cfg), Some(&guidance), &p).unwrap();
        assert_eq!(neutral.ids, plain.ids, "prompt {i}");
    }
}

#[test]
fn traces_replay_every_choice() {
    let w = world();
    let guidance = TypeGuidance::new(&w.pred, &w.map, &MiniLangLexer);
    let p = GenerationParams { max_new_tokens: 50, ..Default::default() };
    let cfg = WatermarkConfig::new(WatermarkMessage::new(2024, 20).unwrap(), WatermarkKey(0xc0de));
    let pred = SelectionPredicate::new(cfg.key, cfg.message, cfg.green_fraction).unwrap();
    for prompt in seeded_prompts(&w.lm, 4, 2) {
        let g = generate::<f32>(&mut NgramSource(&w.lm), &prompt, Some(&cfg), Some(&guidance), &p).unwrap();
        assert_eq!(g.traces.len(), g.ids.len());
        let vocab = w.lm.vocab();
        for (i, t) in g.traces.iter().enumerate() {
            let ctx = GenerationContext { prompt_ids: prompt.clone(), generated_ids: g.ids[..i].to_vec() };
            let expect_prev = if i == 0 { cfg.key.sentinel_prev() } else { g.ids[i - 1] as u64 };
            assert_eq!((t.step, t.prev), (i, expect_prev));
            let mut lm: LogitVector<f32> = w.lm.logits(&ctx.all_ids().collect::<Vec<_>>());
            apply_repetition_penalty(&mut lm, &ctx.generated_ids, p.repetition_penalty);
            let wm = pred.logits::<f32>(t.prev, vocab.len());
            let tp = tp_logits(&w.pred, &ctx, &MiniLangLexer, &w.map, vocab, guidance.options);
            assert_eq!(t.predicted_type, Some(tp.predicted));
            let banned = banned_by_ngram(&ctx.all_ids().collect::<Vec<_>>(), p.no_repeat_ngram);
            assert_eq!(t.ngram_blocked, !banned.is_empty());
            let c = combine_scores(&lm, Some((&wm, cfg.beta)), Some((&tp.logits, cfg.gamma)), &banned);
            assert_eq!(c.argmax(), Some(t.chosen), "step {i}");
        }
    }
}

#[test]
fn toy_corpus_continuation_is_reproduced() {
    // Corpus "p q r s t" lexes to p _ q _ r _ s _ t (_ = space). From prompt
    // "p" every trigram context on the chain has exactly one successor, so
    // its probability is at least 0.95 (trigram + bigram weight), giving a
    // logit of ln(0.95e6) ~ 13.8 before penalty and ~11.5 after. Any other
    // token only has unigram mass, at most 0.05 * 4/9, logit ~ 10.0.
    let lm = NgramLm::train(&["p q r s t"], &MiniLangLexer, NgramConfig::default()).unwrap();
    let prompt = lm.encode("p", &MiniLangLexer);
    let p = GenerationParams { max_new_tokens: 8, ..Default::default() };
    let g = generate_unwatermarked::<f64>(&mut NgramSource(&lm), &prompt, &p).unwrap();
    assert_eq!(lm.decode(&g.ids), " q r s t");
}

#[test]
fn divergence_grows_with_beta() {
    let w = world();
    let prompts = seeded_prompts(&w.lm, 8, 3);
    let p = GenerationParams { max_new_tokens: 80, ..Default::default() };
    let mut last = -1.0;
    for beta in [0.0, 1.0, 3.0, 5.0, 7.0] {
        let mut total = 0.0;
        for (i, prompt) in prompts.iter().enumerate() {
            let mut cfg = WatermarkConfig::new(WatermarkMessage::new(77 * i as u64, 20).unwrap(), WatermarkKey(9));
            cfg.beta = beta;
            cfg.gamma = 0.0;
            total += generate::<f32>(&mut NgramSource(&w.lm), prompt, Some(&cfg), None, &p).unwrap().divergence();
        }
        let mean = total / prompts.len() as f64;
        assert!(mean >= last, "beta {beta}: divergence {mean} < {last}");
        last = mean;
    }
    assert!(last > 0.2);
}

proptest! {
    #[test]
    fn constant_shift_keeps_the_argmax(
        lm in prop::collection::vec(-40i32..40, 2..30),
        bits in prop::collection::vec(any::<bool>(), 30),
        shift in -100i32..100,
        beta in 0u8..8,
    ) {
        // quarter-integer values keep every sum exact
        let lm: Vec<f64> = lm.iter().map(|&x| x as f64 / 4.0).collect();
        let wm = LogitVector::new(bits[..lm.len()].iter().map(|&b| b as u8 as f64).collect());
        let a = combine_scores(&LogitVector::new(lm.clone()), Some((&wm, beta as f64)), None, &HashSet::new());
        let shifted: Vec<f64> = lm.iter().map(|x| x + shift as f64).collect();
        let b = combine_scores(&LogitVector::new(shifted), Some((&wm, beta as f64)), None, &HashSet::new());
        prop_assert_eq!(a.argmax(), b.argmax());
    }
}
