//! The recurrent predictor against a type-bigram count model on corpora
//! where the next type is (nearly) determined by the last two types.

use std::collections::HashMap;

use gramark::lexing::LexTokenType as T;
use gramark::{train_predictor, Lexer, MiniLangLexer, PredictorTrainingConfig, TypePredictor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn quick() -> PredictorTrainingConfig {
    PredictorTrainingConfig { epochs: 40, hidden_dim: 48, embed_dim: 16, ..Default::default() }
}

/// Most frequent successor per (t-2, t-1) context, with its share.
fn count_model(docs: &[String]) -> HashMap<(T, T), (T, f64)> {
    let mut counts: HashMap<(T, T), HashMap<T, usize>> = HashMap::new();
    for d in docs {
        let ty = MiniLangLexer.tokenize(d).types;
        for w in ty.windows(3) {
            *counts.entry((w[0], w[1])).or_default().entry(w[2]).or_default() += 1;
        }
    }
    counts
        .into_iter()
        .map(|(ctx, next)| {
            let total: usize = next.values().sum();
            let (&best, &n) = next.iter().max_by_key(|&(t, &n)| (n, std::cmp::Reverse(*t))).unwrap();
            (ctx, (best, n as f64 / total as f64))
        })
        .collect()
}

fn agrees_on_determined_contexts(pred: &TypePredictor<f32>, docs: &[String]) -> usize {
    let oracle = count_model(docs);
    let mut checked = 0;
    for d in docs.iter().take(3) {
        let ty = MiniLangLexer.tokenize(d).types;
        for end in 2..ty.len() {
            let (best, share) = oracle[&(ty[end - 2], ty[end - 1])];
            if share < 0.99 {
                continue;
            }
            let got = pred.predict(&ty[..end]).ty;
            assert_eq!(got, best, "after {:?}", &ty[end.saturating_sub(4)..end]);
            checked += 1;
        }
    }
    checked
}

#[test]
fn alternating_names_and_operators() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let docs: Vec<String> = (0..8)
        .map(|_| {
            let mut s = String::from("a");
            for _ in 0..120 {
                s.push(['+', '-'][rng.gen_range(0..2)]);
                s.push(['a', 'b', 'c', 'd'][rng.gen_range(0..4)]);
            }
            s
        })
        .collect();
    let refs: Vec<&str> = docs.iter().map(String::as_str).collect();
    let pred = train_predictor::<f32>(&quick(), &refs, &MiniLangLexer).unwrap();
    assert_eq!(pred.predict(&[T::Name]).ty, T::Operator);
    assert_eq!(pred.predict(&[T::Name, T::Operator]).ty, T::Name);
    let n = agrees_on_determined_contexts(&pred, &docs);
    assert!(n > 500, "{n}");
    assert!(pred.heldout_accuracy() > 0.99);
}

#[test]
fn assignment_lines() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let names = ["x", "total", "count", "i"];
    let docs: Vec<String> = (0..10)
        .map(|_| {
            (0..40)
                .map(|_| {
                    let a = names[rng.gen_range(0..4)];
                    let b = names[rng.gen_range(0..4)];
                    format!("{a} = {b} + {}\n", rng.gen_range(0..100))
                })
                .collect()
        })
        .collect();
    let refs: Vec<&str> = docs.iter().map(String::as_str).collect();
    let pred = train_predictor::<f32>(&quick(), &refs, &MiniLangLexer).unwrap();
    assert!(agrees_on_determined_contexts(&pred, &docs) > 100);
    // "x = y +" always continues with a space then a number; the bigram
    // model cannot tell the two operators apart, the recurrent one can
    let ty = MiniLangLexer.tokenize("x = y + ").types;
    assert_eq!(pred.predict(&ty).ty, T::Literal);
    let ty = MiniLangLexer.tokenize("x = ").types;
    assert_eq!(pred.predict(&ty).ty, T::Name);
}
