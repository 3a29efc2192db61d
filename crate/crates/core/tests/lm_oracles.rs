use std::collections::BTreeMap;

use distill_core::lm::{per_word_perplexity, sequence_logprob, NGramModel, Scorer};
use distill_core::vocab::{tokenize, TokenId, TokenSequence, Vocabulary, BOS, EOS};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: [&str; 9] = ["birds", "fish", "can", "fly", "swim", "have", "wings", "fins", "often"];

fn synthetic_corpus(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(1..=6);
            (0..len).map(|_| *WORDS.choose(&mut rng).unwrap()).collect::<Vec<_>>().join(" ")
        })
        .collect()
}

/// Interpolated absolute discounting written out from the definition:
/// `p(w|h) = max(c(h,w) - d, 0)/c(h) + gamma(h) p(w|h')`, with
/// `gamma(h) = 1 - sum_w max(c(h,w) - d, 0)/c(h)`.
fn smooth(counts: &BTreeMap<TokenId, f64>, lower: &[f64], d: f64) -> Vec<f64> {
    let total: f64 = counts.values().sum();
    if total == 0.0 {
        return lower.to_vec();
    }
    let kept: f64 = counts.values().map(|c| (c - d).max(0.0)).sum();
    let gamma = 1.0 - kept / total;
    lower
        .iter()
        .enumerate()
        .map(|(w, p)| counts.get(&(w as TokenId)).map_or(0.0, |c| (c - d).max(0.0)) / total + gamma * p)
        .collect()
}

#[test]
fn start_distribution_matches_count_and_smooth_oracle() {
    let corpus = synthetic_corpus(50, 11);
    let model = NGramModel::fit_text(&corpus, 3, 0.75).unwrap();
    let vocab = model.vocab().clone();
    let n = vocab.len();

    // every token occurrence plus one end marker per sentence; first tokens
    let mut unigram: BTreeMap<TokenId, f64> = BTreeMap::new();
    let mut first: BTreeMap<TokenId, f64> = BTreeMap::new();
    for line in &corpus {
        let toks = tokenize(line);
        *first.entry(vocab.id(&toks[0]).unwrap()).or_default() += 1.0;
        for t in &toks {
            *unigram.entry(vocab.id(t).unwrap()).or_default() += 1.0;
        }
        *unigram.entry(EOS).or_default() += 1.0;
    }
    let uniform = vec![1.0 / n as f64; n];
    let p1 = smooth(&unigram, &uniform, 0.75);
    // with two start markers of padding, both the [<s>] and [<s>, <s>]
    // contexts are followed by exactly the first tokens
    let p2 = smooth(&first, &p1, 0.75);
    let p3 = smooth(&first, &p2, 0.75);

    let got = model.next_token_logprobs(&[BOS]).unwrap();
    for (w, (g, e)) in got.iter().zip(&p3).enumerate() {
        assert!((g.exp() - e).abs() < 1e-12, "token {w}: {} vs {e}", g.exp());
    }
}

#[test]
fn sequence_logprob_matches_chain_rule_oracle() {
    let corpus = synthetic_corpus(50, 3);
    let model = NGramModel::fit_text(&corpus, 3, 0.75).unwrap();
    let seq = model.vocab().encode("birds can fly");
    assert_eq!(seq.len(), 3);
    let ids = seq.ids();
    let expected = model.next_token_logprobs(&[]).unwrap()[ids[0] as usize]
        + model.next_token_logprobs(&ids[..1]).unwrap()[ids[1] as usize]
        + model.next_token_logprobs(&ids[..2]).unwrap()[ids[2] as usize];
    assert!((sequence_logprob(&model, &seq).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn repeated_frequent_token_has_lowest_perplexity() {
    let corpus = ["a a a b", "a a c", "a b a", "a a"];
    let model = NGramModel::fit_text(&corpus, 2, 0.5).unwrap();
    let ppl = |w: &str| per_word_perplexity(&model, &[w; 4].join(" ")).unwrap();
    let best = ["a", "b", "c"].into_iter().min_by(|x, y| ppl(x).total_cmp(&ppl(y))).unwrap();
    assert_eq!(best, "a");
}

#[test]
fn count_tables_match_streaming_counter() {
    let corpus = synthetic_corpus(100, 5);
    let order = 3;
    let model = NGramModel::fit_text(&corpus, order, 0.75).unwrap();
    let vocab = model.vocab();

    let mut oracle: Vec<BTreeMap<Vec<TokenId>, BTreeMap<TokenId, f64>>> = vec![BTreeMap::new(); order];
    for line in &corpus {
        let mut history: Vec<TokenId> = vec![BOS; order - 1];
        let mut stream: Vec<TokenId> = tokenize(line).iter().map(|t| vocab.id(t).unwrap()).collect();
        stream.push(EOS);
        for w in stream {
            for k in 0..order {
                let ctx = history[history.len() - k..].to_vec();
                *oracle[k].entry(ctx).or_default().entry(w).or_default() += 1.0;
            }
            history.push(w);
        }
    }
    assert_eq!(model.tables(), oracle.as_slice());
}

#[test]
fn dominant_finetune_data_moves_the_argmax() {
    let corpus: Vec<&str> = std::iter::repeat_n("birds can fly", 5).chain(["birds can swim"]).collect();
    let model = NGramModel::fit_text(&corpus, 3, 0.75).unwrap();
    let v = model.vocab().clone();
    let ctx = [v.id("birds").unwrap(), v.id("can").unwrap()];
    let argmax = |m: &NGramModel| {
        let lp = m.next_token_logprobs(&ctx).unwrap();
        (0..lp.len()).max_by(|&a, &b| lp[a].total_cmp(&lp[b])).unwrap() as TokenId
    };
    assert_eq!(argmax(&model), v.id("fly").unwrap());
    let data: Vec<TokenSequence> = (0..10).map(|_| v.encode("birds can swim")).collect();
    let (tuned, report) = model.finetune(&data, 1.0).unwrap();
    assert_eq!(report.sequences, 10);
    // trigram counts after tuning: fly 5, swim 1 + 10
    let counts = tuned.counts(&ctx).unwrap();
    assert_eq!(counts[&v.id("fly").unwrap()], 5.0);
    assert_eq!(counts[&v.id("swim").unwrap()], 11.0);
    assert_eq!(argmax(&tuned), v.id("swim").unwrap());
}

#[test]
fn model_file_round_trips() {
    let model = NGramModel::fit_text(&synthetic_corpus(30, 9), 3, 0.6).unwrap();
    let back = NGramModel::read_from(model.to_bytes().as_slice()).unwrap();
    assert_eq!(back, model);
    assert_eq!(back.to_bytes(), model.to_bytes());
}

fn arb_model() -> impl Strategy<Value = NGramModel> {
    (any::<u64>(), 5usize..40, 1usize..5, 0.05f64..0.95)
        .prop_map(|(seed, n, order, d)| NGramModel::fit_text(&synthetic_corpus(n, seed), order, d).unwrap())
}

fn arb_prefix(v: &Vocabulary) -> impl Strategy<Value = Vec<TokenId>> {
    let ids: Vec<TokenId> = (0..v.len() as TokenId).filter(|&i| i != EOS && i != BOS).collect();
    prop::collection::vec(prop::sample::select(ids), 0..6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn next_token_distribution_is_normalized(
        (model, prefix) in arb_model().prop_flat_map(|m| { let p = arb_prefix(m.vocab()); (Just(m), p) })
    ) {
        let lp = model.next_token_logprobs(&prefix).unwrap();
        prop_assert_eq!(lp.len(), model.vocab().len());
        let mass: f64 = lp.iter().map(|x| x.exp()).sum();
        prop_assert!((mass - 1.0).abs() < 1e-9, "mass {}", mass);
        prop_assert!(lp.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn chain_rule_holds(
        (model, seq) in arb_model().prop_flat_map(|m| { let p = arb_prefix(m.vocab()); (Just(m), p) })
    ) {
        prop_assume!(!seq.is_empty());
        let total = sequence_logprob(&model, &TokenSequence::new(seq.clone())).unwrap();
        let mut sum = 0.0;
        for i in 0..seq.len() {
            sum += model.next_token_logprobs(&seq[..i]).unwrap()[seq[i] as usize];
        }
        prop_assert!((total - sum).abs() < 1e-9);
    }

    #[test]
    fn finetune_raises_data_likelihood(seed in any::<u64>(), w in 0.01f64..=1.0) {
        let model = NGramModel::fit_text(&synthetic_corpus(30, seed), 3, 0.75).unwrap();
        let data: Vec<TokenSequence> = synthetic_corpus(5, seed ^ 1)
            .iter()
            .map(|s| model.vocab().encode(s).with_eos())
            .collect();
        let (tuned, _) = model.finetune(&data, w).unwrap();
        let mean = |m: &NGramModel| data.iter().map(|s| sequence_logprob(m, s).unwrap()).sum::<f64>();
        prop_assert!(mean(&tuned) >= mean(&model) - 1e-9);
    }

    #[test]
    fn finetune_twice_equals_double_weight(seed in any::<u64>(), k in 1u32..5) {
        // dyadic weights keep every count exactly representable
        let w = f64::from(k) / 16.0;
        let model = NGramModel::fit_text(&synthetic_corpus(20, seed), 3, 0.5).unwrap();
        let data: Vec<TokenSequence> = synthetic_corpus(4, seed.wrapping_add(7))
            .iter()
            .map(|s| model.vocab().encode(s))
            .collect();
        let (once, _) = model.finetune(&data, w).unwrap();
        let (twice, _) = once.finetune(&data, w).unwrap();
        let (double, _) = model.finetune(&data, 2.0 * w).unwrap();
        prop_assert_eq!(twice.tables(), double.tables());
    }
}
