mod common;

use common::*;
use distill_core::constraints::{ConstraintSet, Literal};
use distill_core::decoder::{batch_decode, decode, decode_trace, step, DecodeJob, DecoderConfig, Hypothesis};
use distill_core::lm::{NGramModel, Scorer};
use distill_core::vocab::TokenSequence;

fn exhaustive_cfg(words: usize, max_len: usize, lambda: f64) -> DecoderConfig {
    let width = exhaustive_width(words, max_len).max(100_000);
    DecoderConfig { beam_size: width, num_returns: 1, max_len, min_len: 1, length_penalty: 0.1, lambda, ..Default::default() }
}

#[test]
fn exhaustive_beam_finds_enumeration_argmax() {
    let words = &WORDS[..7];
    for seed in 0..4u64 {
        let mut r = rng(seed);
        let model = random_ngram(words, 2, &mut r);
        assert_eq!(model.vocab().len(), 10);
        let constraints = random_constraints(words, &mut r);
        let cfg = exhaustive_cfg(7, 5, if seed % 2 == 0 { 20.0 } else { 0.7 });
        let prompt = model.vocab().encode(words[seed as usize]);
        let top = &decode(&model, &prompt, &constraints, &cfg).unwrap()[0];
        let (tokens, score) = brute_force_best(&model, prompt.ids(), &constraints, &cfg).unwrap();
        assert_eq!(top.text, model.vocab().decode(&tokens), "seed {seed}");
        assert_eq!(top.final_score, score);
    }
}

#[test]
fn heavy_penalty_avoids_forbidden_word() {
    let corpus = ["the cat sat", "the cat ran", "a cat sat", "the dog sat"];
    let model = NGramModel::fit_text(&corpus, 2, 0.75).unwrap();
    let constraints = ConstraintSet::conjunction(vec![Literal::forbid("cat").unwrap()]);
    let cfg = DecoderConfig { lambda: 1e6, max_len: 4, min_len: 1, beam_size: 10, num_returns: 10, ..Default::default() };
    let prompt = model.vocab().encode("the");
    let unconstrained = decode(&model, &prompt, &ConstraintSet::empty(), &cfg).unwrap();
    assert!(unconstrained[0].text.split(' ').any(|w| w == "cat"));
    let out = decode(&model, &prompt, &constraints, &cfg).unwrap();
    assert_eq!(out[0].violation_count, 0);
    assert!(!out[0].text.split(' ').any(|w| w == "cat"), "{}", out[0].text);
}

fn render(trace: &[Vec<Hypothesis>]) -> String {
    trace
        .iter()
        .enumerate()
        .map(|(i, beam)| {
            let hyps: Vec<String> = beam
                .iter()
                .map(|h| format!("{:?}{}{:.9}", h.tokens, if h.finished { "$" } else { "" }, h.logprob))
                .collect();
            format!("{i}: {}", hyps.join(" "))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn trajectory_matches_frozen_fixture() {
    let mut r = rng(42);
    let model = random_ngram(&WORDS[..6], 3, &mut r);
    let constraints = ConstraintSet::conjunction(vec![Literal::forbid("cat").unwrap(), Literal::require("dog").unwrap()]);
    let cfg = DecoderConfig { beam_size: 3, num_returns: 2, max_len: 4, min_len: 1, ..Default::default() };
    let prompt = model.vocab().encode("ant");
    let trace = decode_trace(&model, &prompt, &constraints, &cfg).unwrap();

    // folding `step` by hand gives the same beams
    let mut beam = vec![Hypothesis::root(&constraints)];
    for recorded in &trace[1..] {
        beam = step(&model, prompt.ids(), &beam, &constraints, &cfg).unwrap();
        assert_eq!(&beam, recorded);
    }
    let expected = include_str!("fixtures/decode_trajectory.txt");
    assert_eq!(render(&trace), expected.trim_end());
}

#[test]
fn batch_of_32_yields_at_most_320() {
    let mut r = rng(3);
    let model = random_ngram(&WORDS, 2, &mut r);
    let jobs: Vec<DecodeJob> = (0..32)
        .map(|id| DecodeJob {
            id,
            prompt: WORDS[id % WORDS.len()].to_string(),
            constraints: random_constraints(&WORDS, &mut r),
        })
        .collect();
    let cfg = DecoderConfig { max_len: 5, ..Default::default() };
    let serial = batch_decode(&model, &jobs, &cfg, 1).unwrap();
    let parallel = batch_decode(&model, &jobs, &cfg, 4).unwrap();
    let total: usize = serial.iter().map(|o| o.result.as_ref().map_or(0, Vec::len)).sum();
    assert!(total <= 320 && total > 0);
    for (a, b) in serial.iter().zip(&parallel) {
        assert_eq!(a.job_id, b.job_id);
        assert_eq!(a.result.as_ref().unwrap(), b.result.as_ref().unwrap());
    }
    assert!(serial.iter().enumerate().all(|(i, o)| o.job_id == i));
}

#[test]
fn hashed_models_agree_with_enumeration() {
    let words = &WORDS[..5];
    for seed in 0..6u64 {
        let model = HashedModel::new(words, seed, 4.0);
        let constraints = random_constraints(words, &mut rng(seed + 100));
        let cfg = exhaustive_cfg(5, 4, 2.0);
        let prompt = TokenSequence::new(vec![]);
        let top = &decode(&model, &prompt, &constraints, &cfg).unwrap()[0];
        let (tokens, score) = brute_force_best(&model, &[], &constraints, &cfg).unwrap();
        assert_eq!(top.text, model.vocab().decode(&tokens));
        assert_eq!(top.final_score, score);
    }
}
