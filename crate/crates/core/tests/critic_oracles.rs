use distill_core::critic::{
    filter, roc_auc, train_critic, Critic, CriticConfig, CriticModel, FeatureSpec, Label, LabeledExample, OracleCritic,
    TrainConfig,
};
use distill_core::generation::Generation;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DETS: [&str; 3] = ["the", "every", "some"];
const ADJS: [&str; 4] = ["small", "old", "green", "quiet"];
const NOUNS: [&str; 5] = ["dogs", "trees", "rivers", "birds", "cars"];
const VERBS: [&str; 4] = ["grow", "move", "rest", "change"];
const ADVS: [&str; 3] = ["slowly", "often", "quickly"];

/// Members of `Det Adj? Noun Verb Adv?`.
fn in_grammar(s: &str) -> bool {
    let toks: Vec<&str> = s.split(' ').collect();
    let mut i = 0;
    let mut take = |set: &[&str], optional: bool| -> bool {
        if i < toks.len() && set.contains(&toks[i]) {
            i += 1;
            true
        } else {
            optional
        }
    };
    let ok = take(&DETS, false) && take(&ADJS, true) && take(&NOUNS, false) && take(&VERBS, false) && take(&ADVS, true);
    ok && i == toks.len()
}

fn grammatical(rng: &mut ChaCha8Rng) -> Vec<&'static str> {
    let mut s = vec![*DETS.choose(rng).unwrap()];
    if rng.gen_bool(0.5) {
        s.push(*ADJS.choose(rng).unwrap());
    }
    s.push(*NOUNS.choose(rng).unwrap());
    s.push(*VERBS.choose(rng).unwrap());
    if rng.gen_bool(0.5) {
        s.push(*ADVS.choose(rng).unwrap());
    }
    s
}

/// Half grammar members, half scrambled or truncated ones.
fn dataset(n: usize, seed: u64) -> Vec<LabeledExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut s = grammatical(&mut rng);
            if i % 2 == 1 {
                while in_grammar(&s.join(" ")) {
                    if rng.gen_bool(0.7) {
                        s.shuffle(&mut rng);
                    } else {
                        s.remove(rng.gen_range(0..s.len()));
                    }
                }
            }
            let text = s.join(" ");
            let label = if in_grammar(&text) { Label::Valid } else { Label::Invalid };
            LabeledExample { text, label }
        })
        .collect()
}

fn trained() -> CriticModel {
    train_critic(&dataset(400, 1), FeatureSpec::default(), TrainConfig::default()).unwrap().0
}

#[test]
fn grammar_critic_generalizes() {
    let critic = trained();
    let held_out = dataset(200, 2);
    let correct = held_out
        .iter()
        .filter(|e| (critic.score(&e.text) > 0.5) == (e.label == Label::Valid))
        .count();
    let acc = correct as f64 / held_out.len() as f64;
    assert!(acc >= 0.9, "held-out accuracy {acc}");
}

#[test]
fn grammar_critic_ranks_held_out_examples() {
    let critic = trained();
    let held_out = dataset(20, 3);
    let scores: Vec<f64> = held_out.iter().map(|e| critic.score(&e.text)).collect();
    let labels: Vec<bool> = held_out.iter().map(|e| e.label == Label::Valid).collect();
    let auc = roc_auc(&scores, &labels);
    assert!(auc >= 0.9, "auc {auc}");
}

fn generation(text: &str) -> Generation {
    Generation {
        job_id: 0,
        prompt: String::new(),
        text: text.into(),
        logprob: -1.0,
        num_tokens: 1,
        violation_count: 0,
        final_score: -1.0,
        critic_score: None,
        iteration: None,
    }
}

#[test]
fn oracle_filter_keeps_exactly_the_valid_subset() {
    let pool: Vec<Generation> = dataset(100, 4).iter().map(|e| generation(&e.text)).collect();
    let oracle = OracleCritic::new(in_grammar);
    let kept: Vec<String> = filter(pool.clone(), &oracle, CriticConfig::default()).map(|g| g.text).collect();
    let expected: Vec<String> = pool.iter().filter(|g| in_grammar(&g.text)).map(|g| g.text.clone()).collect();
    assert_eq!(kept, expected);
}

#[test]
fn model_file_round_trips() {
    let critic = trained();
    let back = CriticModel::read_from(critic.to_bytes().as_slice()).unwrap();
    assert_eq!(back, critic);
}

struct Fixed;

impl Critic for Fixed {
    fn score(&self, text: &str) -> f64 {
        (text.len() % 11) as f64 / 10.0
    }
}

proptest! {
    #[test]
    fn filter_is_monotone_in_delta(texts in prop::collection::vec("[a-z ]{0,12}", 0..30), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let pool: Vec<Generation> = texts.iter().map(|t| generation(t)).collect();
        let loose: Vec<Generation> = filter(pool.clone(), &Fixed, CriticConfig::new(lo).unwrap()).collect();
        let strict: Vec<Generation> = filter(pool, &Fixed, CriticConfig::new(hi).unwrap()).collect();
        prop_assert!(strict.len() <= loose.len());
        for g in &strict {
            prop_assert!(loose.contains(g));
        }
    }

    #[test]
    fn filter_is_idempotent(texts in prop::collection::vec("[a-z ]{0,12}", 0..30), d in 0.0f64..=1.0) {
        let cfg = CriticConfig::new(d).unwrap();
        let pool: Vec<Generation> = texts.iter().map(|t| generation(t)).collect();
        let once: Vec<Generation> = filter(pool, &Fixed, cfg).collect();
        let twice: Vec<Generation> = filter(once.clone(), &Fixed, cfg).collect();
        prop_assert_eq!(once, twice);
    }
}
