//! A toy generics world with a known truth, for end-to-end runs of the
//! self-imitation loop.
//!
//! Concepts belong to classes, and each class admits a fixed set of
//! properties per relation. A statement `<concept> <relation> <property>`
//! is valid exactly when the property belongs to the concept's class. The
//! starting corpus mixes valid statements with properties borrowed from
//! other classes and with word salad, so a model fit to it prefers valid
//! continuations only weakly.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::build_standard_set;
use crate::decoder::{DecodeJob, DecoderConfig};
use crate::lm::{LmError, NGramModel, DEFAULT_DISCOUNT};
use crate::selfimit::LoopConfig;
use crate::vocab::tokenize;

struct Class {
    noun: &'static str,
    modifiers: &'static [&'static str],
    properties: &'static [(&'static str, &'static [&'static str])],
}

const CLASSES: &[Class] = &[
    Class {
        noun: "birds",
        modifiers: &["wild", "small", "young", "tropical", "urban", "migratory"],
        properties: &[
            ("can", &["fly", "sing", "nest", "perch", "glide"]),
            ("have", &["feathers", "wings", "beaks", "talons", "plumage"]),
        ],
    },
    Class {
        noun: "fish",
        modifiers: &["river", "reef", "deepwater", "freshwater", "schooling", "predatory"],
        properties: &[
            ("can", &["swim", "spawn", "dive", "school", "breathe"]),
            ("have", &["fins", "gills", "scales", "tails", "bladders"]),
        ],
    },
    Class {
        noun: "hammers",
        modifiers: &["heavy", "steel", "claw", "framing", "rubber", "carpentry"],
        properties: &[
            ("can", &["pound", "strike", "smash", "drive", "dent"]),
            ("have", &["handles", "heads", "claws", "grips", "faces"]),
        ],
    },
    Class {
        noun: "trucks",
        modifiers: &["delivery", "pickup", "dump", "tow", "garbage", "logging"],
        properties: &[
            ("can", &["haul", "tow", "deliver", "transport", "dump"]),
            ("have", &["engines", "wheels", "brakes", "headlights", "cabs"]),
        ],
    },
];

pub const RELATIONS: [&str; 2] = ["can", "have"];

/// Order of the n-gram model the benchmark is meant for: long enough to see
/// the modifier, so concepts of one class share a shorter backoff context.
pub const BENCHMARK_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub seed: u64,
    /// Corpus sentences per (concept, relation) pair.
    pub sentences_per_pair: usize,
    /// Number of the class's valid properties each concept is seen with.
    pub seen_valid: usize,
    /// Wrong properties shared by every concept of a class.
    pub confusers: usize,
    /// Probability that a sentence uses one of the class's confusers.
    pub confuser_rate: f64,
    /// Probability that a sentence is two properties run together.
    pub salad_rate: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { seed: 7, sentences_per_pair: 8, seen_valid: 2, confusers: 3, confuser_rate: 0.4, salad_rate: 0.1 }
    }
}

/// The grammar oracle plus the noisy corpus drawn from it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBenchmark {
    pub config: SyntheticConfig,
    /// concept -> relation -> valid properties.
    truth: BTreeMap<String, BTreeMap<String, BTreeSet<String>>>,
    pub corpus: Vec<String>,
}

impl SyntheticBenchmark {
    pub fn generate(config: SyntheticConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut by_relation: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for class in CLASSES {
            for (rel, props) in class.properties {
                by_relation.entry(rel).or_default().extend(props.iter().copied());
            }
        }
        let mut truth = BTreeMap::new();
        let mut corpus = Vec::new();
        for class in CLASSES {
            let confusers: BTreeMap<&str, Vec<&str>> = class
                .properties
                .iter()
                .map(|&(rel, props)| {
                    let foreign: Vec<&str> =
                        by_relation[rel].iter().copied().filter(|p| !props.contains(p)).collect();
                    (rel, foreign.choose_multiple(&mut rng, config.confusers).copied().collect())
                })
                .collect();
            for &modifier in class.modifiers {
                let concept = format!("{modifier} {}", class.noun);
                let mut rels = BTreeMap::new();
                for &(rel, props) in class.properties {
                    rels.insert(rel.to_string(), props.iter().map(|p| p.to_string()).collect::<BTreeSet<_>>());
                    let seen: Vec<&str> =
                        props.choose_multiple(&mut rng, config.seen_valid.clamp(1, props.len())).copied().collect();
                    for _ in 0..config.sentences_per_pair {
                        let r: f64 = rng.gen();
                        let continuation = if r < config.salad_rate {
                            let a = by_relation[rel].choose(&mut rng).expect("properties");
                            let b = by_relation[rel].choose(&mut rng).expect("properties");
                            format!("{a} {b}")
                        } else if r < config.salad_rate + config.confuser_rate && !confusers[rel].is_empty() {
                            confusers[rel].choose(&mut rng).expect("confusers").to_string()
                        } else {
                            seen.choose(&mut rng).expect("seen properties").to_string()
                        };
                        corpus.push(format!("{concept} {rel} {continuation}"));
                    }
                }
                truth.insert(concept, rels);
            }
        }
        Self { config, truth, corpus }
    }

    pub fn concepts(&self) -> impl Iterator<Item = &str> {
        self.truth.keys().map(String::as_str)
    }

    /// True when `statement` is `<concept> <relation> <property>` with the
    /// property valid for the concept.
    pub fn is_valid(&self, statement: &str) -> bool {
        let toks = tokenize(statement);
        let [modifier, noun, rel, rest @ ..] = toks.as_slice() else {
            return false;
        };
        let concept = format!("{modifier} {noun}");
        let Some(props) = self.truth.get(&concept).and_then(|r| r.get(rel.as_str())) else {
            return false;
        };
        props.contains(&rest.join(" "))
    }

    /// One job per (concept, relation) under the standard constraint set.
    pub fn jobs(&self) -> Vec<DecodeJob> {
        let mut jobs = Vec::new();
        for concept in self.truth.keys() {
            for rel in RELATIONS {
                jobs.push(DecodeJob {
                    id: jobs.len(),
                    prompt: format!("{concept} {rel}"),
                    constraints: build_standard_set(concept, rel, None).expect("non-empty concept and relation"),
                });
            }
        }
        jobs
    }

    pub fn initial_model(&self) -> Result<NGramModel, LmError> {
        NGramModel::fit_text(&self.corpus, BENCHMARK_ORDER, DEFAULT_DISCOUNT)
    }

    /// Loop settings the benchmark is calibrated for. Returning five of ten
    /// beams leaves room below the cut for valid properties to climb into.
    pub fn loop_config(&self) -> LoopConfig {
        LoopConfig {
            iterations: 3,
            decoder: DecoderConfig { beam_size: 10, num_returns: 5, max_len: 4, min_len: 1, ..Default::default() },
            seed: self.config.seed,
            ..Default::default()
        }
    }
}
