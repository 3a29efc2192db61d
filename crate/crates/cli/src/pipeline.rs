use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::ArgMatches;
use distill_core::constraints::{parse_word_list, StandardOptions, WordLists};
use distill_core::critic::{self, parse_labeled, train_critic as train, CriticConfig, FeatureSpec, TrainConfig};
use distill_core::decoder::{batch_decode, DecodeError, DecodeJob, DecoderConfig};
use distill_core::generation::Generation;
use distill_core::lm::NGramModel;
use distill_core::prompts::{build_jobs, BuildOptions, PromptJob, DEFAULT_RELATIONS};
use distill_core::synthetic::{SyntheticBenchmark, SyntheticConfig};
use serde::Deserialize;

use crate::config::pick;
use crate::error::{CliError, Result};
use crate::io::{self, display_name, json_lines, write_err};
use crate::{Context, DecodeArgs, ExpandArgs, FilterArgs, FitLmArgs, SyntheticArgs, TrainCriticArgs};

/// Jobs decoded per batch while streaming.
const DECODE_CHUNK: usize = 256;

pub fn required(flag: &Option<PathBuf>, config: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| config.clone())
        .ok_or_else(|| CliError::config(format!("--{name} is required (or set it under [paths] in the config)")))
}

pub fn fit_lm(a: &FitLmArgs) -> Result<()> {
    let text = io::read_text(&a.corpus)?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let model = NGramModel::fit_text(&lines, a.order, a.discount).map_err(|e| CliError::from(e).in_file(&a.corpus))?;
    io::write_bytes(&a.out, &model.to_bytes())?;
    tracing::info!(sentences = lines.len(), vocab = distill_core::lm::Scorer::vocab(&model).len(), "model written");
    Ok(())
}

fn word_list(path: &Option<PathBuf>, builtin: Vec<String>) -> Result<Vec<String>> {
    match path {
        Some(p) => Ok(parse_word_list(&io::read_text(p)?)),
        None => Ok(builtin),
    }
}

pub fn expand_prompts(a: &ExpandArgs, m: &ArgMatches, ctx: &Context) -> Result<()> {
    let paths = &ctx.config.paths;
    let concepts = io::read_text(&required(&a.concepts, &paths.concepts, "concepts")?)?;
    let relations = match a.relations.clone().or_else(|| paths.relations.clone()) {
        Some(p) => io::read_text(&p)?,
        None => DEFAULT_RELATIONS.to_string(),
    };
    let related = match a.related.clone().or_else(|| paths.related.clone()) {
        Some(p) => Some(io::read_text(&p)?),
        None => None,
    };
    let conceptnet = match &a.conceptnet_relations {
        Some(p) => Some(parse_word_list(&io::read_text(p)?)),
        None => None,
    };
    let model = io::load_lm(&required(&a.model, &paths.model, "model")?)?;
    let defaults = WordLists::default();
    let lists = WordLists {
        function_words: word_list(&a.function_words.clone().or_else(|| paths.function_words.clone()), defaults.function_words)?,
        connective_words: word_list(
            &a.connective_words.clone().or_else(|| paths.connective_words.clone()),
            defaults.connective_words,
        )?,
    };
    let opts = BuildOptions {
        ppl_threshold: pick(m, "ppl_threshold", a.ppl_threshold, ctx.config.prompts.ppl_threshold),
        constraints: StandardOptions {
            lists,
            forbid_variants: a.forbid_variants || ctx.config.prompts.forbid_variants.unwrap_or(false),
        },
        conceptnet_relations: conceptnet,
    };
    let built = build_jobs(&concepts, &relations, related.as_deref(), &model, &opts)?;
    for d in &built.diagnostics {
        tracing::warn!(file = %d.file, line = d.line, "{}", d.message);
    }
    let mut out = io::output(a.out.as_deref())?;
    let werr = write_err(a.out.as_deref());
    for job in &built.jobs {
        let line = serde_json::to_string(job).expect("jobs serialize");
        writeln!(out, "{line}").map_err(&werr)?;
    }
    out.flush().map_err(&werr)?;
    tracing::info!(jobs = built.jobs.len(), rejected = built.rejected, diagnostics = built.diagnostics.len(), "prompts expanded");
    Ok(())
}

/// A jobs line, as written by `expand-prompts` or in the bare decode form.
#[derive(Deserialize)]
#[serde(untagged)]
enum JobLine {
    Prompt(Box<PromptJob>),
    Decode(DecodeJob),
}

impl JobLine {
    fn into_job(self) -> DecodeJob {
        match self {
            JobLine::Prompt(p) => p.to_decode_job(),
            JobLine::Decode(d) => d,
        }
    }
}

pub fn read_jobs(path: Option<&Path>) -> Result<Vec<DecodeJob>> {
    json_lines::<JobLine>(io::input(path)?, display_name(path)).map(|j| j.map(JobLine::into_job)).collect()
}

fn decode_chunk<W: Write>(
    model: &NGramModel,
    chunk: &[DecodeJob],
    cfg: &DecoderConfig,
    parallelism: usize,
    out: &mut W,
    werr: &dyn Fn(std::io::Error) -> CliError,
) -> Result<(usize, usize)> {
    let (mut written, mut failed) = (0, 0);
    for outcome in batch_decode(model, chunk, cfg, parallelism)? {
        match outcome.result {
            Ok(gens) => {
                for g in &gens {
                    writeln!(out, "{}", g.to_json_line()).map_err(werr)?;
                }
                written += gens.len();
            }
            Err(DecodeError::NoCompleteHypothesis(why)) => {
                failed += 1;
                tracing::warn!(job = outcome.job_id, "no generation: {why}");
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok((written, failed))
}

pub fn decode(a: &DecodeArgs, m: &ArgMatches, ctx: &Context) -> Result<()> {
    let cfg = a.decoder.resolve(m, &ctx.config, DecoderConfig::default())?;
    let model = io::load_lm(&required(&a.model, &ctx.config.paths.model, "model")?)?;
    let jobs_path = a.jobs.clone().or_else(|| ctx.config.paths.jobs.clone());
    let name = display_name(jobs_path.as_deref());
    let mut out = io::output(a.out.as_deref())?;
    let werr = write_err(a.out.as_deref());
    let (mut jobs, mut written, mut failed) = (0, 0, 0);
    let mut chunk = Vec::with_capacity(DECODE_CHUNK);
    for job in json_lines::<JobLine>(io::input(jobs_path.as_deref())?, name) {
        chunk.push(job?.into_job());
        if chunk.len() == DECODE_CHUNK {
            let (w, f) = decode_chunk(&model, &chunk, &cfg, ctx.parallelism, &mut out, &werr)?;
            jobs += chunk.len();
            written += w;
            failed += f;
            chunk.clear();
        }
    }
    if !chunk.is_empty() {
        let (w, f) = decode_chunk(&model, &chunk, &cfg, ctx.parallelism, &mut out, &werr)?;
        jobs += chunk.len();
        written += w;
        failed += f;
    }
    out.flush().map_err(&werr)?;
    tracing::info!(jobs, generations = written, failed_jobs = failed, "decoding finished");
    Ok(())
}

pub fn train_critic(a: &TrainCriticArgs) -> Result<()> {
    let data = parse_labeled(&io::read_text(&a.data)?).map_err(|e| CliError::from(e).in_file(&a.data))?;
    let spec = FeatureSpec { buckets_log2: a.buckets_log2, ..FeatureSpec::default() };
    let cfg = TrainConfig { l2: a.l2, max_iters: a.max_iters, tolerance: a.tolerance };
    let (model, report) = train(&data, spec, cfg)?;
    io::write_bytes(&a.out, &model.to_bytes())?;
    let summary = serde_json::json!({
        "examples": data.len(),
        "training_accuracy": report.accuracy,
        "iterations": report.iterations,
        "loss": report.loss,
    });
    println!("{summary}");
    Ok(())
}

pub fn filter(a: &FilterArgs, m: &ArgMatches, ctx: &Context) -> Result<()> {
    let delta = pick(m, "delta", a.delta, ctx.config.critic.delta);
    let cfg = CriticConfig::new(delta)?;
    let model = io::load_critic(&required(&a.critic, &ctx.config.paths.critic, "critic")?)?;
    let mut out = io::output(a.out.as_deref())?;
    let werr = write_err(a.out.as_deref());
    let (mut seen, mut kept) = (0, 0);
    for g in json_lines::<Generation>(io::input(a.input.as_deref())?, display_name(a.input.as_deref())) {
        seen += 1;
        for g in critic::filter(std::iter::once(g?), &model, cfg) {
            kept += 1;
            writeln!(out, "{}", g.to_json_line()).map_err(&werr)?;
        }
    }
    out.flush().map_err(&werr)?;
    tracing::info!(seen, kept, delta, "filtering finished");
    Ok(())
}

pub fn synthetic(a: &SyntheticArgs) -> Result<()> {
    let bench = SyntheticBenchmark::generate(SyntheticConfig { seed: a.seed, ..SyntheticConfig::default() });
    let dir = &a.out_dir;
    io::write_bytes(&dir.join("corpus.txt"), (bench.corpus.join("\n") + "\n").as_bytes())?;
    let jobs: String = bench.jobs().iter().map(|j| serde_json::to_string(j).expect("jobs serialize") + "\n").collect();
    io::write_bytes(&dir.join("jobs.jsonl"), jobs.as_bytes())?;
    io::write_bytes(&dir.join("p0.bin"), &bench.initial_model()?.to_bytes())?;
    let unique: BTreeSet<&str> = bench.corpus.iter().map(String::as_str).collect();
    let labeled: String = unique
        .iter()
        .map(|s| format!("{s}\t{}\n", if bench.is_valid(s) { "valid" } else { "invalid" }))
        .collect();
    io::write_bytes(&dir.join("labeled.tsv"), labeled.as_bytes())?;
    let summary = serde_json::json!({
        "out_dir": dir,
        "seed": a.seed,
        "sentences": bench.corpus.len(),
        "jobs": bench.jobs().len(),
        "labeled": unique.len(),
    });
    println!("{summary}");
    Ok(())
}
