//! Iterative self-imitation: decode every job with the current model, keep
//! the generations the critic accepts, fine-tune on them, repeat.

use std::collections::HashSet;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::critic::{Critic, CriticConfig};
use crate::decoder::{batch_decode, DecodeError, DecodeJob, DecoderConfig};
use crate::generation::{write_jsonl, Generation};
use crate::lm::{sequence_logprob, LmError, NGramModel, Scorer};
use crate::vocab::TokenSequence;

pub const FINAL_MODEL_FILE: &str = "final_model.bin";

#[derive(Debug, Error)]
pub enum LoopError {
    #[error("invalid loop configuration: {0}")]
    Config(String),
    #[error("no jobs to decode")]
    NoJobs,
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error("iteration {iteration}: critic accepted none of {pool_size} generations; refusing to fine-tune on nothing")]
    EmptyFiltered { iteration: usize, pool_size: usize },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopConfig {
    pub iterations: usize,
    pub decoder: DecoderConfig,
    pub critic: CriticConfig,
    pub mix_weight: f64,
    /// Drop repeated statements from each filtered pool before fine-tuning.
    pub dedup: bool,
    /// Recorded in every report. The loop itself draws no random numbers;
    /// the seed is there for inputs derived from it, such as the synthetic
    /// benchmark.
    pub seed: u64,
    pub parallelism: usize,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            iterations: 3,
            decoder: DecoderConfig::default(),
            critic: CriticConfig::default(),
            mix_weight: 1.0,
            dedup: true,
            seed: 0,
            parallelism: 1,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<(), LoopError> {
        if self.iterations == 0 {
            return Err(LoopError::Config("iterations must be at least 1".into()));
        }
        if !(self.mix_weight > 0.0 && self.mix_weight <= 1.0) {
            return Err(LoopError::Config(format!("mix_weight must lie in (0, 1], got {}", self.mix_weight)));
        }
        if !(0.0..=1.0).contains(&self.critic.delta) {
            return Err(LoopError::Config(format!("delta must lie in [0, 1], got {}", self.critic.delta)));
        }
        self.decoder.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub k: usize,
    pub seed: u64,
    pub jobs: usize,
    /// Jobs for which no hypothesis finished.
    pub failed_jobs: usize,
    pub pool_size: usize,
    /// Generations scoring above delta, before dedup.
    pub passed: usize,
    /// Size of the fine-tuning set after dedup.
    pub filtered_size: usize,
    pub pass_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle_validity_rate: Option<f64>,
    /// Mean sequence log-probability of the fine-tuning set under the model
    /// before and after this iteration's update.
    pub filtered_logprob_before: f64,
    pub filtered_logprob_after: f64,
    /// Path of the checkpoint this iteration decoded with, relative to the
    /// run directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}

/// Raw and filtered pools of one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationPools {
    pub pool: Vec<Generation>,
    pub filtered: Vec<Generation>,
}

#[derive(Debug, Clone)]
pub struct LoopOutcome {
    pub final_model: NGramModel,
    pub reports: Vec<IterationReport>,
    pub pools: Vec<IterationPools>,
}

/// Exact-statement duplicates removed, first occurrence kept.
pub fn dedup<I: IntoIterator<Item = Generation>>(pool: I) -> impl Iterator<Item = Generation> {
    let mut seen = HashSet::new();
    pool.into_iter().filter(move |g| seen.insert(g.statement()))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LoopError + '_ {
    move |source| LoopError::Io { path: path.to_path_buf(), source }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), LoopError> {
    fs::write(path, bytes).map_err(io_err(path))
}

fn write_pool(path: &Path, gens: &[Generation]) -> Result<(), LoopError> {
    let f = fs::File::create(path).map_err(io_err(path))?;
    write_jsonl(BufWriter::new(f), gens).map_err(io_err(path))
}

fn mean_logprob(model: &NGramModel, data: &[TokenSequence]) -> Result<f64, LmError> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for seq in data {
        sum += sequence_logprob(model, seq)?;
    }
    Ok(sum / data.len() as f64)
}

/// Runs `cfg.iterations` rounds starting from `p0`.
///
/// Iteration `k` decodes with `P_k`, scores the whole pool with `critic`,
/// keeps generations above delta and fine-tunes `P_k` on their statements
/// to obtain `P_{k+1}`. `oracle`, when given, measures the validity rate of
/// the raw pool. With `run_dir` set, each iteration writes
/// `iter_k/{pool.jsonl,filtered.jsonl,model.bin,report.json}` (the model
/// being `P_k`) and the last model goes to `final_model.bin`.
pub fn run<C>(
    p0: &NGramModel,
    jobs: &[DecodeJob],
    critic: &C,
    oracle: Option<&(dyn Fn(&str) -> bool + Sync)>,
    cfg: &LoopConfig,
    run_dir: Option<&Path>,
) -> Result<LoopOutcome, LoopError>
where
    C: Critic,
{
    run_scheduled(p0, jobs, &[critic as &dyn Critic], oracle, cfg, run_dir)
}

/// As [`run`], with iteration `k` scored by `critics[k]`. Iterations past
/// the end of the schedule reuse its last critic.
pub fn run_scheduled(
    p0: &NGramModel,
    jobs: &[DecodeJob],
    critics: &[&dyn Critic],
    oracle: Option<&(dyn Fn(&str) -> bool + Sync)>,
    cfg: &LoopConfig,
    run_dir: Option<&Path>,
) -> Result<LoopOutcome, LoopError> {
    if critics.is_empty() {
        return Err(LoopError::Config("no critic given".into()));
    }
    cfg.validate()?;
    if jobs.is_empty() {
        return Err(LoopError::NoJobs);
    }
    if let Some(dir) = run_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut model = p0.clone();
    let mut reports = Vec::with_capacity(cfg.iterations);
    let mut pools = Vec::with_capacity(cfg.iterations);

    for k in 0..cfg.iterations {
        let outcomes = batch_decode(&model, jobs, &cfg.decoder, cfg.parallelism)?;
        let mut failed_jobs = 0;
        let mut pool = Vec::new();
        for outcome in outcomes {
            match outcome.result {
                Ok(gens) => pool.extend(gens),
                Err(e) => {
                    failed_jobs += 1;
                    tracing::warn!(iteration = k, job = outcome.job_id, error = %e, "job produced no generation");
                }
            }
        }
        let critic = critics[k.min(critics.len() - 1)];
        for g in &mut pool {
            g.iteration = Some(k);
            g.critic_score = Some(critic.score(&g.statement()));
        }
        let passing = pool.iter().filter(|g| g.critic_score.is_some_and(|s| s > cfg.critic.delta)).cloned();
        let passed: Vec<Generation> = passing.collect();
        let passed_count = passed.len();
        let filtered: Vec<Generation> = if cfg.dedup { dedup(passed).collect() } else { passed };

        let iter_dir = run_dir.map(|d| d.join(format!("iter_{k}")));
        if let Some(dir) = &iter_dir {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            write_pool(&dir.join("pool.jsonl"), &pool)?;
            write_pool(&dir.join("filtered.jsonl"), &filtered)?;
            write_file(&dir.join("model.bin"), &model.to_bytes())?;
        }

        if filtered.is_empty() {
            return Err(LoopError::EmptyFiltered { iteration: k, pool_size: pool.len() });
        }

        let vocab = model.vocab();
        let data: Vec<TokenSequence> = filtered.iter().map(|g| vocab.encode(&g.statement())).collect();
        let (next, _) = model.finetune(&data, cfg.mix_weight)?;

        let oracle_validity_rate = oracle.map(|is_valid| {
            if pool.is_empty() {
                0.0
            } else {
                pool.iter().filter(|g| is_valid(&g.statement())).count() as f64 / pool.len() as f64
            }
        });
        let report = IterationReport {
            k,
            seed: cfg.seed,
            jobs: jobs.len(),
            failed_jobs,
            pool_size: pool.len(),
            passed: passed_count,
            filtered_size: filtered.len(),
            pass_rate: if pool.is_empty() { 0.0 } else { passed_count as f64 / pool.len() as f64 },
            oracle_validity_rate,
            filtered_logprob_before: mean_logprob(&model, &data)?,
            filtered_logprob_after: mean_logprob(&next, &data)?,
            checkpoint: iter_dir.as_ref().map(|_| format!("iter_{k}/model.bin")),
        };
        tracing::info!(
            iteration = k,
            pool = report.pool_size,
            filtered = report.filtered_size,
            pass_rate = report.pass_rate,
            validity = report.oracle_validity_rate,
            "iteration finished"
        );
        if let Some(dir) = &iter_dir {
            let json = serde_json::to_vec_pretty(&report).expect("report serializes");
            write_file(&dir.join("report.json"), &json)?;
        }
        reports.push(report);
        pools.push(IterationPools { pool, filtered });
        model = next;
    }

    if let Some(dir) = run_dir {
        write_file(&dir.join(FINAL_MODEL_FILE), &model.to_bytes())?;
    }
    Ok(LoopOutcome { final_model: model, reports, pools })
}
