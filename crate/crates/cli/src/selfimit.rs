use std::path::PathBuf;

use clap::ArgMatches;
use distill_core::critic::{parse_labeled, train_critic, Critic, CriticConfig, FeatureSpec, OracleCritic, TrainConfig};
use distill_core::selfimit::{run_scheduled, LoopConfig};
use distill_core::synthetic::SyntheticBenchmark;

use crate::config::{explicit, run_dir};
use crate::error::{CliError, Result};
use crate::io;
use crate::pipeline::{read_jobs, required};
use crate::{Context, SelfimitArgs};

fn choose<T>(m: &ArgMatches, id: &str, flag: T, config: Option<T>, base: T) -> T {
    if explicit(m, id) {
        flag
    } else {
        config.unwrap_or(base)
    }
}

/// Critics trained on the first 1, 2, ... retraining files.
fn retrained(files: &[PathBuf], spec: FeatureSpec) -> Result<Vec<Box<dyn Critic>>> {
    let mut data = Vec::new();
    let mut out: Vec<Box<dyn Critic>> = Vec::new();
    for path in files {
        data.extend(parse_labeled(&io::read_text(path)?).map_err(|e| CliError::from(e).in_file(path))?);
        let (model, report) = train_critic(&data, spec, TrainConfig::default())?;
        tracing::info!(file = %path.display(), examples = data.len(), accuracy = report.accuracy, "critic retrained");
        out.push(Box::new(model));
    }
    Ok(out)
}

pub fn run(a: &SelfimitArgs, m: &ArgMatches, ctx: &Context) -> Result<()> {
    let file = &ctx.config;
    let synthetic = (a.synthetic || file.synthetic.is_some()).then(|| {
        let mut sc = file.synthetic.clone().unwrap_or_default();
        if explicit(m, "seed") || file.synthetic.is_none() {
            sc.seed = choose(m, "seed", a.seed, file.seed, a.seed);
        }
        SyntheticBenchmark::generate(sc)
    });

    let is_valid = |s: &str| synthetic.as_ref().is_some_and(|b| b.is_valid(s));
    let (p0, jobs, base, first, spec): (_, _, LoopConfig, Box<dyn Critic>, FeatureSpec) = match &synthetic {
        Some(bench) => (
            bench.initial_model()?,
            bench.jobs(),
            bench.loop_config(),
            Box::new(OracleCritic::new(is_valid)),
            FeatureSpec::default(),
        ),
        None => {
            let model = io::load_lm(&required(&a.model, &file.paths.model, "model")?)?;
            let jobs_path = required(&a.jobs, &file.paths.jobs, "jobs")?;
            let critic = io::load_critic(&required(&a.critic, &file.paths.critic, "critic")?)?;
            let spec = critic.spec;
            let base = LoopConfig { seed: choose(m, "seed", a.seed, file.seed, a.seed), ..LoopConfig::default() };
            (model, read_jobs(Some(&jobs_path))?, base, Box::new(critic), spec)
        }
    };

    let s = &file.selfimit;
    let delta = choose(m, "delta", a.delta, file.critic.delta, base.critic.delta);
    let cfg = LoopConfig {
        iterations: choose(m, "iterations", a.iterations, s.iterations, base.iterations),
        decoder: a.decoder.resolve(m, file, base.decoder.clone())?,
        critic: CriticConfig::new(delta)?,
        mix_weight: choose(m, "mix_weight", a.mix_weight, s.mix_weight, base.mix_weight),
        dedup: !a.no_dedup && s.dedup.unwrap_or(base.dedup),
        seed: base.seed,
        parallelism: ctx.parallelism,
    };
    cfg.validate()?;

    let retrain = if a.retrain_data.is_empty() { &s.retrain_data } else { &a.retrain_data };
    let mut critics = vec![first];
    critics.extend(retrained(retrain, spec)?);
    let schedule: Vec<&dyn Critic> = critics.iter().map(|c| c.as_ref()).collect();

    let dir = run_dir(a.run_dir.clone(), file.paths.run_dir.clone(), "run");
    let oracle: Option<&(dyn Fn(&str) -> bool + Sync)> = synthetic.as_ref().map(|_| &is_valid as _);
    let outcome = run_scheduled(&p0, &jobs, &schedule, oracle, &cfg, Some(&dir))?;
    let summary = serde_json::json!({ "run_dir": dir, "reports": outcome.reports });
    println!("{summary}");
    Ok(())
}
