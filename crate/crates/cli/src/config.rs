//! The shared TOML configuration. Every field is optional; a flag given on
//! the command line wins over the file, and the file wins over the flag's
//! built-in default.

use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::ArgMatches;
use distill_core::synthetic::SyntheticConfig;
use serde::Deserialize;

use crate::error::{CliError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable that overrides the configured run directory.
pub const RUN_DIR_ENV: &str = "DISTILL_RUN_DIR";

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: Option<u32>,
    pub seed: Option<u64>,
    pub parallelism: Option<usize>,
    pub paths: Paths,
    pub prompts: PromptsSection,
    pub decoder: DecoderSection,
    pub critic: CriticSection,
    pub selfimit: SelfimitSection,
    pub eval: EvalSection,
    /// Present when the loop should run on the built-in synthetic benchmark.
    pub synthetic: Option<SyntheticConfig>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub concepts: Option<PathBuf>,
    pub relations: Option<PathBuf>,
    pub related: Option<PathBuf>,
    pub function_words: Option<PathBuf>,
    pub connective_words: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub jobs: Option<PathBuf>,
    pub critic: Option<PathBuf>,
    pub run_dir: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptsSection {
    pub ppl_threshold: Option<f64>,
    pub forbid_variants: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderSection {
    pub beam_size: Option<usize>,
    pub num_returns: Option<usize>,
    pub max_len: Option<usize>,
    pub min_len: Option<usize>,
    pub length_penalty: Option<f64>,
    pub lambda: Option<f64>,
    pub diversity_bucketing: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticSection {
    pub delta: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelfimitSection {
    pub iterations: Option<usize>,
    pub mix_weight: Option<f64>,
    pub dedup: Option<bool>,
    pub retrain_data: Vec<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub capture: Option<f64>,
    pub bleu_threshold: Option<f64>,
    pub seeds: Option<usize>,
}

impl PipelineConfig {
    /// Reads and checks a config file. Relative paths inside it are taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::io::read_text(path)?;
        let mut cfg: Self =
            toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        match cfg.schema_version {
            Some(SCHEMA_VERSION) => {}
            Some(v) => {
                return Err(CliError::config(format!(
                    "{}: schema_version {v} is not supported (expected {SCHEMA_VERSION})",
                    path.display()
                )))
            }
            None => return Err(CliError::config(format!("{}: missing schema_version", path.display()))),
        }
        let base = path.parent().unwrap_or(Path::new(""));
        let p = &mut cfg.paths;
        for slot in [
            &mut p.concepts,
            &mut p.relations,
            &mut p.related,
            &mut p.function_words,
            &mut p.connective_words,
            &mut p.model,
            &mut p.jobs,
            &mut p.critic,
            &mut p.run_dir,
        ] {
            if let Some(rel) = slot.as_mut() {
                *rel = base.join(&*rel);
            }
        }
        for rel in &mut cfg.selfimit.retrain_data {
            *rel = base.join(&*rel);
        }
        Ok(cfg)
    }
}

/// True when `id` was given explicitly on the command line.
pub fn explicit(m: &ArgMatches, id: &str) -> bool {
    m.value_source(id) == Some(ValueSource::CommandLine)
}

/// The flag if given explicitly, else the config value, else the flag's default.
pub fn pick<T>(m: &ArgMatches, id: &str, flag: T, config: Option<T>) -> T {
    if explicit(m, id) {
        flag
    } else {
        config.unwrap_or(flag)
    }
}

/// Run directory precedence: flag, then environment, then config, then
/// `fallback`.
pub fn run_dir(flag: Option<PathBuf>, config: Option<PathBuf>, fallback: &str) -> PathBuf {
    flag.or_else(|| std::env::var_os(RUN_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .or(config)
        .unwrap_or_else(|| PathBuf::from(fallback))
}
