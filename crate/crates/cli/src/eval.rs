use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use clap::ArgMatches;
use distill_core::evalkit::{accuracy as accuracy_of, estimate_unique_seeds, pr_curve, MnrConfig, ScoredLabeledItem};
use serde::Deserialize;

use crate::config::pick;
use crate::error::{CliError, Result};
use crate::io::{self, json_lines, write_err};
use crate::{Context, EvalAccuracyArgs, EvalMnrArgs, EvalPrArgs, PrFormat};

fn by_system(items: Vec<ScoredLabeledItem>) -> BTreeMap<String, Vec<ScoredLabeledItem>> {
    let mut out: BTreeMap<String, Vec<ScoredLabeledItem>> = BTreeMap::new();
    for item in items {
        out.entry(item.system.clone()).or_default().push(item);
    }
    out
}

fn read_scored(path: &std::path::Path) -> Result<Vec<ScoredLabeledItem>> {
    let items: Vec<ScoredLabeledItem> =
        json_lines(io::input(Some(path))?, path.display().to_string()).collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(CliError::input(format!("{}: no items", path.display())));
    }
    Ok(items)
}

pub fn pr(a: &EvalPrArgs) -> Result<()> {
    let mut curves = BTreeMap::new();
    for (system, items) in by_system(read_scored(&a.items)?) {
        let curve = pr_curve(&items).map_err(|e| CliError::from(e).in_file(&a.items))?;
        curves.insert(system, curve);
    }
    let text = match a.format {
        PrFormat::Json => serde_json::to_string_pretty(&curves).expect("curves serialize") + "\n",
        PrFormat::Table => {
            let mut s = String::new();
            for (system, curve) in &curves {
                let _ = writeln!(s, "system: {}", if system.is_empty() { "-" } else { system });
                s.push_str(&curve.to_table());
            }
            s
        }
        PrFormat::Csv => {
            let mut s = String::from("system,threshold,precision,recall\n");
            for (system, curve) in &curves {
                for p in &curve.points {
                    let _ = writeln!(s, "{system},{},{},{}", p.threshold, p.precision, p.recall);
                }
            }
            s
        }
    };
    let mut out = io::output(a.out.as_deref())?;
    let werr = write_err(a.out.as_deref());
    out.write_all(text.as_bytes()).map_err(&werr)?;
    out.flush().map_err(&werr)
}

pub fn accuracy(a: &EvalAccuracyArgs) -> Result<()> {
    let mut report = BTreeMap::new();
    for (system, items) in by_system(read_scored(&a.items)?) {
        let acc = accuracy_of(&items)?;
        report.insert(system, serde_json::json!({ "items": items.len(), "accuracy": acc }));
    }
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(())
}

/// A statement to count. Generation lines carry a prompt instead of a
/// concept and are grouped by it.
#[derive(Deserialize)]
struct MnrItem {
    text: String,
    #[serde(default)]
    concept: Option<String>,
    #[serde(default)]
    prompt: Option<String>,
    #[serde(default)]
    system: String,
}

pub fn mnr(a: &EvalMnrArgs, m: &ArgMatches, ctx: &Context) -> Result<()> {
    let e = &ctx.config.eval;
    let cfg = MnrConfig {
        capture_fraction: pick(m, "capture", a.capture, e.capture),
        bleu_threshold: pick(m, "bleu_threshold", a.bleu_threshold, e.bleu_threshold),
        ..MnrConfig::default()
    };
    let seeds = pick(m, "seeds", a.seeds, e.seeds);
    let seed = pick(m, "seed", a.seed, ctx.config.seed);
    let mut systems: BTreeMap<String, BTreeMap<String, Vec<String>>> = BTreeMap::new();
    for item in json_lines::<MnrItem>(io::input(Some(&a.items))?, a.items.display().to_string()) {
        let item = item?;
        let concept = item.concept.or(item.prompt).unwrap_or_default();
        systems.entry(item.system).or_default().entry(concept).or_default().push(item.text);
    }
    if systems.is_empty() {
        return Err(CliError::input(format!("{}: no items", a.items.display())));
    }
    let mut report = BTreeMap::new();
    for (system, groups) in &systems {
        let summary = estimate_unique_seeds(groups, &cfg, seed, seeds)?;
        let first = &summary.runs[0];
        report.insert(
            system.clone(),
            serde_json::json!({
                "concepts": groups.len(),
                "estimated_concepts": first.per_concept.len(),
                "skipped": first.skipped,
                "mean": summary.mean,
                "std_dev": summary.std_dev,
                "seeds": summary.seeds,
                "per_seed_mean": summary.runs.iter().map(|r| r.mean).collect::<Vec<_>>(),
            }),
        );
    }
    let out = serde_json::json!({
        "capture": cfg.capture_fraction,
        "bleu_threshold": cfg.bleu_threshold,
        "systems": report,
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("report serializes"));
    Ok(())
}
