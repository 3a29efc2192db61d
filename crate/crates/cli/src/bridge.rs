use std::io::{stdin, stdout};
use std::path::Path;
use std::process::Command;
use std::time::Duration;

use clap::ArgMatches;
use distill_core::bridge::{self as core_bridge, BridgeScorer, ChildTransport, DyadicTestModel, StreamTransport, Transport};
use distill_core::constraints::{Clause, ConstraintSet, Literal};
use distill_core::decoder::{DecodeJob, DecoderConfig};
use distill_core::lm::Scorer;

use crate::error::{CliError, ErrorKind, Result};
use crate::io;
use crate::pipeline::read_jobs;
use crate::{BridgeCheckArgs, BridgeServeArgs, Context};

/// Jobs over the test model's words, with and without constraints.
fn builtin_jobs() -> Vec<DecodeJob> {
    let req = |w: &str| Literal::require(w).expect("non-empty literal");
    let forbid = |w: &str| Literal::forbid(w).expect("non-empty literal");
    vec![
        DecodeJob { id: 0, prompt: String::new(), constraints: ConstraintSet::empty() },
        DecodeJob { id: 1, prompt: "alpha".into(), constraints: ConstraintSet::conjunction(vec![req("delta")]) },
        DecodeJob {
            id: 2,
            prompt: "beta gamma".into(),
            constraints: ConstraintSet::conjunction(vec![forbid("eta"), forbid("zeta")]),
        },
        DecodeJob {
            id: 3,
            prompt: "theta".into(),
            constraints: ConstraintSet::new(vec![Clause(vec![req("epsilon zeta"), forbid("alpha")])])
                .expect("non-empty clause"),
        },
    ]
}

fn connect(a: &BridgeCheckArgs) -> Result<BridgeScorer> {
    let timeout = Duration::from_secs(a.timeout_secs);
    let transport: Box<dyn Transport> = match (&a.connect, a.command.split_first()) {
        (Some(addr), None) => Box::new(StreamTransport::tcp(addr)?),
        (None, Some((program, args))) => {
            let mut cmd = Command::new(program);
            cmd.args(args);
            Box::new(ChildTransport::spawn(cmd)?)
        }
        _ => return Err(CliError::new(ErrorKind::Usage, "give either --connect ADDR or a bridge command after --")),
    };
    Ok(BridgeScorer::connect(transport, timeout)?)
}

pub fn check(a: &BridgeCheckArgs, m: &ArgMatches, ctx: &Context) -> Result<()> {
    let cfg = a.decoder.resolve(m, &ctx.config, DecoderConfig::default())?;
    let jobs = match &a.jobs {
        Some(p) => read_jobs(Some(p))?,
        None => builtin_jobs(),
    };
    let bridge = connect(a)?;
    let reference: Box<dyn Scorer> = match a.reference.as_str() {
        "test-model" => Box::new(DyadicTestModel::default()),
        path => Box::new(io::load_lm(Path::new(path))?),
    };
    let report = core_bridge::bridge_check(&bridge, reference.as_ref(), &jobs, &cfg, a.latency_calls);
    if let Err(e) = bridge.shutdown() {
        tracing::debug!("shutdown after check: {e}");
    }
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    if report.passed {
        Ok(())
    } else {
        let why = report
            .error
            .clone()
            .or_else(|| report.divergence.as_ref().map(|d| format!("job {} diverged: {}", d.job_id, d.detail)))
            .unwrap_or_default();
        Err(CliError::new(ErrorKind::Bridge, format!("conformance failed: {why}")))
    }
}

pub fn serve(a: &BridgeServeArgs) -> Result<()> {
    let result = match &a.model {
        Some(path) => core_bridge::serve(&mut io::load_lm(path)?, stdin().lock(), stdout().lock()),
        None => core_bridge::serve(&mut DyadicTestModel::default(), stdin().lock(), stdout().lock()),
    };
    result.map_err(|e| CliError::new(ErrorKind::Io, format!("bridge session: {e}")))
}
