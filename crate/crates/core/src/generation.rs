use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

/// One decoded statement and everything known about it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub job_id: usize,
    pub prompt: String,
    /// The generated continuation, space-joined tokens without the end marker.
    pub text: String,
    /// Log-probability of the continuation (end marker included) given the prompt.
    pub logprob: f64,
    /// Continuation tokens the score was normalized by, end marker included.
    pub num_tokens: usize,
    pub violation_count: usize,
    pub final_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub critic_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration: Option<usize>,
}

impl Generation {
    /// Prompt and continuation as one statement.
    pub fn statement(&self) -> String {
        match (self.prompt.trim(), self.text.trim()) {
            ("", t) => t.to_string(),
            (p, "") => p.to_string(),
            (p, t) => format!("{p} {t}"),
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("generation serializes")
    }
}

pub fn write_jsonl<'a, W, I>(mut out: W, items: I) -> std::io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a Generation>,
{
    for g in items {
        writeln!(out, "{}", g.to_json_line())?;
    }
    Ok(())
}

/// Reads generations one per line; blank lines are skipped. Errors carry the
/// 1-based line number.
pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<Generation>, (usize, String)> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| (i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| (i + 1, e.to_string()))?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Generation {
        Generation {
            job_id: 3,
            prompt: "Typically, a bicycle has".into(),
            text: "two wheels".into(),
            logprob: -3.25,
            num_tokens: 3,
            violation_count: 0,
            final_score: -2.9,
            critic_score: None,
            iteration: Some(1),
        }
    }

    #[test]
    fn statement_joins_prompt_and_text() {
        assert_eq!(sample().statement(), "Typically, a bicycle has two wheels");
    }

    #[test]
    fn json_lines_round_trip() {
        let g = sample();
        let line = g.to_json_line();
        assert!(!line.contains("critic_score"));
        let mut buf = Vec::new();
        write_jsonl(&mut buf, [&g, &g]).unwrap();
        assert_eq!(read_jsonl(buf.as_slice()).unwrap(), vec![g.clone(), g]);
        assert_eq!(read_jsonl("{\n".as_bytes()).unwrap_err().0, 1);
    }
}
