//! Wire format: UTF-8, one JSON object per line, strict request/response.
//!
//! ```text
//! -> {"id":1,"op":"vocab"}
//! <- {"id":1,"status":"ok","protocol":1,"tokens":["<s>","</s>","<unk>","birds"],"finetune":false}
//! -> {"id":2,"op":"logprobs","prefix":[0,3]}
//! <- {"id":2,"status":"ok","logprobs":[-1.6,-0.5,-2.3,-1.9]}
//! -> {"id":3,"op":"finetune","texts":["birds can fly"],"weight":1.0}
//! <- {"id":3,"status":"ok"}
//! -> {"id":4,"op":"shutdown"}
//! <- {"id":4,"status":"ok"}
//! <- {"id":null,"status":"error","message":"malformed request: ..."}
//! ```
//!
//! Request ids must increase strictly within a session. `logprobs` carries
//! one finite natural-log probability per vocabulary id; the values must
//! exponentiate to a distribution within 1e-6.

use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Op {
    Vocab,
    Logprobs { prefix: Vec<u32> },
    Finetune { texts: Vec<String>, weight: f64 },
    Shutdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerRequest {
    pub id: u64,
    #[serde(flatten)]
    pub op: Op,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Payload {
    Vocab { protocol: u32, tokens: Vec<String>, finetune: bool },
    Logprobs { logprobs: Vec<f64> },
    Error { message: String },
    Ack {},
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerResponse {
    /// Echo of the request id; null when the request could not be parsed.
    pub id: Option<u64>,
    pub status: Status,
    #[serde(flatten)]
    pub payload: Payload,
}

impl ScorerRequest {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("request serializes")
    }
}

impl ScorerResponse {
    pub fn ok(id: u64, payload: Payload) -> Self {
        Self { id: Some(id), status: Status::Ok, payload }
    }

    pub fn error(id: Option<u64>, message: impl Into<String>) -> Self {
        Self { id, status: Status::Error, payload: Payload::Error { message: message.into() } }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("response serializes")
    }
}
