//! Metadata stamped into every output file, and process exit codes.

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use stealth_reach::{Error, ErrorClass};

pub const EXIT_FAILED_CHECKS: u8 = 1;
pub const EXIT_SCHEMA: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;
pub const EXIT_INVARIANT: u8 = 4;

#[derive(Debug, Clone)]
pub struct Metadata {
    pub scenario_sha256: String,
    pub scenario: String,
    pub seed: u64,
    pub command: &'static str,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Metadata {
    pub fn to_json(&self) -> Value {
        json!({
            "scenario": self.scenario,
            "scenario_sha256": self.scenario_sha256,
            "seed": self.seed,
            "command": self.command,
            "versions": {
                "stealth-reach": stealth_reach::VERSION,
                "stealth-reach-cli": env!("CARGO_PKG_VERSION"),
            },
        })
    }

    /// `key=value` pairs for comment headers.
    pub fn header_lines(&self) -> Vec<String> {
        vec![
            format!("scenario={}", self.scenario),
            format!("scenario_sha256={}", self.scenario_sha256),
            format!("seed={}", self.seed),
            format!("command={}", self.command),
            format!(
                "versions=stealth-reach {}, stealth-reach-cli {}",
                stealth_reach::VERSION,
                env!("CARGO_PKG_VERSION")
            ),
        ]
    }

    pub fn csv_header(&self) -> String {
        self.header_lines().iter().map(|l| format!("# {l}\n")).collect()
    }

    pub fn svg_comment(&self) -> String {
        format!("<!-- {} -->\n", self.header_lines().join("; "))
    }

    /// Wraps a JSON payload as `{"metadata": …, <payload fields>}`.
    pub fn wrap(&self, payload: Value) -> Value {
        let mut out = serde_json::Map::new();
        out.insert("metadata".into(), self.to_json());
        match payload {
            Value::Object(fields) => out.extend(fields),
            other => {
                out.insert("data".into(), other);
            }
        }
        Value::Object(out)
    }
}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) => match e.class() {
            ErrorClass::Input => EXIT_SCHEMA,
            ErrorClass::Numeric => EXIT_NUMERIC,
            ErrorClass::Invariant => EXIT_INVARIANT,
        },
        None => EXIT_FAILED_CHECKS,
    }
}
