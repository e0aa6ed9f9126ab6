//! Report documents: canonical JSON with sorted keys, decimal strings for
//! floats and `num/den` strings for rationals.

use std::collections::BTreeMap;
use std::path::Path;

use pvass_core::numeric::{fmt_rat, Rat};
use pvass_core::Error;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const TOOL: &str = "pvass";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub quantity: String,
    pub requested: String,
    pub achieved: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorInfo {
    pub kind: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub params: BTreeMap<String, Value>,
    /// `sha256:<hex>` of the analysed input bytes.
    pub input_digest: Option<String>,
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorInfo>,
    pub results: Value,
    pub ledger: Vec<LedgerEntry>,
    /// Only with `--timestamp`; reports without it are byte-reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

impl Report {
    pub fn new(command: &str) -> Self {
        Report {
            tool: TOOL.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            params: BTreeMap::new(),
            input_digest: None,
            status: "ok".into(),
            error: None,
            results: Value::Null,
            ledger: Vec::new(),
            timestamp: None,
        }
    }

    pub fn param(&mut self, k: &str, v: impl Into<Value>) {
        self.params.insert(k.into(), v.into());
    }

    pub fn fail(&mut self, e: &Error) {
        self.status = status_of(e).into();
        let residual = match e {
            Error::Certificate { residual, .. } => Some(num(*residual)),
            _ => None,
        };
        let message = match e {
            Error::Model(m) | Error::Analysis(m) => m.clone(),
            Error::Certificate { what, .. } => what.clone(),
        };
        self.error = Some(ErrorInfo { kind: self.status.clone(), message, residual });
    }

    pub fn exit_code(&self) -> i32 {
        match self.status.as_str() {
            "ok" => 0,
            "model-error" => 2,
            "analysis-failure" => 3,
            _ => 4,
        }
    }

    /// Canonical text: keys sorted at every level, two-space indent, final newline.
    pub fn to_canonical(&self) -> String {
        let v = serde_json::to_value(self).expect("report serialises");
        let mut s = serde_json::to_string_pretty(&sort(v)).expect("value serialises");
        s.push('\n');
        s
    }

    pub fn parse(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_canonical())
    }

    pub fn read(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

pub fn status_of(e: &Error) -> &'static str {
    match e {
        Error::Model(_) => "model-error",
        Error::Analysis(_) => "analysis-failure",
        Error::Certificate { .. } => "certificate-failure",
    }
}

// serde_json keeps maps ordered by key unless `preserve_order` is enabled
// somewhere in the build; rebuild to be independent of that.
fn sort(v: Value) -> Value {
    match v {
        Value::Object(m) => {
            let sorted: BTreeMap<String, Value> = m.into_iter().map(|(k, v)| (k, sort(v))).collect();
            Value::Object(sorted.into_iter().collect())
        }
        Value::Array(a) => Value::Array(a.into_iter().map(sort).collect()),
        x => x,
    }
}

pub fn digest(bytes: &[u8]) -> String {
    let d = Sha256::digest(bytes);
    let hex: String = d.iter().map(|b| format!("{b:02x}")).collect();
    format!("sha256:{hex}")
}

/// Shortest round-trip decimal; scientific outside [1e-4, 1e15).
pub fn num(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let a = x.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub fn numv(x: f64) -> Value {
    Value::String(num(x))
}

pub fn ratv(r: &Rat) -> Value {
    Value::String(fmt_rat(r))
}
