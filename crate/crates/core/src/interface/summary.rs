//! Machine-readable run outputs: `summary-<command>.json` and the
//! per-iterate `iterations.jsonl` log. One file per command keeps a chain of
//! commands sharing an output directory from overwriting each other.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::error::Result;
use crate::reconstruct::IterRecord;

pub const ITERATIONS_FILE: &str = "iterations.jsonl";
pub const SCHEMA: &str = "phaseless-run-summary/1";

/// Command-line values that replaced configuration entries.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Overrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_scale: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub command: String,
    /// The configuration file exactly as read, or `None` when defaults were used.
    pub config_echo: Option<Value>,
    pub resolved_config: Option<Value>,
    pub overrides: Overrides,
    pub outputs: Vec<String>,
    pub results: Map<String, Value>,
}

impl RunSummary {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            config_echo: None,
            resolved_config: None,
            overrides: Overrides::default(),
            outputs: Vec::new(),
            results: Map::new(),
        }
    }

    pub fn result(&mut self, key: &str, value: impl Serialize) {
        self.results
            .insert(key.to_string(), serde_json::to_value(value).expect("result serializes"));
    }

    pub fn to_value(&self) -> Value {
        json!({
            "schema": SCHEMA,
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "config": self.config_echo,
            "resolved_config": self.resolved_config,
            "overrides": self.overrides,
            "outputs": self.outputs,
            "results": self.results,
        })
    }

    pub fn file_name(&self) -> String {
        summary_file(&self.command)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_value()).expect("summary serializes");
        fs::write(dir.join(self.file_name()), text + "\n")?;
        Ok(())
    }
}

pub fn summary_file(command: &str) -> String {
    format!("summary-{command}.json")
}

/// One JSON object per line, in call order.
pub struct IterationLog<W: Write> {
    out: W,
}

impl<W: Write> IterationLog<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn record(&mut self, r: &IterRecord) -> Result<()> {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(self.out, "{line}")?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
