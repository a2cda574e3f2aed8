//! wasm-bindgen bindings for the browser demo in `www/`.

use kflow::dsl;
use kflow::engine::{analyze as run, AnalyzeOptions};
use kflow::model::{Scenario, DEFAULT_MAX_UNIVERSE};
use kflow::protocols::{self, BUILTINS};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Built-in names, comma separated.
#[wasm_bindgen]
pub fn builtins() -> String {
    BUILTINS.join(",")
}

/// Source text of a built-in protocol.
#[wasm_bindgen]
pub fn builtin_source(name: &str) -> Result<String, JsError> {
    source_of(name).map_err(|e| JsError::new(&e))
}

/// Diagnostics for `source` as a JSON array; empty when it parses.
#[wasm_bindgen]
pub fn check(source: &str) -> String {
    check_json(source).to_string()
}

/// Analyzes `source` and returns the JSON report with an extra `dot` key.
#[wasm_bindgen]
pub fn analyze(source: &str, sessions: usize, honest: usize) -> Result<String, JsError> {
    analyze_json(source, sessions, honest).map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

pub fn source_of(name: &str) -> Result<String, String> {
    protocols::builtin(name).map(|p| dsl::render(&p)).ok_or_else(|| format!("no built-in named {name}"))
}

pub fn check_json(source: &str) -> Value {
    let (_, diags) = dsl::parse_document(source, "input.kf");
    diags
        .iter()
        .map(|d| {
            json!({
                "line": d.span.line,
                "col": d.span.col_start,
                "end": d.span.col_end,
                "kind": d.kind.name(),
                "message": d.message,
            })
        })
        .collect()
}

pub fn analyze_json(source: &str, sessions: usize, honest: usize) -> Result<Value, String> {
    let spec = dsl::parse(source, "input.kf")
        .map_err(|ds| ds.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n"))?;
    let sc = Scenario::new(spec, honest, sessions).map_err(|e| e.to_string())?;
    let report = run(&sc, AnalyzeOptions { jobs: 1, max_universe: DEFAULT_MAX_UNIVERSE }).map_err(|e| e.to_string())?;
    let mut v: Value = serde_json::from_str(&report.to_json()).map_err(|e| e.to_string())?;
    v["dot"] = Value::String(report.to_dot());
    Ok(v)
}
