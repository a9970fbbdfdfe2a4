//! Runs one `native-lp` job: parse the model, bind inputs, solve, and
//! collect per-component results plus a log.

use std::collections::BTreeMap;

use serde_json::Value as Json;

use crate::lp::script::{evaluate_outputs, instantiate, parse_script, InputValue};
use crate::lp::{solve, Status};
use crate::model::ModelManifest;

pub const NATIVE_KERNEL_TAG: &str = "native-lp";

#[derive(Debug, Clone, PartialEq)]
pub struct JobOutcome {
    pub success: bool,
    pub results: BTreeMap<String, Json>,
    pub log: Vec<String>,
}

impl JobOutcome {
    fn failed(mut log: Vec<String>, message: String) -> Self {
        log.push(format!("error: {message}"));
        JobOutcome { success: false, results: BTreeMap::new(), log }
    }
}

/// Parses an interface file as a flat list of numbers.
///
/// Numbers may be separated by whitespace, commas or semicolons and wrapped
/// in brackets; text after `%` or `#` on a line is ignored.
pub fn parse_numeric_file(bytes: &[u8]) -> Result<Vec<f64>, String> {
    let text = std::str::from_utf8(bytes).map_err(|_| "file is not valid UTF-8".to_string())?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split(['%', '#']).next().unwrap_or("");
        for tok in line.split(|c: char| c.is_whitespace() || matches!(c, ',' | ';' | '[' | ']')) {
            if tok.is_empty() {
                continue;
            }
            let v: f64 = tok.parse().map_err(|_| format!("line {}: {tok:?} is not a number", i + 1))?;
            out.push(v);
        }
    }
    Ok(out)
}

fn json_input(name: &str, value: &Json) -> Result<Option<InputValue>, String> {
    Ok(match value {
        Json::Number(n) => Some(InputValue::Scalar(n.as_f64().unwrap_or(f64::NAN))),
        Json::String(s) => Some(InputValue::Text(s.clone())),
        Json::Array(items) => {
            let v = items
                .iter()
                .map(Json::as_f64)
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| format!("input {name}: vectors must contain only numbers"))?;
            Some(InputValue::Vector(v))
        }
        // File references; their bytes arrive separately.
        Json::Object(_) | Json::Null => None,
        Json::Bool(_) => return Err(format!("input {name}: booleans are not supported")),
    })
}

/// Executes a model with the native LP kernel.
///
/// Non-optimal solver statuses still count as a successful run: the
/// execution components carry the status and outputs are omitted.
pub fn run_native(
    manifest: &ModelManifest,
    source: &str,
    inputs: &BTreeMap<String, Json>,
    files: &[(String, Vec<u8>)],
) -> JobOutcome {
    let mut log = Vec::new();
    let script = match parse_script(manifest, source) {
        Ok(s) => s,
        Err(e) => return JobOutcome::failed(log, e.to_string()),
    };
    log.extend(script.warnings().iter().map(|w| format!("warning: {w}")));

    let mut values = BTreeMap::new();
    for (name, value) in inputs {
        match json_input(name, value) {
            Ok(Some(v)) => {
                values.insert(name.clone(), v);
            }
            Ok(None) => {}
            Err(e) => return JobOutcome::failed(log, e),
        }
    }
    for (name, bytes) in files {
        match parse_numeric_file(bytes) {
            Ok(v) => {
                log.push(format!("read {} values from interface file {name}", v.len()));
                values.insert(name.clone(), InputValue::Vector(v));
            }
            Err(e) => return JobOutcome::failed(log, format!("interface file {name}: {e}")),
        }
    }

    let instance = match instantiate(&script, &values) {
        Ok(i) => i,
        Err(e) => return JobOutcome::failed(log, e.to_string()),
    };
    log.push(format!(
        "solving LP: {} variables, {} constraints, feastol {:e}, maxiter {}",
        instance.problem.num_vars(),
        instance.problem.num_rows(),
        instance.params.feastol,
        instance.params.maxiter
    ));
    let solution = solve(&instance.problem, &instance.params);
    log.push(format!(
        "status {} after {} iterations ({:.6} s)",
        solution.status, solution.iterations, solution.info.time
    ));

    if solution.status != Status::Optimal {
        let info = serde_json::to_value(solution.info.to_map()).expect("map serializes");
        let results = script
            .bindings()
            .iter()
            .filter(|(_, b)| **b == crate::lp::script::Binding::Execution)
            .map(|(name, _)| (name.clone(), info.clone()))
            .collect();
        log.push(format!("outputs not evaluated: solution is {}", solution.status));
        return JobOutcome { success: true, results, log };
    }

    match evaluate_outputs(&script, &instance, &solution) {
        Ok(results) => {
            if let Some(obj) = solution.objective {
                log.push(format!("objective {}", obj + instance.objective_offset));
            }
            JobOutcome { success: true, results, log }
        }
        Err(e) => JobOutcome::failed(log, e.to_string()),
    }
}
