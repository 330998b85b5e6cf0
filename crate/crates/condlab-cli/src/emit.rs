//! Result emission: human-readable stdout lines, CSV/JSON tables, SVG plots.
//!
//! CSV column order is fixed: `suite`, `seed`, parameter columns sorted by
//! name, result columns sorted by name. Identical configurations produce
//! byte-identical files.

use std::collections::BTreeSet;
use std::io::Write;

use crate::config::{ExperimentConfig, OutputFormat};
use crate::plot;
use crate::record::ExperimentRecord;
use crate::suites::SuiteOutcome;

fn csv_escape(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

pub fn to_csv(records: &[ExperimentRecord]) -> String {
    let mut param_keys = BTreeSet::new();
    let mut result_keys = BTreeSet::new();
    for r in records {
        param_keys.extend(r.params.keys().cloned());
        result_keys.extend(r.results.keys().cloned());
    }
    let mut out = String::new();
    let mut header = vec!["suite".to_string(), "seed".to_string()];
    header.extend(param_keys.iter().cloned());
    header.extend(result_keys.iter().cloned());
    out.push_str(
        &header
            .iter()
            .map(|h| csv_escape(h))
            .collect::<Vec<_>>()
            .join(","),
    );
    out.push('\n');
    for r in records {
        let mut row = vec![r.suite.clone(), r.seed.to_string()];
        for key in &param_keys {
            row.push(r.params.get(key).map(|v| v.to_string()).unwrap_or_default());
        }
        for key in &result_keys {
            row.push(
                r.results
                    .get(key)
                    .map(|v| v.to_string())
                    .unwrap_or_default(),
            );
        }
        out.push_str(
            &row.iter()
                .map(|f| csv_escape(f))
                .collect::<Vec<_>>()
                .join(","),
        );
        out.push('\n');
    }
    out
}

pub fn to_json(records: &[ExperimentRecord]) -> String {
    let array: Vec<serde_json::Value> = records
        .iter()
        .map(|r| {
            let mut map = serde_json::Map::new();
            map.insert("suite".into(), serde_json::Value::String(r.suite.clone()));
            map.insert("seed".into(), serde_json::Value::from(r.seed));
            for (k, v) in &r.params {
                map.insert(k.clone(), v.to_json());
            }
            for (k, v) in &r.results {
                map.insert(k.clone(), v.to_json());
            }
            serde_json::Value::Object(map)
        })
        .collect();
    let mut text = serde_json::to_string_pretty(&serde_json::Value::Array(array))
        .expect("records serialize to JSON");
    text.push('\n');
    text
}

fn describe(record: &ExperimentRecord) -> String {
    let status = if record.is_passed() { "PASS" } else { "FAIL" };
    let params: Vec<String> = record
        .params
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    let results: Vec<String> = record
        .results
        .iter()
        .filter(|(k, _)| k.as_str() != "passed")
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    format!("{status} {} | {}", params.join(" "), results.join(" "))
}

pub fn emit(cfg: &ExperimentConfig, outcome: &SuiteOutcome) -> Result<(), String> {
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    for record in &outcome.records {
        writeln!(lock, "{}", describe(record)).map_err(|e| e.to_string())?;
    }
    let passed = outcome.records.iter().filter(|r| r.is_passed()).count();
    writeln!(
        lock,
        "suite {}: {passed}/{} checks passed",
        cfg.suite.as_str(),
        outcome.records.len()
    )
    .map_err(|e| e.to_string())?;

    if let Some(path) = &cfg.out {
        let text = match cfg.format {
            OutputFormat::Csv => to_csv(&outcome.records),
            OutputFormat::Json => to_json(&outcome.records),
        };
        std::fs::write(path, text).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    }

    if let Some(path) = &cfg.plot {
        let svg = plot::render(
            &format!("{} suite", cfg.suite.as_str()),
            &outcome.x_label,
            &outcome.y_label,
            &outcome.series,
        );
        std::fs::write(path, svg).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::Value;

    #[test]
    fn fields_with_commas_or_quotes_are_quoted() {
        assert_eq!(csv_escape("plain"), "plain");
        assert_eq!(csv_escape("a,b"), "\"a,b\"");
        assert_eq!(csv_escape("say \"hi\""), "\"say \"\"hi\"\"\"");
    }

    #[test]
    fn missing_columns_are_left_empty() {
        let a = ExperimentRecord::new("s", 1)
            .param("k", Value::Int(1))
            .result("x", Value::Float(0.5))
            .passed(true);
        let b = ExperimentRecord::new("s", 1)
            .param("rho", Value::Float(0.25))
            .result("y", Value::text("empirical-only"))
            .passed(true);
        let csv = to_csv(&[a, b]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "suite,seed,k,rho,passed,x,y");
        assert_eq!(lines[1], "s,1,1,,true,0.5,");
        assert_eq!(lines[2], "s,1,,0.25,true,,empirical-only");
    }

    #[test]
    fn json_preserves_value_types() {
        let record = ExperimentRecord::new("s", 3)
            .param("k", Value::Int(2))
            .result("v", Value::Float(0.125))
            .passed(false);
        let parsed: serde_json::Value = serde_json::from_str(&to_json(&[record])).unwrap();
        let obj = &parsed.as_array().unwrap()[0];
        assert_eq!(obj["k"], serde_json::json!(2));
        assert_eq!(obj["v"], serde_json::json!(0.125));
        assert_eq!(obj["passed"], serde_json::json!(false));
    }
}
