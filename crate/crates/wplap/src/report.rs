//! Run reports: a versioned JSON document validated against the schema
//! shipped in `schemas/report.schema.json`, plus CSV series and small SVG
//! line charts rendered from those CSV bytes.
//!
//! Everything in a report is deterministic for a fixed config and seed
//! except `provenance.timing_ms`; regression comparisons null that field
//! and then expect byte equality. Non-finite numbers serialize as JSON
//! null, which is why every numeric field in the schema admits null.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde_json::Value;

pub const SCHEMA_VERSION: &str = "1";

/// The schema is embedded so the binary always validates against the
/// exact revision it ships with.
pub const REPORT_SCHEMA: &str = include_str!("../schemas/report.schema.json");

#[derive(Clone, Debug, serde::Serialize)]
pub struct Provenance {
    pub version: String,
    pub seed: u64,
    /// Wall-clock milliseconds; the only field excluded from reproducibility.
    pub timing_ms: f64,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct Report {
    pub schema_version: String,
    pub command: String,
    pub config: Value,
    pub results: Value,
    pub provenance: Provenance,
    pub warnings: Vec<String>,
}

/// Serialize, self-validate against the shipped schema, write
/// `report.json` under `dir`, and return its path. A schema failure here
/// is a bug, not an input problem, and is surfaced as a hard error.
pub fn write_report(dir: &Path, report: &Report) -> io::Result<PathBuf> {
    let value = serde_json::to_value(report)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
    let schema: Value = serde_json::from_str(REPORT_SCHEMA)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
    validate_against(&schema, &value, "$")
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("report schema: {e}")))?;
    let path = dir.join("report.json");
    let mut text = serde_json::to_string_pretty(&value)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
    text.push('\n');
    fs::write(&path, text)?;
    Ok(path)
}

/// Validate `value` against the subset of JSON schema the shipped schema
/// uses: `type` (string or list), `required`, `properties`,
/// `additionalProperties` (boolean), `items` (single schema), `enum`, and
/// `minimum`. Returns the first failure with a JSON-path-ish location.
pub fn validate_against(schema: &Value, value: &Value, path: &str) -> Result<(), String> {
    if let Some(types) = schema.get("type") {
        let names: Vec<&str> = match types {
            Value::String(s) => vec![s.as_str()],
            Value::Array(a) => a.iter().filter_map(Value::as_str).collect(),
            _ => return Err(format!("{path}: malformed `type` in schema")),
        };
        if !names.iter().any(|n| type_matches(n, value)) {
            return Err(format!("{path}: expected type {names:?}, got {}", type_name(value)));
        }
    }
    if let Some(allowed) = schema.get("enum").and_then(Value::as_array) {
        if !allowed.contains(value) {
            return Err(format!("{path}: value {value} not in enum"));
        }
    }
    if let Some(min) = schema.get("minimum").and_then(Value::as_f64) {
        if let Some(x) = value.as_f64() {
            if x < min {
                return Err(format!("{path}: {x} below minimum {min}"));
            }
        }
    }
    if let Some(obj) = value.as_object() {
        if let Some(required) = schema.get("required").and_then(Value::as_array) {
            for name in required.iter().filter_map(Value::as_str) {
                if !obj.contains_key(name) {
                    return Err(format!("{path}: missing required field `{name}`"));
                }
            }
        }
        let props = schema.get("properties").and_then(Value::as_object);
        if let Some(props) = props {
            for (name, sub) in props {
                if let Some(child) = obj.get(name) {
                    validate_against(sub, child, &format!("{path}.{name}"))?;
                }
            }
        }
        if schema.get("additionalProperties").and_then(Value::as_bool) == Some(false) {
            for name in obj.keys() {
                if props.map_or(true, |p| !p.contains_key(name)) {
                    return Err(format!("{path}: unexpected field `{name}`"));
                }
            }
        }
    }
    if let (Some(items), Some(arr)) = (schema.get("items"), value.as_array()) {
        for (i, child) in arr.iter().enumerate() {
            validate_against(items, child, &format!("{path}[{i}]"))?;
        }
    }
    Ok(())
}

fn type_matches(name: &str, value: &Value) -> bool {
    match name {
        "object" => value.is_object(),
        "array" => value.is_array(),
        "string" => value.is_string(),
        "number" => value.is_number(),
        "integer" => value.is_i64() || value.is_u64(),
        "boolean" => value.is_boolean(),
        "null" => value.is_null(),
        _ => false,
    }
}

fn type_name(value: &Value) -> &'static str {
    match value {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

/// 17-significant-digit CSV so series survive a round trip exactly.
pub fn write_csv<W: Write>(
    mut out: W,
    header: &str,
    rows: impl Iterator<Item = Vec<f64>>,
) -> io::Result<()> {
    writeln!(out, "{header}")?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|x| format!("{x:.16e}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

const SVG_PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Render one line chart from CSV text: column `x_col` against each of
/// `y_cols`, skipping rows where either value is non-finite. Returns an
/// error when the CSV is malformed or nothing is plottable.
pub fn svg_from_csv(
    title: &str,
    csv: &str,
    x_col: usize,
    y_cols: &[usize],
) -> Result<String, String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().ok_or("empty csv")?.split(',').collect();
    let need = y_cols.iter().chain([&x_col]).max().copied().unwrap_or(0);
    if header.len() <= need {
        return Err(format!("csv has {} columns, need {}", header.len(), need + 1));
    }
    let mut series: Vec<Vec<(f64, f64)>> = vec![Vec::new(); y_cols.len()];
    for (no, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(format!("csv row {}: {} cells, expected {}", no + 2, cells.len(), header.len()));
        }
        let parse = |i: usize| -> Result<f64, String> {
            cells[i].trim().parse::<f64>().map_err(|e| format!("csv row {}: {e}", no + 2))
        };
        let x = parse(x_col)?;
        for (s, &yc) in series.iter_mut().zip(y_cols) {
            let y = parse(yc)?;
            if x.is_finite() && y.is_finite() {
                s.push((x, y));
            }
        }
    }
    let points: Vec<(f64, f64)> = series.iter().flatten().copied().collect();
    if points.is_empty() {
        return Err("no finite data points".into());
    }
    let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &points {
        x_lo = x_lo.min(x);
        x_hi = x_hi.max(x);
        y_lo = y_lo.min(y);
        y_hi = y_hi.max(y);
    }
    // Degenerate ranges still get a visible box.
    if x_hi == x_lo {
        x_hi = x_lo + 1.0;
    }
    if y_hi == y_lo {
        y_hi = y_lo + 1.0;
    }
    let (w, h, ml, mr, mt, mb) = (640.0, 400.0, 70.0, 20.0, 30.0, 40.0);
    let sx = |x: f64| ml + (x - x_lo) / (x_hi - x_lo) * (w - ml - mr);
    let sy = |y: f64| h - mb - (y - y_lo) / (y_hi - y_lo) * (h - mt - mb);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w} {h}\" \
         font-family=\"monospace\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"18\" text-anchor=\"middle\">{title}</text>\n",
        w / 2.0
    ));
    svg.push_str(&format!(
        "<rect x=\"{ml}\" y=\"{mt}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#999\"/>\n",
        w - ml - mr,
        h - mt - mb
    ));
    svg.push_str(&format!(
        "<text x=\"{ml}\" y=\"{}\" text-anchor=\"start\">{:.3e}</text>\n",
        h - mb + 16.0,
        x_lo
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3e}</text>\n",
        w - mr,
        h - mb + 16.0,
        x_hi
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3e}</text>\n",
        ml - 4.0,
        h - mb,
        y_lo
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{:.3e}</text>\n",
        ml - 4.0,
        mt + 12.0,
        y_hi
    ));
    for (idx, s) in series.iter().enumerate() {
        if s.is_empty() {
            continue;
        }
        let pts: Vec<String> =
            s.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let color = SVG_PALETTE[idx % SVG_PALETTE.len()];
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            pts.join(" ")
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{}</text>\n",
            ml + 8.0,
            mt + 16.0 + 14.0 * idx as f64,
            header[y_cols[idx]]
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_report() -> Report {
        Report {
            schema_version: SCHEMA_VERSION.into(),
            command: "eigen".into(),
            config: serde_json::json!({"p": 2.0}),
            results: serde_json::json!({"lambda1": 1.5, "gap": f64::NAN}),
            provenance: Provenance { version: "0.1.0".into(), seed: 7, timing_ms: 12.5 },
            warnings: vec!["sample".into()],
        }
    }

    #[test]
    fn shipped_schema_accepts_reports_and_rejects_mutants() {
        let schema: Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
        let good = serde_json::to_value(sample_report()).unwrap();
        validate_against(&schema, &good, "$").unwrap();

        let mut missing = good.clone();
        missing.as_object_mut().unwrap().remove("results");
        assert!(validate_against(&schema, &missing, "$").is_err());

        let mut extra = good.clone();
        extra.as_object_mut().unwrap().insert("extra".into(), Value::Null);
        assert!(validate_against(&schema, &extra, "$").is_err());

        let mut bad_command = good.clone();
        bad_command["command"] = Value::String("explode".into());
        assert!(validate_against(&schema, &bad_command, "$").is_err());

        let mut bad_seed = good.clone();
        bad_seed["provenance"]["seed"] = serde_json::json!(-3);
        assert!(validate_against(&schema, &bad_seed, "$").is_err());

        let mut bad_warning = good;
        bad_warning["warnings"] = serde_json::json!([1]);
        assert!(validate_against(&schema, &bad_warning, "$").is_err());
    }

    #[test]
    fn nonfinite_numbers_become_null_and_still_validate() {
        let value = serde_json::to_value(sample_report()).unwrap();
        assert!(value["results"]["gap"].is_null());
        let text = serde_json::to_string(&value).unwrap();
        assert!(text.contains("\"gap\":null"));
    }

    #[test]
    fn write_report_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_report(dir.path(), &sample_report()).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.ends_with('\n'));
        let parsed: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed["schema_version"], "1");
        assert_eq!(parsed["provenance"]["seed"], 7);
    }

    #[test]
    fn csv_uses_full_precision_and_round_trips() {
        let mut buf = Vec::new();
        let rows = vec![vec![1.0 / 3.0, std::f64::consts::PI], vec![2.5e-17, -4.0]];
        write_csv(&mut buf, "a,b", rows.clone().into_iter()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("a,b"));
        for (line, row) in lines.zip(&rows) {
            for (cell, &x) in line.split(',').zip(row) {
                assert_eq!(cell.parse::<f64>().unwrap(), x, "cell {cell}");
            }
        }
    }

    #[test]
    fn svg_renders_from_csv_and_skips_nonfinite_rows() {
        let mut buf = Vec::new();
        let rows = vec![
            vec![0.1, 1.0, -1.0],
            vec![0.2, f64::NAN, -0.5],
            vec![0.3, 3.0, 0.5],
        ];
        write_csv(&mut buf, "r,u,q", rows.into_iter()).unwrap();
        let csv = String::from_utf8(buf).unwrap();
        let svg = svg_from_csv("trajectory", &csv, 0, &[1, 2]).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.matches("<polyline").count() == 2);
        assert!(svg.contains("trajectory"));

        assert!(svg_from_csv("empty", "r,u\n", 0, &[1]).is_err());
        assert!(svg_from_csv("narrow", &csv, 0, &[9]).is_err());
    }
}
