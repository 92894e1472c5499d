//! Rendering of command results as JSON, CSV or plain text.

use clap::ValueEnum;
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Pretty,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Csv => "csv",
            Format::Pretty => "txt",
        }
    }
}

pub enum Report {
    Tables(Value),
    Record(Value),
    Certificate(Value),
    Choi(Value),
    List(Vec<String>),
}

/// 12 significant digits, '.' separator; exponent form outside [1e-4, 1e15).
pub fn sig12(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.11e}").parse().unwrap_or(x);
    let a = rounded.abs();
    if a != 0.0 && !(1e-4..1e15).contains(&a) {
        format!("{rounded:e}")
    } else {
        rounded.to_string()
    }
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::Bool(b) => b.to_string(),
        Value::Number(n) => match n.as_u64().or_else(|| n.as_i64().map(|i| i as u64)) {
            Some(_) if !n.is_f64() => n.to_string(),
            _ => sig12(n.as_f64().unwrap_or(f64::NAN)),
        },
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn csv_text(header: &[&str], rows: Vec<Vec<String>>) -> std::io::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

/// Scalar leaves of a JSON object as (dotted key, value); arrays of objects are skipped.
fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, x, out);
            }
        }
        Value::Array(_) => {}
        x => out.push((prefix.to_string(), cell(x))),
    }
}

const ROW_FIELDS: [&str; 9] = ["name", "description", "computed", "expected", "deviation", "tolerance", "pass", "class", "error"];

fn table_rows(v: &Value) -> Vec<(String, &Value)> {
    ["table_i", "fully_ordered", "table_ii"]
        .iter()
        .flat_map(|t| v[*t].as_array().into_iter().flatten().map(move |r| (t.to_string(), r)))
        .collect()
}

impl Report {
    pub fn render(&self, format: Format) -> std::io::Result<String> {
        match format {
            Format::Json => Ok(match self {
                Report::List(names) => serde_json::to_string_pretty(names)?,
                Report::Tables(v) | Report::Record(v) | Report::Certificate(v) | Report::Choi(v) => {
                    serde_json::to_string_pretty(v)?
                }
            } + "\n"),
            Format::Csv => self.csv(),
            Format::Pretty => Ok(self.pretty()),
        }
    }

    fn csv(&self) -> std::io::Result<String> {
        match self {
            Report::List(names) => csv_text(&["scenario"], names.iter().map(|n| vec![n.clone()]).collect()),
            Report::Tables(v) => {
                let mut header = vec!["table"];
                header.extend(ROW_FIELDS);
                let rows = table_rows(v)
                    .into_iter()
                    .map(|(t, r)| std::iter::once(t).chain(ROW_FIELDS.iter().map(|f| cell(&r[*f]))).collect())
                    .collect();
                csv_text(&header, rows)
            }
            Report::Record(v) | Report::Certificate(v) => {
                let mut pairs = Vec::new();
                flatten("", v, &mut pairs);
                if let Some(checks) = v["checks"].as_array() {
                    for c in checks {
                        pairs.push((format!("checks.{}", cell(&c["name"])), cell(&c["value"])));
                    }
                }
                csv_text(&["key", "value"], pairs.into_iter().map(|(k, x)| vec![k, x]).collect())
            }
            Report::Choi(v) => {
                let mut rows = Vec::new();
                for c in v["candidates"].as_array().into_iter().flatten() {
                    let cand = cell(&c["candidate"]);
                    for b in c["operator"]["blocks"].as_array().into_iter().flatten() {
                        for (i, row) in b["matrix"].as_array().into_iter().flatten().enumerate() {
                            for (j, z) in row.as_array().into_iter().flatten().enumerate() {
                                rows.push(vec![
                                    cand.clone(),
                                    cell(&b["j_out"]),
                                    cell(&b["j_in"]),
                                    i.to_string(),
                                    j.to_string(),
                                    cell(&z[0]),
                                    cell(&z[1]),
                                ]);
                            }
                        }
                    }
                }
                csv_text(&["candidate", "j_out", "j_in", "row", "col", "re", "im"], rows)
            }
        }
    }

    fn pretty(&self) -> String {
        let mut s = String::new();
        match self {
            Report::List(names) => {
                for n in names {
                    s.push_str(n);
                    s.push('\n');
                }
            }
            Report::Tables(v) => {
                let mut current = String::new();
                for (t, r) in table_rows(v) {
                    if t != current {
                        s.push_str(&format!("\n[{t}]\n"));
                        current = t;
                    }
                    let computed = r["computed"].as_f64().map(|x| format!("{x:.9}")).unwrap_or_else(|| "-".into());
                    let dev = r["deviation"].as_f64().map(|x| format!("{x:.1e}")).unwrap_or_else(|| "-".into());
                    s.push_str(&format!(
                        "{:<24} {:>12}  expected {:>10.6}  dev {:>8}  {}{}\n",
                        cell(&r["name"]),
                        computed,
                        r["expected"].as_f64().unwrap_or(f64::NAN),
                        dev,
                        if r["pass"].as_bool() == Some(true) { "pass" } else { "FAIL" },
                        r["error"].as_str().map(|e| format!("  ({e})")).unwrap_or_default(),
                    ));
                }
                s.push_str(&format!(
                    "\nordering chain strict: {} (min margin {})\n",
                    cell(&v["ordering_chain"]["strict"]),
                    cell(&v["ordering_chain"]["min_margin"])
                ));
            }
            Report::Record(v) | Report::Certificate(v) | Report::Choi(v) => {
                let mut pairs = Vec::new();
                flatten("", v, &mut pairs);
                let w = pairs.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
                for (k, x) in pairs {
                    s.push_str(&format!("{k:<w$}  {x}\n"));
                }
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(sig12(0.875), "0.875");
        assert_eq!(sig12(0.91051615912345678), "0.910516159123");
        assert_eq!(sig12(1.0 / 3.0), "0.333333333333");
        assert_eq!(sig12(5.579583895691e-16), "5.57958389569e-16");
    }
}
