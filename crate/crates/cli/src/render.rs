//! Report rendering. JSON goes through the library's deterministic writer;
//! CSV flattens the report's row table into dotted-key columns.

use std::collections::{BTreeMap, BTreeSet};

use hypnoeval::io::{round_sig6, write_report_json, ReportValue};

use crate::Format;

pub fn render(report: &ReportValue, format: Format) -> anyhow::Result<String> {
    match format {
        Format::Json => Ok(write_report_json(report)?),
        Format::Csv => Ok(to_csv(&rows(report))),
    }
}

/// The `recordings` array, else every `tables[].comparisons` entry tagged
/// with its metric, else the report itself as one row.
fn rows(report: &ReportValue) -> Vec<BTreeMap<String, String>> {
    if let Some(ReportValue::List(items)) = report.get("recordings") {
        return items.iter().map(flatten_row).collect();
    }
    if let Some(ReportValue::List(tables)) = report.get("tables") {
        let mut out = Vec::new();
        for t in tables {
            let metric = t.get("metric").map(cell).unwrap_or_default();
            if let Some(ReportValue::List(cs)) = t.get("comparisons") {
                for c in cs {
                    let mut row = flatten_row(c);
                    row.insert("metric".into(), metric.clone());
                    out.push(row);
                }
            }
        }
        return out;
    }
    vec![flatten_row(report)]
}

fn flatten_row(v: &ReportValue) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    flatten_into(v, "", &mut out);
    out
}

fn flatten_into(v: &ReportValue, prefix: &str, out: &mut BTreeMap<String, String>) {
    match v {
        ReportValue::Map(m) => {
            for (k, x) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_into(x, &key, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), cell(other));
        }
    }
}

fn cell(v: &ReportValue) -> String {
    match v {
        ReportValue::Null => String::new(),
        ReportValue::Bool(b) => b.to_string(),
        ReportValue::Int(i) => i.to_string(),
        ReportValue::Num(x) => round_sig6(*x).to_string(),
        ReportValue::Str(s) => s.clone(),
        ReportValue::List(xs) => xs.iter().map(cell).collect::<Vec<_>>().join(";"),
        ReportValue::Map(_) => {
            let mut inner = BTreeMap::new();
            flatten_into(v, "", &mut inner);
            inner.into_iter().map(|(k, x)| format!("{k}={x}")).collect::<Vec<_>>().join(";")
        }
    }
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Header is the sorted union of keys with `recording_id` first when present.
fn to_csv(rows: &[BTreeMap<String, String>]) -> String {
    let keys: BTreeSet<&String> = rows.iter().flat_map(|r| r.keys()).collect();
    let mut header: Vec<&String> = keys.into_iter().collect();
    if let Some(i) = header.iter().position(|k| *k == "recording_id") {
        let id = header.remove(i);
        header.insert(0, id);
    }
    let mut out = header.iter().map(|k| quote(k)).collect::<Vec<_>>().join(",");
    out.push('\n');
    for r in rows {
        let line: Vec<String> = header.iter().map(|k| quote(r.get(*k).map_or("", String::as_str))).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}
