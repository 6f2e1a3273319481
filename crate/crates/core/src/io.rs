//! File formats: hypnogram and hypnodensity CSV, recording manifests and
//! JSON reports.
//!
//! Hypnogram CSV is `epoch,stage` with epochs counting up from 0 without
//! gaps. Hypnodensity CSV is `epoch,W,N1,N2,N3,REM`. Line numbers in errors
//! are 1-based and count the header.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::staging::{Hypnodensity, Hypnogram, ProbVec, RecordingBundle, Stage, DEFAULT_EPOCH_S, N_STAGES};

pub const HYPNODENSITY_HEADER: [&str; 6] = ["epoch", "W", "N1", "N2", "N3", "REM"];
pub const REPORT_SCHEMA_VERSION: i64 = 1;

/// Layout of a hypnogram text file. Never auto-detected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HypnogramFormat {
    /// `epoch,stage` CSV with header.
    #[default]
    Csv,
    /// One stage token per line, no header.
    Lines,
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Parse { line, msg: e.to_string() }
}

fn check_header(rec: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let ok = rec.len() == expected.len()
        && rec.iter().zip(expected).all(|(got, want)| got.eq_ignore_ascii_case(want));
    if !ok {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected header {:?}, got {:?}", expected.join(","), rec.iter().collect::<Vec<_>>().join(",")),
        });
    }
    Ok(())
}

fn record_line(rec: &csv::StringRecord) -> usize {
    rec.position().map(|p| p.line() as usize).unwrap_or(0)
}

fn check_epoch(field: &str, expected: usize, line: usize) -> Result<()> {
    let epoch: usize = field
        .parse()
        .map_err(|_| Error::Parse { line, msg: format!("epoch {field:?} is not a non-negative integer") })?;
    if epoch != expected {
        let what = if epoch < expected { "duplicate or decreasing" } else { "gap before" };
        return Err(Error::Sequence { line, msg: format!("{what} epoch {epoch}, expected {expected}") });
    }
    Ok(())
}

pub fn parse_hypnogram_csv(text: &str, epoch_duration_s: f64) -> Result<Hypnogram> {
    let mut records = csv_reader(text).into_records();
    let header = records.next().ok_or(Error::EmptyInput)?.map_err(csv_err)?;
    check_header(&header, &["epoch", "stage"])?;

    let mut stages = Vec::new();
    for rec in records {
        let rec = rec.map_err(csv_err)?;
        let line = record_line(&rec);
        check_epoch(&rec[0], stages.len(), line)?;
        let stage: Stage = rec[1].parse().map_err(|msg| Error::Parse { line, msg })?;
        stages.push(stage);
    }
    if stages.is_empty() {
        return Err(Error::EmptyInput);
    }
    Hypnogram::new(stages, epoch_duration_s)
}

/// Headerless variant: one stage token per line.
pub fn parse_hypnogram_lines(text: &str, epoch_duration_s: f64) -> Result<Hypnogram> {
    let stages = text
        .lines()
        .enumerate()
        .map(|(i, tok)| tok.parse::<Stage>().map_err(|msg| Error::Parse { line: i + 1, msg }))
        .collect::<Result<Vec<_>>>()?;
    if stages.is_empty() {
        return Err(Error::EmptyInput);
    }
    Hypnogram::new(stages, epoch_duration_s)
}

pub fn parse_hypnogram(text: &str, format: HypnogramFormat, epoch_duration_s: f64) -> Result<Hypnogram> {
    match format {
        HypnogramFormat::Csv => parse_hypnogram_csv(text, epoch_duration_s),
        HypnogramFormat::Lines => parse_hypnogram_lines(text, epoch_duration_s),
    }
}

pub fn write_hypnogram_csv(h: &Hypnogram) -> String {
    let mut out = String::from("epoch,stage\n");
    for (t, s) in h.stages().iter().enumerate() {
        let _ = writeln!(out, "{t},{s}");
    }
    out
}

pub fn parse_hypnodensity_csv(text: &str, epoch_duration_s: f64) -> Result<Hypnodensity> {
    let mut records = csv_reader(text).into_records();
    let header = records.next().ok_or(Error::EmptyInput)?.map_err(csv_err)?;
    check_header(&header, &HYPNODENSITY_HEADER)?;

    let mut rows: Vec<ProbVec> = Vec::new();
    for rec in records {
        let rec = rec.map_err(csv_err)?;
        let line = record_line(&rec);
        check_epoch(&rec[0], rows.len(), line)?;
        let mut row = [0.0; N_STAGES];
        for (c, slot) in row.iter_mut().enumerate() {
            let field = &rec[c + 1];
            let p: f64 = field
                .parse()
                .map_err(|_| Error::Parse { line, msg: format!("{:?} is not a number", field) })?;
            if !p.is_finite() || p < 0.0 {
                return Err(Error::Parse { line, msg: format!("probability {field} must be finite and >= 0") });
            }
            *slot = p;
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > crate::staging::ROW_SUM_TOLERANCE {
            return Err(Error::Normalization { line, sum });
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    Hypnodensity::new(rows, epoch_duration_s)
}

/// Floats use the shortest representation that parses back to the same value.
pub fn write_hypnodensity_csv(h: &Hypnodensity) -> String {
    let mut out = HYPNODENSITY_HEADER.join(",");
    out.push('\n');
    for (t, row) in h.rows().iter().enumerate() {
        let _ = write!(out, "{t}");
        for p in row {
            let _ = write!(out, ",{p}");
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub path: PathBuf,
    /// Only meaningful for scorer entries.
    #[serde(default, skip_serializing_if = "is_default_format")]
    pub format: HypnogramFormat,
}

fn is_default_format(f: &HypnogramFormat) -> bool {
    *f == HypnogramFormat::Csv
}

fn default_epoch() -> f64 {
    DEFAULT_EPOCH_S
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub recording_id: String,
    #[serde(default = "default_epoch")]
    pub epoch_duration_s: f64,
    #[serde(default)]
    pub scorers: Vec<ManifestEntry>,
    #[serde(default)]
    pub models: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn validate(&self) -> Result<()> {
        for (kind, list) in [("scorer", &self.scorers), ("model", &self.models)] {
            let mut seen = std::collections::HashSet::new();
            for e in list {
                if e.path.as_os_str().is_empty() {
                    return Err(Error::Schema { row: 0, msg: format!("{kind} {:?} has an empty path", e.name) });
                }
                if !seen.insert(e.name.as_str()) {
                    return Err(Error::DuplicateName(e.name.clone()));
                }
            }
        }
        Ok(())
    }

    /// Resolves relative entry paths against `dir`.
    pub fn resolve_paths(mut self, dir: &Path) -> Self {
        for e in self.scorers.iter_mut().chain(self.models.iter_mut()) {
            if e.path.is_relative() {
                e.path = dir.join(&e.path);
            }
        }
        self
    }
}

pub fn parse_manifest(text: &str) -> Result<Manifest> {
    let m: Manifest = serde_json::from_str(text)?;
    m.validate()?;
    Ok(m)
}

/// Reads a manifest file; relative entry paths are taken relative to it.
pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = read_text(path)?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    Ok(parse_manifest(&text)?.resolve_paths(dir))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn in_file(path: &Path, e: Error) -> Error {
    match e {
        Error::Io { .. } => e,
        other => Error::InFile { path: path.to_path_buf(), source: Box::new(other) },
    }
}

pub fn load_bundle(manifest: &Manifest) -> Result<RecordingBundle> {
    manifest.validate()?;
    let dur = manifest.epoch_duration_s;
    let scorers = manifest
        .scorers
        .iter()
        .map(|e| {
            let text = read_text(&e.path)?;
            let h = parse_hypnogram(&text, e.format, dur).map_err(|err| in_file(&e.path, err))?;
            Ok((e.name.clone(), h))
        })
        .collect::<Result<Vec<_>>>()?;
    let models = manifest
        .models
        .iter()
        .map(|e| {
            let text = read_text(&e.path)?;
            let h = parse_hypnodensity_csv(&text, dur).map_err(|err| in_file(&e.path, err))?;
            Ok((e.name.clone(), h))
        })
        .collect::<Result<Vec<_>>>()?;
    RecordingBundle::new(manifest.recording_id.clone(), dur, scorers, models)
}

/// Structured report tree. Object keys are kept sorted, so serialization
/// is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub enum ReportValue {
    Null,
    Bool(bool),
    Int(i64),
    Num(f64),
    Str(String),
    List(Vec<ReportValue>),
    Map(BTreeMap<String, ReportValue>),
}

impl ReportValue {
    pub fn object<K: Into<String>>(entries: impl IntoIterator<Item = (K, ReportValue)>) -> Self {
        ReportValue::Map(entries.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    pub fn get(&self, key: &str) -> Option<&ReportValue> {
        match self {
            ReportValue::Map(m) => m.get(key),
            _ => None,
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            ReportValue::Num(x) => Some(x),
            ReportValue::Int(i) => Some(i as f64),
            _ => None,
        }
    }

    /// Numeric equality within `tol`; everything else must match exactly.
    pub fn approx_eq(&self, other: &ReportValue, tol: f64) -> bool {
        use ReportValue::*;
        match (self, other) {
            (Num(_) | Int(_), Num(_) | Int(_)) => {
                (self.as_f64().unwrap() - other.as_f64().unwrap()).abs() <= tol
            }
            (List(a), List(b)) => a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.approx_eq(y, tol)),
            (Map(a), Map(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|((ka, va), (kb, vb))| ka == kb && va.approx_eq(vb, tol))
            }
            _ => self == other,
        }
    }
}

impl From<f64> for ReportValue {
    fn from(x: f64) -> Self {
        ReportValue::Num(x)
    }
}
impl From<i64> for ReportValue {
    fn from(x: i64) -> Self {
        ReportValue::Int(x)
    }
}
impl From<usize> for ReportValue {
    fn from(x: usize) -> Self {
        ReportValue::Int(x as i64)
    }
}
impl From<bool> for ReportValue {
    fn from(x: bool) -> Self {
        ReportValue::Bool(x)
    }
}
impl From<&str> for ReportValue {
    fn from(x: &str) -> Self {
        ReportValue::Str(x.to_string())
    }
}
impl From<String> for ReportValue {
    fn from(x: String) -> Self {
        ReportValue::Str(x)
    }
}
impl<T: Into<ReportValue>> From<Option<T>> for ReportValue {
    fn from(x: Option<T>) -> Self {
        x.map_or(ReportValue::Null, Into::into)
    }
}
impl<T: Into<ReportValue>> From<Vec<T>> for ReportValue {
    fn from(xs: Vec<T>) -> Self {
        ReportValue::List(xs.into_iter().map(Into::into).collect())
    }
}

/// Rounds to 6 significant digits.
pub fn round_sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().expect("formatted float parses")
}

fn to_json(v: &ReportValue, path: &str) -> Result<serde_json::Value> {
    use serde_json::Value;
    Ok(match v {
        ReportValue::Null => Value::Null,
        ReportValue::Bool(b) => Value::Bool(*b),
        ReportValue::Int(i) => Value::from(*i),
        ReportValue::Num(x) => {
            let n = serde_json::Number::from_f64(round_sig6(*x))
                .ok_or_else(|| Error::Serialization(path.to_string()))?;
            Value::Number(n)
        }
        ReportValue::Str(s) => Value::String(s.clone()),
        ReportValue::List(xs) => Value::Array(
            xs.iter()
                .enumerate()
                .map(|(i, x)| to_json(x, &format!("{path}[{i}]")))
                .collect::<Result<_>>()?,
        ),
        ReportValue::Map(m) => {
            let mut out = serde_json::Map::new();
            for (k, x) in m {
                let child = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                out.insert(k.clone(), to_json(x, &child)?);
            }
            Value::Object(out)
        }
    })
}

fn from_json(v: serde_json::Value) -> ReportValue {
    use serde_json::Value;
    match v {
        Value::Null => ReportValue::Null,
        Value::Bool(b) => ReportValue::Bool(b),
        Value::Number(n) => match n.as_i64() {
            Some(i) => ReportValue::Int(i),
            None => ReportValue::Num(n.as_f64().unwrap_or(f64::NAN)),
        },
        Value::String(s) => ReportValue::Str(s),
        Value::Array(xs) => ReportValue::List(xs.into_iter().map(from_json).collect()),
        Value::Object(m) => ReportValue::Map(m.into_iter().map(|(k, x)| (k, from_json(x))).collect()),
    }
}

/// Pretty-printed JSON with sorted keys and floats at 6 significant digits.
/// A top-level object gets a `"schema"` version field.
pub fn write_report_json(report: &ReportValue) -> Result<String> {
    let mut json = to_json(report, "")?;
    if let serde_json::Value::Object(m) = &mut json {
        m.entry("schema").or_insert(serde_json::Value::from(REPORT_SCHEMA_VERSION));
    }
    let mut text = serde_json::to_string_pretty(&json)?;
    text.push('\n');
    Ok(text)
}

pub fn read_report_json(text: &str) -> Result<ReportValue> {
    Ok(from_json(serde_json::from_str(text)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use Stage::*;

    #[test]
    fn hypnogram_csv_examples() {
        let h = parse_hypnogram_csv("epoch,stage\n0,W\n1,N2", 30.0).unwrap();
        assert_eq!(h.stages(), &[W, N2]);
        let h = parse_hypnogram_csv("epoch,stage\r\n0,w\r\n1,rem\r\n", 30.0).unwrap();
        assert_eq!(h.stages(), &[W, Rem]);
        match parse_hypnogram_csv("epoch,stage\n0,W\n2,N1", 30.0) {
            Err(Error::Sequence { line: 3, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hypnogram_csv_errors() {
        assert!(matches!(parse_hypnogram_csv("epoch,stage\n", 30.0), Err(Error::EmptyInput)));
        assert!(matches!(parse_hypnogram_csv("", 30.0), Err(Error::EmptyInput)));
        assert!(matches!(
            parse_hypnogram_csv("epoch,stage\n0,W\n1,N4\n", 30.0),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(matches!(
            parse_hypnogram_csv("epoch,stage\n0,W\n0,N1\n", 30.0),
            Err(Error::Sequence { line: 3, .. })
        ));
        assert!(matches!(parse_hypnogram_csv("t,stage\n0,W\n", 30.0), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(
            parse_hypnogram_csv("epoch,stage\n0,W,extra\n", 30.0),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn hypnogram_lines_format() {
        let h = parse_hypnogram_lines("W\nn1\nMASK\n", 30.0).unwrap();
        assert_eq!(h.stages(), &[W, N1, Mask]);
        assert!(matches!(parse_hypnogram_lines("W\nX\n", 30.0), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_hypnogram_lines("", 30.0), Err(Error::EmptyInput)));
    }

    #[test]
    fn hypnodensity_csv_examples() {
        let hdr = "epoch,W,N1,N2,N3,REM\n";
        let h = parse_hypnodensity_csv(&format!("{hdr}0,1,0,0,0,0\n"), 30.0).unwrap();
        assert_eq!(h.row(0), &[1.0, 0.0, 0.0, 0.0, 0.0]);
        let h = parse_hypnodensity_csv(&format!("{hdr}0,0.2,0.2,0.2,0.2,0.2\n"), 30.0).unwrap();
        assert!(h.row(0).iter().all(|p| (p - 0.2).abs() < 1e-15));
        assert!(matches!(
            parse_hypnodensity_csv(&format!("{hdr}0,0.5,0.5,0.5,0,0\n"), 30.0),
            Err(Error::Normalization { line: 2, .. })
        ));
        assert!(matches!(
            parse_hypnodensity_csv(&format!("{hdr}0,1,0,0,0,0\n1,-0.1,1.1,0,0,0\n"), 30.0),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn report_json_examples() {
        let r = ReportValue::object([("mf1", ReportValue::from(0.7537))]);
        let text = write_report_json(&r).unwrap();
        assert!(text.contains("0.7537"));
        assert!(text.contains("\"schema\": 1"));

        let r = ReportValue::object([("kappa", ReportValue::from(f64::NAN))]);
        assert!(matches!(write_report_json(&r), Err(Error::Serialization(f)) if f == "kappa"));

        let nested = ReportValue::object([(
            "recordings",
            ReportValue::List(vec![ReportValue::object([("acs", ReportValue::from(f64::INFINITY))])]),
        )]);
        assert!(matches!(write_report_json(&nested), Err(Error::Serialization(f)) if f == "recordings[0].acs"));
    }

    #[test]
    fn report_floats_use_six_significant_digits() {
        let r = ReportValue::object([("x", ReportValue::from(2.0 / 3.0)), ("y", ReportValue::from(137.142857142))]);
        let text = write_report_json(&r).unwrap();
        assert!(text.contains("0.666667"), "{text}");
        assert!(text.contains("137.143"), "{text}");
    }

    #[test]
    fn report_round_trip() {
        let r = ReportValue::object([
            ("acc", ReportValue::from(0.8123456789)),
            ("n", ReportValue::from(42usize)),
            ("name", ReportValue::from("rec-01")),
            ("reml", ReportValue::Null),
            ("f1", ReportValue::from(vec![0.9, 0.31, 1e-12])),
            ("schema", ReportValue::from(1i64)),
        ]);
        let back = read_report_json(&write_report_json(&r).unwrap()).unwrap();
        assert!(back.approx_eq(&r, 1e-6), "{back:?}");
    }

    #[test]
    fn manifest_parsing() {
        let m = parse_manifest(
            r#"{"recording_id":"r1","epoch_duration_s":30,
                "scorers":[{"name":"s1","path":"a.csv"},{"name":"s2","path":"b.txt","format":"lines"}],
                "models":[{"name":"m1","path":"m.csv"}]}"#,
        )
        .unwrap();
        assert_eq!(m.scorers[1].format, HypnogramFormat::Lines);
        assert!(matches!(
            parse_manifest(r#"{"recording_id":"r","scorers":[{"name":"a","path":"x"},{"name":"a","path":"y"}]}"#),
            Err(Error::DuplicateName(_))
        ));
        assert!(parse_manifest(r#"{"recording_id":"r","scorers":[{"name":"a","path":""}]}"#).is_err());
    }
}
