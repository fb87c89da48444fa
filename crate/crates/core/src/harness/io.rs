//! File formats: dataset and trace CSV, JSON reports, atomic writes.
//!
//! Floats are written with 17 significant digits (`{:.16e}`), which
//! round-trips every finite `f64`. CSV files are UTF-8 with LF line endings.

use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::error::{Error, Result};
use crate::objectives::Label;
use crate::regimes::{Dataset, TraceRecord, TrainingTrace};

pub const TRACE_HEADER: &str = "step,loss,entropy,collapse_score,score_drift,value_drift,r_y_mean";

pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Pretty JSON with 17-significant-digit floats.
struct ReportFormatter(PrettyFormatter<'static>);

impl Formatter for ReportFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(format_f64(value).as_bytes())
    }

    fn begin_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_array(writer)
    }

    fn end_array<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object(writer)
    }

    fn end_object<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(writer, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object_value(writer)
    }
}

pub fn to_report_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, ReportFormatter(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("serde_json emits UTF-8"))
}

/// Write through a temporary file in the same directory, then rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(contents).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn dataset_to_csv(inputs: &[Vec<f64>], labels: Option<&[Label]>) -> String {
    let dim = inputs.first().map_or(0, Vec::len);
    let mut header: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    if labels.is_some() {
        header.push("label".into());
    }
    let mut out = header.join(",");
    out.push('\n');
    for (i, x) in inputs.iter().enumerate() {
        let mut fields: Vec<String> = x.iter().map(|&v| format_f64(v)).collect();
        if let Some(l) = labels {
            fields.push(l[i].0.to_string());
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_f64(field: &str, line: usize, column: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|e| parse_err(line, format!("column `{column}`: {e}")))
}

pub fn dataset_from_csv(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "missing header"))?;
    let cols: Vec<&str> = header.split(',').collect();
    let labeled = cols.last() == Some(&"label");
    let dim = cols.len() - usize::from(labeled);
    for (i, c) in cols.iter().take(dim).enumerate() {
        if *c != format!("x{i}") {
            return Err(parse_err(1, format!("expected column `x{i}`, found `{c}`")));
        }
    }
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for (idx, line) in lines {
        let n = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(parse_err(n, format!("expected {} fields, found {}", cols.len(), fields.len())));
        }
        let x = fields[..dim]
            .iter()
            .zip(&cols)
            .map(|(f, c)| parse_f64(f, n, c))
            .collect::<Result<Vec<_>>>()?;
        inputs.push(x);
        if labeled {
            let y = fields[dim]
                .parse::<usize>()
                .map_err(|e| parse_err(n, format!("column `label`: {e}")))?;
            labels.push(Label(y));
        }
    }
    Dataset::new(inputs, labeled.then_some(labels))
}

fn opt(v: Option<f64>) -> String {
    v.map(format_f64).unwrap_or_default()
}

pub fn trace_to_csv(trace: &TrainingTrace) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in trace.records() {
        let row = [
            r.step.to_string(),
            format_f64(r.loss),
            format_f64(r.entropy),
            opt(r.collapse_score),
            opt(r.score_drift),
            opt(r.value_drift),
            opt(r.r_y_mean),
        ];
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Parse a trace CSV. Columns the file leaves empty come back as `None`;
/// the regime and component count are not stored in the file.
pub fn trace_from_csv(text: &str) -> Result<TrainingTrace> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty trace file"))?;
    if header.trim_end_matches('\r') != TRACE_HEADER {
        return Err(parse_err(1, format!("expected header `{TRACE_HEADER}`")));
    }
    let names: Vec<&str> = TRACE_HEADER.split(',').collect();
    let mut trace = TrainingTrace::new(None, None);
    for (idx, line) in lines {
        let n = idx + 1;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != names.len() {
            return Err(parse_err(n, format!("expected {} fields, found {}", names.len(), f.len())));
        }
        let optional = |i: usize| -> Result<Option<f64>> {
            if f[i].is_empty() {
                Ok(None)
            } else {
                parse_f64(f[i], n, names[i]).map(Some)
            }
        };
        let step = f[0]
            .parse::<usize>()
            .map_err(|e| parse_err(n, format!("column `step`: {e}")))?;
        let record = TraceRecord {
            step,
            loss: parse_f64(f[1], n, names[1])?,
            entropy: parse_f64(f[2], n, names[2])?,
            collapse_score: optional(3)?,
            score_drift: optional(4)?,
            value_drift: optional(5)?,
            r_y_mean: optional(6)?,
            component_mass: Vec::new(),
            off_target_mass: None,
            clamp_gradient_sum: None,
            weight_sum_error: None,
        };
        trace.push(record).map_err(|e| parse_err(n, e.to_string()))?;
    }
    if trace.is_empty() {
        return Err(parse_err(1, "trace has a header but no rows"));
    }
    Ok(trace)
}
