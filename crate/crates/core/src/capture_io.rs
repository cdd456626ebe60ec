//! Capture-file parsing and emission.
//!
//! One canonical text format covers both simulator output and instrument
//! exports: an optional non-numeric preamble, a header row of column
//! labels, then delimiter-separated numeric rows (comma or tab,
//! auto-detected) with the time column in seconds. Preamble lines are
//! preserved as metadata; `# key = value` lines round-trip into the
//! capture's metadata map. Values are written with 17 significant digits
//! so a write-parse cycle is bit-exact.

use std::path::Path;

use thiserror::Error;

use crate::waveform::{Capture, Unit, Waveform, WaveformError};

/// Relative jitter tolerance when verifying a uniform timebase.
pub const TIMEBASE_JITTER: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum CaptureIoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed row: {reason}")]
    MalformedRow {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("{path}:{line}: non-uniform timebase: step {found:e} deviates from {expected:e}")]
    NonUniformTimebase {
        path: String,
        line: usize,
        expected: f64,
        found: f64,
    },
    #[error("{path}: missing column '{column}'")]
    MissingColumn { path: String, column: String },
    #[error("{path}: no numeric data rows found")]
    NoData { path: String },
    #[error(transparent)]
    Waveform(#[from] WaveformError),
}

/// Selects the time column and, optionally, a subset of value columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnSpec {
    pub time: String,
    /// `None` ingests every non-time column.
    pub values: Option<Vec<String>>,
}

impl ColumnSpec {
    /// Every non-time column becomes a channel.
    pub fn all(time: impl Into<String>) -> Self {
        Self {
            time: time.into(),
            values: None,
        }
    }

    pub fn columns(time: impl Into<String>, values: Vec<String>) -> Self {
        Self {
            time: time.into(),
            values: Some(values),
        }
    }
}

/// Parses a capture file.
pub fn parse_capture_csv(path: &Path, spec: &ColumnSpec) -> Result<Capture, CaptureIoError> {
    let text = std::fs::read_to_string(path).map_err(|source| CaptureIoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_capture_str(&text, &path.display().to_string(), spec)
}

/// Parses capture text; `origin` appears in error messages.
pub fn parse_capture_str(
    text: &str,
    origin: &str,
    spec: &ColumnSpec,
) -> Result<Capture, CaptureIoError> {
    let lines: Vec<&str> = text.lines().collect();

    // the data block starts at the first line whose fields all parse as
    // numbers; the line right before it is the header row
    let mut data_start = None;
    let mut delimiter = ',';
    for (idx, line) in lines.iter().enumerate() {
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let delim = if line.contains('\t') { '\t' } else { ',' };
        let fields: Vec<&str> = line.split(delim).collect();
        if fields.len() >= 2 && fields.iter().all(|f| f.trim().parse::<f64>().is_ok()) {
            data_start = Some(idx);
            delimiter = delim;
            break;
        }
    }
    let Some(data_start) = data_start else {
        return Err(CaptureIoError::NoData {
            path: origin.to_string(),
        });
    };
    if data_start == 0 {
        return Err(CaptureIoError::MalformedRow {
            path: origin.to_string(),
            line: 1,
            reason: "numeric data with no header row of column labels".into(),
        });
    }

    // preamble: '#' key = value lines feed the metadata map, anything else
    // is preserved verbatim; the last non-blank line is the header
    let mut capture = Capture::new();
    let mut header_idx = None;
    let mut preamble_count = 0usize;
    for (idx, line) in lines[..data_start].iter().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            if let Some(eq) = rest.find('=') {
                let key = rest[..eq].trim();
                let value = rest[eq + 1..].trim();
                if !key.is_empty() {
                    capture.set_metadata(key, value);
                    continue;
                }
            }
            preamble_count += 1;
            capture.set_metadata(format!("preamble.{preamble_count}"), trimmed);
            continue;
        }
        header_idx = Some(idx);
    }
    // everything that looked like a header before the real one is vendor
    // preamble too
    let Some(header_idx) = header_idx else {
        return Err(CaptureIoError::MalformedRow {
            path: origin.to_string(),
            line: data_start,
            reason: "no header row of column labels before the data block".into(),
        });
    };
    for (idx, line) in lines[..data_start].iter().enumerate() {
        let trimmed = line.trim();
        if idx != header_idx && !trimmed.is_empty() && !trimmed.starts_with('#') {
            preamble_count += 1;
            capture.set_metadata(format!("preamble.{preamble_count}"), trimmed);
        }
    }

    let labels: Vec<String> = lines[header_idx]
        .split(delimiter)
        .map(|s| s.trim().to_string())
        .collect();
    let time_col = labels.iter().position(|l| *l == spec.time).ok_or_else(|| {
        CaptureIoError::MissingColumn {
            path: origin.to_string(),
            column: spec.time.clone(),
        }
    })?;
    let value_cols: Vec<usize> = match &spec.values {
        Some(wanted) => wanted
            .iter()
            .map(|name| {
                labels
                    .iter()
                    .position(|l| l == name)
                    .ok_or_else(|| CaptureIoError::MissingColumn {
                        path: origin.to_string(),
                        column: name.clone(),
                    })
            })
            .collect::<Result<_, _>>()?,
        None => (0..labels.len()).filter(|c| *c != time_col).collect(),
    };

    let mut times: Vec<f64> = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); value_cols.len()];
    for (idx, line) in lines.iter().enumerate().skip(data_start) {
        if line.trim().is_empty() {
            continue;
        }
        let row_line = idx + 1; // 1-based for error messages
        let fields: Vec<&str> = line.split(delimiter).collect();
        if fields.len() != labels.len() {
            return Err(CaptureIoError::MalformedRow {
                path: origin.to_string(),
                line: row_line,
                reason: format!("{} fields where {} expected", fields.len(), labels.len()),
            });
        }
        let parse = |col: usize| -> Result<f64, CaptureIoError> {
            let value: f64 =
                fields[col]
                    .trim()
                    .parse()
                    .map_err(|_| CaptureIoError::MalformedRow {
                        path: origin.to_string(),
                        line: row_line,
                        reason: format!("field '{}' is not a number", fields[col].trim()),
                    })?;
            if !value.is_finite() {
                return Err(CaptureIoError::MalformedRow {
                    path: origin.to_string(),
                    line: row_line,
                    reason: "non-finite value".into(),
                });
            }
            Ok(value)
        };
        times.push(parse(time_col)?);
        for (slot, col) in value_cols.iter().enumerate() {
            columns[slot].push(parse(*col)?);
        }
    }
    if times.len() < 2 {
        return Err(CaptureIoError::NoData {
            path: origin.to_string(),
        });
    }

    // prefer exact grid parameters from the writer's metadata, fall back
    // to the time column; verify uniform spacing either way
    let meta_t0 = capture
        .metadata_value("time.t0")
        .and_then(|v| v.parse::<f64>().ok());
    let meta_dt = capture
        .metadata_value("time.dt")
        .and_then(|v| v.parse::<f64>().ok());
    let t0 = meta_t0.unwrap_or(times[0]);
    let dt = match meta_dt {
        Some(dt) if dt > 0.0 => dt,
        _ => (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64,
    };
    if dt.is_nan() || dt <= 0.0 {
        return Err(CaptureIoError::NonUniformTimebase {
            path: origin.to_string(),
            line: data_start + 2,
            expected: dt,
            found: dt,
        });
    }
    for (k, pair) in times.windows(2).enumerate() {
        let step = pair[1] - pair[0];
        if (step - dt).abs() > TIMEBASE_JITTER * dt {
            return Err(CaptureIoError::NonUniformTimebase {
                path: origin.to_string(),
                line: data_start + k + 2,
                expected: dt,
                found: step,
            });
        }
    }

    for (slot, col) in value_cols.iter().enumerate() {
        let label = labels[*col].clone();
        let unit = capture
            .metadata_value(&format!("unit.{label}"))
            .and_then(Unit::from_symbol)
            .unwrap_or(Unit::Volts);
        let wf = Waveform::new(t0, dt, std::mem::take(&mut columns[slot]), unit, label)?;
        capture.insert(wf);
    }

    // grid and unit keys are format-internal; they are regenerated on
    // write, so strip them from the metadata map
    let internal: Vec<String> = capture
        .metadata()
        .keys()
        .filter(|k| *k == "time.t0" || *k == "time.dt" || k.starts_with("unit."))
        .cloned()
        .collect();
    let mut cleaned = Capture::new();
    for (_, wf) in capture.channels() {
        cleaned.insert(wf.clone());
    }
    for (k, v) in capture.metadata() {
        if !internal.contains(k) {
            cleaned.set_metadata(k.clone(), v.clone());
        }
    }
    Ok(cleaned)
}

/// Renders a capture in the canonical comma-separated format.
pub fn capture_to_string(capture: &Capture) -> String {
    let mut out = String::new();
    for (k, v) in capture.metadata() {
        out.push_str(&format!("# {k} = {v}\n"));
    }
    let mut channels: Vec<&Waveform> = Vec::new();
    for (_, wf) in capture.channels() {
        channels.push(wf);
    }
    if channels.is_empty() {
        return out;
    }
    let first = channels[0];
    out.push_str(&format!("# time.t0 = {:.16e}\n", first.t0()));
    out.push_str(&format!("# time.dt = {:.16e}\n", first.dt()));
    for wf in &channels {
        out.push_str(&format!("# unit.{} = {}\n", wf.label(), wf.unit().symbol()));
    }
    out.push_str("time");
    for wf in &channels {
        out.push(',');
        out.push_str(wf.label());
    }
    out.push('\n');
    let n = channels.iter().map(|w| w.len()).min().unwrap_or(0);
    for k in 0..n {
        out.push_str(&format!("{:.16e}", first.time_at(k)));
        for wf in &channels {
            out.push_str(&format!(",{:.16e}", wf.samples()[k]));
        }
        out.push('\n');
    }
    out
}

/// Writes a capture file in the canonical format.
pub fn write_capture(capture: &Capture, path: &Path) -> Result<(), CaptureIoError> {
    std::fs::write(path, capture_to_string(capture)).map_err(|source| CaptureIoError::Io {
        path: path.display().to_string(),
        source,
    })
}
