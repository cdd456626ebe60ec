//! Analysis reports and their serialization.
//!
//! Three output formats: `structured` is JSON and round-trips losslessly,
//! `table` renders the energies as aligned columns in microjoules with
//! three decimal places, and `plot-data` emits two-column numeric text per
//! series (blank-line separated, gnuplot-style) for external plotting.
//! Reports carry the echoed configuration and SHA-256 digests of their
//! input files so results stay reproducible.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::loss::{CrossValidation, LossBreakdown, WindowInfo};
use crate::sawyer_tower::{CossPoint, QvPoint};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    IoFailure {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: cannot parse report: {source}")]
    ParseFailure {
        path: String,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Structured,
    Table,
    PlotData,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "structured" => Some(Self::Structured),
            "table" => Some(Self::Table),
            "plot-data" => Some(Self::PlotData),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventEnergies {
    pub e_on: f64,
    pub e_off: f64,
}

/// Loop-level results of a Sawyer-Tower analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StAnalysis {
    pub e_charge_branch: f64,
    pub e_discharge_branch: f64,
    pub e_hysteresis: f64,
    pub dissipative: bool,
    pub loop_points: Vec<QvPoint>,
    pub coss_curve: Vec<CossPoint>,
}

/// Both charge-energy routes when they were compared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChargeRoutes {
    pub st_branch: f64,
    pub pulse_integral: f64,
    pub disagree: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedWindow {
    pub name: String,
    pub t_start: f64,
    pub t_end: f64,
    pub source: String,
}

impl NamedWindow {
    pub fn from_info(name: &str, info: &WindowInfo) -> Self {
        Self {
            name: name.to_string(),
            t_start: info.window.t_start(),
            t_end: info.window.t_end(),
            source: match info.source {
                crate::loss::WindowSource::Detected => "detected".into(),
                crate::loss::WindowSource::Override => "override".into(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// A complete analysis result. Sections are optional because different
/// subcommands populate different subsets; energies are always joules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tool_version: String,
    /// Unit of every energy field in this report.
    pub energy_unit: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breakdown: Option<LossBreakdown>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cross_validation: Option<CrossValidation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event_energies: Option<EventEnergies>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub st_analysis: Option<StAnalysis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub charge_routes: Option<ChargeRoutes>,
    #[serde(default)]
    pub windows: Vec<NamedWindow>,
    #[serde(default)]
    pub config_echo: BTreeMap<String, String>,
    #[serde(default)]
    pub inputs: Vec<InputDigest>,
}

impl Report {
    pub fn new() -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            energy_unit: "J".to_string(),
            breakdown: None,
            cross_validation: None,
            event_energies: None,
            st_analysis: None,
            charge_routes: None,
            windows: Vec::new(),
            config_echo: BTreeMap::new(),
            inputs: Vec::new(),
        }
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Structured => {
                serde_json::to_string_pretty(self).expect("report serializes")
            }
            ReportFormat::Table => self.render_table(),
            ReportFormat::PlotData => self.render_plot_data(),
        }
    }

    fn render_table(&self) -> String {
        let uj = |x: f64| format!("{:.3}", x * 1e6);
        let mut out = String::new();
        if let Some(b) = &self.breakdown {
            let headers = [
                "E_on (µJ)",
                "E_off (µJ)",
                "E_charge (µJ)",
                "E_overlap (µJ)",
                "E_hysteresis (µJ)",
            ];
            let values = [b.e_on, b.e_off, b.e_charge, b.e_overlap, b.e_hysteresis];
            for h in headers {
                let _ = write!(out, "{h:>18}");
            }
            out.push('\n');
            for v in values {
                let _ = write!(out, "{:>18}", uj(v));
            }
            out.push('\n');
            let _ = writeln!(out, "E_discharge (µJ): {}", uj(b.e_discharge));
        }
        if let Some(e) = &self.event_energies {
            let _ = writeln!(
                out,
                "{:>18}{:>18}\n{:>18}{:>18}",
                "E_on (µJ)",
                "E_off (µJ)",
                uj(e.e_on),
                uj(e.e_off)
            );
        }
        if let Some(st) = &self.st_analysis {
            let _ = writeln!(
                out,
                "{:>18}{:>22}{:>20}\n{:>18}{:>22}{:>20}",
                "E_charge (µJ)",
                "E_discharge (µJ)",
                "E_hysteresis (µJ)",
                uj(st.e_charge_branch),
                uj(st.e_discharge_branch),
                uj(st.e_hysteresis)
            );
            let _ = writeln!(
                out,
                "loop orientation: {}",
                if st.dissipative {
                    "dissipative"
                } else {
                    "generative"
                }
            );
        }
        if let Some(cv) = &self.cross_validation {
            let _ = writeln!(
                out,
                "cross-validation (µJ): model {} vs loop {} -> discrepancy {}",
                uj(cv.model_hysteresis),
                uj(cv.st_hysteresis),
                uj(cv.discrepancy)
            );
        }
        if let Some(routes) = &self.charge_routes {
            if routes.disagree {
                let _ = writeln!(
                    out,
                    "charge routes disagree (µJ): loop branch {} vs pulse integral {}",
                    uj(routes.st_branch),
                    uj(routes.pulse_integral)
                );
            }
        }
        for w in &self.windows {
            let _ = writeln!(
                out,
                "window {}: [{:.6e}, {:.6e}] s ({})",
                w.name, w.t_start, w.t_end, w.source
            );
        }
        out
    }

    fn render_plot_data(&self) -> String {
        let mut out = String::new();
        let mut first = true;
        let mut section = |out: &mut String, name: &str| {
            if !first {
                out.push('\n');
            }
            first = false;
            let _ = writeln!(out, "# series: {name}");
        };
        if let Some(st) = &self.st_analysis {
            if !st.loop_points.is_empty() {
                section(&mut out, "qv_loop");
                let _ = writeln!(out, "# voltage_V charge_C");
                for p in &st.loop_points {
                    let _ = writeln!(out, "{:.9e} {:.9e}", p.v, p.q);
                }
            }
            if !st.coss_curve.is_empty() {
                section(&mut out, "coss_curve");
                let _ = writeln!(out, "# voltage_V capacitance_F");
                for p in &st.coss_curve {
                    let _ = writeln!(out, "{:.9e} {:.9e}", p.v, p.c);
                }
            }
        }
        if let Some(b) = &self.breakdown {
            section(&mut out, "breakdown");
            let _ = writeln!(out, "# component_index energy_J");
            for (idx, v) in [
                b.e_on,
                b.e_off,
                b.e_charge,
                b.e_discharge,
                b.e_overlap,
                b.e_hysteresis,
            ]
            .iter()
            .enumerate()
            {
                let _ = writeln!(out, "{idx} {v:.9e}");
            }
        }
        if out.is_empty() {
            out.push_str("# no plottable series in this report\n");
        }
        out
    }
}

impl Default for Report {
    fn default() -> Self {
        Self::new()
    }
}

/// Writes a report in the requested format.
pub fn write_report(report: &Report, format: ReportFormat, path: &Path) -> Result<(), ReportError> {
    std::fs::write(path, report.render(format)).map_err(|source| ReportError::IoFailure {
        path: path.display().to_string(),
        source,
    })
}

/// Reads back a structured-format report.
pub fn read_report(path: &Path) -> Result<Report, ReportError> {
    let text = std::fs::read_to_string(path).map_err(|source| ReportError::IoFailure {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ReportError::ParseFailure {
        path: path.display().to_string(),
        source,
    })
}

/// SHA-256 of a file, lowercase hex.
pub fn file_digest(path: &Path) -> Result<String, ReportError> {
    let bytes = std::fs::read(path).map_err(|source| ReportError::IoFailure {
        path: path.display().to_string(),
        source,
    })?;
    let digest = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(64);
    for byte in digest {
        let _ = write!(hex, "{byte:02x}");
    }
    Ok(hex)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::separate_from_scalars;

    fn case_1_report() -> Report {
        let mut report = Report::new();
        report.breakdown = Some(separate_from_scalars(6.479e-6, 8.134e-6, 6.889e-6).unwrap());
        report
    }

    #[test]
    fn structured_roundtrip_is_field_exact() {
        let mut report = case_1_report();
        report.cross_validation = Some(crate::loss::cross_validate(
            report.breakdown.as_ref().unwrap(),
            0.189e-6,
        ));
        report.config_echo.insert("c_ref".into(), "10n".into());
        report.inputs.push(InputDigest {
            path: "pulse.csv".into(),
            sha256: "ab".repeat(32),
        });
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        write_report(&report, ReportFormat::Structured, &path).unwrap();
        let back = read_report(&path).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn table_renders_case_1_row() {
        let text = case_1_report().render(ReportFormat::Table);
        let tokens: Vec<&str> = text.split_whitespace().collect();
        let expected = ["6.479", "8.134", "6.889", "1.245", "0.410"];
        let pos = tokens
            .windows(expected.len())
            .position(|w| w == expected)
            .unwrap_or_else(|| panic!("row not found in:\n{text}"));
        assert!(pos > 0);
    }

    #[test]
    fn plot_data_preserves_loop_order() {
        let mut report = Report::new();
        let points: Vec<QvPoint> = (0..12)
            .map(|k| QvPoint::new(k as f64, (12 - k) as f64 * 1e-9))
            .collect();
        report.st_analysis = Some(StAnalysis {
            e_charge_branch: 0.0,
            e_discharge_branch: 0.0,
            e_hysteresis: 0.0,
            dissipative: true,
            loop_points: points.clone(),
            coss_curve: vec![],
        });
        let text = report.render(ReportFormat::PlotData);
        let data_lines: Vec<&str> = text
            .lines()
            .filter(|l| !l.starts_with('#') && !l.is_empty())
            .collect();
        assert_eq!(data_lines.len(), points.len());
        for (line, p) in data_lines.iter().zip(&points) {
            let mut parts = line.split_whitespace();
            let v: f64 = parts.next().unwrap().parse().unwrap();
            let q: f64 = parts.next().unwrap().parse().unwrap();
            assert_eq!(v, p.v);
            assert!((q - p.q).abs() <= 1e-15 * p.q.abs().max(1e-30));
        }
    }

    #[test]
    fn digest_is_stable_hex() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("input.csv");
        std::fs::write(&path, b"time,v\n0,1\n1e-9,2\n").unwrap();
        let a = file_digest(&path).unwrap();
        let b = file_digest(&path).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
        assert!(a.chars().all(|c| c.is_ascii_hexdigit()));
    }
}
