//! Flat `key = value` configuration files with SI-suffixed numbers.
//!
//! One parser backs both the analysis configuration and the simulator
//! parameter files. Lines hold a single `key = value` pair, `#` starts a
//! comment, and numeric values accept the usual engineering suffixes
//! (`10n`, `10.4m`, `0.189u`, `47p`). Unknown keys are rejected rather
//! than ignored so typos surface immediately.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::coss_model::{HysteresisCossModel, ModelError};
use crate::simulator::{st_amplitude_for_dut_peak, ExcitationShape, PulseParams, StParams};
use crate::waveform::TimeWindow;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: unknown key '{key}'")]
    UnknownKey {
        path: String,
        line: usize,
        key: String,
    },
    #[error("missing required key '{key}'{context}")]
    MissingRequired { key: String, context: String },
    #[error("{path}:{line}: cannot parse '{value}' for key '{key}': {reason}")]
    UnparseableValue {
        path: String,
        line: usize,
        key: String,
        value: String,
        reason: String,
    },
}

/// Parses a number with an optional SI suffix (f, p, n, u/µ, m, k, M, G).
pub fn parse_si_value(text: &str) -> Result<f64, String> {
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Err("empty value".into());
    }
    let (mantissa, scale) = match trimmed.chars().last().unwrap() {
        'f' => (&trimmed[..trimmed.len() - 1], 1e-15),
        'p' => (&trimmed[..trimmed.len() - 1], 1e-12),
        'n' => (&trimmed[..trimmed.len() - 1], 1e-9),
        'u' => (&trimmed[..trimmed.len() - 1], 1e-6),
        'µ' => (&trimmed[..trimmed.len() - 'µ'.len_utf8()], 1e-6),
        'm' => (&trimmed[..trimmed.len() - 1], 1e-3),
        'k' => (&trimmed[..trimmed.len() - 1], 1e3),
        'M' => (&trimmed[..trimmed.len() - 1], 1e6),
        'G' => (&trimmed[..trimmed.len() - 1], 1e9),
        _ => (trimmed, 1.0),
    };
    let base: f64 = mantissa
        .trim()
        .parse()
        .map_err(|e| format!("not a number: {e}"))?;
    if !base.is_finite() {
        return Err("value is not finite".into());
    }
    Ok(base * scale)
}

/// An ordered list of raw key-value pairs with their source lines.
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    path: String,
    pairs: Vec<(String, String, usize)>,
}

impl KeyValues {
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let mut pairs = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let content = content.trim();
            if content.is_empty() {
                continue;
            }
            let Some(eq) = content.find('=') else {
                return Err(ConfigError::UnparseableValue {
                    path: origin.to_string(),
                    line,
                    key: content.to_string(),
                    value: String::new(),
                    reason: "expected 'key = value'".into(),
                });
            };
            let key = content[..eq].trim().to_string();
            let value = content[eq + 1..].trim().to_string();
            if key.is_empty() {
                return Err(ConfigError::UnparseableValue {
                    path: origin.to_string(),
                    line,
                    key,
                    value,
                    reason: "empty key".into(),
                });
            }
            pairs.push((key, value, line));
        }
        Ok(Self {
            path: origin.to_string(),
            pairs,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.pairs.iter().map(|(k, v, _)| (k.as_str(), v.as_str()))
    }

    fn unparseable(&self, key: &str, value: &str, line: usize, reason: String) -> ConfigError {
        ConfigError::UnparseableValue {
            path: self.path.clone(),
            line,
            key: key.to_string(),
            value: value.to_string(),
            reason,
        }
    }
}

/// Which analysis a configuration must be complete for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalysisMode {
    Pulse,
    SawyerTower,
    Separate,
}

/// Logical channel roles mapped onto capture column labels. `v_dut` is
/// the device-voltage role of Sawyer-Tower captures, which conventionally
/// label it separately from the pulse capture's `v_ds`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ChannelMap {
    pub v_ds: String,
    pub i_ds: String,
    pub v_dut: String,
    pub v_ref: String,
    pub gate: String,
}

impl Default for ChannelMap {
    fn default() -> Self {
        Self {
            v_ds: "v_ds".into(),
            i_ds: "i_ds".into(),
            v_dut: "v_dut".into(),
            v_ref: "v_ref".into(),
            gate: "gate".into(),
        }
    }
}

/// Explicit analysis windows that bypass transient detection.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WindowOverrides {
    pub t_on: Option<TimeWindow>,
    pub t_off: Option<TimeWindow>,
    /// One excitation period of a Sawyer-Tower capture.
    pub st_period: Option<TimeWindow>,
}

/// Parsed analysis configuration.
///
/// Defaults: thresholds 0.1/0.9, smoothing 5 points, no deskew. `c_ref`,
/// `bus_voltage`, and `shunt` stay optional at parse time; what is
/// actually required depends on the analysis mode and on the capture's
/// channel units, so completeness is checked by [`AnalysisConfig::require`]
/// and by the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub channels: ChannelMap,
    pub shunt_volts_per_amp: Option<f64>,
    pub c_ref: Option<f64>,
    pub bus_voltage: Option<f64>,
    pub low_frac: f64,
    pub high_frac: f64,
    pub deskew: BTreeMap<String, f64>,
    pub smoothing_points: usize,
    pub windows: WindowOverrides,
    raw: Vec<(String, String)>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            channels: ChannelMap::default(),
            shunt_volts_per_amp: None,
            c_ref: None,
            bus_voltage: None,
            low_frac: 0.1,
            high_frac: 0.9,
            deskew: BTreeMap::new(),
            smoothing_points: 5,
            windows: WindowOverrides::default(),
            raw: Vec::new(),
        }
    }
}

impl AnalysisConfig {
    pub fn from_key_values(kv: &KeyValues) -> Result<Self, ConfigError> {
        let mut cfg = AnalysisConfig::default();
        for (key, value, line) in &kv.pairs {
            let num = || {
                parse_si_value(value).map_err(|reason| kv.unparseable(key, value, *line, reason))
            };
            let window = || -> Result<TimeWindow, ConfigError> {
                let parts: Vec<&str> = value.split_whitespace().collect();
                if parts.len() != 2 {
                    return Err(kv.unparseable(
                        key,
                        value,
                        *line,
                        "expected two values: '<start> <end>'".into(),
                    ));
                }
                let start = parse_si_value(parts[0])
                    .map_err(|reason| kv.unparseable(key, value, *line, reason))?;
                let end = parse_si_value(parts[1])
                    .map_err(|reason| kv.unparseable(key, value, *line, reason))?;
                TimeWindow::new(start, end)
                    .map_err(|e| kv.unparseable(key, value, *line, e.to_string()))
            };
            match key.as_str() {
                "channel.v_ds" => cfg.channels.v_ds = value.clone(),
                "channel.i_ds" => cfg.channels.i_ds = value.clone(),
                "channel.v_dut" => cfg.channels.v_dut = value.clone(),
                "channel.v_ref" => cfg.channels.v_ref = value.clone(),
                "channel.gate" => cfg.channels.gate = value.clone(),
                "shunt" | "c_ref" | "bus_voltage" => {
                    let v = num()?;
                    if v <= 0.0 {
                        return Err(kv.unparseable(key, value, *line, "must be positive".into()));
                    }
                    match key.as_str() {
                        "shunt" => cfg.shunt_volts_per_amp = Some(v),
                        "c_ref" => cfg.c_ref = Some(v),
                        _ => cfg.bus_voltage = Some(v),
                    }
                }
                "low_frac" => cfg.low_frac = num()?,
                "high_frac" => cfg.high_frac = num()?,
                "smoothing_points" => {
                    let n = num()?;
                    if n < 1.0 || n.fract() != 0.0 || (n as usize).is_multiple_of(2) {
                        return Err(kv.unparseable(
                            key,
                            value,
                            *line,
                            "must be an odd integer >= 1".into(),
                        ));
                    }
                    cfg.smoothing_points = n as usize;
                }
                "window.t_on" => cfg.windows.t_on = Some(window()?),
                "window.t_off" => cfg.windows.t_off = Some(window()?),
                "window.st_period" => cfg.windows.st_period = Some(window()?),
                _ if key.starts_with("deskew.") => {
                    let label = key["deskew.".len()..].to_string();
                    cfg.deskew.insert(label, num()?);
                }
                _ => {
                    return Err(ConfigError::UnknownKey {
                        path: kv.path.clone(),
                        line: *line,
                        key: key.clone(),
                    });
                }
            }
            cfg.raw.push((key.clone(), value.clone()));
        }
        let thresholds_ok =
            cfg.low_frac > 0.0 && cfg.low_frac < cfg.high_frac && cfg.high_frac < 1.0;
        if !thresholds_ok {
            return Err(ConfigError::UnparseableValue {
                path: kv.path.clone(),
                line: 0,
                key: "low_frac/high_frac".into(),
                value: format!("{} / {}", cfg.low_frac, cfg.high_frac),
                reason: "require 0 < low_frac < high_frac < 1".into(),
            });
        }
        Ok(cfg)
    }

    /// Checks the keys an analysis mode cannot run without.
    pub fn require(&self, mode: AnalysisMode) -> Result<(), ConfigError> {
        match mode {
            AnalysisMode::SawyerTower => {
                if self.c_ref.is_none() {
                    return Err(ConfigError::MissingRequired {
                        key: "c_ref".into(),
                        context: " (required for Sawyer-Tower analysis)".into(),
                    });
                }
            }
            AnalysisMode::Pulse | AnalysisMode::Separate => {
                let both_overridden = self.windows.t_on.is_some() && self.windows.t_off.is_some();
                if self.bus_voltage.is_none() && !both_overridden {
                    return Err(ConfigError::MissingRequired {
                        key: "bus_voltage".into(),
                        context: " (required to detect transient windows)".into(),
                    });
                }
            }
        }
        if mode == AnalysisMode::Separate && self.c_ref.is_none() {
            return Err(ConfigError::MissingRequired {
                key: "c_ref".into(),
                context: " (required for Sawyer-Tower analysis)".into(),
            });
        }
        Ok(())
    }

    /// The raw parsed pairs, for report echoes.
    pub fn echo(&self) -> BTreeMap<String, String> {
        self.raw.iter().cloned().collect()
    }

    pub fn deskew_for(&self, label: &str) -> f64 {
        self.deskew.get(label).copied().unwrap_or(0.0)
    }
}

/// Loads an analysis configuration file.
pub fn load_config(path: &Path) -> Result<AnalysisConfig, ConfigError> {
    AnalysisConfig::from_key_values(&KeyValues::load(path)?)
}

fn lookup<'kv>(kv: &'kv KeyValues, key: &str) -> Option<(&'kv str, usize)> {
    kv.pairs
        .iter()
        .rev()
        .find(|(k, _, _)| k == key)
        .map(|(_, v, line)| (v.as_str(), *line))
}

fn required_num(kv: &KeyValues, key: &str) -> Result<f64, ConfigError> {
    let (value, line) = lookup(kv, key).ok_or_else(|| ConfigError::MissingRequired {
        key: key.to_string(),
        context: String::new(),
    })?;
    parse_si_value(value).map_err(|reason| kv.unparseable(key, value, line, reason))
}

fn optional_num(kv: &KeyValues, key: &str) -> Result<Option<f64>, ConfigError> {
    match lookup(kv, key) {
        None => Ok(None),
        Some((value, line)) => parse_si_value(value)
            .map(Some)
            .map_err(|reason| kv.unparseable(key, value, line, reason)),
    }
}

/// Builds the device model shared by both simulator setups.
///
/// Keys: `model.kind` (`linear` | `hysteretic`), `model.c`, `model.v_max`,
/// and for hysteretic models `model.loop_area` plus optional
/// `model.points` (table size, default 201).
pub fn model_from_key_values(kv: &KeyValues) -> Result<HysteresisCossModel, ConfigError> {
    let (kind, kind_line) =
        lookup(kv, "model.kind").ok_or_else(|| ConfigError::MissingRequired {
            key: "model.kind".into(),
            context: String::new(),
        })?;
    let c = required_num(kv, "model.c")?;
    let v_max = required_num(kv, "model.v_max")?;
    let to_cfg_err = |e: ModelError| ConfigError::UnparseableValue {
        path: kv.path.clone(),
        line: kind_line,
        key: "model".into(),
        value: kind.to_string(),
        reason: e.to_string(),
    };
    match kind {
        "linear" => Ok(HysteresisCossModel::linear(c, v_max)),
        "hysteretic" => {
            let area = required_num(kv, "model.loop_area")?;
            let points = optional_num(kv, "model.points")?.unwrap_or(201.0) as usize;
            HysteresisCossModel::with_loop_area(c, v_max, area, points).map_err(to_cfg_err)
        }
        other => Err(ConfigError::UnparseableValue {
            path: kv.path.clone(),
            line: kind_line,
            key: "model.kind".into(),
            value: other.to_string(),
            reason: "expected 'linear' or 'hysteretic'".into(),
        }),
    }
}

const MODEL_KEYS: &[&str] = &[
    "model.kind",
    "model.c",
    "model.v_max",
    "model.loop_area",
    "model.points",
];
const ST_KEYS: &[&str] = &[
    "st.c_ref",
    "st.shape",
    "st.frequency",
    "st.n_periods",
    "st.dt",
    "st.amplitude",
    "st.dut_peak",
];
const PULSE_KEYS: &[&str] = &[
    "pulse.bus_voltage",
    "pulse.load_current",
    "pulse.fall_time",
    "pulse.duration",
    "pulse.series_resistance",
    "pulse.diode_drop",
    "pulse.dt",
];

fn reject_unknown(kv: &KeyValues, allowed: &[&str]) -> Result<(), ConfigError> {
    for (key, _, line) in &kv.pairs {
        if !allowed.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey {
                path: kv.path.clone(),
                line: *line,
                key: key.clone(),
            });
        }
    }
    Ok(())
}

/// Parses a Sawyer-Tower simulation setup: the device model plus
/// excitation parameters. Exactly one of `st.amplitude` (source peak) or
/// `st.dut_peak` (device peak, amplitude derived) must be given.
pub fn st_setup_from_key_values(
    kv: &KeyValues,
) -> Result<(HysteresisCossModel, StParams), ConfigError> {
    let allowed: Vec<&str> = MODEL_KEYS.iter().chain(ST_KEYS).copied().collect();
    reject_unknown(kv, &allowed)?;
    let model = model_from_key_values(kv)?;
    let c_ref = required_num(kv, "st.c_ref")?;
    let frequency = required_num(kv, "st.frequency")?;
    let n_periods = required_num(kv, "st.n_periods")?.round() as u32;
    let dt = required_num(kv, "st.dt")?;
    let shape = match lookup(kv, "st.shape") {
        None => ExcitationShape::Sine,
        Some((value, line)) => ExcitationShape::parse(value).ok_or_else(|| {
            kv.unparseable(
                "st.shape",
                value,
                line,
                "expected 'sine' or 'triangle'".into(),
            )
        })?,
    };
    let amplitude = match (
        optional_num(kv, "st.amplitude")?,
        optional_num(kv, "st.dut_peak")?,
    ) {
        (Some(a), None) => a,
        (None, Some(peak)) => st_amplitude_for_dut_peak(&model, c_ref, peak),
        (Some(_), Some(_)) => {
            let (value, line) = lookup(kv, "st.dut_peak").unwrap();
            return Err(kv.unparseable(
                "st.dut_peak",
                value,
                line,
                "give either st.amplitude or st.dut_peak, not both".into(),
            ));
        }
        (None, None) => {
            return Err(ConfigError::MissingRequired {
                key: "st.amplitude".into(),
                context: " (or st.dut_peak)".into(),
            })
        }
    };
    Ok((
        model,
        StParams {
            c_ref,
            shape,
            amplitude,
            frequency,
            n_periods,
            dt,
        },
    ))
}

/// Parses a single-pulse simulation setup.
pub fn pulse_setup_from_key_values(
    kv: &KeyValues,
) -> Result<(HysteresisCossModel, PulseParams), ConfigError> {
    let allowed: Vec<&str> = MODEL_KEYS.iter().chain(PULSE_KEYS).copied().collect();
    reject_unknown(kv, &allowed)?;
    let model = model_from_key_values(kv)?;
    let params = PulseParams {
        bus_voltage: required_num(kv, "pulse.bus_voltage")?,
        load_current: required_num(kv, "pulse.load_current")?,
        channel_fall_time: required_num(kv, "pulse.fall_time")?,
        pulse_duration: required_num(kv, "pulse.duration")?,
        series_resistance: required_num(kv, "pulse.series_resistance")?,
        diode_drop: required_num(kv, "pulse.diode_drop")?,
        dt: required_num(kv, "pulse.dt")?,
    };
    Ok((model, params))
}
