//! Switching-loss separation.
//!
//! Turn-off energy splits into the charge delivered to the output
//! capacitance plus the overlap loss from the simultaneously nonzero
//! voltage-current product; turn-on energy equals the discharge energy.
//! Subtracting the two event energies therefore isolates hysteresis plus
//! overlap, and with the charge energy known from a Sawyer-Tower loop the
//! individual components follow from scalar arithmetic.
//!
//! All six energies are stored as magnitudes in joules. Negative
//! separation results are reported as errors, never clamped: they mean
//! mis-windowed or mis-deskewed inputs the user must see.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{AnalysisConfig, ConfigError};
use crate::sawyer_tower::{
    branch_energy, build_qv_loop, charge_from_reference, hysteresis_energy, split_branches,
    LoopError, QvLoop,
};
use crate::waveform::{
    detect_turnoff_window, detect_turnon_window, multiply, Capture, TimeWindow, Unit, Waveform,
    WaveformError,
};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("separation produced a negative {name}: {value:e} J (inconsistent inputs)")]
    NegativeComponent { name: &'static str, value: f64 },
    #[error("capture has no channel '{label}' (mapped for role {role})")]
    MissingChannel { role: &'static str, label: String },
    #[error("roles {a} and {b} both map to column '{label}'")]
    DuplicateChannelMapping {
        a: &'static str,
        b: &'static str,
        label: String,
    },
    #[error(transparent)]
    Waveform(#[from] WaveformError),
    #[error(transparent)]
    Loop(#[from] LoopError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// The six separated energies, joules, all non-negative.
///
/// Constructed through [`separate_from_scalars`] so the closure
/// identities hold exactly as stored: `e_overlap = e_off - e_charge`,
/// `e_discharge = e_on`, and `e_off - e_on = e_hysteresis + e_overlap`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub e_on: f64,
    pub e_off: f64,
    pub e_charge: f64,
    pub e_discharge: f64,
    pub e_overlap: f64,
    pub e_hysteresis: f64,
}

/// Comparison of the separation-model hysteresis against the loop-area
/// measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub model_hysteresis: f64,
    pub st_hysteresis: f64,
    /// |model - st|, stored exactly.
    pub discrepancy: f64,
}

/// |∫ v(t) i(t) dt| over the window, by pointwise product then trapezoid.
pub fn event_energy(v: &Waveform, i: &Waveform, window: &TimeWindow) -> Result<f64, LossError> {
    if v.unit() != Unit::Volts {
        return Err(WaveformError::UnitMismatch {
            label: v.label().to_string(),
            expected: "V",
            found: v.unit().symbol(),
        }
        .into());
    }
    if i.unit() != Unit::Amperes {
        return Err(WaveformError::UnitMismatch {
            label: i.label().to_string(),
            expected: "A",
            found: i.unit().symbol(),
        }
        .into());
    }
    let power = multiply(v, i)?;
    Ok(power.integrate_trapezoid(window)?.abs())
}

/// Overlap energy: the product integral of the rising drain voltage and
/// the decaying channel-share current over the turn-off window.
pub fn overlap_energy(
    v_ds: &Waveform,
    i_ds_f: &Waveform,
    t_off: &TimeWindow,
) -> Result<f64, LossError> {
    event_energy(v_ds, i_ds_f, t_off)
}

/// ∫ v dq over a window, with the charge obtained by integrating the
/// current. Boundary samples are interpolated like the trapezoid rule so
/// the result is consistent with [`event_energy`] over the same window.
pub fn charge_route_energy(
    v: &Waveform,
    i: &Waveform,
    window: &TimeWindow,
) -> Result<f64, LossError> {
    if !crate::waveform::same_grid(v, i) {
        return Err(WaveformError::Misaligned {
            a: v.label().to_string(),
            b: i.label().to_string(),
        }
        .into());
    }
    let eps = v.dt() * 1e-6;
    if window.t_start() < v.t0() - eps || window.t_end() > v.t_end() + eps {
        return Err(WaveformError::WindowOutOfRange {
            t_start: window.t_start(),
            t_end: window.t_end(),
            wf_start: v.t0(),
            wf_end: v.t_end(),
        }
        .into());
    }
    let ts = window.t_start().max(v.t0());
    let te = window.t_end().min(v.t_end());
    // sample times strictly inside the window, with interpolated edges
    let mut times = Vec::new();
    times.push(ts);
    let first = ((ts - v.t0()) / v.dt() + 1.0 - 1e-9).floor() as usize;
    let last = ((te - v.t0()) / v.dt() - (1.0 - 1e-9)).ceil() as usize;
    for k in first..=last.min(v.len() - 1) {
        let t = v.time_at(k);
        if t > ts && t < te {
            times.push(t);
        }
    }
    times.push(te);

    let mut energy = 0.0;
    for pair in times.windows(2) {
        let (ta, tb) = (pair[0], pair[1]);
        let va = v.value_at(ta).expect("inside span");
        let vb = v.value_at(tb).expect("inside span");
        let ia = i.value_at(ta).expect("inside span");
        let ib = i.value_at(tb).expect("inside span");
        let dq = 0.5 * (ia + ib) * (tb - ta);
        energy += 0.5 * (va + vb) * dq;
    }
    Ok(energy.abs())
}

/// Separates the loss components from the three measured scalars.
///
/// `e_overlap = e_off - e_charge`; `e_hysteresis = (e_off - e_on) -
/// e_overlap`; `e_discharge = e_on`. Negative results signal inconsistent
/// measurements and are returned as errors with the offending value.
pub fn separate_from_scalars(
    e_on: f64,
    e_off: f64,
    e_charge: f64,
) -> Result<LossBreakdown, LossError> {
    for (name, value) in [("e_on", e_on), ("e_off", e_off), ("e_charge", e_charge)] {
        if value < 0.0 || !value.is_finite() {
            return Err(LossError::NegativeComponent { name, value });
        }
    }
    let e_overlap = e_off - e_charge;
    if e_overlap < 0.0 {
        return Err(LossError::NegativeComponent {
            name: "e_overlap",
            value: e_overlap,
        });
    }
    let e_hysteresis = (e_off - e_on) - e_overlap;
    if e_hysteresis < 0.0 {
        return Err(LossError::NegativeComponent {
            name: "e_hysteresis",
            value: e_hysteresis,
        });
    }
    Ok(LossBreakdown {
        e_on,
        e_off,
        e_charge,
        e_discharge: e_on,
        e_overlap,
        e_hysteresis,
    })
}

/// Compares the separated hysteresis against a loop-area measurement.
pub fn cross_validate(breakdown: &LossBreakdown, st_hysteresis: f64) -> CrossValidation {
    CrossValidation {
        model_hysteresis: breakdown.e_hysteresis,
        st_hysteresis,
        discrepancy: (breakdown.e_hysteresis - st_hysteresis).abs(),
    }
}

/// How an analysis window was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowSource {
    Detected,
    Override,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowInfo {
    pub window: TimeWindow,
    pub source: WindowSource,
}

/// Event energies of one pulse capture plus the windows used.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseAnalysis {
    pub e_on: f64,
    pub e_off: f64,
    pub t_on: WindowInfo,
    pub t_off: WindowInfo,
    /// ∫ v dq over the turn-off window with charge integrated from the
    /// device current. Attributes all current to the capacitance, so it
    /// disagrees with the loop-branch route whenever overlap is present.
    pub e_charge_pulse_route: f64,
}

/// Full pipeline result of [`separate_from_captures`].
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureSeparation {
    pub breakdown: LossBreakdown,
    pub cross_validation: CrossValidation,
    pub pulse: PulseAnalysis,
    /// Charge energy from the loop's charge branch (the default route).
    pub e_charge_st_route: f64,
    /// Set when the two charge routes disagree by more than 2%; both are
    /// reported so the user can judge which assumption failed.
    pub charge_routes_disagree: bool,
}

/// Looks up the mapped pulse channels, applies deskew and the shunt
/// conversion, and aligns the pair onto one grid.
pub fn prepare_pulse_channels(
    capture: &Capture,
    config: &AnalysisConfig,
) -> Result<(Waveform, Waveform), LossError> {
    let v_label = config.channels.v_ds.as_str();
    let i_label = config.channels.i_ds.as_str();
    if v_label == i_label {
        return Err(LossError::DuplicateChannelMapping {
            a: "v_ds",
            b: "i_ds",
            label: v_label.to_string(),
        });
    }
    let v_raw = capture
        .channel(v_label)
        .ok_or_else(|| LossError::MissingChannel {
            role: "v_ds",
            label: v_label.to_string(),
        })?;
    let i_raw = capture
        .channel(i_label)
        .ok_or_else(|| LossError::MissingChannel {
            role: "i_ds",
            label: i_label.to_string(),
        })?;

    let v_ds = v_raw.transform(1.0, 0.0, config.deskew_for(v_label), Unit::Volts)?;
    let i_ds = match i_raw.unit() {
        Unit::Amperes => i_raw.transform(1.0, 0.0, config.deskew_for(i_label), Unit::Amperes)?,
        Unit::Volts | Unit::Dimensionless => {
            let shunt = config
                .shunt_volts_per_amp
                .ok_or_else(|| ConfigError::MissingRequired {
                    key: "shunt".into(),
                    context: format!(
                        " (channel '{i_label}' is a voltage column and needs a shunt conversion)"
                    ),
                })?;
            i_raw.transform(1.0 / shunt, 0.0, config.deskew_for(i_label), Unit::Amperes)?
        }
        other => {
            return Err(WaveformError::UnitMismatch {
                label: i_label.to_string(),
                expected: "A",
                found: other.symbol(),
            }
            .into())
        }
    };

    let mut pair = Capture::new();
    pair.insert(v_ds);
    pair.insert(i_ds);
    let aligned = pair.aligned()?;
    Ok((
        aligned.channel(v_label).expect("just inserted").clone(),
        aligned.channel(i_label).expect("just inserted").clone(),
    ))
}

/// Detects (or takes from overrides) the transient windows and computes
/// the two event energies of a pulse capture.
pub fn analyze_pulse_capture(
    capture: &Capture,
    config: &AnalysisConfig,
) -> Result<PulseAnalysis, LossError> {
    let (v_ds, i_ds) = prepare_pulse_channels(capture, config)?;
    let bus_needed = config.windows.t_off.is_none() || config.windows.t_on.is_none();
    if bus_needed && config.bus_voltage.is_none() {
        return Err(ConfigError::MissingRequired {
            key: "bus_voltage".into(),
            context: " (required to detect transient windows)".into(),
        }
        .into());
    }
    let t_off = match config.windows.t_off {
        Some(w) => WindowInfo {
            window: w,
            source: WindowSource::Override,
        },
        None => WindowInfo {
            window: detect_turnoff_window(
                &v_ds,
                config.bus_voltage.unwrap(),
                config.low_frac,
                config.high_frac,
            )?,
            source: WindowSource::Detected,
        },
    };
    let t_on = match config.windows.t_on {
        Some(w) => WindowInfo {
            window: w,
            source: WindowSource::Override,
        },
        None => WindowInfo {
            window: detect_turnon_window(
                &v_ds,
                config.bus_voltage.unwrap(),
                config.low_frac,
                config.high_frac,
            )?,
            source: WindowSource::Detected,
        },
    };
    let e_off = event_energy(&v_ds, &i_ds, &t_off.window)?;
    let e_on = event_energy(&v_ds, &i_ds, &t_on.window)?;
    let e_charge_pulse_route = charge_route_energy(&v_ds, &i_ds, &t_off.window)?;
    Ok(PulseAnalysis {
        e_on,
        e_off,
        t_on,
        t_off,
        e_charge_pulse_route,
    })
}

/// Builds the Q-V loop of a Sawyer-Tower capture: maps and deskews the
/// device-voltage and reference-voltage channels, converts the reference
/// voltage to charge, and pairs them over one excitation period.
///
/// The period window comes from the configuration override or, for
/// simulator-emitted captures, from the embedded ground-truth metadata.
pub fn st_loop_from_capture(
    capture: &Capture,
    config: &AnalysisConfig,
) -> Result<(QvLoop, WindowInfo), LossError> {
    let v_label = config.channels.v_dut.as_str();
    let r_label = config.channels.v_ref.as_str();
    if v_label == r_label {
        return Err(LossError::DuplicateChannelMapping {
            a: "v_dut",
            b: "v_ref",
            label: v_label.to_string(),
        });
    }
    let v_raw = capture
        .channel(v_label)
        .ok_or_else(|| LossError::MissingChannel {
            role: "v_dut",
            label: v_label.to_string(),
        })?;
    let r_raw = capture
        .channel(r_label)
        .ok_or_else(|| LossError::MissingChannel {
            role: "v_ref",
            label: r_label.to_string(),
        })?;
    let c_ref = config.c_ref.ok_or(ConfigError::MissingRequired {
        key: "c_ref".into(),
        context: " (required for Sawyer-Tower analysis)".into(),
    })?;

    let mut pair = Capture::new();
    pair.insert(v_raw.transform(1.0, 0.0, config.deskew_for(v_label), Unit::Volts)?);
    pair.insert(r_raw.transform(1.0, 0.0, config.deskew_for(r_label), Unit::Volts)?);
    let aligned = pair.aligned()?;
    let v_dut = aligned.channel(v_label).expect("just inserted");
    let v_ref = aligned.channel(r_label).expect("just inserted");
    let q = charge_from_reference(v_ref, c_ref)?;

    let period = match config.windows.st_period {
        Some(w) => WindowInfo {
            window: w,
            source: WindowSource::Override,
        },
        None => {
            let from_truth = crate::simulator::GroundTruth::from_metadata(capture.metadata())
                .and_then(|t| match t {
                    crate::simulator::GroundTruth::SawyerTower(t) => Some(t.period),
                    _ => None,
                });
            match from_truth {
                Some(w) => WindowInfo {
                    window: w,
                    source: WindowSource::Detected,
                },
                None => {
                    return Err(ConfigError::MissingRequired {
                        key: "window.st_period".into(),
                        context: " (no period metadata in the capture)".into(),
                    }
                    .into())
                }
            }
        }
    };
    let loop_ = build_qv_loop(v_dut, &q, &period.window)?;
    Ok((loop_, period))
}

/// Relative disagreement between the two charge routes above which both
/// are flagged in the output.
pub const CHARGE_ROUTE_TOLERANCE: f64 = 0.02;

/// Full separation pipeline: event energies from the pulse capture,
/// charge energy from the loop's charge branch, scalar separation, and a
/// cross-check of the separated hysteresis against the loop area.
pub fn separate_from_captures(
    pulse_capture: &Capture,
    st_loop: &QvLoop,
    config: &AnalysisConfig,
) -> Result<CaptureSeparation, LossError> {
    let pulse = analyze_pulse_capture(pulse_capture, config)?;
    let branches = split_branches(st_loop)?;
    let e_charge_st = branch_energy(&branches.charge)?.magnitude;
    let breakdown = separate_from_scalars(pulse.e_on, pulse.e_off, e_charge_st)?;
    let st_hysteresis = hysteresis_energy(st_loop)?.magnitude;
    let cross_validation = cross_validate(&breakdown, st_hysteresis);
    let scale = e_charge_st.max(pulse.e_charge_pulse_route).max(1e-30);
    let charge_routes_disagree =
        (e_charge_st - pulse.e_charge_pulse_route).abs() / scale > CHARGE_ROUTE_TOLERANCE;
    Ok(CaptureSeparation {
        breakdown,
        cross_validation,
        pulse,
        e_charge_st_route: e_charge_st,
        charge_routes_disagree,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    const UJ: f64 = 1e-6;

    fn constant(value: f64, unit: Unit, label: &str) -> Waveform {
        Waveform::new(0.0, 1e-8, vec![value; 201], unit, label).unwrap()
    }

    #[test]
    fn constant_product_event_energy() {
        let v = constant(400.0, Unit::Volts, "v");
        let i = constant(1.0, Unit::Amperes, "i");
        let w = TimeWindow::new(0.2e-6, 1.2e-6).unwrap();
        let e = event_energy(&v, &i, &w).unwrap();
        assert_relative_eq!(e, 400.0 * UJ, max_relative = 1e-9);
    }

    #[test]
    fn zero_current_means_zero_energy() {
        let v = constant(400.0, Unit::Volts, "v");
        let i = constant(0.0, Unit::Amperes, "i");
        let w = TimeWindow::new(0.0, 1e-6).unwrap();
        assert_eq!(event_energy(&v, &i, &w).unwrap(), 0.0);
    }

    #[test]
    fn unit_tags_are_enforced() {
        let v = constant(400.0, Unit::Volts, "v");
        let not_amps = constant(1.0, Unit::Volts, "i");
        let w = TimeWindow::new(0.0, 1e-6).unwrap();
        assert!(matches!(
            event_energy(&v, &not_amps, &w),
            Err(LossError::Waveform(WaveformError::UnitMismatch { .. }))
        ));
    }

    #[test]
    fn overlap_closed_form_linear_rise_and_fall() {
        let v0 = 400.0;
        let i0 = 2.0;
        let t_total = 100e-9;
        let n = 10_000;
        let dt = t_total / n as f64;
        let v = Waveform::new(
            0.0,
            dt,
            (0..=n).map(|k| v0 * k as f64 / n as f64).collect(),
            Unit::Volts,
            "v",
        )
        .unwrap();
        let i = Waveform::new(
            0.0,
            dt,
            (0..=n).map(|k| i0 * (1.0 - k as f64 / n as f64)).collect(),
            Unit::Amperes,
            "i",
        )
        .unwrap();
        let w = TimeWindow::new(0.0, t_total).unwrap();
        let e = overlap_energy(&v, &i, &w).unwrap();
        assert_relative_eq!(e, v0 * i0 * t_total / 6.0, max_relative = 1e-4);
    }

    #[test]
    fn reference_case_1_separates() {
        let b = separate_from_scalars(6.479 * UJ, 8.134 * UJ, 6.889 * UJ).unwrap();
        assert_abs_diff_eq!(b.e_overlap, 1.245 * UJ, epsilon = 1e-9);
        assert_abs_diff_eq!(b.e_hysteresis, 0.410 * UJ, epsilon = 1e-9);
        assert_eq!(b.e_discharge, b.e_on);
    }

    #[test]
    fn reference_case_2_separates() {
        let b = separate_from_scalars(6.212 * UJ, 7.917 * UJ, 6.889 * UJ).unwrap();
        assert_abs_diff_eq!(b.e_overlap, 1.028 * UJ, epsilon = 1e-9);
        assert_abs_diff_eq!(b.e_hysteresis, 0.677 * UJ, epsilon = 1e-9);
    }

    #[test]
    fn reference_case_3_separates() {
        let b = separate_from_scalars(6.658 * UJ, 7.201 * UJ, 6.889 * UJ).unwrap();
        assert_abs_diff_eq!(b.e_overlap, 0.312 * UJ, epsilon = 1e-9);
        assert_abs_diff_eq!(b.e_hysteresis, 0.231 * UJ, epsilon = 1e-9);
    }

    #[test]
    fn degenerate_equal_inputs_separate_to_zero() {
        for x in [0.0, 1.0 * UJ, 5.0] {
            let b = separate_from_scalars(x, x, x).unwrap();
            assert_eq!(b.e_overlap, 0.0);
            assert_eq!(b.e_hysteresis, 0.0);
        }
    }

    #[test]
    fn negative_components_error_with_the_offender() {
        // e_charge > e_off: negative overlap
        match separate_from_scalars(1.0 * UJ, 2.0 * UJ, 3.0 * UJ) {
            Err(LossError::NegativeComponent { name, value }) => {
                assert_eq!(name, "e_overlap");
                assert!(value < 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
        // e_on > e_charge: negative hysteresis
        match separate_from_scalars(2.5 * UJ, 3.0 * UJ, 2.0 * UJ) {
            Err(LossError::NegativeComponent { name, .. }) => {
                assert_eq!(name, "e_hysteresis");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cross_validation_is_plain_arithmetic() {
        let b = separate_from_scalars(6.658e-6, 7.201e-6, 6.889e-6).unwrap();
        let cv = cross_validate(&b, 0.189e-6);
        assert_abs_diff_eq!(cv.discrepancy, 0.042e-6, epsilon = 1e-9);
        let same = cross_validate(&b, b.e_hysteresis);
        assert_eq!(same.discrepancy, 0.0);
    }

    #[test]
    fn missing_channel_names_the_label() {
        let mut capture = Capture::new();
        capture.insert(constant(400.0, Unit::Volts, "v_ds"));
        let config = AnalysisConfig::default();
        match prepare_pulse_channels(&capture, &config) {
            Err(LossError::MissingChannel { role, label }) => {
                assert_eq!(role, "i_ds");
                assert_eq!(label, "i_ds");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn shunt_required_for_voltage_current_column() {
        let mut capture = Capture::new();
        capture.insert(constant(400.0, Unit::Volts, "v_ds"));
        capture.insert(constant(0.0104, Unit::Volts, "i_ds"));
        let config = AnalysisConfig::default();
        match prepare_pulse_channels(&capture, &config) {
            Err(LossError::Config(ConfigError::MissingRequired { key, .. })) => {
                assert_eq!(key, "shunt");
            }
            other => panic!("unexpected {other:?}"),
        }
        let mut with_shunt = AnalysisConfig::default();
        with_shunt.shunt_volts_per_amp = Some(0.0104);
        let (_, i_ds) = prepare_pulse_channels(&capture, &with_shunt).unwrap();
        assert_relative_eq!(i_ds.samples()[0], 1.0, max_relative = 1e-12);
    }
}
