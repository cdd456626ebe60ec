//! Synthetic capture generation for both test circuits, with tallied
//! ground-truth energies.
//!
//! Two circuits are modeled around one [`HysteresisCossModel`]:
//!
//! * a series reference-capacitor circuit under periodic excitation, which
//!   produces charge-voltage loops, and
//! * a half-bridge single-pulse turn-off, where a linearly ramping channel
//!   current diverts the inductive load current into the device
//!   capacitance until the complementary diode clamps the voltage.
//!
//! Integration is classical fixed-step fourth-order Runge-Kutta, so runs
//! are deterministic and usable as frozen fixtures. Ground-truth charge
//! energies are tallied as exact path integrals along the model tables;
//! only time-domain products (overlap, source energy) use the sample
//! grid.

use thiserror::Error;

use crate::coss_model::{Branch, HysteresisCossModel, ModelError};
use crate::waveform::{Capture, TimeWindow, Unit, Waveform, WaveformError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("time step {dt:e} too coarse; need at most {limit:e} ({reason})")]
    StepTooCoarse { dt: f64, limit: f64, reason: String },
    #[error("charge state {q:e} left the invertible table range")]
    ModelNotInvertible { q: f64 },
    #[error("charging traversal would exceed the table span at v = {v}")]
    NonMonotoneCharge { v: f64 },
    #[error("invalid simulation parameters: {reason}")]
    InvalidParams { reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("capture is missing channel '{label}'")]
    MissingChannel { label: String },
    #[error(transparent)]
    Waveform(#[from] WaveformError),
}

/// Excitation shape for the series-capacitor circuit. Both shapes sweep
/// 0 -> amplitude -> 0 once per period, so the device voltage stays
/// non-negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExcitationShape {
    Sine,
    Triangle,
}

impl ExcitationShape {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sine" => Some(Self::Sine),
            "triangle" => Some(Self::Triangle),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Sine => "sine",
            Self::Triangle => "triangle",
        }
    }
}

/// Series-capacitor run parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StParams {
    pub c_ref: f64,
    pub shape: ExcitationShape,
    /// Peak source voltage.
    pub amplitude: f64,
    pub frequency: f64,
    pub n_periods: u32,
    pub dt: f64,
}

impl StParams {
    fn validate(&self) -> Result<(), SimError> {
        let positive = self.c_ref > 0.0 && self.amplitude > 0.0 && self.frequency > 0.0;
        if !positive {
            return Err(SimError::InvalidParams {
                reason: "c_ref, amplitude, and frequency must be positive".into(),
            });
        }
        if self.n_periods == 0 {
            return Err(SimError::InvalidParams {
                reason: "n_periods must be at least 1".into(),
            });
        }
        let limit = 1.0 / (1000.0 * self.frequency);
        if self.dt <= 0.0 || self.dt.is_nan() || self.dt > limit * (1.0 + 1e-9) {
            return Err(SimError::StepTooCoarse {
                dt: self.dt,
                limit,
                reason: "need at least 1000 steps per excitation period".into(),
            });
        }
        Ok(())
    }
}

/// Single-pulse run parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseParams {
    pub bus_voltage: f64,
    /// Load current held by the inductor at turn-off.
    pub load_current: f64,
    /// Linear channel-current ramp duration at turn-off.
    pub channel_fall_time: f64,
    /// Gate-on time; the load current ramps up during it.
    pub pulse_duration: f64,
    /// Effective on-state resistance discharging the capacitance at
    /// turn-on.
    pub series_resistance: f64,
    /// Forward drop of the complementary-device diode that clamps the
    /// drain voltage above the bus.
    pub diode_drop: f64,
    pub dt: f64,
}

impl PulseParams {
    fn validate(&self, model: &HysteresisCossModel) -> Result<(), SimError> {
        let all_positive = self.bus_voltage > 0.0
            && self.load_current > 0.0
            && self.channel_fall_time > 0.0
            && self.pulse_duration > 0.0
            && self.series_resistance > 0.0
            && self.diode_drop > 0.0
            && self.dt > 0.0;
        if !all_positive {
            return Err(SimError::InvalidParams {
                reason: "all pulse parameters must be positive".into(),
            });
        }
        let limit = self.channel_fall_time / 100.0;
        if self.dt > limit * (1.0 + 1e-9) {
            return Err(SimError::StepTooCoarse {
                dt: self.dt,
                limit,
                reason: "need at least 100 steps across the channel fall time".into(),
            });
        }
        let clamp = self.bus_voltage + self.diode_drop;
        if clamp > model.v_max() {
            return Err(SimError::NonMonotoneCharge { v: clamp });
        }
        // explicit stepping of the turn-on discharge needs dt well below
        // the smallest R*C along the discharge branch
        let c_min = min_capacitance(model, Branch::Discharge);
        let tau_min = self.series_resistance * c_min;
        if self.dt > 0.5 * tau_min {
            return Err(SimError::StepTooCoarse {
                dt: self.dt,
                limit: 0.5 * tau_min,
                reason: "turn-on discharge time constant too small for this step".into(),
            });
        }
        // the discharge must die out well inside the gate-on time; the
        // channel conductance ramps up over the fall-time scale first
        let tau_max = self.series_resistance * max_capacitance(model, Branch::Discharge);
        if 12.0 * tau_max + self.channel_fall_time > 0.25 * self.pulse_duration {
            return Err(SimError::InvalidParams {
                reason: format!(
                    "discharge time constant {tau_max:e} s too large for pulse duration {:e} s",
                    self.pulse_duration
                ),
            });
        }
        Ok(())
    }
}

fn min_capacitance(model: &HysteresisCossModel, branch: Branch) -> f64 {
    let table = model.branch(branch);
    let mut c_min = f64::INFINITY;
    let pts: Vec<(f64, f64)> = table.points().collect();
    for pair in pts.windows(2) {
        c_min = c_min.min((pair[1].1 - pair[0].1) / (pair[1].0 - pair[0].0));
    }
    c_min
}

fn max_capacitance(model: &HysteresisCossModel, branch: Branch) -> f64 {
    let table = model.branch(branch);
    let mut c_max = 0.0f64;
    let pts: Vec<(f64, f64)> = table.points().collect();
    for pair in pts.windows(2) {
        c_max = c_max.max((pair[1].1 - pair[0].1) / (pair[1].0 - pair[0].0));
    }
    c_max
}

/// Source amplitude that drives the device to `v_dut_peak` in the series
/// circuit: the reference capacitor drops the rest.
pub fn st_amplitude_for_dut_peak(model: &HysteresisCossModel, c_ref: f64, v_dut_peak: f64) -> f64 {
    v_dut_peak + model.branch(Branch::Charge).q_at(v_dut_peak) / c_ref
}

/// Ground truth recorded with a series-capacitor run.
#[derive(Debug, Clone, PartialEq)]
pub struct StGroundTruth {
    /// Signed full-span loop area of the model tables (positive =
    /// dissipative), valid when the excitation spans the full table.
    pub loop_area: f64,
    /// Net source energy over the final (steady) period.
    pub source_energy_cycle: f64,
    pub c_ref: f64,
    /// Span of the final period.
    pub period: TimeWindow,
}

/// Ground truth recorded with a single-pulse run. The charge energies are
/// exact path integrals along the traversed branch; `e_off` and `e_on`
/// are stored as their defining sums so the identities hold exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseGroundTruth {
    pub e_overlap: f64,
    pub e_charge: f64,
    pub e_off: f64,
    pub e_discharge: f64,
    pub e_on: f64,
    pub v_final: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GroundTruth {
    SawyerTower(StGroundTruth),
    SinglePulse(PulseGroundTruth),
}

impl GroundTruth {
    /// Key-value form embedded in capture metadata.
    pub fn to_metadata(&self) -> Vec<(String, String)> {
        let f = |x: f64| format!("{x:.17e}");
        match self {
            GroundTruth::SawyerTower(t) => vec![
                ("truth.kind".into(), "st".into()),
                ("truth.loop_area".into(), f(t.loop_area)),
                ("truth.source_energy_cycle".into(), f(t.source_energy_cycle)),
                ("truth.c_ref".into(), f(t.c_ref)),
                ("truth.period_start".into(), f(t.period.t_start())),
                ("truth.period_end".into(), f(t.period.t_end())),
            ],
            GroundTruth::SinglePulse(t) => vec![
                ("truth.kind".into(), "pulse".into()),
                ("truth.e_overlap".into(), f(t.e_overlap)),
                ("truth.e_charge".into(), f(t.e_charge)),
                ("truth.e_off".into(), f(t.e_off)),
                ("truth.e_discharge".into(), f(t.e_discharge)),
                ("truth.e_on".into(), f(t.e_on)),
                ("truth.v_final".into(), f(t.v_final)),
            ],
        }
    }

    /// Reconstructs the record from capture metadata, if present.
    pub fn from_metadata(meta: &std::collections::BTreeMap<String, String>) -> Option<GroundTruth> {
        let get = |key: &str| meta.get(key).and_then(|v| v.parse::<f64>().ok());
        match meta.get("truth.kind").map(|s| s.as_str()) {
            Some("st") => Some(GroundTruth::SawyerTower(StGroundTruth {
                loop_area: get("truth.loop_area")?,
                source_energy_cycle: get("truth.source_energy_cycle")?,
                c_ref: get("truth.c_ref")?,
                period: TimeWindow::new(get("truth.period_start")?, get("truth.period_end")?)
                    .ok()?,
            })),
            Some("pulse") => Some(GroundTruth::SinglePulse(PulseGroundTruth {
                e_overlap: get("truth.e_overlap")?,
                e_charge: get("truth.e_charge")?,
                e_off: get("truth.e_off")?,
                e_discharge: get("truth.e_discharge")?,
                e_on: get("truth.e_on")?,
                v_final: get("truth.v_final")?,
            })),
            _ => None,
        }
    }
}

fn source_slope(shape: ExcitationShape, amplitude: f64, frequency: f64, t: f64) -> f64 {
    match shape {
        ExcitationShape::Sine => {
            amplitude
                * std::f64::consts::PI
                * frequency
                * (2.0 * std::f64::consts::PI * frequency * t).sin()
        }
        ExcitationShape::Triangle => {
            let phase = (t * frequency).rem_euclid(1.0);
            if phase < 0.5 {
                2.0 * amplitude * frequency
            } else {
                -2.0 * amplitude * frequency
            }
        }
    }
}

/// Simulates the series circuit `v_source = v_dut + v_ref` with shared
/// charge state.
///
/// The charge obeys `dq/dt = v_source' / (dv_dut/dq + 1/c_ref)` on the
/// branch selected by the sign of the source slope; direction reversals
/// switch branches at constant charge. The actual time step is snapped to
/// an integer number of steps per period so each period lands exactly on
/// the sample grid. Emits channels `v_dut`, `v_ref`, and `i`.
pub fn simulate_sawyer_tower(
    model: &HysteresisCossModel,
    params: &StParams,
) -> Result<(Capture, GroundTruth), SimError> {
    params.validate()?;
    let period = 1.0 / params.frequency;
    let steps_per_period = (period / params.dt).round() as usize;
    let dt = period / steps_per_period as f64;
    let total_steps = steps_per_period * params.n_periods as usize;

    let q_span = model.q_max();
    let q_tol = 1e-3 * q_span;

    let rhs = |t: f64, q: f64, branch: Branch| -> f64 {
        let dv_dq = model.branch(branch).dv_dq_at(q);
        source_slope(params.shape, params.amplitude, params.frequency, t)
            / (dv_dq + 1.0 / params.c_ref)
    };

    let mut q = 0.0f64;
    let mut v_dut = Vec::with_capacity(total_steps + 1);
    let mut v_ref = Vec::with_capacity(total_steps + 1);
    let mut current = Vec::with_capacity(total_steps + 1);

    for k in 0..=total_steps {
        let t = k as f64 * dt;
        let branch = if source_slope(
            params.shape,
            params.amplitude,
            params.frequency,
            t + 0.5 * dt,
        ) >= 0.0
        {
            Branch::Charge
        } else {
            Branch::Discharge
        };
        v_dut.push(model.branch(branch).v_at(q));
        v_ref.push(q / params.c_ref);
        current.push(rhs(t, q, branch));
        if k == total_steps {
            break;
        }
        let k1 = rhs(t, q, branch);
        let k2 = rhs(t + 0.5 * dt, q + 0.5 * dt * k1, branch);
        let k3 = rhs(t + 0.5 * dt, q + 0.5 * dt * k2, branch);
        let k4 = rhs(t + dt, q + dt * k3, branch);
        q += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if q < -q_tol || q > q_span + q_tol {
            return Err(SimError::ModelNotInvertible { q });
        }
        q = q.clamp(0.0, q_span);
    }

    let period_start_idx = steps_per_period * (params.n_periods as usize - 1);
    let period_window = TimeWindow::new(period_start_idx as f64 * dt, total_steps as f64 * dt)?;

    // net source energy over the final period, from the emitted samples
    let mut source_energy = 0.0;
    for k in period_start_idx..total_steps {
        let p0 = (v_dut[k] + v_ref[k]) * current[k];
        let p1 = (v_dut[k + 1] + v_ref[k + 1]) * current[k + 1];
        source_energy += 0.5 * (p0 + p1) * dt;
    }

    let mut capture = Capture::new();
    capture.insert(Waveform::new(0.0, dt, v_dut, Unit::Volts, "v_dut")?);
    capture.insert(Waveform::new(0.0, dt, v_ref, Unit::Volts, "v_ref")?);
    capture.insert(Waveform::new(0.0, dt, current, Unit::Amperes, "i")?);
    capture.set_metadata("source", "simulator");
    capture.set_metadata("sim.kind", "st");
    capture.set_metadata("sim.shape", params.shape.name());
    capture.set_metadata("sim.amplitude", format!("{:.17e}", params.amplitude));
    capture.set_metadata("sim.frequency", format!("{:.17e}", params.frequency));
    capture.set_metadata("sim.c_ref", format!("{:.17e}", params.c_ref));
    capture.set_metadata("sim.n_periods", params.n_periods.to_string());
    capture.set_metadata("sim.dt", format!("{dt:.17e}"));

    let truth = GroundTruth::SawyerTower(StGroundTruth {
        loop_area: model.analytic_loop_area(),
        source_energy_cycle: source_energy,
        c_ref: params.c_ref,
        period: period_window,
    });
    for (k, v) in truth.to_metadata() {
        capture.set_metadata(k, v);
    }
    Ok((capture, truth))
}

/// Simulates a single-pulse run: off-state hold, gate-on discharge through
/// the channel resistance, a load-current ramp, then the turn-off
/// transient where a linearly falling channel current diverts the load
/// into the device capacitance until the diode clamps.
///
/// Emits channels `v_ds`, `i_ds` (the shunt-visible device current),
/// `i_channel` (ground-truth channel share), and `gate`.
pub fn simulate_single_pulse(
    model: &HysteresisCossModel,
    params: &PulseParams,
) -> Result<(Capture, GroundTruth), SimError> {
    params.validate(model)?;
    let dt = params.dt;
    let clamp = params.bus_voltage + params.diode_drop;
    let charge_table = model.branch(Branch::Charge);
    let discharge_table = model.branch(Branch::Discharge);

    let lead_steps = ((0.02 * params.pulse_duration / dt).ceil() as usize).max(20);
    let on_steps = (params.pulse_duration / dt).round() as usize;
    // the load ramp starts after the discharge transient has died out
    let ramp_delay_steps = on_steps / 4;
    let tail_steps = ((0.02 * params.pulse_duration / dt).ceil() as usize).max(100);

    // generous bound on the turn-off transient length
    let q_to_clamp = charge_table.q_at(clamp);
    let max_off_steps = (((params.channel_fall_time + 1.2 * q_to_clamp / params.load_current) / dt)
        .ceil() as usize
        + tail_steps)
        .max(200);

    let mut v_samples: Vec<f64> = Vec::new();
    let mut i_ds: Vec<f64> = Vec::new();
    let mut i_channel: Vec<f64> = Vec::new();
    let mut gate: Vec<f64> = Vec::new();

    // phase 1: off-state hold at the bus
    for _ in 0..lead_steps {
        v_samples.push(params.bus_voltage);
        i_ds.push(0.0);
        i_channel.push(0.0);
        gate.push(0.0);
    }

    // phase 2: gate on; the capacitance discharges through the channel
    // resistance while the load current ramps up after a delay
    let mut v = params.bus_voltage;
    let t_on_start = lead_steps as f64 * dt;
    let ramp_span = (on_steps - ramp_delay_steps) as f64 * dt;
    let load_ramp = |t_in_phase: f64| -> f64 {
        let t_r = t_in_phase - ramp_delay_steps as f64 * dt;
        if t_r <= 0.0 {
            0.0
        } else {
            params.load_current * (t_r / ramp_span).min(1.0)
        }
    };
    // channel conductance ramps up over the fall-time scale so the
    // discharge current starts from zero instead of jumping
    let conductance = |t_in_phase: f64| -> f64 {
        (t_in_phase / params.channel_fall_time).min(1.0) / params.series_resistance
    };
    let discharge_rhs = |t_in_phase: f64, v: f64| -> f64 {
        -v * conductance(t_in_phase) / discharge_table.capacitance_at(v)
    };
    for k in 0..on_steps {
        let t_in_phase = k as f64 * dt;
        let ramp = load_ramp(t_in_phase);
        let i_cap = -v * conductance(t_in_phase);
        v_samples.push(v);
        i_ds.push(i_cap + ramp);
        i_channel.push(ramp - i_cap); // discharge current returns through the channel
        gate.push(1.0);
        let k1 = discharge_rhs(t_in_phase, v);
        let k2 = discharge_rhs(t_in_phase + 0.5 * dt, v + 0.5 * dt * k1);
        let k3 = discharge_rhs(t_in_phase + 0.5 * dt, v + 0.5 * dt * k2);
        let k4 = discharge_rhs(t_in_phase + dt, v + dt * k3);
        v += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        v = v.max(0.0);
    }
    let v_on_end = v;
    let e_discharge = discharge_table.charge_energy_between(v_on_end, params.bus_voltage);

    // phase 3: turn-off; channel current ramps linearly to zero and the
    // difference charges the capacitance until the diode clamps
    let t_off_start = t_on_start + on_steps as f64 * dt;
    let channel_current = |t_in_phase: f64| -> f64 {
        params.load_current * (1.0 - t_in_phase / params.channel_fall_time).max(0.0)
    };
    let charge_rhs = |t_in_phase: f64, v: f64| -> f64 {
        if v >= clamp {
            0.0
        } else {
            (params.load_current - channel_current(t_in_phase)) / charge_table.capacitance_at(v)
        }
    };
    let v_off_start = v;
    let mut e_overlap = 0.0;
    let mut clamped = v >= clamp;
    let mut settled_steps = 0usize;
    // one-shot corrected capacitor current for the sample right after the
    // clamp crossing, chosen so the sampled trapezoid reproduces the true
    // energy transferred in the partial step
    let mut crossing_cap_current: Option<f64> = None;
    for k in 0..max_off_steps {
        let t_in_phase = k as f64 * dt;
        let i_ch = channel_current(t_in_phase);
        let i_cap = match crossing_cap_current.take() {
            Some(x) => x,
            None if clamped => 0.0,
            None => params.load_current - i_ch,
        };
        v_samples.push(v);
        i_ds.push(i_ch + i_cap);
        i_channel.push(i_ch);
        gate.push(0.0);

        // trapezoid tally of v * i_channel over the transient
        let i_ch_next = channel_current(t_in_phase + dt);
        let (v_next, clamped_next) = if clamped {
            (clamp, true)
        } else {
            let k1 = charge_rhs(t_in_phase, v);
            let k2 = charge_rhs(t_in_phase + 0.5 * dt, v + 0.5 * dt * k1);
            let k3 = charge_rhs(t_in_phase + 0.5 * dt, v + 0.5 * dt * k2);
            let k4 = charge_rhs(t_in_phase + dt, v + dt * k3);
            let vn = v + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            if vn >= clamp {
                let e_step = charge_table.charge_energy_between(v, clamp);
                crossing_cap_current = Some((2.0 * e_step / dt - v * i_cap) / (2.0 * clamp));
                (clamp, true)
            } else {
                (vn, false)
            }
        };
        e_overlap += 0.5 * (v * i_ch + v_next * i_ch_next) * dt;
        v = v_next;
        clamped = clamped_next;

        if clamped && i_ch_next == 0.0 {
            settled_steps += 1;
            if settled_steps >= tail_steps {
                // emit the final state and stop
                v_samples.push(v);
                i_ds.push(0.0);
                i_channel.push(0.0);
                gate.push(0.0);
                break;
            }
        }
    }
    if !clamped {
        return Err(SimError::InvalidParams {
            reason: "turn-off transient did not reach the clamp within the step budget".into(),
        });
    }
    let e_charge = charge_table.charge_energy_between(v_off_start, v);

    let truth = PulseGroundTruth {
        e_overlap,
        e_charge,
        e_off: e_charge + e_overlap,
        e_discharge,
        e_on: e_discharge,
        v_final: v,
    };

    let mut capture = Capture::new();
    capture.insert(Waveform::new(0.0, dt, v_samples, Unit::Volts, "v_ds")?);
    capture.insert(Waveform::new(0.0, dt, i_ds, Unit::Amperes, "i_ds")?);
    capture.insert(Waveform::new(
        0.0,
        dt,
        i_channel,
        Unit::Amperes,
        "i_channel",
    )?);
    capture.insert(Waveform::new(0.0, dt, gate, Unit::Dimensionless, "gate")?);
    capture.set_metadata("source", "simulator");
    capture.set_metadata("sim.kind", "pulse");
    capture.set_metadata("sim.bus_voltage", format!("{:.17e}", params.bus_voltage));
    capture.set_metadata("sim.load_current", format!("{:.17e}", params.load_current));
    capture.set_metadata(
        "sim.channel_fall_time",
        format!("{:.17e}", params.channel_fall_time),
    );
    capture.set_metadata(
        "sim.pulse_duration",
        format!("{:.17e}", params.pulse_duration),
    );
    capture.set_metadata(
        "sim.series_resistance",
        format!("{:.17e}", params.series_resistance),
    );
    capture.set_metadata("sim.diode_drop", format!("{:.17e}", params.diode_drop));
    capture.set_metadata("sim.dt", format!("{dt:.17e}"));
    capture.set_metadata("sim.t_on_start", format!("{t_on_start:.17e}"));
    capture.set_metadata("sim.t_off_start", format!("{t_off_start:.17e}"));

    let truth = GroundTruth::SinglePulse(truth);
    for (k, v) in truth.to_metadata() {
        capture.set_metadata(k, v);
    }
    Ok((capture, truth))
}

/// Energy bookkeeping audit of a simulated capture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceReport {
    /// Net energy delivered by the source over the audited span.
    pub source_energy: f64,
    /// Net change of stored energy over the same span.
    pub stored_change: f64,
    /// Energy dissipated inside the device over the same span.
    pub dissipated: f64,
    /// source - stored - dissipated; near zero for a consistent run.
    pub residual: f64,
}

/// Audits a simulated capture against its ground truth.
///
/// Series-capacitor runs are audited over the final period: the device
/// absorbs its loop area per cycle while the reference capacitor returns
/// to its initial state. Pulse runs are audited over the whole record;
/// the turn-on discharge counts as energy returned to the external
/// circuit.
pub fn energy_balance(capture: &Capture, truth: &GroundTruth) -> Result<BalanceReport, SimError> {
    let channel = |label: &str| {
        capture
            .channel(label)
            .ok_or_else(|| SimError::MissingChannel {
                label: label.to_string(),
            })
    };
    match truth {
        GroundTruth::SawyerTower(t) => {
            let v_dut = channel("v_dut")?;
            let v_ref = channel("v_ref")?;
            let i = channel("i")?;
            let dt = v_dut.dt();
            let eps = dt * 1e-6;
            let k0 = ((t.period.t_start() - v_dut.t0()) / dt + eps).round() as usize;
            let k1 = ((t.period.t_end() - v_dut.t0()) / dt + eps).round() as usize;
            let k1 = k1.min(v_dut.len() - 1);
            let mut source = 0.0;
            let mut absorbed = 0.0;
            for k in k0..k1 {
                let ps0 = (v_dut.samples()[k] + v_ref.samples()[k]) * i.samples()[k];
                let ps1 = (v_dut.samples()[k + 1] + v_ref.samples()[k + 1]) * i.samples()[k + 1];
                source += 0.5 * (ps0 + ps1) * dt;
                let pd0 = v_dut.samples()[k] * i.samples()[k];
                let pd1 = v_dut.samples()[k + 1] * i.samples()[k + 1];
                absorbed += 0.5 * (pd0 + pd1) * dt;
            }
            let stored_change =
                0.5 * t.c_ref * (v_ref.samples()[k1].powi(2) - v_ref.samples()[k0].powi(2));
            Ok(BalanceReport {
                source_energy: source,
                stored_change,
                dissipated: absorbed,
                residual: source - stored_change - absorbed,
            })
        }
        GroundTruth::SinglePulse(t) => {
            let v_ds = channel("v_ds")?;
            let i_ds = channel("i_ds")?;
            let dt = v_ds.dt();
            let mut source = 0.0;
            for k in 0..v_ds.len() - 1 {
                let p0 = v_ds.samples()[k] * i_ds.samples()[k];
                let p1 = v_ds.samples()[k + 1] * i_ds.samples()[k + 1];
                source += 0.5 * (p0 + p1) * dt;
            }
            let stored_change = t.e_charge - t.e_discharge;
            let dissipated = t.e_overlap;
            Ok(BalanceReport {
                source_energy: source,
                stored_change,
                dissipated,
                residual: source - stored_change - dissipated,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sawyer_tower::{build_qv_loop, hysteresis_energy};
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn st_params(model: &HysteresisCossModel, dt_frac: f64) -> StParams {
        let c_ref = 10e-9;
        StParams {
            c_ref,
            shape: ExcitationShape::Sine,
            amplitude: st_amplitude_for_dut_peak(model, c_ref, 400.0),
            frequency: 250e3,
            n_periods: 3,
            dt: dt_frac / 250e3,
        }
    }

    fn last_period_loop(capture: &Capture, truth: &GroundTruth) -> crate::sawyer_tower::QvLoop {
        let GroundTruth::SawyerTower(t) = truth else {
            panic!("st truth expected")
        };
        let q =
            crate::sawyer_tower::charge_from_reference(capture.channel("v_ref").unwrap(), t.c_ref)
                .unwrap();
        build_qv_loop(capture.channel("v_dut").unwrap(), &q, &t.period).unwrap()
    }

    #[test]
    fn linear_model_is_a_capacitive_divider() {
        let model = HysteresisCossModel::linear(47e-12, 410.0);
        let params = st_params(&model, 1.0 / 4000.0);
        let (capture, _) = simulate_sawyer_tower(&model, &params).unwrap();
        let v_dut = capture.channel("v_dut").unwrap();
        let v_ref = capture.channel("v_ref").unwrap();
        let expected = params.c_ref / 47e-12;
        let v_ref_peak = v_ref.samples().iter().cloned().fold(0.0f64, f64::max);
        for (vd, vr) in v_dut.samples().iter().zip(v_ref.samples()) {
            if vr.abs() > 1e-3 * v_ref_peak {
                assert_relative_eq!(vd / vr, expected, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn steady_cycle_source_energy_matches_analytic_area() {
        let model = HysteresisCossModel::with_loop_area(47e-12, 400.0, 0.189e-6, 201).unwrap();
        let params = st_params(&model, 1.0 / 12000.0);
        let (_, truth) = simulate_sawyer_tower(&model, &params).unwrap();
        let GroundTruth::SawyerTower(t) = &truth else {
            panic!()
        };
        assert_relative_eq!(t.source_energy_cycle, t.loop_area, max_relative = 5e-3);
    }

    #[test]
    fn halving_dt_changes_loop_area_little() {
        let model = HysteresisCossModel::with_loop_area(47e-12, 400.0, 0.189e-6, 201).unwrap();
        let coarse = st_params(&model, 1.0 / 4000.0);
        let fine = st_params(&model, 1.0 / 8000.0);
        let (cap_a, truth_a) = simulate_sawyer_tower(&model, &coarse).unwrap();
        let (cap_b, truth_b) = simulate_sawyer_tower(&model, &fine).unwrap();
        let area_a = hysteresis_energy(&last_period_loop(&cap_a, &truth_a))
            .unwrap()
            .magnitude;
        let area_b = hysteresis_energy(&last_period_loop(&cap_b, &truth_b))
            .unwrap()
            .magnitude;
        assert_relative_eq!(area_a, area_b, max_relative = 1e-3);
    }

    #[test]
    fn st_charge_equality_holds_at_every_sample() {
        let model = HysteresisCossModel::with_loop_area(47e-12, 400.0, 0.189e-6, 101).unwrap();
        let params = st_params(&model, 1.0 / 4000.0);
        let (capture, _) = simulate_sawyer_tower(&model, &params).unwrap();
        let v_ref = capture.channel("v_ref").unwrap();
        let i = capture.channel("i").unwrap();
        let dt = v_ref.dt();
        // cumulative integral of the emitted current must track the
        // reference-capacitor charge
        let mut q_int = 0.0;
        let q_span = params.c_ref * v_ref.samples().iter().cloned().fold(0.0f64, f64::max);
        for k in 1..v_ref.len() {
            q_int += 0.5 * (i.samples()[k - 1] + i.samples()[k]) * dt;
            let q_ref = params.c_ref * (v_ref.samples()[k] - v_ref.samples()[0]);
            assert_abs_diff_eq!(q_int, q_ref, epsilon = 1e-3 * q_span);
        }
    }

    #[test]
    fn amplitude_scaling_is_quadratic_in_stored_energy() {
        let model = HysteresisCossModel::linear(100e-12, 1000.0);
        let c_ref = 10e-9;
        let base = StParams {
            c_ref,
            shape: ExcitationShape::Triangle,
            amplitude: 100.0,
            frequency: 100e3,
            n_periods: 2,
            dt: 1.0 / 100e3 / 4000.0,
        };
        let mut doubled = base;
        doubled.amplitude = 200.0;
        let peak_q = |params: &StParams| {
            let (cap, _) = simulate_sawyer_tower(&model, params).unwrap();
            let v_ref = cap.channel("v_ref").unwrap();
            c_ref * v_ref.samples().iter().cloned().fold(0.0f64, f64::max)
        };
        let q1 = peak_q(&base);
        let q2 = peak_q(&doubled);
        assert_relative_eq!(q2 / q1, 2.0, max_relative = 1e-3);
    }

    #[test]
    fn overdriven_excitation_leaves_the_table() {
        let model = HysteresisCossModel::linear(47e-12, 400.0);
        let mut params = st_params(&model, 1.0 / 2000.0);
        params.amplitude *= 3.0;
        assert!(matches!(
            simulate_sawyer_tower(&model, &params),
            Err(SimError::ModelNotInvertible { .. })
        ));
    }

    #[test]
    fn clamp_beyond_table_span_is_rejected() {
        let model = HysteresisCossModel::linear(47e-12, 390.0);
        let params = pulse_params(100e-9); // clamps at 400.01 V
        assert!(matches!(
            simulate_single_pulse(&model, &params),
            Err(SimError::NonMonotoneCharge { .. })
        ));
    }

    #[test]
    fn step_guard_rejects_coarse_st_step() {
        let model = HysteresisCossModel::linear(47e-12, 400.0);
        let mut params = st_params(&model, 1.0 / 4000.0);
        params.dt = 1.0 / params.frequency / 100.0;
        assert!(matches!(
            simulate_sawyer_tower(&model, &params),
            Err(SimError::StepTooCoarse { .. })
        ));
    }

    fn pulse_params(fall: f64) -> PulseParams {
        let dt = fall / 200.0;
        PulseParams {
            bus_voltage: 400.0,
            load_current: 0.85 * 2.0 * 47e-12 * 400.0 / fall,
            channel_fall_time: fall,
            pulse_duration: 2000.0 * dt,
            series_resistance: 20.0 * dt / 47e-12,
            diode_drop: 0.01,
            dt,
        }
    }

    #[test]
    fn linear_charging_slope_and_clamp_time() {
        // fall time small next to the total charge time: the voltage ramps
        // at ~i_load / C for most of the rise
        let c = 47e-12;
        let i_load = 0.05;
        let t_charge = c * 400.0 / i_load; // 376 ns
        let fall = t_charge / 50.0;
        let dt = fall / 150.0;
        let params = PulseParams {
            bus_voltage: 400.0,
            load_current: i_load,
            channel_fall_time: fall,
            pulse_duration: 4000.0 * dt,
            series_resistance: 20.0 * dt / c,
            diode_drop: 0.01,
            dt,
        };
        let model = HysteresisCossModel::linear(c, 450.0);
        let (capture, _) = simulate_single_pulse(&model, &params).unwrap();
        let v_ds = capture.channel("v_ds").unwrap();
        let t_off_start: f64 = capture
            .metadata_value("sim.t_off_start")
            .unwrap()
            .parse()
            .unwrap();
        let k0 = (t_off_start / v_ds.dt()).round() as usize;
        let k_clamp = v_ds.samples()[k0..]
            .iter()
            .position(|v| *v >= params.bus_voltage)
            .map(|k| v_ds.time_at(k0 + k))
            .expect("reaches the bus");
        let elapsed = k_clamp - t_off_start;
        assert_relative_eq!(elapsed, t_charge, max_relative = 0.03);
    }

    #[test]
    fn charge_energy_is_independent_of_fall_time() {
        let model = HysteresisCossModel::linear(47e-12, 450.0);
        for fall in [50e-9, 200e-9] {
            let (_, truth) = simulate_single_pulse(&model, &pulse_params(fall)).unwrap();
            let GroundTruth::SinglePulse(t) = truth else {
                panic!()
            };
            assert_relative_eq!(t.e_charge, 3.760e-6, max_relative = 1e-3);
        }
    }

    #[test]
    fn pulse_voltage_never_exceeds_clamp() {
        let model = HysteresisCossModel::with_loop_area(47e-12, 500.0, 0.1e-6, 101).unwrap();
        let params = pulse_params(100e-9);
        let (capture, _) = simulate_single_pulse(&model, &params).unwrap();
        let v_max = capture
            .channel("v_ds")
            .unwrap()
            .samples()
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(v_max <= params.bus_voltage + params.diode_drop + 1e-9);
    }

    #[test]
    fn tallied_identity_is_exact() {
        let model = HysteresisCossModel::with_loop_area(47e-12, 450.0, 0.15e-6, 151).unwrap();
        let (_, truth) = simulate_single_pulse(&model, &pulse_params(100e-9)).unwrap();
        let GroundTruth::SinglePulse(t) = truth else {
            panic!()
        };
        assert_eq!(t.e_off - t.e_charge - t.e_overlap, 0.0);
        assert_eq!(t.e_on, t.e_discharge);
        assert!(t.e_overlap > 0.0 && t.e_charge > 0.0);
    }

    #[test]
    fn default_pulse_duration_matches_expected_timing() {
        // 2 us gate pulse at 250 kHz-equivalent timing
        let dt = 1e-9;
        let params = PulseParams {
            bus_voltage: 400.0,
            load_current: 0.3,
            channel_fall_time: 100e-9,
            pulse_duration: 2e-6,
            series_resistance: 20.0 * dt / 47e-12,
            diode_drop: 0.01,
            dt,
        };
        let model = HysteresisCossModel::linear(47e-12, 450.0);
        let (capture, _) = simulate_single_pulse(&model, &params).unwrap();
        let gate = capture.channel("gate").unwrap();
        let on_time = gate.samples().iter().filter(|g| **g > 0.5).count() as f64 * dt;
        assert_relative_eq!(on_time, 2e-6, max_relative = 1e-2);
    }

    #[test]
    fn balance_lossless_linear_st() {
        let model = HysteresisCossModel::linear(47e-12, 410.0);
        let params = st_params(&model, 1.0 / 8000.0);
        let (capture, truth) = simulate_sawyer_tower(&model, &params).unwrap();
        let report = energy_balance(&capture, &truth).unwrap();
        let peak_stored = 0.5 * 47e-12 * 400.0 * 400.0;
        assert!(report.residual.abs() <= 1e-3 * peak_stored);
        assert!(report.dissipated.abs() <= 1e-3 * peak_stored);
    }

    #[test]
    fn balance_hysteretic_st_dissipates_loop_area() {
        let model = HysteresisCossModel::with_loop_area(47e-12, 400.0, 0.189e-6, 201).unwrap();
        let params = st_params(&model, 1.0 / 12000.0);
        let (capture, truth) = simulate_sawyer_tower(&model, &params).unwrap();
        let report = energy_balance(&capture, &truth).unwrap();
        assert_relative_eq!(report.dissipated, 0.189e-6, max_relative = 5e-3);
    }

    #[test]
    fn balance_pulse_residual_is_small() {
        let model = HysteresisCossModel::with_loop_area(47e-12, 450.0, 0.15e-6, 151).unwrap();
        let (capture, truth) = simulate_single_pulse(&model, &pulse_params(100e-9)).unwrap();
        let report = energy_balance(&capture, &truth).unwrap();
        let GroundTruth::SinglePulse(t) = &truth else {
            panic!()
        };
        assert!(report.residual.abs() <= 5e-3 * t.e_off);
    }

    #[test]
    fn truth_metadata_roundtrips() {
        let model = HysteresisCossModel::with_loop_area(47e-12, 450.0, 0.15e-6, 151).unwrap();
        let (capture, truth) = simulate_single_pulse(&model, &pulse_params(100e-9)).unwrap();
        let restored = GroundTruth::from_metadata(capture.metadata()).unwrap();
        assert_eq!(restored, truth);
    }
}
