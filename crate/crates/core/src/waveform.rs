//! Time-series primitives for scope-style waveform math.
//!
//! A [`Waveform`] is a uniformly sampled channel: a start time, a fixed
//! sample step, and the sample values. Everything downstream is built on
//! the operations defined here: linear-interpolating resampling, affine
//! channel transforms (gain/offset/deskew), windowed trapezoidal
//! integration, and threshold-based switching-transient detection.
//!
//! All types are immutable after construction and all operations are pure,
//! so waveforms can be shared freely across threads.

use std::collections::BTreeMap;

use indexmap::IndexMap;
use thiserror::Error;

/// Number of consecutive in-band samples required before a transient
/// counts as settled.
pub const SETTLE_SAMPLES: usize = 10;

/// Physical unit tag carried by a waveform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Unit {
    Volts,
    Amperes,
    Coulombs,
    Watts,
    Dimensionless,
}

impl Unit {
    pub fn symbol(&self) -> &'static str {
        match self {
            Unit::Volts => "V",
            Unit::Amperes => "A",
            Unit::Coulombs => "C",
            Unit::Watts => "W",
            Unit::Dimensionless => "-",
        }
    }

    pub fn from_symbol(s: &str) -> Option<Unit> {
        match s {
            "V" => Some(Unit::Volts),
            "A" => Some(Unit::Amperes),
            "C" => Some(Unit::Coulombs),
            "W" => Some(Unit::Watts),
            "-" => Some(Unit::Dimensionless),
            _ => None,
        }
    }
}

impl std::fmt::Display for Unit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Error)]
pub enum WaveformError {
    #[error("sample step must be positive and finite, got {dt}")]
    NonPositiveStep { dt: f64 },
    #[error("waveform '{label}' needs at least {needed} samples, got {got}")]
    TooShort {
        label: String,
        needed: usize,
        got: usize,
    },
    #[error("waveform '{label}' contains a non-finite value at sample {index}")]
    NonFinite { label: String, index: usize },
    #[error("gain must be nonzero")]
    ZeroGain,
    #[error("window [{t_start}, {t_end}] not inside waveform span [{wf_start}, {wf_end}]")]
    WindowOutOfRange {
        t_start: f64,
        t_end: f64,
        wf_start: f64,
        wf_end: f64,
    },
    #[error("window start {t_start} must precede window end {t_end}")]
    InvalidWindow { t_start: f64, t_end: f64 },
    #[error(
        "invalid detection thresholds: require 0 < low ({low}) < high ({high}) < 1 and bus > 0"
    )]
    InvalidThresholds { low: f64, high: f64 },
    #[error("no transient found: signal never crosses the high threshold")]
    NoTransient,
    #[error("{count} qualifying transients found and no disambiguating window was given")]
    MultipleAmbiguous { count: usize },
    #[error("channels '{a}' and '{b}' are not on the same time grid")]
    Misaligned { a: String, b: String },
    #[error("channel '{label}' has unit {found} where {expected} was expected")]
    UnitMismatch {
        label: String,
        expected: &'static str,
        found: &'static str,
    },
}

/// A uniformly sampled real-valued time series.
///
/// Sample `k` corresponds to time `t0 + k * dt` exactly; there are no
/// per-sample timestamps. Construction rejects non-finite values so corrupt
/// scope exports fail fast.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    t0: f64,
    dt: f64,
    samples: Vec<f64>,
    unit: Unit,
    label: String,
}

impl Waveform {
    pub fn new(
        t0: f64,
        dt: f64,
        samples: Vec<f64>,
        unit: Unit,
        label: impl Into<String>,
    ) -> Result<Self, WaveformError> {
        let label = label.into();
        if dt <= 0.0 || !dt.is_finite() {
            return Err(WaveformError::NonPositiveStep { dt });
        }
        if samples.len() < 2 {
            return Err(WaveformError::TooShort {
                label,
                needed: 2,
                got: samples.len(),
            });
        }
        if !t0.is_finite() {
            return Err(WaveformError::NonFinite { label, index: 0 });
        }
        if let Some(index) = samples.iter().position(|v| !v.is_finite()) {
            return Err(WaveformError::NonFinite { label, index });
        }
        Ok(Self {
            t0,
            dt,
            samples,
            unit,
            label,
        })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Time of the last sample.
    pub fn t_end(&self) -> f64 {
        self.t0 + (self.samples.len() - 1) as f64 * self.dt
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn time_at(&self, index: usize) -> f64 {
        self.t0 + index as f64 * self.dt
    }

    /// Linearly interpolated value at time `t`, or `None` outside the span.
    pub fn value_at(&self, t: f64) -> Option<f64> {
        let eps = self.dt * 1e-9;
        if t < self.t0 - eps || t > self.t_end() + eps {
            return None;
        }
        let pos = (t - self.t0) / self.dt;
        let i = (pos.floor() as usize).min(self.samples.len() - 2);
        let frac = (pos - i as f64).clamp(0.0, 1.0);
        Some(self.samples[i] + frac * (self.samples[i + 1] - self.samples[i]))
    }

    /// Resamples onto a new uniform step over the same span, truncated to
    /// full steps. Values are linearly interpolated between neighboring
    /// samples; unit and label are preserved.
    pub fn resample_uniform(&self, dt_new: f64) -> Result<Waveform, WaveformError> {
        if dt_new <= 0.0 || !dt_new.is_finite() {
            return Err(WaveformError::NonPositiveStep { dt: dt_new });
        }
        if dt_new == self.dt {
            return Ok(self.clone());
        }
        let span = self.dt * (self.samples.len() - 1) as f64;
        let steps = (span / dt_new * (1.0 + 1e-12) + 1e-9).floor() as usize;
        if steps < 1 {
            return Err(WaveformError::TooShort {
                label: self.label.clone(),
                needed: 2,
                got: steps + 1,
            });
        }
        let mut out = Vec::with_capacity(steps + 1);
        for k in 0..=steps {
            let pos = k as f64 * dt_new / self.dt;
            let i = (pos.floor() as usize).min(self.samples.len() - 2);
            let frac = (pos - i as f64).clamp(0.0, 1.0);
            out.push(self.samples[i] + frac * (self.samples[i + 1] - self.samples[i]));
        }
        Waveform::new(self.t0, dt_new, out, self.unit, self.label.clone())
    }

    /// Resamples onto an explicit grid; the grid must lie inside this
    /// waveform's span.
    pub fn resample_onto(&self, t0: f64, dt: f64, len: usize) -> Result<Waveform, WaveformError> {
        if dt <= 0.0 || !dt.is_finite() {
            return Err(WaveformError::NonPositiveStep { dt });
        }
        let t_last = t0 + (len.saturating_sub(1)) as f64 * dt;
        let eps = self.dt * 1e-9;
        if t0 < self.t0 - eps || t_last > self.t_end() + eps {
            return Err(WaveformError::WindowOutOfRange {
                t_start: t0,
                t_end: t_last,
                wf_start: self.t0,
                wf_end: self.t_end(),
            });
        }
        let mut out = Vec::with_capacity(len);
        for k in 0..len {
            let t = t0 + k as f64 * dt;
            // in range by the check above
            out.push(self.value_at(t).expect("grid point inside span"));
        }
        Waveform::new(t0, dt, out, self.unit, self.label.clone())
    }

    /// Affine channel transform: values map to `gain * v + offset`, the
    /// time origin shifts by `time_shift` (probe deskew), and the unit tag
    /// is replaced.
    pub fn transform(
        &self,
        gain: f64,
        offset: f64,
        time_shift: f64,
        new_unit: Unit,
    ) -> Result<Waveform, WaveformError> {
        if gain == 0.0 {
            return Err(WaveformError::ZeroGain);
        }
        if !gain.is_finite() || !offset.is_finite() || !time_shift.is_finite() {
            return Err(WaveformError::NonFinite {
                label: self.label.clone(),
                index: 0,
            });
        }
        let samples = self.samples.iter().map(|v| gain * v + offset).collect();
        Waveform::new(
            self.t0 + time_shift,
            self.dt,
            samples,
            new_unit,
            self.label.clone(),
        )
    }

    /// Trapezoidal integral over a time window. Window edges falling
    /// between samples are handled by linearly interpolating the boundary
    /// values, so partial end cells contribute their exact trapezoid.
    pub fn integrate_trapezoid(&self, window: &TimeWindow) -> Result<f64, WaveformError> {
        let eps = self.dt * 1e-6;
        if window.t_start() < self.t0 - eps || window.t_end() > self.t_end() + eps {
            return Err(WaveformError::WindowOutOfRange {
                t_start: window.t_start(),
                t_end: window.t_end(),
                wf_start: self.t0,
                wf_end: self.t_end(),
            });
        }
        let ts = window.t_start().max(self.t0);
        let te = window.t_end().min(self.t_end());
        let pos_start = (ts - self.t0) / self.dt;
        let pos_end = (te - self.t0) / self.dt;
        let i0 = (pos_start - 1e-9).ceil().max(0.0) as usize;
        let i1 = ((pos_end + 1e-9).floor() as usize).min(self.samples.len() - 1);

        if i0 > i1 {
            // window falls entirely between two adjacent samples
            let va = self.value_at(ts).expect("inside span");
            let vb = self.value_at(te).expect("inside span");
            return Ok(0.5 * (va + vb) * (te - ts));
        }

        let mut total = 0.0;
        for k in i0..i1 {
            total += 0.5 * (self.samples[k] + self.samples[k + 1]) * self.dt;
        }
        // partial cell before the first full sample
        let t_i0 = self.time_at(i0);
        if t_i0 > ts {
            let va = self.value_at(ts).expect("inside span");
            total += 0.5 * (va + self.samples[i0]) * (t_i0 - ts);
        }
        // partial cell after the last full sample
        let t_i1 = self.time_at(i1);
        if te > t_i1 {
            let vb = self.value_at(te).expect("inside span");
            total += 0.5 * (self.samples[i1] + vb) * (te - t_i1);
        }
        Ok(total)
    }
}

/// Pointwise product of two grid-aligned waveforms.
///
/// Volts times amperes yields watts; any other combination is tagged
/// dimensionless.
pub fn multiply(a: &Waveform, b: &Waveform) -> Result<Waveform, WaveformError> {
    if !same_grid(a, b) {
        return Err(WaveformError::Misaligned {
            a: a.label.clone(),
            b: b.label.clone(),
        });
    }
    let unit = match (a.unit, b.unit) {
        (Unit::Volts, Unit::Amperes) | (Unit::Amperes, Unit::Volts) => Unit::Watts,
        _ => Unit::Dimensionless,
    };
    let samples = a
        .samples
        .iter()
        .zip(&b.samples)
        .map(|(x, y)| x * y)
        .collect();
    Waveform::new(
        a.t0,
        a.dt,
        samples,
        unit,
        format!("{}*{}", a.label, b.label),
    )
}

/// True when two waveforms share the same `(t0, dt, len)` grid within
/// rounding tolerance.
pub fn same_grid(a: &Waveform, b: &Waveform) -> bool {
    a.len() == b.len()
        && (a.dt - b.dt).abs() <= 1e-9 * a.dt.max(b.dt)
        && (a.t0 - b.t0).abs() <= 1e-9 * a.dt
}

/// A half-open analysis interval in seconds.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TimeWindow {
    t_start: f64,
    t_end: f64,
}

impl TimeWindow {
    pub fn new(t_start: f64, t_end: f64) -> Result<Self, WaveformError> {
        if !t_start.is_finite() || !t_end.is_finite() || t_start >= t_end {
            return Err(WaveformError::InvalidWindow { t_start, t_end });
        }
        Ok(Self { t_start, t_end })
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_start && t <= self.t_end
    }
}

/// A named set of time-aligned channels from one test run, simulated or
/// parsed, plus free-form metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Capture {
    channels: IndexMap<String, Waveform>,
    metadata: BTreeMap<String, String>,
}

impl Capture {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, wf: Waveform) {
        self.channels.insert(wf.label().to_string(), wf);
    }

    pub fn channel(&self, label: &str) -> Option<&Waveform> {
        self.channels.get(label)
    }

    pub fn channels(&self) -> impl Iterator<Item = (&str, &Waveform)> {
        self.channels.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn channel_count(&self) -> usize {
        self.channels.len()
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn set_metadata(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.insert(key.into(), value.into());
    }

    pub fn metadata_value(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(|s| s.as_str())
    }

    /// Resamples every channel onto the coarsest common step and the
    /// intersected time span, so all multi-channel math sees one grid.
    pub fn aligned(&self) -> Result<Capture, WaveformError> {
        let mut iter = self.channels.values();
        let first = match iter.next() {
            Some(wf) => wf,
            None => return Ok(self.clone()),
        };
        let mut dt = first.dt();
        let mut t0 = first.t0();
        let mut t_end = first.t_end();
        for wf in iter {
            dt = dt.max(wf.dt());
            t0 = t0.max(wf.t0());
            t_end = t_end.min(wf.t_end());
        }
        let steps = ((t_end - t0) / dt * (1.0 + 1e-12) + 1e-9).floor() as usize;
        if steps < 1 {
            return Err(WaveformError::TooShort {
                label: "aligned capture".into(),
                needed: 2,
                got: steps + 1,
            });
        }
        let mut out = Capture {
            channels: IndexMap::new(),
            metadata: self.metadata.clone(),
        };
        for wf in self.channels.values() {
            out.insert(wf.resample_onto(t0, dt, steps + 1)?);
        }
        Ok(out)
    }
}

/// Locates the turn-off transient of a rising drain-source voltage.
///
/// The window runs from the last upward crossing of `low_frac * bus`
/// preceding the first qualifying upward crossing of `high_frac * bus`,
/// extended until the signal has stayed within `(1 - high_frac) * bus` of
/// the bus for [`SETTLE_SAMPLES`] consecutive samples. A hysteresis band of
/// `(high_frac - low_frac) / 4 * bus` below the high threshold suppresses
/// noise re-triggering; more than one qualifying rise is an error.
pub fn detect_turnoff_window(
    v_ds: &Waveform,
    bus_voltage: f64,
    low_frac: f64,
    high_frac: f64,
) -> Result<TimeWindow, WaveformError> {
    detect_rising_transient(
        v_ds.samples(),
        v_ds.t0(),
        v_ds.dt(),
        bus_voltage,
        low_frac,
        high_frac,
    )
}

/// Mirrored threshold logic for the falling edge of a turn-on transient.
pub fn detect_turnon_window(
    v_ds: &Waveform,
    bus_voltage: f64,
    low_frac: f64,
    high_frac: f64,
) -> Result<TimeWindow, WaveformError> {
    let mirrored: Vec<f64> = v_ds.samples().iter().map(|v| bus_voltage - v).collect();
    detect_rising_transient(
        &mirrored,
        v_ds.t0(),
        v_ds.dt(),
        bus_voltage,
        low_frac,
        high_frac,
    )
}

fn detect_rising_transient(
    s: &[f64],
    t0: f64,
    dt: f64,
    bus: f64,
    low_frac: f64,
    high_frac: f64,
) -> Result<TimeWindow, WaveformError> {
    let thresholds_ok = low_frac > 0.0 && low_frac < high_frac && high_frac < 1.0;
    if !thresholds_ok || bus <= 0.0 || bus.is_nan() {
        return Err(WaveformError::InvalidThresholds {
            low: low_frac,
            high: high_frac,
        });
    }
    let v_low = low_frac * bus;
    let v_high = high_frac * bus;
    let hyst = (high_frac - low_frac) / 4.0 * bus;
    let band = (1.0 - high_frac) * bus;
    let time_at = |k: usize| t0 + k as f64 * dt;
    let cross_time = |k: usize, level: f64| {
        // k is the first index at or above `level`
        let frac = (level - s[k - 1]) / (s[k] - s[k - 1]);
        time_at(k - 1) + frac.clamp(0.0, 1.0) * dt
    };

    // qualifying upward crossings of the high threshold; after each one
    // the detector re-arms only once the signal has fallen back below
    // high - hyst
    let mut crossings = Vec::new();
    let mut armed = s[0] < v_high;
    for k in 1..s.len() {
        if armed && s[k - 1] < v_high && s[k] >= v_high {
            crossings.push(k);
            armed = false;
        } else if !armed && s[k] <= v_high - hyst {
            armed = true;
        }
    }
    match crossings.len() {
        0 => return Err(WaveformError::NoTransient),
        1 => {}
        count => return Err(WaveformError::MultipleAmbiguous { count }),
    }
    let k_high = crossings[0];

    // window start: last upward crossing of the low threshold before k_high
    let mut t_start = t0;
    for j in (1..=k_high).rev() {
        if s[j - 1] < v_low && s[j] >= v_low {
            t_start = cross_time(j, v_low);
            break;
        }
    }

    // window end: first run of SETTLE_SAMPLES consecutive samples within
    // the settling band around the bus
    let mut t_end = time_at(s.len() - 1);
    let mut run = 0usize;
    for (k, v) in s.iter().enumerate().skip(k_high) {
        if (v - bus).abs() <= band {
            run += 1;
            if run == SETTLE_SAMPLES {
                t_end = time_at(k);
                break;
            }
        } else {
            run = 0;
        }
    }

    TimeWindow::new(t_start, t_end)
}
