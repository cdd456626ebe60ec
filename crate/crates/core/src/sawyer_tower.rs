//! Charge–voltage loop analysis for series-reference-capacitor captures.
//!
//! A Sawyer–Tower run puts the device under test in series with a known
//! reference capacitor; the reference voltage then reveals the device
//! charge. This module turns those captures into Q–V hysteresis loops,
//! splits them into charge/discharge branches, and computes branch
//! energies, loop-area hysteresis energy, and large-signal C(V) curves.
//!
//! Charge offsets are not physical in this measurement (the reference
//! capacitor's initial state is arbitrary), so loops are rebased and every
//! energy here depends only on charge differences.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::waveform::{same_grid, TimeWindow, Unit, Waveform, WaveformError};

/// Relative closure tolerance for loop endpoints, in units of loop span.
pub const CLOSURE_TOLERANCE: f64 = 1e-3;

/// Minimum voltage span below which a loop is treated as degenerate.
pub const MIN_LOOP_SPAN: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum LoopError {
    #[error(
        "loop endpoints do not coincide: dv = {dv:e} (tol {v_tol:e}), dq = {dq:e} (tol {q_tol:e})"
    )]
    NotClosed {
        dv: f64,
        dq: f64,
        v_tol: f64,
        q_tol: f64,
    },
    #[error("channels are not on the same time grid")]
    Misaligned(#[from] WaveformError),
    #[error("degenerate loop: {reason}")]
    DegenerateLoop { reason: String },
    #[error("branch is not monotone in voltage")]
    NonMonotoneBranch,
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("reference capacitance must be positive, got {0}")]
    NonPositiveCapacitance(f64),
    #[error("smoothing window must be odd and >= 1, got {0}")]
    InvalidSmoothing(usize),
    #[error("negative capacitance {c:e} at v = {v}")]
    NegativeCapacitance { v: f64, c: f64 },
}

/// One point of a charge-voltage trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QvPoint {
    pub v: f64,
    pub q: f64,
}

impl QvPoint {
    pub fn new(v: f64, q: f64) -> Self {
        Self { v, q }
    }
}

/// A charge-voltage trajectory over one excitation period.
///
/// `closed` is true when first and last points coincide within
/// [`CLOSURE_TOLERANCE`] of the loop spans; area computations require it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QvLoop {
    points: Vec<QvPoint>,
    closed: bool,
}

impl QvLoop {
    pub fn from_points(points: Vec<QvPoint>) -> Result<Self, LoopError> {
        if points.len() < 8 {
            return Err(LoopError::TooFewPoints {
                needed: 8,
                got: points.len(),
            });
        }
        let (v_span, q_span) = spans(&points);
        let first = points[0];
        let last = *points.last().unwrap();
        let closed = (first.v - last.v).abs() <= CLOSURE_TOLERANCE * v_span
            && (first.q - last.q).abs() <= CLOSURE_TOLERANCE * q_span;
        Ok(Self { points, closed })
    }

    pub fn points(&self) -> &[QvPoint] {
        &self.points
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn v_span(&self) -> f64 {
        spans(&self.points).0
    }

    pub fn q_span(&self) -> f64 {
        spans(&self.points).1
    }

    /// Cyclic rotation of the starting point; closure is unaffected.
    pub fn rotated(&self, offset: usize) -> QvLoop {
        let n = self.points.len();
        let k = offset % n;
        let mut points = Vec::with_capacity(n);
        points.extend_from_slice(&self.points[k..]);
        points.extend_from_slice(&self.points[..k]);
        QvLoop {
            points,
            closed: self.closed,
        }
    }

    /// Traversal-reversed copy.
    pub fn reversed(&self) -> QvLoop {
        let mut points = self.points.clone();
        points.reverse();
        QvLoop {
            points,
            closed: self.closed,
        }
    }
}

fn spans(points: &[QvPoint]) -> (f64, f64) {
    let mut v_min = f64::INFINITY;
    let mut v_max = f64::NEG_INFINITY;
    let mut q_min = f64::INFINITY;
    let mut q_max = f64::NEG_INFINITY;
    for p in points {
        v_min = v_min.min(p.v);
        v_max = v_max.max(p.v);
        q_min = q_min.min(p.q);
        q_max = q_max.max(p.q);
    }
    (v_max - v_min, q_max - q_min)
}

/// The two monotone halves of a closed loop. The charge branch rises in
/// voltage, the discharge branch falls; they share endpoint voltages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchPair {
    pub charge: Vec<QvPoint>,
    pub discharge: Vec<QvPoint>,
}

/// Orientation of a closed loop traversal. Dissipative traversals enclose
/// positive ∮ v dq.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LoopOrientation {
    Dissipative,
    Generative,
}

/// Loop-area energy with the traversal orientation recorded separately.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopEnergy {
    /// |∮ v dq| in joules.
    pub magnitude: f64,
    pub orientation: LoopOrientation,
}

/// Direction of a branch traversal in charge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraversalDirection {
    Charging,
    Discharging,
}

/// Branch integral ∫ v dq reported as a magnitude plus direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchEnergy {
    pub magnitude: f64,
    pub direction: TraversalDirection,
}

/// Large-signal capacitance curve, strictly increasing in voltage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CossCurve {
    entries: Vec<CossPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CossPoint {
    pub v: f64,
    pub c: f64,
}

impl CossCurve {
    fn new(entries: Vec<CossPoint>) -> Result<Self, LoopError> {
        for pair in entries.windows(2) {
            if pair[1].v <= pair[0].v {
                return Err(LoopError::NonMonotoneBranch);
            }
        }
        if let Some(p) = entries.iter().find(|p| p.c < 0.0) {
            return Err(LoopError::NegativeCapacitance { v: p.v, c: p.c });
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[CossPoint] {
        &self.entries
    }
}

/// Converts a reference-capacitor voltage into the accumulated charge
/// waveform: q(t) = c_ref * v_ref(t).
pub fn charge_from_reference(v_ref: &Waveform, c_ref: f64) -> Result<Waveform, LoopError> {
    if c_ref <= 0.0 || !c_ref.is_finite() {
        return Err(LoopError::NonPositiveCapacitance(c_ref));
    }
    if v_ref.unit() != Unit::Volts {
        return Err(LoopError::Misaligned(WaveformError::UnitMismatch {
            label: v_ref.label().to_string(),
            expected: "V",
            found: v_ref.unit().symbol(),
        }));
    }
    Ok(v_ref
        .transform(c_ref, 0.0, 0.0, Unit::Coulombs)
        .expect("c_ref > 0"))
}

/// Pairs device voltage with charge over one excitation period.
///
/// The loop is rebased so the charge at the global voltage minimum is
/// zero; only charge differences are physical in this measurement.
pub fn build_qv_loop(
    v_dut: &Waveform,
    q: &Waveform,
    period_window: &TimeWindow,
) -> Result<QvLoop, LoopError> {
    if !same_grid(v_dut, q) {
        return Err(LoopError::Misaligned(WaveformError::Misaligned {
            a: v_dut.label().to_string(),
            b: q.label().to_string(),
        }));
    }
    let eps = v_dut.dt() * 1e-6;
    let mut points = Vec::new();
    for k in 0..v_dut.len() {
        let t = v_dut.time_at(k);
        if t >= period_window.t_start() - eps && t <= period_window.t_end() + eps {
            points.push(QvPoint::new(v_dut.samples()[k], q.samples()[k]));
        }
    }
    if points.len() < 8 {
        return Err(LoopError::TooFewPoints {
            needed: 8,
            got: points.len(),
        });
    }
    let (v_span, q_span) = spans(&points);
    let first = points[0];
    let last = *points.last().unwrap();
    let dv = (first.v - last.v).abs();
    let dq = (first.q - last.q).abs();
    if dv > CLOSURE_TOLERANCE * v_span || dq > CLOSURE_TOLERANCE * q_span {
        return Err(LoopError::NotClosed {
            dv,
            dq,
            v_tol: CLOSURE_TOLERANCE * v_span,
            q_tol: CLOSURE_TOLERANCE * q_span,
        });
    }
    // rebase charge to zero at the voltage minimum
    let imin = argmin_v(&points);
    let q0 = points[imin].q;
    for p in &mut points {
        p.q -= q0;
    }
    QvLoop::from_points(points)
}

fn argmin_v(points: &[QvPoint]) -> usize {
    let mut best = 0;
    for (i, p) in points.iter().enumerate() {
        if p.v < points[best].v {
            best = i;
        }
    }
    best
}

fn argmax_v(points: &[QvPoint]) -> usize {
    let mut best = 0;
    for (i, p) in points.iter().enumerate() {
        if p.v > points[best].v {
            best = i;
        }
    }
    best
}

/// Splits a loop at its global voltage extrema (first occurrence breaks
/// ties). The cyclic segment with rising voltage becomes the charge
/// branch; the falling segment, the discharge branch.
pub fn split_branches(loop_: &QvLoop) -> Result<BranchPair, LoopError> {
    let points = loop_.points();
    let (v_span, _) = spans(points);
    if v_span < MIN_LOOP_SPAN {
        return Err(LoopError::DegenerateLoop {
            reason: format!("voltage span {v_span:e} below {MIN_LOOP_SPAN:e}"),
        });
    }
    let imin = argmin_v(points);
    let imax = argmax_v(points);

    let charge = cyclic_slice(points, imin, imax);
    let discharge = cyclic_slice(points, imax, imin);
    if charge.len() < 4 || discharge.len() < 4 {
        return Err(LoopError::DegenerateLoop {
            reason: format!(
                "branches have {} and {} points; need at least 4 each",
                charge.len(),
                discharge.len()
            ),
        });
    }
    Ok(BranchPair { charge, discharge })
}

fn cyclic_slice(points: &[QvPoint], from: usize, to: usize) -> Vec<QvPoint> {
    let n = points.len();
    let mut out = Vec::new();
    let mut i = from;
    loop {
        out.push(points[i]);
        if i == to {
            break;
        }
        i = (i + 1) % n;
    }
    out
}

/// Loop-area hysteresis energy |∮ v dq| by the shoelace rule over the
/// closed (q, v) polygon, with the traversal orientation reported.
pub fn hysteresis_energy(loop_: &QvLoop) -> Result<LoopEnergy, LoopError> {
    if !loop_.is_closed() {
        let points = loop_.points();
        let (v_span, q_span) = spans(points);
        let first = points[0];
        let last = *points.last().unwrap();
        return Err(LoopError::NotClosed {
            dv: (first.v - last.v).abs(),
            dq: (first.q - last.q).abs(),
            v_tol: CLOSURE_TOLERANCE * v_span,
            q_tol: CLOSURE_TOLERANCE * q_span,
        });
    }
    let points = loop_.points();
    let n = points.len();
    let mut signed = 0.0;
    for i in 0..n {
        let a = points[i];
        let b = points[(i + 1) % n];
        signed += 0.5 * (b.q - a.q) * (a.v + b.v);
    }
    let orientation = if signed >= 0.0 {
        LoopOrientation::Dissipative
    } else {
        LoopOrientation::Generative
    };
    Ok(LoopEnergy {
        magnitude: signed.abs(),
        orientation,
    })
}

/// Branch integral ∫ v dq over a voltage-monotone polyline, as a magnitude
/// with the traversal direction alongside.
pub fn branch_energy(branch: &[QvPoint]) -> Result<BranchEnergy, LoopError> {
    if branch.len() < 2 {
        return Err(LoopError::TooFewPoints {
            needed: 2,
            got: branch.len(),
        });
    }
    if !is_v_monotone(branch) {
        return Err(LoopError::NonMonotoneBranch);
    }
    let mut signed = 0.0;
    for pair in branch.windows(2) {
        signed += 0.5 * (pair[1].q - pair[0].q) * (pair[0].v + pair[1].v);
    }
    let direction = if branch.last().unwrap().q >= branch[0].q {
        TraversalDirection::Charging
    } else {
        TraversalDirection::Discharging
    };
    Ok(BranchEnergy {
        magnitude: signed.abs(),
        direction,
    })
}

fn is_v_monotone(branch: &[QvPoint]) -> bool {
    let rising = branch.windows(2).all(|p| p[1].v >= p[0].v);
    let falling = branch.windows(2).all(|p| p[1].v <= p[0].v);
    rising || falling
}

/// Large-signal capacitance dq/dv along a branch: central finite
/// differences on the branch grid (one-sided at the endpoints), then a
/// centered moving average over `smoothing_points` samples.
///
/// Falling branches are reversed and consecutive repeated voltages are
/// merged (charge averaged) before differencing.
pub fn coss_large_signal(
    branch: &[QvPoint],
    smoothing_points: usize,
) -> Result<CossCurve, LoopError> {
    if smoothing_points == 0 || smoothing_points.is_multiple_of(2) {
        return Err(LoopError::InvalidSmoothing(smoothing_points));
    }
    if branch.len() < 2 {
        return Err(LoopError::TooFewPoints {
            needed: 2,
            got: branch.len(),
        });
    }
    if !is_v_monotone(branch) {
        return Err(LoopError::NonMonotoneBranch);
    }
    let mut pts: Vec<QvPoint> = branch.to_vec();
    if pts.last().unwrap().v < pts[0].v {
        pts.reverse();
    }
    // merge consecutive points with identical voltage
    let mut dedup: Vec<QvPoint> = Vec::with_capacity(pts.len());
    let mut i = 0;
    while i < pts.len() {
        let v = pts[i].v;
        let mut q_sum = 0.0;
        let mut count = 0usize;
        while i < pts.len() && pts[i].v == v {
            q_sum += pts[i].q;
            count += 1;
            i += 1;
        }
        dedup.push(QvPoint::new(v, q_sum / count as f64));
    }
    if dedup.len() < 2 {
        return Err(LoopError::TooFewPoints {
            needed: 2,
            got: dedup.len(),
        });
    }
    for pair in dedup.windows(2) {
        if pair[1].v <= pair[0].v {
            return Err(LoopError::NonMonotoneBranch);
        }
    }

    let n = dedup.len();
    let mut raw = Vec::with_capacity(n);
    for k in 0..n {
        let (a, b) = if k == 0 {
            (dedup[0], dedup[1])
        } else if k == n - 1 {
            (dedup[n - 2], dedup[n - 1])
        } else {
            (dedup[k - 1], dedup[k + 1])
        };
        raw.push((b.q - a.q) / (b.v - a.v));
    }

    let half = smoothing_points / 2;
    let mut entries = Vec::with_capacity(n);
    for (k, point) in dedup.iter().enumerate() {
        let lo = k.saturating_sub(half);
        let hi = (k + half).min(n - 1);
        let avg = raw[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64;
        entries.push(CossPoint { v: point.v, c: avg });
    }
    CossCurve::new(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn charge_from_reference_scales_pointwise() {
        let v_ref = Waveform::new(0.0, 1e-9, vec![1.0; 16], Unit::Volts, "v_ref").unwrap();
        let q = charge_from_reference(&v_ref, 10e-9).unwrap();
        assert_eq!(q.unit(), Unit::Coulombs);
        for v in q.samples() {
            assert_relative_eq!(*v, 10e-9, max_relative = 1e-15);
        }
    }

    #[test]
    fn zero_reference_gives_zero_charge() {
        let v_ref = Waveform::new(0.0, 1e-9, vec![0.0; 16], Unit::Volts, "v_ref").unwrap();
        let q = charge_from_reference(&v_ref, 10e-9).unwrap();
        assert!(q.samples().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sine_reference_keeps_phase() {
        let n = 256;
        let samples: Vec<f64> = (0..n)
            .map(|k| (2.0 * std::f64::consts::PI * k as f64 / n as f64).sin())
            .collect();
        let v_ref = Waveform::new(0.0, 1e-9, samples.clone(), Unit::Volts, "v_ref").unwrap();
        let q = charge_from_reference(&v_ref, 4.7e-9).unwrap();
        for (s, qv) in samples.iter().zip(q.samples()) {
            assert_abs_diff_eq!(*qv, 4.7e-9 * s, epsilon = 1e-24);
        }
    }

    #[test]
    fn rejects_nonpositive_capacitance() {
        let v_ref = Waveform::new(0.0, 1e-9, vec![1.0; 8], Unit::Volts, "v_ref").unwrap();
        assert!(matches!(
            charge_from_reference(&v_ref, 0.0),
            Err(LoopError::NonPositiveCapacitance(_))
        ));
    }

    /// Rectangle in (v, q): 0..=100 V at q = 0, up to 1 nC at 100 V, back
    /// to 0 V at 1 nC, down to q = 0. Area = 100 V * 1 nC = 0.1 uJ.
    pub(crate) fn rectangle_loop() -> QvLoop {
        let mut points = Vec::new();
        let n = 10;
        for k in 0..n {
            points.push(QvPoint::new(100.0 * k as f64 / n as f64, 0.0));
        }
        for k in 0..n {
            points.push(QvPoint::new(100.0, 1e-9 * k as f64 / n as f64));
        }
        for k in 0..n {
            points.push(QvPoint::new(100.0 * (1.0 - k as f64 / n as f64), 1e-9));
        }
        for k in 0..n {
            points.push(QvPoint::new(0.0, 1e-9 * (1.0 - k as f64 / n as f64)));
        }
        points.push(QvPoint::new(0.0, 0.0));
        QvLoop::from_points(points).unwrap()
    }

    #[test]
    fn partial_period_window_is_not_closed() {
        // sine excitation of a linear capacitor, but the window only
        // covers 0.7 of the period: endpoints cannot coincide
        let n = 1000;
        let dt = 1e-9;
        let volts: Vec<f64> = (0..n)
            .map(|k| 200.0 * (1.0 - (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos()))
            .collect();
        let v = Waveform::new(0.0, dt, volts.clone(), Unit::Volts, "v_dut").unwrap();
        let q = Waveform::new(
            0.0,
            dt,
            volts.iter().map(|v| 47e-12 * v).collect(),
            Unit::Coulombs,
            "q",
        )
        .unwrap();
        let window = TimeWindow::new(0.0, 0.7 * n as f64 * dt).unwrap();
        assert!(matches!(
            build_qv_loop(&v, &q, &window),
            Err(LoopError::NotClosed { .. })
        ));
        // the full period closes
        let full = TimeWindow::new(0.0, (n - 1) as f64 * dt).unwrap();
        assert!(build_qv_loop(&v, &q, &full).unwrap().is_closed());
    }

    #[test]
    fn mismatched_grids_are_misaligned() {
        let v = Waveform::new(0.0, 1e-9, vec![0.0; 16], Unit::Volts, "v").unwrap();
        let q = Waveform::new(0.0, 2e-9, vec![0.0; 16], Unit::Coulombs, "q").unwrap();
        let window = TimeWindow::new(0.0, 10e-9).unwrap();
        assert!(matches!(
            build_qv_loop(&v, &q, &window),
            Err(LoopError::Misaligned(_))
        ));
    }

    #[test]
    fn rectangle_area_is_exact() {
        let loop_ = rectangle_loop();
        assert!(loop_.is_closed());
        let e = hysteresis_energy(&loop_).unwrap();
        assert_relative_eq!(e.magnitude, 0.1e-6, max_relative = 1e-12);
    }

    #[test]
    fn retraced_branch_encloses_nothing() {
        let mut points: Vec<QvPoint> = (0..=10)
            .map(|k| QvPoint::new(k as f64 * 10.0, k as f64 * 1e-10))
            .collect();
        let back: Vec<QvPoint> = points.iter().rev().skip(1).copied().collect();
        points.extend(back);
        let loop_ = QvLoop::from_points(points).unwrap();
        assert!(loop_.is_closed());
        let e = hysteresis_energy(&loop_).unwrap();
        assert_abs_diff_eq!(e.magnitude, 0.0, epsilon = 1e-20);
    }

    #[test]
    fn open_loop_rejects_area() {
        let points: Vec<QvPoint> = (0..=20)
            .map(|k| QvPoint::new(k as f64, k as f64 * 1e-10))
            .collect();
        let loop_ = QvLoop::from_points(points).unwrap();
        assert!(!loop_.is_closed());
        assert!(matches!(
            hysteresis_energy(&loop_),
            Err(LoopError::NotClosed { .. })
        ));
    }

    #[test]
    fn split_rectangle_spans_full_voltage() {
        let loop_ = rectangle_loop();
        let pair = split_branches(&loop_).unwrap();
        let v_span = |pts: &[QvPoint]| {
            let (vs, _) = super::spans(pts);
            vs
        };
        assert_relative_eq!(v_span(&pair.charge), 100.0, max_relative = 1e-12);
        assert_relative_eq!(v_span(&pair.discharge), 100.0, max_relative = 1e-12);
    }

    #[test]
    fn split_triangle_wave_loop_follows_sign_of_dv() {
        // triangle excitation of a linear capacitor: v up then down
        let mut points = Vec::new();
        let c = 47e-12;
        for k in 0..=50 {
            let v = 400.0 * k as f64 / 50.0;
            points.push(QvPoint::new(v, c * v));
        }
        for k in (0..50).rev() {
            let v = 400.0 * k as f64 / 50.0;
            points.push(QvPoint::new(v, c * v));
        }
        let loop_ = QvLoop::from_points(points).unwrap();
        let pair = split_branches(&loop_).unwrap();
        assert!(pair.charge.windows(2).all(|p| p[1].v >= p[0].v));
        assert!(pair.discharge.windows(2).all(|p| p[1].v <= p[0].v));
        assert_eq!(pair.charge.len(), 51);
    }

    #[test]
    fn monotone_data_is_degenerate() {
        let points: Vec<QvPoint> = (0..=20)
            .map(|k| QvPoint::new(k as f64, k as f64 * 1e-10))
            .collect();
        let loop_ = QvLoop::from_points(points).unwrap();
        assert!(matches!(
            split_branches(&loop_),
            Err(LoopError::DegenerateLoop { .. })
        ));
    }

    #[test]
    fn linear_branch_energy_is_half_cv_squared() {
        let c = 47e-12;
        let branch: Vec<QvPoint> = (0..=400)
            .map(|k| {
                let v = k as f64;
                QvPoint::new(v, c * v)
            })
            .collect();
        let e = branch_energy(&branch).unwrap();
        assert_relative_eq!(e.magnitude, 0.5 * c * 400.0 * 400.0, max_relative = 1e-12);
        assert_relative_eq!(e.magnitude, 3.760e-6, max_relative = 1e-3);
        assert_eq!(e.direction, TraversalDirection::Charging);
    }

    #[test]
    fn zero_span_branch_has_zero_energy() {
        let branch = vec![QvPoint::new(5.0, 0.0), QvPoint::new(5.0, 0.0)];
        let e = branch_energy(&branch).unwrap();
        assert_eq!(e.magnitude, 0.0);
    }

    #[test]
    fn branch_difference_equals_loop_area() {
        let loop_ = rectangle_loop();
        let pair = split_branches(&loop_).unwrap();
        let e_chg = branch_energy(&pair.charge).unwrap().magnitude;
        let e_dis = branch_energy(&pair.discharge).unwrap().magnitude;
        let area = hysteresis_energy(&loop_).unwrap().magnitude;
        let diff = (e_chg - e_dis).abs();
        assert_relative_eq!(diff, area, max_relative = 1e-9);
    }

    #[test]
    fn nonmonotone_branch_rejected() {
        let branch = vec![
            QvPoint::new(0.0, 0.0),
            QvPoint::new(2.0, 1e-10),
            QvPoint::new(1.0, 2e-10),
        ];
        assert!(matches!(
            branch_energy(&branch),
            Err(LoopError::NonMonotoneBranch)
        ));
    }

    #[test]
    fn linear_coss_curve_is_constant() {
        let c = 47e-12;
        let branch: Vec<QvPoint> = (0..=100)
            .map(|k| {
                let v = 4.0 * k as f64;
                QvPoint::new(v, c * v)
            })
            .collect();
        let curve = coss_large_signal(&branch, 5).unwrap();
        for p in curve.entries() {
            assert_relative_eq!(p.c, c, max_relative = 1e-12);
        }
    }

    #[test]
    fn quadratic_charge_gives_linear_capacitance() {
        let k_coef = 1e-12;
        let branch: Vec<QvPoint> = (0..=200)
            .map(|i| {
                let v = 2.0 * i as f64;
                QvPoint::new(v, 0.5 * k_coef * v * v)
            })
            .collect();
        let curve = coss_large_signal(&branch, 1).unwrap();
        let entries = curve.entries();
        for p in &entries[3..entries.len() - 3] {
            assert_relative_eq!(p.c, k_coef * p.v, max_relative = 1e-3);
        }
    }

    #[test]
    fn repeated_voltage_is_deduplicated() {
        let branch = vec![
            QvPoint::new(0.0, 0.0),
            QvPoint::new(1.0, 1e-10),
            QvPoint::new(1.0, 1.2e-10),
            QvPoint::new(2.0, 2e-10),
            QvPoint::new(3.0, 3e-10),
        ];
        let curve = coss_large_signal(&branch, 1).unwrap();
        let vs: Vec<f64> = curve.entries().iter().map(|p| p.v).collect();
        assert_eq!(vs, vec![0.0, 1.0, 2.0, 3.0]);
        assert!(vs.windows(2).all(|p| p[1] > p[0]));
    }

    #[test]
    fn even_smoothing_window_rejected() {
        let branch = vec![QvPoint::new(0.0, 0.0), QvPoint::new(1.0, 1e-10)];
        assert!(matches!(
            coss_large_signal(&branch, 4),
            Err(LoopError::InvalidSmoothing(4))
        ));
    }
}
