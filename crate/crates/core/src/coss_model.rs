//! Table-based output-capacitance model with separate charge and
//! discharge branches.
//!
//! Each branch is a strictly monotone piecewise-linear Q(V) table, so it
//! is invertible in both directions and every path integral ∫ v dq has an
//! exact closed form. The two branches share their endpoints, which makes
//! the full-span loop close and gives the model an analytic loop area to
//! test against. Setting both branches equal produces a hysteresis-free
//! capacitor.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("branch table needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("branch table must be strictly increasing in v and q (violated at index {index})")]
    NotMonotone { index: usize },
    #[error("branch endpoints differ: charge ({0:e}) vs discharge ({1:e})")]
    EndpointMismatch(f64, f64),
    #[error("branches cross between their endpoints")]
    BranchesCross,
    #[error("non-finite table entry")]
    NonFinite,
    #[error("requested loop area {area:e} J needs a charge gap larger than the base capacitance allows (max {max:e} J)")]
    AreaTooLarge { area: f64, max: f64 },
}

/// Which branch of the model a traversal follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// Followed while charge is increasing.
    Charge,
    /// Followed while charge is decreasing.
    Discharge,
}

/// One strictly monotone piecewise-linear Q(V) table.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchTable {
    v: Vec<f64>,
    q: Vec<f64>,
}

impl BranchTable {
    fn new(points: &[(f64, f64)]) -> Result<Self, ModelError> {
        if points.len() < 2 {
            return Err(ModelError::TooFewPoints(points.len()));
        }
        for (index, pair) in points.windows(2).enumerate() {
            if !pair[0].0.is_finite() || !pair[0].1.is_finite() {
                return Err(ModelError::NonFinite);
            }
            if pair[1].0 <= pair[0].0 || pair[1].1 <= pair[0].1 {
                return Err(ModelError::NotMonotone { index: index + 1 });
            }
        }
        let last = points.last().unwrap();
        if !last.0.is_finite() || !last.1.is_finite() {
            return Err(ModelError::NonFinite);
        }
        Ok(Self {
            v: points.iter().map(|p| p.0).collect(),
            q: points.iter().map(|p| p.1).collect(),
        })
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.v.iter().copied().zip(self.q.iter().copied())
    }

    fn segment_for_v(&self, v: f64) -> usize {
        // index i such that v is in [v[i], v[i+1]], clamped at the ends
        let n = self.v.len();
        let i = self.v.partition_point(|x| *x <= v);
        i.clamp(1, n - 1) - 1
    }

    fn segment_for_q(&self, q: f64) -> usize {
        let n = self.q.len();
        let i = self.q.partition_point(|x| *x <= q);
        i.clamp(1, n - 1) - 1
    }

    pub fn q_at(&self, v: f64) -> f64 {
        let i = self.segment_for_v(v);
        let frac = (v - self.v[i]) / (self.v[i + 1] - self.v[i]);
        self.q[i] + frac * (self.q[i + 1] - self.q[i])
    }

    pub fn v_at(&self, q: f64) -> f64 {
        let i = self.segment_for_q(q);
        let frac = (q - self.q[i]) / (self.q[i + 1] - self.q[i]);
        self.v[i] + frac * (self.v[i + 1] - self.v[i])
    }

    /// Segment slope dq/dv at voltage `v`.
    pub fn capacitance_at(&self, v: f64) -> f64 {
        let i = self.segment_for_v(v);
        (self.q[i + 1] - self.q[i]) / (self.v[i + 1] - self.v[i])
    }

    /// Segment slope dv/dq at charge `q`.
    pub fn dv_dq_at(&self, q: f64) -> f64 {
        let i = self.segment_for_q(q);
        (self.v[i + 1] - self.v[i]) / (self.q[i + 1] - self.q[i])
    }

    /// Exact ∫ v dq along the table polyline between two voltages.
    pub fn charge_energy_between(&self, v_from: f64, v_to: f64) -> f64 {
        if v_from == v_to {
            return 0.0;
        }
        if v_from > v_to {
            return -self.charge_energy_between(v_to, v_from);
        }
        let qa = self.q_at(v_from);
        let qb = self.q_at(v_to);
        let ia = self.segment_for_v(v_from);
        let ib = self.segment_for_v(v_to);
        let mut total = 0.0;
        let mut v_prev = v_from;
        let mut q_prev = qa;
        for node in (ia + 1)..=ib {
            let vn = self.v[node];
            let qn = self.q[node];
            if vn > v_prev && vn < v_to {
                total += 0.5 * (v_prev + vn) * (qn - q_prev);
                v_prev = vn;
                q_prev = qn;
            }
        }
        total += 0.5 * (v_prev + v_to) * (qb - q_prev);
        total
    }

    /// Exact full-span ∫ v dq.
    fn full_energy(&self) -> f64 {
        let mut total = 0.0;
        for i in 0..self.v.len() - 1 {
            total += 0.5 * (self.v[i] + self.v[i + 1]) * (self.q[i + 1] - self.q[i]);
        }
        total
    }

    pub fn v_min(&self) -> f64 {
        self.v[0]
    }

    pub fn v_max(&self) -> f64 {
        *self.v.last().unwrap()
    }

    pub fn q_min(&self) -> f64 {
        self.q[0]
    }

    pub fn q_max(&self) -> f64 {
        *self.q.last().unwrap()
    }
}

/// Two-branch hysteretic Q(V) model.
///
/// The charge branch is followed while charge increases, the discharge
/// branch while it decreases; direction reversals jump horizontally in
/// voltage at constant charge onto the other branch. Branches share both
/// endpoints so a full-span excursion closes the loop.
#[derive(Debug, Clone, PartialEq)]
pub struct HysteresisCossModel {
    charge: BranchTable,
    discharge: BranchTable,
}

impl HysteresisCossModel {
    pub fn new(
        charge_points: Vec<(f64, f64)>,
        discharge_points: Vec<(f64, f64)>,
    ) -> Result<Self, ModelError> {
        let charge = BranchTable::new(&charge_points)?;
        let discharge = BranchTable::new(&discharge_points)?;
        let tol_v = 1e-9 * (charge.v_max() - charge.v_min()).abs().max(1e-30);
        let tol_q = 1e-9 * (charge.q_max() - charge.q_min()).abs().max(1e-30);
        if (charge.v_min() - discharge.v_min()).abs() > tol_v
            || (charge.v_max() - discharge.v_max()).abs() > tol_v
        {
            return Err(ModelError::EndpointMismatch(
                charge.v_min(),
                discharge.v_min(),
            ));
        }
        if (charge.q_min() - discharge.q_min()).abs() > tol_q
            || (charge.q_max() - discharge.q_max()).abs() > tol_q
        {
            return Err(ModelError::EndpointMismatch(
                charge.q_min(),
                discharge.q_min(),
            ));
        }
        // branches may not cross between the shared endpoints
        let mut sign = 0i8;
        let mut check = |gap: f64| -> Result<(), ModelError> {
            if gap.abs() <= tol_q {
                return Ok(());
            }
            let s = if gap > 0.0 { 1 } else { -1 };
            if sign == 0 {
                sign = s;
            } else if sign != s {
                return Err(ModelError::BranchesCross);
            }
            Ok(())
        };
        for (v, q) in charge.points() {
            check(discharge.q_at(v) - q)?;
        }
        for (v, q) in discharge.points() {
            check(q - charge.q_at(v))?;
        }
        Ok(Self { charge, discharge })
    }

    /// Hysteresis-free model: both branches are the same line q = c * v.
    pub fn linear(c: f64, v_max: f64) -> Self {
        let points = vec![(0.0, 0.0), (v_max, c * v_max)];
        Self::new(points.clone(), points).expect("linear table is valid")
    }

    /// Dissipative two-branch model whose full-span loop area equals
    /// `loop_area` exactly (as integrated over the generated tables).
    ///
    /// The charge gap between the branches is a parabola in voltage that
    /// vanishes at both endpoints; its amplitude is calibrated against the
    /// discretized table so the area is exact by construction.
    pub fn with_loop_area(
        c_base: f64,
        v_max: f64,
        loop_area: f64,
        table_points: usize,
    ) -> Result<Self, ModelError> {
        let n = table_points.max(9);
        let gap_shape = |v: f64| v * (v_max - v);
        // area = integral of the gap over v, evaluated on the table grid
        // with the same trapezoid rule the loop integrals use
        let mut shape_area = 0.0;
        for k in 0..n - 1 {
            let v0 = v_max * k as f64 / (n - 1) as f64;
            let v1 = v_max * (k + 1) as f64 / (n - 1) as f64;
            shape_area += 0.5 * (gap_shape(v0) + gap_shape(v1)) * (v1 - v0);
        }
        let kappa = loop_area / shape_area;
        // strict monotonicity of both branches requires c_base to dominate
        // half the gap's slope everywhere
        let max_gap_slope = kappa * v_max; // |d/dv of kappa*v*(v_max - v)| peaks at the ends
        if c_base <= 0.5 * max_gap_slope {
            return Err(ModelError::AreaTooLarge {
                area: loop_area,
                max: 2.0 * c_base / v_max * shape_area,
            });
        }
        let mut charge = Vec::with_capacity(n);
        let mut discharge = Vec::with_capacity(n);
        for k in 0..n {
            let v = v_max * k as f64 / (n - 1) as f64;
            let gap = kappa * gap_shape(v);
            charge.push((v, c_base * v - 0.5 * gap));
            discharge.push((v, c_base * v + 0.5 * gap));
        }
        Self::new(charge, discharge)
    }

    pub fn branch(&self, which: Branch) -> &BranchTable {
        match which {
            Branch::Charge => &self.charge,
            Branch::Discharge => &self.discharge,
        }
    }

    pub fn v_max(&self) -> f64 {
        self.charge.v_max()
    }

    pub fn q_max(&self) -> f64 {
        self.charge.q_max()
    }

    /// Signed full-span loop area ∮ v dq for the charge-then-discharge
    /// traversal; positive values are dissipative.
    pub fn analytic_loop_area(&self) -> f64 {
        self.charge.full_energy() - self.discharge.full_energy()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn linear_model_roundtrips_charge_and_voltage() {
        let m = HysteresisCossModel::linear(47e-12, 400.0);
        let b = m.branch(Branch::Charge);
        assert_relative_eq!(b.q_at(200.0), 47e-12 * 200.0, max_relative = 1e-12);
        assert_relative_eq!(b.v_at(47e-12 * 123.0), 123.0, max_relative = 1e-12);
        assert_relative_eq!(b.capacitance_at(10.0), 47e-12, max_relative = 1e-12);
        assert_abs_diff_eq!(m.analytic_loop_area(), 0.0, epsilon = 1e-24);
    }

    #[test]
    fn charge_energy_matches_half_cv_squared() {
        let m = HysteresisCossModel::linear(47e-12, 400.0);
        let e = m.branch(Branch::Charge).charge_energy_between(0.0, 400.0);
        assert_relative_eq!(e, 0.5 * 47e-12 * 400.0 * 400.0, max_relative = 1e-12);
    }

    #[test]
    fn charge_energy_is_additive_across_nodes() {
        let m = HysteresisCossModel::with_loop_area(47e-12, 400.0, 0.189e-6, 41).unwrap();
        let b = m.branch(Branch::Charge);
        let whole = b.charge_energy_between(0.0, 400.0);
        let parts = b.charge_energy_between(0.0, 133.7) + b.charge_energy_between(133.7, 400.0);
        assert_relative_eq!(whole, parts, max_relative = 1e-12);
        // reversed direction flips the sign
        assert_relative_eq!(
            b.charge_energy_between(400.0, 0.0),
            -whole,
            max_relative = 1e-12
        );
    }

    #[test]
    fn calibrated_loop_area_is_exact() {
        for area in [0.189e-6, 0.05e-6, 1.0e-6] {
            let m = HysteresisCossModel::with_loop_area(47e-12, 400.0, area, 201).unwrap();
            assert_relative_eq!(m.analytic_loop_area(), area, max_relative = 1e-12);
        }
    }

    #[test]
    fn branches_share_endpoints_and_do_not_cross() {
        let m = HysteresisCossModel::with_loop_area(47e-12, 400.0, 0.189e-6, 101).unwrap();
        let c = m.branch(Branch::Charge);
        let d = m.branch(Branch::Discharge);
        assert_abs_diff_eq!(c.q_at(0.0), d.q_at(0.0), epsilon = 1e-24);
        assert_relative_eq!(c.q_at(400.0), d.q_at(400.0), max_relative = 1e-12);
        for k in 1..100 {
            let v = 4.0 * k as f64;
            assert!(c.q_at(v) <= d.q_at(v));
        }
    }

    #[test]
    fn oversized_area_is_rejected() {
        let err = HysteresisCossModel::with_loop_area(4e-12, 400.0, 1.0e-6, 101);
        assert!(matches!(err, Err(ModelError::AreaTooLarge { .. })));
    }

    #[test]
    fn crossing_branches_are_rejected() {
        let up = vec![(0.0, 0.0), (1.0, 1e-10), (2.0, 3e-10), (3.0, 4e-10)];
        let down = vec![(0.0, 0.0), (1.0, 2e-10), (2.0, 2.5e-10), (3.0, 4e-10)];
        assert!(matches!(
            HysteresisCossModel::new(up, down),
            Err(ModelError::BranchesCross)
        ));
    }

    #[test]
    fn nonmonotone_table_is_rejected() {
        let pts = vec![(0.0, 0.0), (1.0, 2e-10), (2.0, 1e-10)];
        assert!(matches!(
            BranchTable::new(&pts),
            Err(ModelError::NotMonotone { index: 2 })
        ));
    }
}
