//! Generating units, system cases, and structural validation.
//!
//! A case is a set of committed thermal units, a demand, an optional
//! spinning-reserve requirement, and an optional network-loss model.  Each
//! unit's feasible range is split into one or more operating zones by
//! prohibited bands; picking one zone per unit turns the non-convex dispatch
//! problem into a box-constrained continuous subproblem.

use crate::error::ValidationError;
use serde::{Deserialize, Serialize};

/// Valve-point ripple coefficients of a unit's cost curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValvePoint {
    pub e: f64, // ripple amplitude ($/h)
    pub f: f64, // ripple frequency (rad/MW)
}

/// One committed generating unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unit {
    pub id: u32,
    pub a: f64, // quadratic cost coefficient ($/MW^2 h)
    pub b: f64, // linear cost coefficient ($/MWh)
    pub c: f64, // no-load cost ($/h)
    pub valve: Option<ValvePoint>,
    pub p_min: f64, // lower generation limit (MW)
    pub p_max: f64, // upper generation limit (MW)
    pub p_prev: Option<f64>,     // previous-hour output (MW), anchors ramping
    pub ramp_up: Option<f64>,    // max increase from p_prev (MW/h)
    pub ramp_down: Option<f64>,  // max decrease from p_prev (MW/h)
    pub reserve_cap: Option<f64>, // max spinning-reserve contribution (MW)
    /// Feasible operating zones as ascending, disjoint `[lo, hi]` spans
    /// covering `[p_min, p_max]` minus the prohibited bands.  Always
    /// non-empty; a unit without prohibited bands has the single zone
    /// `[p_min, p_max]`.
    pub zones: Vec<(f64, f64)>,
}

impl Unit {
    /// Ramp-constrained operating range: the intersection of `[p_min, p_max]`
    /// with `[p_prev - ramp_down, p_prev + ramp_up]`.  Units without ramp
    /// data keep their full range.
    pub fn effective_bounds(&self) -> (f64, f64) {
        let mut lo = self.p_min;
        let mut hi = self.p_max;
        if let Some(prev) = self.p_prev {
            if let Some(dr) = self.ramp_down {
                lo = lo.max(prev - dr);
            }
            if let Some(ur) = self.ramp_up {
                hi = hi.min(prev + ur);
            }
        }
        (lo, hi)
    }

    /// Zones clipped to the ramp window, keeping their original indices and
    /// dropping any zone the window empties.
    pub fn effective_zones(&self) -> Vec<(usize, f64, f64)> {
        let (lo, hi) = self.effective_bounds();
        self.zones
            .iter()
            .enumerate()
            .filter_map(|(k, &(zl, zh))| {
                let l = zl.max(lo);
                let h = zh.min(hi);
                (l <= h).then_some((k, l, h))
            })
            .collect()
    }

    /// Spinning reserve the unit can provide at output `p`:
    /// `min(p_max - p, reserve_cap)`, never negative.
    pub fn reserve_available(&self, p: f64) -> f64 {
        let headroom = (self.p_max - p).max(0.0);
        match self.reserve_cap {
            Some(cap) => headroom.min(cap),
            None => headroom,
        }
    }

    /// Whether `p` lies inside some operating zone (never inside a
    /// prohibited band), within `tol`.
    pub fn in_some_zone(&self, p: f64, tol: f64) -> bool {
        self.zones
            .iter()
            .any(|&(lo, hi)| p >= lo - tol && p <= hi + tol)
    }

    /// Index of the zone containing `p`, picking the nearest zone when `p`
    /// sits inside a prohibited band.
    pub fn zone_of(&self, p: f64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, &(lo, hi)) in self.zones.iter().enumerate() {
            let d = if p < lo {
                lo - p
            } else if p > hi {
                p - hi
            } else {
                0.0
            };
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }
}

/// The Kron loss model: `P_L` in per-unit is `p'Bp + B0'p + B00` with `p`
/// in per-unit on `base_mva`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossModel {
    pub base_mva: f64,
    pub b: Vec<Vec<f64>>, // quadratic coefficients (per-unit)
    pub b0: Vec<f64>,     // linear coefficients (dimensionless)
    pub b00: f64,         // constant term (per-unit)
}

/// A complete dispatch problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemCase {
    pub name: String,
    pub demand_mw: f64,
    pub reserve_mw: Option<f64>,
    pub units: Vec<Unit>,
    pub loss: Option<LossModel>,
}

impl SystemCase {
    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    /// Copy of the case with the loss model removed.
    pub fn without_loss(&self) -> SystemCase {
        SystemCase {
            loss: None,
            ..self.clone()
        }
    }

    /// Copy of the case with all valve-point data removed.
    pub fn without_valve(&self) -> SystemCase {
        let mut c = self.clone();
        for u in &mut c.units {
            u.valve = None;
        }
        c
    }

    pub fn has_valve(&self) -> bool {
        self.units.iter().any(|u| u.valve.is_some())
    }
}

/// A case that passed [`validate_case`].  Solvers take this newtype so an
/// unvalidated case cannot reach the numerical layers.
#[derive(Debug, Clone)]
pub struct ValidatedCase {
    case: SystemCase,
    warnings: Vec<String>,
}

impl ValidatedCase {
    pub fn case(&self) -> &SystemCase {
        &self.case
    }

    /// Non-fatal issues found during validation (e.g. a symmetrised loss
    /// matrix).
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn into_case(self) -> SystemCase {
        self.case
    }
}

impl std::ops::Deref for ValidatedCase {
    type Target = SystemCase;
    fn deref(&self) -> &SystemCase {
        &self.case
    }
}

/// Check a case against the structural rules and return it wrapped in
/// [`ValidatedCase`].
///
/// An asymmetric loss matrix is replaced by its symmetric part
/// `(B + B') / 2` — the quadratic form is unchanged — with a warning rather
/// than an error.  Validation is idempotent: validating the contained case
/// again yields the same case and no new warnings.
pub fn validate_case(case: SystemCase) -> Result<ValidatedCase, ValidationError> {
    let mut case = case;
    let mut warnings = Vec::new();
    let n = case.units.len();

    if n == 0 {
        return Err(ValidationError::NoUnits);
    }
    if case.demand_mw.is_nan() || case.demand_mw <= 0.0 {
        return Err(ValidationError::NonPositiveDemand(case.demand_mw));
    }

    for u in &case.units {
        if u.p_min > u.p_max {
            return Err(ValidationError::InvertedLimits {
                unit: u.id,
                p_min: u.p_min,
                p_max: u.p_max,
            });
        }
        for (what, v) in [("a", u.a), ("p_min", u.p_min)] {
            if !v.is_finite() || (what == "a" && v < 0.0) {
                return Err(ValidationError::BadCoefficient { unit: u.id, what });
            }
        }
        if !u.b.is_finite() || !u.c.is_finite() || !u.p_max.is_finite() {
            return Err(ValidationError::BadCoefficient {
                unit: u.id,
                what: "cost or limit",
            });
        }
        if let Some(v) = u.valve {
            if !v.e.is_finite() || !v.f.is_finite() || v.e < 0.0 || v.f < 0.0 {
                return Err(ValidationError::BadCoefficient {
                    unit: u.id,
                    what: "valve e/f",
                });
            }
        }
        for r in [u.ramp_up, u.ramp_down, u.reserve_cap].into_iter().flatten() {
            if !r.is_finite() || r < 0.0 {
                return Err(ValidationError::BadCoefficient {
                    unit: u.id,
                    what: "ramp or reserve cap",
                });
            }
        }

        if u.zones.is_empty() {
            return Err(ValidationError::ZoneOutsideCapacity {
                unit: u.id,
                lo: f64::NAN,
                hi: f64::NAN,
            });
        }
        for (k, &(lo, hi)) in u.zones.iter().enumerate() {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return Err(ValidationError::OverlappingZones { unit: u.id, index: k });
            }
            if k > 0 && lo < u.zones[k - 1].1 {
                return Err(ValidationError::OverlappingZones { unit: u.id, index: k });
            }
        }
        let first = u.zones[0].0;
        let last = u.zones[u.zones.len() - 1].1;
        if first != u.p_min || last != u.p_max {
            return Err(ValidationError::ZoneOutsideCapacity {
                unit: u.id,
                lo: first,
                hi: last,
            });
        }

        let (lo, hi) = u.effective_bounds();
        if lo > hi {
            return Err(ValidationError::EmptyRampWindow { unit: u.id, lo, hi });
        }
        if u.effective_zones().is_empty() {
            return Err(ValidationError::EmptyRampWindow { unit: u.id, lo, hi });
        }
    }

    if let Some(loss) = &mut case.loss {
        if loss.b.len() != n {
            return Err(ValidationError::DimensionMismatch {
                what: "loss matrix B rows",
                expected: n,
                found: loss.b.len(),
            });
        }
        for row in &loss.b {
            if row.len() != n {
                return Err(ValidationError::DimensionMismatch {
                    what: "loss matrix B columns",
                    expected: n,
                    found: row.len(),
                });
            }
        }
        if loss.b0.len() != n {
            return Err(ValidationError::DimensionMismatch {
                what: "loss vector B0",
                expected: n,
                found: loss.b0.len(),
            });
        }
        let mut asymmetric = false;
        for i in 0..n {
            for j in (i + 1)..n {
                if loss.b[i][j] != loss.b[j][i] {
                    asymmetric = true;
                    let s = 0.5 * (loss.b[i][j] + loss.b[j][i]);
                    loss.b[i][j] = s;
                    loss.b[j][i] = s;
                }
            }
        }
        if asymmetric {
            warnings.push("loss matrix B was asymmetric; replaced by its symmetric part".into());
        }
    }

    let capacity: f64 = case.units.iter().map(|u| u.effective_bounds().1).sum();
    if capacity < case.demand_mw {
        return Err(ValidationError::InsufficientCapacity {
            demand: case.demand_mw,
            capacity,
        });
    }

    Ok(ValidatedCase { case, warnings })
}

/// Concatenate `n` copies of a lossless case, scaling demand and reserve by
/// `n`.  Unit ids are renumbered sequentially so the copies stay
/// distinguishable.
pub fn replicate_case(case: &SystemCase, n: usize) -> Result<SystemCase, ValidationError> {
    if case.loss.is_some() {
        return Err(ValidationError::HasLossModel);
    }
    let mut units = Vec::with_capacity(case.units.len() * n);
    for k in 0..n {
        for u in &case.units {
            let mut u = u.clone();
            u.id += (k * case.units.len()) as u32;
            units.push(u);
        }
    }
    Ok(SystemCase {
        name: if n == 1 {
            case.name.clone()
        } else {
            format!("{}-x{}", case.name, n)
        },
        demand_mw: case.demand_mw * n as f64,
        reserve_mw: case.reserve_mw.map(|r| r * n as f64),
        units,
        loss: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain_unit(id: u32, p_min: f64, p_max: f64) -> Unit {
        Unit {
            id,
            a: 0.01,
            b: 10.0,
            c: 100.0,
            valve: None,
            p_min,
            p_max,
            p_prev: None,
            ramp_up: None,
            ramp_down: None,
            reserve_cap: None,
            zones: vec![(p_min, p_max)],
        }
    }

    fn toy_case() -> SystemCase {
        SystemCase {
            name: "toy".into(),
            demand_mw: 100.0,
            reserve_mw: None,
            units: vec![plain_unit(1, 10.0, 80.0), plain_unit(2, 10.0, 80.0)],
            loss: None,
        }
    }

    #[test]
    fn ramp_window_intersects_limits() {
        let mut u = plain_unit(1, 100.0, 500.0);
        u.p_prev = Some(440.0);
        u.ramp_up = Some(80.0);
        u.ramp_down = Some(120.0);
        assert_eq!(u.effective_bounds(), (320.0, 500.0));
    }

    #[test]
    fn ramp_window_can_empty_a_zone() {
        let mut u = plain_unit(1, 0.0, 100.0);
        u.zones = vec![(0.0, 30.0), (50.0, 100.0)];
        u.p_prev = Some(90.0);
        u.ramp_down = Some(30.0);
        u.ramp_up = Some(10.0);
        let z = u.effective_zones();
        assert_eq!(z, vec![(1, 60.0, 100.0)]);
    }

    #[test]
    fn reserve_is_capped_headroom() {
        let mut u = plain_unit(1, 10.0, 100.0);
        assert_eq!(u.reserve_available(60.0), 40.0);
        u.reserve_cap = Some(25.0);
        assert_eq!(u.reserve_available(60.0), 25.0);
        assert_eq!(u.reserve_available(100.0), 0.0);
    }

    #[test]
    fn zone_lookup_handles_prohibited_band() {
        let mut u = plain_unit(1, 0.0, 100.0);
        u.zones = vec![(0.0, 40.0), (60.0, 100.0)];
        assert_eq!(u.zone_of(20.0), 0);
        assert_eq!(u.zone_of(80.0), 1);
        assert_eq!(u.zone_of(45.0), 0); // nearest
        assert!(!u.in_some_zone(50.0, 1e-9));
        assert!(u.in_some_zone(40.0, 1e-9));
    }

    #[test]
    fn validate_accepts_toy_and_is_idempotent() {
        let v = validate_case(toy_case()).unwrap();
        assert!(v.warnings().is_empty());
        let again = validate_case(v.case().clone()).unwrap();
        assert_eq!(again.case(), v.case());
        assert!(again.warnings().is_empty());
    }

    #[test]
    fn validate_rejects_overlapping_zones() {
        let mut c = toy_case();
        c.units[0].zones = vec![(10.0, 50.0), (40.0, 80.0)];
        assert!(matches!(
            validate_case(c),
            Err(ValidationError::OverlappingZones { unit: 1, index: 1 })
        ));
    }

    #[test]
    fn validate_rejects_inverted_zone_pair() {
        let mut c = toy_case();
        c.units[0].zones = vec![(50.0, 10.0)];
        assert!(matches!(
            validate_case(c),
            Err(ValidationError::OverlappingZones { unit: 1, index: 0 })
        ));
    }

    #[test]
    fn validate_rejects_zones_not_spanning_limits() {
        let mut c = toy_case();
        c.units[0].zones = vec![(10.0, 70.0)];
        assert!(matches!(
            validate_case(c),
            Err(ValidationError::ZoneOutsideCapacity { unit: 1, .. })
        ));
    }

    #[test]
    fn validate_rejects_undersized_loss_blocks() {
        let mut c = toy_case();
        c.loss = Some(LossModel {
            base_mva: 100.0,
            b: vec![vec![0.0; 2]; 3],
            b0: vec![0.0; 2],
            b00: 0.0,
        });
        assert!(matches!(
            validate_case(c),
            Err(ValidationError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn validate_symmetrises_loss_matrix_with_warning() {
        let mut c = toy_case();
        c.loss = Some(LossModel {
            base_mva: 100.0,
            b: vec![vec![1e-3, 2e-3], vec![4e-3, 1e-3]],
            b0: vec![0.0, 0.0],
            b00: 0.0,
        });
        let v = validate_case(c).unwrap();
        assert_eq!(v.warnings().len(), 1);
        let b = &v.case().loss.as_ref().unwrap().b;
        assert_eq!(b[0][1], 3e-3);
        assert_eq!(b[1][0], 3e-3);
    }

    #[test]
    fn validate_rejects_insufficient_capacity() {
        let mut c = toy_case();
        c.demand_mw = 500.0;
        assert!(matches!(
            validate_case(c),
            Err(ValidationError::InsufficientCapacity { .. })
        ));
    }

    #[test]
    fn replicate_scales_counts_and_demand() {
        let c = toy_case();
        let r = replicate_case(&c, 3).unwrap();
        assert_eq!(r.units.len(), 6);
        assert_eq!(r.demand_mw, 300.0);
        let ids: Vec<u32> = r.units.iter().map(|u| u.id).collect();
        assert_eq!(ids, vec![1, 2, 3, 4, 5, 6]);

        let one = replicate_case(&c, 1).unwrap();
        assert_eq!(one.units, c.units);
        assert_eq!(one.name, c.name);
    }

    #[test]
    fn replicate_refuses_lossy_cases() {
        let mut c = toy_case();
        c.loss = Some(LossModel {
            base_mva: 100.0,
            b: vec![vec![0.0; 2]; 2],
            b0: vec![0.0; 2],
            b00: 0.0,
        });
        assert!(replicate_case(&c, 2).is_err());
    }
}
