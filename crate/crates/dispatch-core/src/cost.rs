//! Unit cost curves: smooth quadratic part plus the non-smooth valve-point
//! ripple.
//!
//! With valve points the fuel cost of a unit is
//!
//! ```text
//! F(p) = a p^2 + b p + c + | e sin(f (p_min - p)) |
//! ```
//!
//! The absolute value folds the sine, so `F` is piecewise smooth with kinks
//! wherever `sin(f (p_min - p)) = 0`, i.e. at `p = p_min + k pi / f`.  The
//! ripple vanishes at `p_min` and is non-negative everywhere, hence
//! `F(p) >= a p^2 + b p + c` with equality exactly at the kinks.

use crate::model::Unit;

/// Smooth quadratic fuel cost `a p^2 + b p + c` ($/h).
pub fn quadratic_cost(u: &Unit, p: f64) -> f64 {
    (u.a * p + u.b) * p + u.c
}

/// Full fuel cost including the valve-point ripple ($/h).  Falls back to the
/// quadratic cost for units without valve data.
pub fn valve_cost(u: &Unit, p: f64) -> f64 {
    let quad = quadratic_cost(u, p);
    match u.valve {
        Some(v) => quad + (v.e * (v.f * (u.p_min - p)).sin()).abs(),
        None => quad,
    }
}

/// Fuel cost under a solve-time valve switch.
pub fn unit_cost(u: &Unit, p: f64, use_valve: bool) -> f64 {
    if use_valve {
        valve_cost(u, p)
    } else {
        quadratic_cost(u, p)
    }
}

/// Total fuel cost of a dispatch ($/h).
pub fn total_cost(units: &[Unit], p: &[f64], use_valve: bool) -> f64 {
    units
        .iter()
        .zip(p)
        .map(|(u, &pi)| unit_cost(u, pi, use_valve))
        .sum()
}

/// Kinks of the valve ripple inside `[lo, hi]`: the points
/// `p_min + k pi / f` for integer `k >= 0`.  Sorted ascending; empty for
/// units without valve data or with zero ripple frequency.
pub fn kink_points(u: &Unit, lo: f64, hi: f64) -> Vec<f64> {
    let Some(v) = u.valve else { return Vec::new() };
    if v.f <= 0.0 || v.e == 0.0 {
        return Vec::new();
    }
    let step = std::f64::consts::PI / v.f;
    // First integer k with p_min + k*step >= lo (the ripple starts at p_min;
    // below p_min there is no operating range).
    let mut k = ((lo - u.p_min) / step).ceil().max(0.0) as u64;
    let mut out = Vec::new();
    loop {
        let p = u.p_min + k as f64 * step;
        if p > hi + 1e-12 {
            break;
        }
        if p >= lo - 1e-12 {
            out.push(p.clamp(lo, hi));
        }
        k += 1;
    }
    out
}

/// Derivative of the smooth piece of the full cost at `p`, taken on the side
/// indicated by `sign_hint` when `p` is exactly at a kink.
///
/// Away from kinks the ripple derivative is
/// `-e f cos(f (p_min - p)) * sign(sin(f (p_min - p)))`.
pub fn smooth_piece_derivative(u: &Unit, p: f64) -> f64 {
    let quad = 2.0 * u.a * p + u.b;
    let Some(v) = u.valve else { return quad };
    let t = v.f * (u.p_min - p);
    let s = t.sin();
    if s == 0.0 {
        // Exactly at a kink: report the right-hand derivative.
        return quad + v.e * v.f * t.cos().abs();
    }
    quad - v.e * v.f * t.cos() * s.signum()
}

/// One-sided derivative interval `[d_left, d_right]` of the full cost at
/// `p`, clipped to the range `[lo, hi]`.  Off the kinks both ends coincide
/// with [`smooth_piece_derivative`]; at a kink the interval spans the
/// subdifferential, and at the range ends the outward side is dropped.
pub fn derivative_interval(u: &Unit, p: f64, lo: f64, hi: f64) -> (f64, f64) {
    let quad = 2.0 * u.a * p + u.b;
    let Some(v) = u.valve else { return (quad, quad) };
    if v.f <= 0.0 || v.e == 0.0 {
        return (quad, quad);
    }
    let t = v.f * (u.p_min - p);
    let s = t.sin();
    let kink_tol = 1e-9 * v.f.max(1.0);
    let step = std::f64::consts::PI / v.f;
    let near_kink = ((u.p_min - p) / step - ((u.p_min - p) / step).round()).abs() * step
        < kink_tol.max(1e-9);
    if !near_kink && s != 0.0 {
        let d = quad - v.e * v.f * t.cos() * s.signum();
        return (d, d);
    }
    // At a kink the ripple slope jumps from -e f |cos t| to +e f |cos t|.
    let amp = v.e * v.f * t.cos().abs();
    let mut left = quad - amp;
    let mut right = quad + amp;
    if p <= lo + 1e-12 {
        left = right; // no feasible left side
    }
    if p >= hi - 1e-12 {
        right = quad - amp; // no feasible right side
        if p <= lo + 1e-12 {
            // Degenerate single-point range.
            left = quad;
            right = quad;
        }
    }
    if left > right {
        (right, left)
    } else {
        (left, right)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ValvePoint;
    use approx::assert_relative_eq;

    fn valve_unit() -> Unit {
        Unit {
            id: 1,
            a: 0.02,
            b: 8.0,
            c: 100.0,
            valve: Some(ValvePoint { e: 5.0, f: 0.5 }),
            p_min: 10.0,
            p_max: 40.0,
            p_prev: None,
            ramp_up: None,
            ramp_down: None,
            reserve_cap: None,
            zones: vec![(10.0, 40.0)],
        }
    }

    #[test]
    fn quadratic_matches_polynomial() {
        let u = valve_unit();
        assert_relative_eq!(quadratic_cost(&u, 20.0), 0.02 * 400.0 + 8.0 * 20.0 + 100.0);
    }

    #[test]
    fn ripple_vanishes_at_p_min_and_kinks() {
        let u = valve_unit();
        assert_relative_eq!(valve_cost(&u, 10.0), quadratic_cost(&u, 10.0));
        let step = std::f64::consts::PI / 0.5;
        let kink = 10.0 + step;
        assert_relative_eq!(
            valve_cost(&u, kink),
            quadratic_cost(&u, kink),
            epsilon = 1e-9
        );
    }

    #[test]
    fn valve_cost_dominates_quadratic() {
        let u = valve_unit();
        let mut p = 10.0;
        while p <= 40.0 {
            assert!(valve_cost(&u, p) >= quadratic_cost(&u, p) - 1e-12);
            p += 0.37;
        }
    }

    #[test]
    fn kinks_enumerated_in_range() {
        let u = valve_unit();
        let step = std::f64::consts::PI / 0.5; // ~6.283
        let ks = kink_points(&u, 10.0, 40.0);
        // 10, 16.28, 22.57, 28.85, 35.13 lie inside [10, 40].
        assert_eq!(ks.len(), 5);
        assert_relative_eq!(ks[0], 10.0);
        assert_relative_eq!(ks[1], 10.0 + step);
        assert!(ks.windows(2).all(|w| w[0] < w[1]));

        let mid = kink_points(&u, 12.0, 20.0);
        assert_eq!(mid.len(), 1);
        assert_relative_eq!(mid[0], 10.0 + step);

        let plain = Unit {
            valve: None,
            ..valve_unit()
        };
        assert!(kink_points(&plain, 10.0, 40.0).is_empty());
    }

    #[test]
    fn smooth_derivative_matches_finite_differences() {
        let u = valve_unit();
        let h = 1e-6;
        // Pick points away from kinks.
        for &p in &[12.0, 14.5, 19.0, 25.0, 33.0] {
            let fd = (valve_cost(&u, p + h) - valve_cost(&u, p - h)) / (2.0 * h);
            assert_relative_eq!(smooth_piece_derivative(&u, p), fd, max_relative = 1e-6);
        }
    }

    #[test]
    fn derivative_interval_brackets_kink() {
        let u = valve_unit();
        let step = std::f64::consts::PI / 0.5;
        let kink = 10.0 + step;
        let (lo, hi) = derivative_interval(&u, kink, 10.0, 40.0);
        assert!(lo < hi);
        let h = 1e-6;
        let d_left = (valve_cost(&u, kink) - valve_cost(&u, kink - h)) / h;
        let d_right = (valve_cost(&u, kink + h) - valve_cost(&u, kink)) / h;
        assert_relative_eq!(lo, d_left, max_relative = 1e-4);
        assert_relative_eq!(hi, d_right, max_relative = 1e-4);
    }

    #[test]
    fn derivative_interval_is_a_point_off_kinks() {
        let u = valve_unit();
        let (lo, hi) = derivative_interval(&u, 14.5, 10.0, 40.0);
        assert_eq!(lo, hi);
        assert_relative_eq!(lo, smooth_piece_derivative(&u, 14.5));
    }
}
