//! Continuous dispatch subproblems over fixed per-unit operating boxes.
//!
//! Once every unit is committed to one operating zone, its feasible range is
//! a closed box (the zone clipped by the ramp window) and the dispatch
//! problem becomes continuous.  Two solvers live here:
//!
//! * [`solve_lossless_quadratic`] / [`solve_box_quadratic`] — the classic
//!   equal-incremental-cost dispatch.  Marginal costs are affine, so the
//!   balance equation is solved to machine precision by bisecting the system
//!   marginal price; an outer bisection on the reserve multiplier handles a
//!   binding spinning-reserve constraint exactly.
//! * [`solve_nlp`] — the general case with Kron losses and valve-point
//!   ripple: multi-start projected subgradient descent on the power-balance
//!   manifold, followed by an active-set Newton polish.  Valve kinks are
//!   handled through one-sided derivative intervals, and candidate outputs
//!   snap onto kinks when the subdifferential certifies them.
//!
//! All randomness comes from a counter-seeded ChaCha stream per start, so
//! results are reproducible for a given seed regardless of thread count.

use crate::cost::{derivative_interval, kink_points, total_cost, unit_cost};
use crate::error::SolveError;
use crate::loss::{loss_gradient, transmission_loss};
use crate::model::{LossModel, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Tuning knobs for the continuous solvers.
#[derive(Debug, Clone)]
pub struct NlpOptions {
    /// Base RNG seed; start `k` draws from stream `k` of this seed.
    pub seed: u64,
    /// Number of multi-starts; `None` picks 8 (smooth) or 64 (valve).
    pub n_starts: Option<usize>,
    /// Power-balance tolerance in MW.
    pub balance_tol: f64,
    /// Stationarity tolerance on the scaled incremental-cost residual.
    pub kkt_tol: f64,
    /// Iteration cap for the descent phase of one start.
    pub max_iter: usize,
}

impl Default for NlpOptions {
    fn default() -> Self {
        NlpOptions {
            seed: 1,
            n_starts: None,
            balance_tol: 1e-9,
            kkt_tol: 1e-7,
            max_iter: 400,
        }
    }
}

/// Result of a continuous solve over fixed boxes.
#[derive(Debug, Clone)]
pub struct NlpSolution {
    pub p: Vec<f64>,
    pub cost: f64,
    /// System incremental cost at the solution.
    pub lambda: f64,
    /// Multiplier of the spinning-reserve constraint (zero when slack).
    pub reserve_mu: f64,
    pub converged: bool,
    pub starts_used: usize,
}

/// Spinning-reserve requirement attached to a subproblem.
#[derive(Debug, Clone, Copy)]
pub struct ReserveReq {
    pub requirement_mw: f64,
}

/// The reserve contribution of unit `u` drops with output once
/// `p > p_max - reserve_cap`; below that point it is pinned at the cap.
/// This returns that breakpoint (`-inf` for uncapped units, whose
/// contribution always moves with output).
fn reserve_breakpoint(u: &Unit) -> f64 {
    match u.reserve_cap {
        Some(cap) => u.p_max - cap,
        None => f64::NEG_INFINITY,
    }
}

fn total_reserve(units: &[Unit], p: &[f64]) -> f64 {
    units
        .iter()
        .zip(p)
        .map(|(u, &pi)| u.reserve_available(pi))
        .sum()
}

/// Output of unit `i` at system marginal price `lambda`, with a reserve
/// multiplier `mu` acting as a price step of height `mu` at the reserve
/// breakpoint.
fn unit_at_lambda(u: &Unit, lo: f64, hi: f64, mu: f64, lambda: f64) -> f64 {
    let x = reserve_breakpoint(u);
    let p = if u.a > 0.0 {
        let below = (lambda - u.b) / (2.0 * u.a);
        let above = (lambda - u.b - mu) / (2.0 * u.a);
        if below <= x {
            below
        } else if above >= x {
            above
        } else {
            x
        }
    } else {
        // Flat marginal cost: a step function of lambda.
        if lambda < u.b {
            lo
        } else if mu > 0.0 && lambda <= u.b + mu && x >= lo {
            x.min(hi)
        } else if lambda > u.b + mu {
            hi
        } else {
            lo
        }
    };
    p.clamp(lo, hi)
}

/// Equal-incremental-cost dispatch over boxes for a given reserve
/// multiplier.  Returns the dispatch and the balancing marginal price.
fn lambda_dispatch(
    units: &[Unit],
    boxes: &[(f64, f64)],
    demand: f64,
    mu: f64,
) -> Result<(Vec<f64>, f64), SolveError> {
    let sum_lo: f64 = boxes.iter().map(|b| b.0).sum();
    let sum_hi: f64 = boxes.iter().map(|b| b.1).sum();
    let span_tol = 1e-9 * (1.0 + demand.abs());
    if demand < sum_lo - span_tol || demand > sum_hi + span_tol {
        return Err(SolveError::Infeasible(format!(
            "demand {demand} MW outside box range [{sum_lo}, {sum_hi}] MW"
        )));
    }

    let mut lam_lo = f64::INFINITY;
    let mut lam_hi = f64::NEG_INFINITY;
    for (u, &(lo, hi)) in units.iter().zip(boxes) {
        lam_lo = lam_lo.min(2.0 * u.a * lo + u.b);
        lam_hi = lam_hi.max(2.0 * u.a * hi + u.b + mu);
    }
    lam_lo -= 1.0;
    lam_hi += 1.0;

    let total_at = |lam: f64| -> f64 {
        units
            .iter()
            .zip(boxes)
            .map(|(u, &(lo, hi))| unit_at_lambda(u, lo, hi, mu, lam))
            .sum()
    };
    for _ in 0..200 {
        let mid = 0.5 * (lam_lo + lam_hi);
        if total_at(mid) < demand {
            lam_lo = mid;
        } else {
            lam_hi = mid;
        }
    }
    let lambda = 0.5 * (lam_lo + lam_hi);
    let mut p: Vec<f64> = units
        .iter()
        .zip(boxes)
        .map(|(u, &(lo, hi))| unit_at_lambda(u, lo, hi, mu, lambda))
        .collect();

    // Distribute the bisection residual in index order so the balance holds
    // exactly; the residual is far below every stated tolerance, so this
    // cannot disturb optimality beyond machine noise.
    let mut residual = demand - p.iter().sum::<f64>();
    for (pi, &(lo, hi)) in p.iter_mut().zip(boxes) {
        if residual == 0.0 {
            break;
        }
        let delta = residual.clamp(lo - *pi, hi - *pi);
        *pi += delta;
        residual -= delta;
    }
    Ok((p, lambda))
}

/// Exact minimum-cost dispatch of quadratic units over boxes with no losses
/// and no reserve constraint.
pub fn solve_lossless_quadratic(
    units: &[Unit],
    boxes: &[(f64, f64)],
    demand: f64,
) -> Result<NlpSolution, SolveError> {
    let (p, lambda) = lambda_dispatch(units, boxes, demand, 0.0)?;
    let cost = total_cost(units, &p, false);
    Ok(NlpSolution {
        p,
        cost,
        lambda,
        reserve_mu: 0.0,
        converged: true,
        starts_used: 1,
    })
}

/// Exact lossless quadratic dispatch honouring a spinning-reserve
/// requirement, via bisection on the reserve multiplier.
pub fn solve_box_quadratic(
    units: &[Unit],
    boxes: &[(f64, f64)],
    demand: f64,
    reserve: Option<ReserveReq>,
) -> Result<NlpSolution, SolveError> {
    let mut sol = solve_lossless_quadratic(units, boxes, demand)?;
    let Some(req) = reserve else { return Ok(sol) };
    let need = req.requirement_mw;
    if need <= 0.0 || total_reserve(units, &sol.p) >= need - 1e-9 {
        return Ok(sol);
    }

    // Reserve short at mu = 0: raise the multiplier until the dispatch backs
    // enough units away from their headroom.
    let shortfall = |mu: f64| -> Result<(f64, Vec<f64>, f64), SolveError> {
        let (p, lambda) = lambda_dispatch(units, boxes, demand, mu)?;
        Ok((total_reserve(units, &p) - need, p, lambda))
    };
    let mut mu_hi = 1.0;
    loop {
        let (gap, _, _) = shortfall(mu_hi)?;
        if gap >= 0.0 {
            break;
        }
        mu_hi *= 4.0;
        if mu_hi > 1e12 {
            return Err(SolveError::Infeasible(format!(
                "spinning reserve {need} MW unattainable at demand {demand} MW"
            )));
        }
    }
    let mut mu_lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (mu_lo + mu_hi);
        let (gap, _, _) = shortfall(mid)?;
        if gap < 0.0 {
            mu_lo = mid;
        } else {
            mu_hi = mid;
        }
    }
    let (gap, p, lambda) = shortfall(mu_hi)?;
    if gap < -1e-6 {
        return Err(SolveError::Infeasible(format!(
            "spinning reserve {need} MW short by {} MW",
            -gap
        )));
    }
    sol.cost = total_cost(units, &p, false);
    sol.p = p;
    sol.lambda = lambda;
    sol.reserve_mu = mu_hi;
    Ok(sol)
}

// ---------------------------------------------------------------------------
// General subproblem: losses and/or valve ripple.
// ---------------------------------------------------------------------------

struct NlpContext<'a> {
    units: &'a [Unit],
    boxes: &'a [(f64, f64)],
    demand: f64,
    loss: Option<&'a LossModel>,
    use_valve: bool,
    /// Reserve multiplier of the outer loop (zero when the constraint is
    /// slack, which is the common case).
    mu: f64,
}

impl NlpContext<'_> {
    fn objective(&self, p: &[f64]) -> f64 {
        let mut c = total_cost(self.units, p, self.use_valve);
        if self.mu > 0.0 {
            for (u, &pi) in self.units.iter().zip(p) {
                let x = reserve_breakpoint(u);
                if pi > x {
                    c += self.mu * (pi - x);
                }
            }
        }
        c
    }

    /// Power-balance defect `sum(p) - demand - losses(p)` in MW.
    fn balance(&self, p: &[f64]) -> f64 {
        let gen: f64 = p.iter().sum();
        let loss = self.loss.map_or(0.0, |l| transmission_loss(l, p));
        gen - self.demand - loss
    }

    fn loss_grad(&self, p: &[f64]) -> Vec<f64> {
        match self.loss {
            Some(l) => loss_gradient(l, p),
            None => vec![0.0; p.len()],
        }
    }

    /// One-sided derivative interval of the unit objective (cost plus the
    /// reserve penalty ramp) at `p`.
    fn deriv_interval(&self, i: usize, p: f64) -> (f64, f64) {
        let u = &self.units[i];
        let (lo, hi) = self.boxes[i];
        let (mut dl, mut dh) = if self.use_valve {
            derivative_interval(u, p, lo, hi)
        } else {
            let d = 2.0 * u.a * p + u.b;
            (d, d)
        };
        if self.mu > 0.0 {
            let x = reserve_breakpoint(u);
            if p > x + 1e-12 {
                dl += self.mu;
                dh += self.mu;
            } else if (p - x).abs() <= 1e-12 {
                dh += self.mu;
            }
        }
        (dl, dh)
    }

    /// Second derivative of the smooth piece at `p` (clipped below to keep
    /// Newton steps descent-like on concave ripple pieces).
    fn curvature(&self, i: usize, p: f64) -> f64 {
        let u = &self.units[i];
        let mut h = 2.0 * u.a;
        if self.use_valve {
            if let Some(v) = u.valve {
                let t = v.f * (u.p_min - p);
                // d2/dp2 |e sin t| on a smooth piece = -e f^2 |sin t| sign...
                // the folded ripple has curvature -e f^2 sin t * sgn(sin t)
                // = -e f^2 |sin t|, always concave between kinks.
                h -= v.e * v.f * v.f * t.sin().abs();
            }
        }
        h
    }

    /// Restore exact power balance by a common clamped shift of all outputs.
    fn restore_balance(&self, p: &mut [f64]) -> Result<(), SolveError> {
        let shift_all = |p0: &[f64], t: f64| -> Vec<f64> {
            p0.iter()
                .zip(self.boxes)
                .map(|(&pi, &(lo, hi))| (pi + t).clamp(lo, hi))
                .collect()
        };
        let span = self
            .boxes
            .iter()
            .map(|&(lo, hi)| hi - lo)
            .fold(0.0f64, f64::max);
        let defect0 = self.balance(p);
        let mut t_lo = -(span + defect0.abs() + 1.0);
        let mut t_hi = span + defect0.abs() + 1.0;
        if self.balance(&shift_all(p, t_lo)) > 0.0 || self.balance(&shift_all(p, t_hi)) < 0.0 {
            return Err(SolveError::Infeasible(
                "power balance unreachable inside the operating boxes".into(),
            ));
        }
        for _ in 0..200 {
            let mid = 0.5 * (t_lo + t_hi);
            if self.balance(&shift_all(p, mid)) < 0.0 {
                t_lo = mid;
            } else {
                t_hi = mid;
            }
        }
        let t = 0.5 * (t_lo + t_hi);
        let shifted = shift_all(p, t);
        p.copy_from_slice(&shifted);
        // Polish the last crumbs onto an unclamped unit.
        let defect = self.balance(p);
        if defect != 0.0 {
            for (i, &(lo, hi)) in self.boxes.iter().enumerate() {
                let adj = (-defect).clamp(lo - p[i], hi - p[i]);
                if adj != 0.0 {
                    p[i] += adj;
                    break;
                }
            }
        }
        Ok(())
    }
}

/// Signed KKT defect of unit `i` at the candidate price `lambda`:
/// zero when stationary, positive when the unit wants to back down,
/// negative when it wants to ramp up.
fn kkt_defect(ctx: &NlpContext, i: usize, p: f64, eta: f64, lambda: f64) -> f64 {
    let (lo, hi) = ctx.boxes[i];
    let (dl, dh) = ctx.deriv_interval(i, p);
    let target = lambda * eta; // eta = 1 - dPL/dp_i
    let at_lo = p <= lo + 1e-11;
    let at_hi = p >= hi - 1e-11;
    if at_lo && at_hi {
        return 0.0;
    }
    if at_lo {
        return (dh - target).min(0.0); // may only increase
    }
    if at_hi {
        return (dl - target).max(0.0); // may only decrease
    }
    if dl - target > 0.0 {
        dl - target
    } else if dh - target < 0.0 {
        dh - target
    } else {
        0.0
    }
}

/// Least-squares system price over free units: minimises
/// `sum_i (d_i - lambda * eta_i)^2`.
fn least_squares_lambda(ctx: &NlpContext, p: &[f64], etas: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..p.len() {
        let (lo, hi) = ctx.boxes[i];
        if p[i] <= lo + 1e-11 || p[i] >= hi - 1e-11 {
            continue;
        }
        let (dl, dh) = ctx.deriv_interval(i, p[i]);
        let d = 0.5 * (dl + dh);
        num += d * etas[i];
        den += etas[i] * etas[i];
    }
    if den > 0.0 {
        num / den
    } else {
        // Everything pinned: any price that satisfies the bound conditions
        // works; take a capacity-weighted marginal cost as representative.
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..p.len() {
            let (dl, dh) = ctx.deriv_interval(i, p[i]);
            num += 0.5 * (dl + dh) * etas[i];
            den += etas[i] * etas[i];
        }
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    }
}

#[allow(clippy::needless_range_loop)] // elimination touches two rows at once
fn solve_dense(mut a: Vec<Vec<f64>>, mut rhs: Vec<f64>) -> Option<Vec<f64>> {
    let n = rhs.len();
    for col in 0..n {
        let (pivot, max) = (col..n)
            .map(|r| (r, a[r][col].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))?;
        if max < 1e-14 {
            return None;
        }
        a.swap(col, pivot);
        rhs.swap(col, pivot);
        for r in (col + 1)..n {
            let f = a[r][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut acc = rhs[r];
        for c in (r + 1)..n {
            acc -= a[r][c] * x[c];
        }
        x[r] = acc / a[r][r];
    }
    Some(x)
}

/// Snap outputs onto a valve kink when they are within `tol` of one; exact
/// kink placement keeps the subdifferential test meaningful.
fn snap_to_kinks(ctx: &NlpContext, p: &mut [f64], tol: f64) {
    if !ctx.use_valve {
        return;
    }
    for (i, u) in ctx.units.iter().enumerate() {
        let Some(v) = u.valve else { continue };
        if v.f <= 0.0 {
            continue;
        }
        let (lo, hi) = ctx.boxes[i];
        let step = std::f64::consts::PI / v.f;
        let k = ((p[i] - u.p_min) / step).round();
        if k < 0.0 {
            continue;
        }
        let kink = u.p_min + k * step;
        if (p[i] - kink).abs() <= tol && kink >= lo && kink <= hi {
            p[i] = kink;
        }
    }
}

/// Landing points worth jumping to inside unit `i`'s box: the box ends and
/// the ripple kinks.  The ripple curvature `e f^2` dwarfs the quadratic
/// curvature `2a` on this class of data, so every smooth piece is concave in
/// its interior and piece minima sit at (or within a Newton step of) these
/// points.
fn landing_points(ctx: &NlpContext, i: usize) -> Vec<f64> {
    let (lo, hi) = ctx.boxes[i];
    let mut pts = vec![lo, hi];
    pts.extend(kink_points(&ctx.units[i], lo, hi));
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-9);
    pts
}

/// Zero the power balance by moving only unit `k`, holding everything else
/// fixed.  Returns false when no output inside `k`'s box does it.  The
/// balance is increasing in `p[k]` whenever the loss gradient stays below
/// one, which every sane loss model satisfies.
fn rebalance_via(ctx: &NlpContext, p: &mut [f64], k: usize) -> bool {
    let (lo, hi) = ctx.boxes[k];
    p[k] = lo;
    let at_lo = ctx.balance(p);
    if at_lo > 0.0 {
        return at_lo <= 1e-9;
    }
    p[k] = hi;
    let at_hi = ctx.balance(p);
    if at_hi < 0.0 {
        return at_hi >= -1e-9;
    }
    let (mut x_lo, mut x_hi) = (lo, hi);
    for _ in 0..90 {
        let mid = 0.5 * (x_lo + x_hi);
        p[k] = mid;
        if ctx.balance(p) < 0.0 {
            x_lo = mid;
        } else {
            x_hi = mid;
        }
    }
    p[k] = x_hi;
    true
}

/// Pairwise-exchange refinement: shift power between unit pairs so outputs
/// can hop across ripple valleys that no monotone local phase will cross.
/// For each pair, one unit lands exactly on a box end or kink while the
/// other absorbs the difference on the true loss manifold.  Candidates are
/// screened with the pair's own cost change (cheap, lossless transfer
/// approximation) and the best few verified against the full objective;
/// a move is kept only when the full objective drops.  Candidate order is
/// fixed, so the refinement is deterministic.  Returns whether any move was
/// accepted; `p` stays balanced throughout.
fn pairwise_refine(ctx: &NlpContext, p: &mut [f64]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    // Per-unit term the screen optimizes: fuel cost plus the reserve ramp.
    let unit_term = |i: usize, x: f64| -> f64 {
        let u = &ctx.units[i];
        let mut c = unit_cost(u, x, ctx.use_valve);
        if ctx.mu > 0.0 {
            let bp = reserve_breakpoint(u);
            if x > bp {
                c += ctx.mu * (x - bp);
            }
        }
        c
    };
    let landings: Vec<Vec<f64>> = (0..n).map(|i| landing_points(ctx, i)).collect();
    let mut obj = ctx.objective(p);
    let mut improved = false;
    for i in 0..n {
        for j in (i + 1)..n {
            let base = unit_term(i, p[i]) + unit_term(j, p[j]);
            // (screen delta, enumeration index, fixed unit, landing, mover).
            let mut scored: Vec<(f64, usize, usize, f64, usize)> = Vec::new();
            let mut tag = 0usize;
            for (fixed, mover) in [(i, j), (j, i)] {
                let (m_lo, m_hi) = ctx.boxes[mover];
                for &x in &landings[fixed] {
                    tag += 1;
                    let t = x - p[fixed];
                    if t.abs() <= 1e-9 {
                        continue;
                    }
                    let m_land = p[mover] - t;
                    // Allow a margin for the loss change the screen ignores.
                    if m_land < m_lo - 1.0 || m_land > m_hi + 1.0 {
                        continue;
                    }
                    let m_land = m_land.clamp(m_lo, m_hi);
                    let delta = unit_term(fixed, x) + unit_term(mover, m_land) - base;
                    if delta < -1e-7 {
                        scored.push((delta, tag, fixed, x, mover));
                    }
                }
            }
            scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            // Verify the most promising transfers on the true objective.
            let mut best: Option<(f64, Vec<f64>)> = None;
            for &(_, _, fixed, x, mover) in scored.iter().take(5) {
                let mut trial = p.to_vec();
                trial[fixed] = x;
                if !rebalance_via(ctx, &mut trial, mover) {
                    continue;
                }
                let trial_obj = ctx.objective(&trial);
                if trial_obj < obj - 1e-9 * (1.0 + obj.abs())
                    && best.as_ref().is_none_or(|(b, _)| trial_obj < *b)
                {
                    best = Some((trial_obj, trial));
                }
            }
            if let Some((trial_obj, trial)) = best {
                p.copy_from_slice(&trial);
                obj = trial_obj;
                improved = true;
            }
        }
    }
    improved
}

/// Projected-descent phase: repeatedly rebalance and step against the KKT
/// defect until stationary or out of iterations.
fn descend(ctx: &NlpContext, p: &mut Vec<f64>, opts: &NlpOptions) -> Result<bool, SolveError> {
    ctx.restore_balance(p)?;
    let n = p.len();
    let mut obj = ctx.objective(p);
    for _ in 0..opts.max_iter {
        let g = ctx.loss_grad(p);
        let etas: Vec<f64> = g.iter().map(|gi| (1.0 - gi).max(1e-6)).collect();
        let lambda = least_squares_lambda(ctx, p, &etas);
        let mut defect = vec![0.0; n];
        let mut worst = 0.0f64;
        for i in 0..n {
            defect[i] = kkt_defect(ctx, i, p[i], etas[i], lambda);
            worst = worst.max(defect[i].abs() / (1.0 + lambda.abs()));
        }
        if worst <= opts.kkt_tol {
            return Ok(true);
        }

        // Scale the step by an estimate of the strongest curvature so the
        // quadratic part cannot overshoot.
        let h_max = (0..n)
            .map(|i| ctx.curvature(i, p[i]).abs())
            .fold(2e-6, f64::max);
        let mut alpha = 1.0 / h_max;
        let mut improved = false;
        for _ in 0..40 {
            let mut trial: Vec<f64> = (0..n)
                .map(|i| {
                    let (lo, hi) = ctx.boxes[i];
                    (p[i] - alpha * defect[i]).clamp(lo, hi)
                })
                .collect();
            snap_to_kinks(ctx, &mut trial, (alpha * 1e-3).min(1e-4));
            if ctx.restore_balance(&mut trial).is_ok() {
                let trial_obj = ctx.objective(&trial);
                if trial_obj < obj - 1e-13 * (1.0 + obj.abs()) {
                    *p = trial;
                    obj = trial_obj;
                    improved = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !improved {
            // No descent direction at line-search resolution: stationary up
            // to the non-smooth structure.
            return Ok(worst <= opts.kkt_tol.max(1e-5));
        }
    }
    Ok(false)
}

/// Units pinned by the polish phase: at a box bound or sitting on a kink.
#[derive(Clone, Copy, PartialEq)]
enum Pin {
    Free,
    Lo,
    Hi,
    Kink,
}

/// Active-set Newton refinement of a near-stationary point.  Returns the
/// final system price.
fn polish(ctx: &NlpContext, p: &mut Vec<f64>, opts: &NlpOptions) -> Result<(f64, bool), SolveError> {
    let n = p.len();
    let kink_tol = 1e-7;
    let mut pins = vec![Pin::Free; n];
    let classify = |pi: f64, i: usize| -> Pin {
        let (lo, hi) = ctx.boxes[i];
        if pi <= lo + 1e-11 {
            return Pin::Lo;
        }
        if pi >= hi - 1e-11 {
            return Pin::Hi;
        }
        if ctx.use_valve {
            if let Some(v) = ctx.units[i].valve {
                if v.f > 0.0 {
                    let step = std::f64::consts::PI / v.f;
                    let k = ((pi - ctx.units[i].p_min) / step).round();
                    let kink = ctx.units[i].p_min + k * step;
                    if k >= 0.0 && (pi - kink).abs() <= kink_tol {
                        return Pin::Kink;
                    }
                }
            }
        }
        Pin::Free
    };
    for i in 0..n {
        pins[i] = classify(p[i], i);
    }

    let mut lambda = {
        let g = ctx.loss_grad(p);
        let etas: Vec<f64> = g.iter().map(|gi| (1.0 - gi).max(1e-6)).collect();
        least_squares_lambda(ctx, p, &etas)
    };

    for _round in 0..60 {
        // Newton iterations on the free block at the current pin pattern.
        let free: Vec<usize> = (0..n).filter(|&i| pins[i] == Pin::Free).collect();
        let m = free.len();
        let mut newton_ok = m == 0;
        for _it in 0..40 {
            if m == 0 {
                break;
            }
            let g = ctx.loss_grad(p);
            let mut resid = vec![0.0; m + 1];
            for (r, &i) in free.iter().enumerate() {
                let (dl, dh) = ctx.deriv_interval(i, p[i]);
                resid[r] = 0.5 * (dl + dh) - lambda * (1.0 - g[i]);
            }
            resid[m] = ctx.balance(p);
            let norm0 = resid.iter().fold(0.0f64, |acc, r| acc.max(r.abs()));
            if norm0 <= opts.kkt_tol * (1.0 + lambda.abs()) + opts.balance_tol {
                newton_ok = true;
                break;
            }

            let mut jac = vec![vec![0.0; m + 1]; m + 1];
            for (r, &i) in free.iter().enumerate() {
                for (s, &j) in free.iter().enumerate() {
                    let mut v = if i == j { ctx.curvature(i, p[i]).max(1e-8) } else { 0.0 };
                    if let Some(l) = ctx.loss {
                        v += lambda * 2.0 * l.b[i][j] / l.base_mva;
                    }
                    jac[r][s] = v;
                }
                jac[r][m] = -(1.0 - g[i]);
                jac[m][r] = 1.0 - g[i];
            }
            jac[m][m] = 0.0;

            let Some(delta) = solve_dense(jac, resid.iter().map(|r| -r).collect()) else {
                break;
            };
            let mut s = 1.0;
            let mut accepted = false;
            for _bt in 0..30 {
                let mut trial = p.clone();
                for (r, &i) in free.iter().enumerate() {
                    let (lo, hi) = ctx.boxes[i];
                    trial[i] = (p[i] + s * delta[r]).clamp(lo, hi);
                }
                let trial_lambda = lambda + s * delta[m];
                let tg = ctx.loss_grad(&trial);
                let mut norm1 = ctx.balance(&trial).abs();
                for &i in &free {
                    let (dl, dh) = ctx.deriv_interval(i, trial[i]);
                    let r = 0.5 * (dl + dh) - trial_lambda * (1.0 - tg[i]);
                    norm1 = norm1.max(r.abs());
                }
                if norm1 < norm0 * (1.0 - 1e-4 * s) + 1e-15 {
                    *p = trial;
                    lambda = trial_lambda;
                    accepted = true;
                    break;
                }
                s *= 0.5;
            }
            if !accepted {
                break;
            }
        }

        // Re-pin: clamp captures, kink captures, and multiplier releases.
        let mut changed = false;
        for i in 0..n {
            let was = pins[i];
            if was == Pin::Free {
                let now = classify(p[i], i);
                if now != Pin::Free {
                    pins[i] = now;
                    changed = true;
                }
                continue;
            }
            // Release test against the current price.
            let g = ctx.loss_grad(p);
            let eta = (1.0 - g[i]).max(1e-6);
            let target = lambda * eta;
            let (dl, dh) = ctx.deriv_interval(i, p[i]);
            let release = match was {
                Pin::Lo => dh < target - opts.kkt_tol * (1.0 + lambda.abs()),
                Pin::Hi => dl > target + opts.kkt_tol * (1.0 + lambda.abs()),
                Pin::Kink => {
                    target < dl - opts.kkt_tol * (1.0 + lambda.abs())
                        || target > dh + opts.kkt_tol * (1.0 + lambda.abs())
                }
                Pin::Free => false,
            };
            if release {
                // Nudge off the pin so the classifier sees it as free.
                let (lo, hi) = ctx.boxes[i];
                let eps = 1e-9 * (1.0 + p[i].abs());
                p[i] = match was {
                    Pin::Lo => (p[i] + eps).min(hi),
                    Pin::Hi => (p[i] - eps).max(lo),
                    Pin::Kink => {
                        if target > dh {
                            (p[i] + eps).min(hi)
                        } else {
                            (p[i] - eps).max(lo)
                        }
                    }
                    Pin::Free => p[i],
                };
                pins[i] = Pin::Free;
                changed = true;
            }
        }
        if !changed && newton_ok {
            ctx.restore_balance(p)?;
            return Ok((lambda, true));
        }
    }
    ctx.restore_balance(p)?;
    Ok((lambda, false))
}

fn run_single_start(
    ctx: &NlpContext,
    start: usize,
    seed: u64,
    warm: &[f64],
    opts: &NlpOptions,
) -> Option<(f64, Vec<f64>, f64, bool)> {
    let mut p = if start == 0 {
        warm.to_vec()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(start as u64);
        ctx.boxes
            .iter()
            .map(|&(lo, hi)| {
                if hi > lo {
                    rng.gen_range(lo..=hi)
                } else {
                    lo
                }
            })
            .collect()
    };
    let descended = descend(ctx, &mut p, opts).ok()?;
    let (mut lambda, mut polished) = polish(ctx, &mut p, opts).ok()?;
    let mut best = (ctx.objective(&p), p.clone(), lambda, descended | polished);
    if ctx.use_valve {
        // Alternate exchange sweeps with Newton polish until neither moves.
        // The exchanges hop ripple basins; the polish settles each basin.
        for _ in 0..8 {
            if !pairwise_refine(ctx, &mut p) {
                break;
            }
            let after_swap = ctx.objective(&p);
            if after_swap < best.0 {
                best = (after_swap, p.clone(), lambda, descended | polished);
            }
            let Ok((l2, ok2)) = polish(ctx, &mut p, opts) else {
                break;
            };
            lambda = l2;
            polished = ok2;
            let after_polish = ctx.objective(&p);
            // Ties go to the polished point: its multiplier and convergence
            // flag describe the point actually returned (the usual case is a
            // swap landing on the optimum and the polish only re-deriving a
            // consistent price for it).
            if after_polish <= best.0 + 1e-9 * (1.0 + best.0.abs()) {
                best = (after_polish, p.clone(), lambda, descended | polished);
            }
        }
    }
    if !best.0.is_finite() {
        return None;
    }
    Some(best)
}

/// Solve the continuous dispatch over fixed boxes with optional losses,
/// valve ripple, and spinning reserve.
pub fn solve_nlp(
    units: &[Unit],
    boxes: &[(f64, f64)],
    demand: f64,
    loss: Option<&LossModel>,
    reserve: Option<ReserveReq>,
    use_valve: bool,
    opts: &NlpOptions,
) -> Result<NlpSolution, SolveError> {
    let has_valve = use_valve && units.iter().any(|u| u.valve.is_some());
    if loss.is_none() && !has_valve {
        return solve_box_quadratic(units, boxes, demand, reserve);
    }

    let solve_at_mu = |mu: f64| -> Result<NlpSolution, SolveError> {
        let ctx = NlpContext {
            units,
            boxes,
            demand,
            loss,
            use_valve: has_valve,
            mu,
        };
        let n_starts = opts
            .n_starts
            .unwrap_or(if has_valve { 64 } else { 8 })
            .max(1);

        // Warm start: lossless dispatch rebalanced onto the true manifold.
        let warm = solve_lossless_quadratic(units, boxes, demand)?.p;

        let candidates: Vec<(f64, Vec<f64>, f64, bool)> = if n_starts >= 8 {
            (0..n_starts)
                .into_par_iter()
                .filter_map(|k| run_single_start(&ctx, k, opts.seed, &warm, opts))
                .collect()
        } else {
            (0..n_starts)
                .filter_map(|k| run_single_start(&ctx, k, opts.seed, &warm, opts))
                .collect()
        };
        // Deterministic reduce: lowest cost, ties by earliest-start order of
        // the candidate list (the list preserves start order).
        let best = candidates
            .iter()
            .enumerate()
            .min_by(|(ia, a), (ib, b)| a.0.total_cmp(&b.0).then(ia.cmp(ib)))
            .map(|(_, c)| c.clone());
        let Some((_, p, lambda, converged)) = best else {
            return Err(SolveError::Infeasible(
                "no start produced a balanced dispatch".into(),
            ));
        };
        let cost = total_cost(units, &p, has_valve);
        Ok(NlpSolution {
            p,
            cost,
            lambda,
            reserve_mu: mu,
            converged,
            starts_used: n_starts,
        })
    };

    let base = solve_at_mu(0.0)?;
    let Some(req) = reserve else { return Ok(base) };
    let need = req.requirement_mw;
    if need <= 0.0 || total_reserve(units, &base.p) >= need - 1e-9 {
        return Ok(base);
    }

    // Binding reserve: bisect the multiplier like the quadratic solver, each
    // probe being a full multi-start solve.
    let mut mu_hi = 1.0;
    loop {
        let s = solve_at_mu(mu_hi)?;
        if total_reserve(units, &s.p) >= need {
            break;
        }
        mu_hi *= 4.0;
        if mu_hi > 1e10 {
            return Err(SolveError::Infeasible(format!(
                "spinning reserve {need} MW unattainable at demand {demand} MW"
            )));
        }
    }
    let mut mu_lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (mu_lo + mu_hi);
        let s = solve_at_mu(mid)?;
        if total_reserve(units, &s.p) < need {
            mu_lo = mid;
        } else {
            mu_hi = mid;
        }
    }
    let sol = solve_at_mu(mu_hi)?;
    if total_reserve(units, &sol.p) < need - 1e-6 {
        return Err(SolveError::Infeasible(format!(
            "spinning reserve {need} MW short at demand {demand} MW"
        )));
    }
    Ok(sol)
}
