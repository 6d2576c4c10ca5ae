//! Auditing reported dispatches: recompute losses, balance violations, and
//! costs from the outputs a source actually printed.
//!
//! Published dispatch tables often disagree with their own totals — rounded
//! outputs, stale loss figures, transposed digits.  The audit recomputes
//! everything from the per-unit outputs against the case data and reports
//!
//! ```text
//! violation = sum(p) - (demand + recalculated_loss)
//! ```
//!
//! so a positive violation over-generates and a negative one under-covers
//! the load.  Rows are ranked by |violation| descending, the order the
//! comparison tables use.

use crate::cost::total_cost;
use crate::error::ValidationError;
use crate::io::{ReportedFile, ReportedRow};
use crate::loss::transmission_loss;
use crate::model::SystemCase;

/// Reference CPU speed (GHz) for adjusted CPU times.
pub const ACT_REFERENCE_GHZ: f64 = 2.67;

/// One audited dispatch.
#[derive(Debug, Clone, serde::Serialize)]
pub struct AuditRow {
    pub method: String,
    pub p_mw: Vec<f64>,
    /// Loss the source itself reported, if any.
    pub reported_loss_mw: Option<f64>,
    /// Loss recomputed from the reported outputs.
    pub calc_loss_mw: f64,
    /// Demand plus the recalculated loss — what the outputs should sum to.
    pub required_mw: f64,
    pub output_mw: f64,
    pub violation_mw: f64,
    /// Cost the source claimed.
    pub claimed_cost: Option<f64>,
    /// Cost recomputed from the reported outputs.
    pub calc_cost: f64,
    pub cpu_time_s: Option<f64>,
    /// Adjusted CPU time, when the source stated its CPU speed and time.
    pub act: Option<f64>,
}

/// Options controlling one audit pass.
#[derive(Debug, Clone, Default)]
pub struct AuditOptions {
    /// Recompute cost without valve ripple even if the case has valve data
    /// (for auditing valve-free operating conditions).
    pub no_valve: bool,
    /// Ignore the case's loss model.
    pub no_loss: bool,
    /// Reference solver time for adjusted CPU times; rows with CPU data get
    /// an ACT only when this is set.
    pub act_ref_s: Option<f64>,
}

/// Adjusted CPU time: scales a source's reported time to the reference CPU
/// and normalises by the reference solver time on the same case:
/// `(ghz / 2.67) * (time / ref_time)`.
pub fn adjusted_cpu_time(cpu_ghz: f64, cpu_time_s: f64, ref_time_s: f64) -> f64 {
    (cpu_ghz / ACT_REFERENCE_GHZ) * (cpu_time_s / ref_time_s)
}

/// Audit a single dispatch vector against a case.
pub fn audit_dispatch(
    case: &SystemCase,
    method: &str,
    row: &ReportedRow,
    opts: &AuditOptions,
) -> Result<AuditRow, ValidationError> {
    if row.p_mw.len() != case.units.len() {
        return Err(ValidationError::DimensionMismatch {
            what: "reported dispatch length",
            expected: case.units.len(),
            found: row.p_mw.len(),
        });
    }
    let p = &row.p_mw;
    let calc_loss = match (&case.loss, opts.no_loss) {
        (Some(l), false) => transmission_loss(l, p),
        _ => 0.0,
    };
    let output: f64 = p.iter().sum();
    let required = case.demand_mw + calc_loss;
    let use_valve = case.has_valve() && !opts.no_valve;
    let act = match (row.cpu_ghz, row.cpu_time_s, opts.act_ref_s) {
        (Some(g), Some(t), Some(r)) if r > 0.0 => Some(adjusted_cpu_time(g, t, r)),
        _ => None,
    };
    Ok(AuditRow {
        method: method.to_string(),
        p_mw: p.clone(),
        reported_loss_mw: row.loss_mw,
        calc_loss_mw: calc_loss,
        required_mw: required,
        output_mw: output,
        violation_mw: output - required,
        claimed_cost: row.cost,
        calc_cost: total_cost(&case.units, p, use_valve),
        cpu_time_s: row.cpu_time_s,
        act,
    })
}

/// Audit every row of a reported-dispatch file, ranked by |violation|
/// descending.  The sort is stable, so rows tying on |violation| keep the
/// file's order.  File-level condition flags are honoured unless the caller
/// already set them.
pub fn audit_table(
    case: &SystemCase,
    file: &ReportedFile,
    opts: &AuditOptions,
) -> Result<Vec<AuditRow>, ValidationError> {
    let merged = AuditOptions {
        no_valve: opts.no_valve || file.no_valve.unwrap_or(false),
        no_loss: opts.no_loss || file.no_loss.unwrap_or(false),
        act_ref_s: opts.act_ref_s,
    };
    let mut rows = file
        .rows
        .iter()
        .map(|r| audit_dispatch(case, &r.method, r, &merged))
        .collect::<Result<Vec<_>, _>>()?;
    rows.sort_by(|a, b| {
        b.violation_mw
            .abs()
            .partial_cmp(&a.violation_mw.abs())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(rows)
}
