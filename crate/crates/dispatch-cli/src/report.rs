//! Run reports: the full record of one solve — conditions, dispatch,
//! self-audit, environment — rendered as an aligned text table or JSON,
//! plus the text renderer for audit tables.

use dispatch_core::audit::AuditRow;
use dispatch_core::{DispatchSolution, SystemCase};
use serde::Serialize;
use std::fmt::Write as _;

/// Round to table precision, collapsing values that would print as a
/// signed zero.
fn round4(v: f64) -> f64 {
    let r = (v * 1e4).round() / 1e4;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Which parts of the model were active for a run.
#[derive(Debug, Clone, Serialize)]
pub struct Conditions {
    pub loss: bool,
    pub valve: bool,
    pub ramp: bool,
    pub reserve: bool,
}

impl Conditions {
    pub fn of(case: &SystemCase) -> Conditions {
        Conditions {
            loss: case.loss.is_some(),
            valve: case.has_valve(),
            ramp: case
                .units
                .iter()
                .any(|u| u.p_prev.is_some() && (u.ramp_up.is_some() || u.ramp_down.is_some())),
            reserve: case.reserve_mw.is_some(),
        }
    }
}

/// Per-unit line of the dispatch table.
#[derive(Debug, Clone, Serialize)]
pub struct UnitRow {
    pub id: u32,
    pub p_mw: f64,
    /// Zone the output landed in, 1-based as operating zones are numbered
    /// in comparison tables.
    pub zone: usize,
    pub reserve_mw: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Environment {
    pub threads: usize,
    pub wall_time_s: f64,
    /// CPU clock when known; reports leave it null otherwise.
    pub cpu_ghz: Option<f64>,
}

/// Everything one `solve` run produced.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub case: String,
    pub path: String,
    pub conditions: Conditions,
    pub seed: u64,
    pub demand_mw: f64,
    pub reserve_req_mw: Option<f64>,
    pub units: Vec<UnitRow>,
    pub solution: DispatchSolution,
    /// Independent recomputation of loss/violation/cost from the outputs.
    pub self_audit: AuditRow,
    pub environment: Environment,
}

impl RunReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let sol = &self.solution;
        let _ = writeln!(out, "case       {} ({})", self.case, self.path);
        let onoff = |b: bool| if b { "on" } else { "off" };
        let _ = writeln!(
            out,
            "conditions loss={} valve={} ramp={} reserve={}  seed={}",
            onoff(self.conditions.loss),
            onoff(self.conditions.valve),
            onoff(self.conditions.ramp),
            onoff(self.conditions.reserve),
            self.seed
        );
        out.push('\n');
        let _ = writeln!(out, "  unit       P (MW)  zone       S (MW)");
        for u in &self.units {
            let _ = writeln!(
                out,
                "  {:>4}  {:>11.4}  {:>4}  {:>11.4}",
                u.id, u.p_mw, u.zone, u.reserve_mw
            );
        }
        let _ = writeln!(out, "  total {:>11.4}", sol.p.iter().sum::<f64>());
        out.push('\n');
        let _ = writeln!(out, "  demand    {:>12.4} MW", self.demand_mw);
        let _ = writeln!(out, "  loss      {:>12.4} MW", sol.loss_mw);
        let _ = writeln!(
            out,
            "  violation {:>12.4} MW  (self-audit {:.4})",
            round4(sol.violation_mw),
            round4(self.self_audit.violation_mw)
        );
        match self.reserve_req_mw {
            Some(req) => {
                let _ = writeln!(
                    out,
                    "  reserve   {:>12.4} MW available ({:.4} required)",
                    sol.reserve_available_mw, req
                );
            }
            None => {
                let _ = writeln!(
                    out,
                    "  reserve   {:>12.4} MW available (none required)",
                    sol.reserve_available_mw
                );
            }
        }
        let _ = writeln!(out, "  cost      {:>12.2} $/h", sol.cost);
        let _ = writeln!(out, "  lambda    {:>12.4} $/MWh", sol.lambda);
        out.push('\n');
        let _ = writeln!(
            out,
            "search     {} nodes, {} subproblems, {} starts{}{}",
            sol.stats.nodes_explored,
            sol.stats.subproblems_solved,
            sol.stats.starts_used,
            if sol.stats.root_shortcut {
                ", root relaxation optimal"
            } else {
                ""
            },
            if sol.converged {
                ""
            } else {
                "  [WARNING: not converged]"
            }
        );
        let _ = writeln!(
            out,
            "time       {:.2} s, {} thread(s)",
            self.environment.wall_time_s, self.environment.threads
        );
        for w in &sol.warnings {
            let _ = writeln!(out, "warning    {w}");
        }
        out
    }
}

/// Render audited rows as an aligned table, ranked as given (the audit
/// sorts by |violation| descending).
pub fn audit_text(case: &SystemCase, source: &str, rows: &[AuditRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "audit of {} against {} ({} rows, demand {:.1} MW)",
        source,
        case.name,
        rows.len(),
        case.demand_mw
    );
    out.push('\n');
    let name_w = rows
        .iter()
        .map(|r| r.method.len())
        .chain(std::iter::once("method".len()))
        .max()
        .unwrap_or(6);
    let has_rep_loss = rows.iter().any(|r| r.reported_loss_mw.is_some());
    let has_time = rows.iter().any(|r| r.cpu_time_s.is_some());
    let has_act = rows.iter().any(|r| r.act.is_some());
    let _ = write!(out, "  {:<name_w$}", "method");
    if has_rep_loss {
        let _ = write!(out, "  {:>11}", "rep loss");
    }
    let _ = write!(
        out,
        "  {:>11}  {:>11}  {:>11}  {:>9}  {:>12}  {:>12}",
        "calc loss", "output MW", "required", "viol MW", "claimed $/h", "calc $/h"
    );
    if has_time {
        let _ = write!(out, "  {:>8}", "time s");
    }
    if has_act {
        let _ = write!(out, "  {:>8}", "ACT");
    }
    out.push('\n');
    let opt = |v: Option<f64>, prec: usize, w: usize| match v {
        Some(x) => format!("{x:>w$.prec$}"),
        None => format!("{:>w$}", "--"),
    };
    for r in rows {
        let _ = write!(out, "  {:<name_w$}", r.method);
        if has_rep_loss {
            let _ = write!(out, "  {}", opt(r.reported_loss_mw, 4, 11));
        }
        let _ = write!(
            out,
            "  {:>11.4}  {:>11.4}  {:>11.4}  {:>+9.4}  {}  {:>12.2}",
            r.calc_loss_mw,
            r.output_mw,
            r.required_mw,
            round4(r.violation_mw),
            opt(r.claimed_cost, 2, 12),
            r.calc_cost
        );
        if has_time {
            let _ = write!(out, "  {}", opt(r.cpu_time_s, 2, 8));
        }
        if has_act {
            let _ = write!(out, "  {}", opt(r.act, 3, 8));
        }
        out.push('\n');
    }
    out
}
