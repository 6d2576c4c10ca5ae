//! Benchmark harness: run every case in a suite directory under each of its
//! expected operating conditions and compare cost / loss / violation /
//! dispatch against the expected-value sidecars.
//!
//! Sidecars live at `<suite>/../expected/<case-stem>.solve.json` and store
//! published benchmark values with explicit tolerances, so regressions are
//! data, not code.  A case without a sidecar still runs (one default
//! condition) and reports its numbers without a verdict.

use anyhow::{Context, Result};
use dispatch_core::io::load_case;
use dispatch_core::subproblem::NlpOptions;
use dispatch_core::{solve, validate_case, SearchOptions};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// One expected operating condition of a case, with whichever checks the
/// sidecar carries.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct ExpectedRun {
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub no_loss: bool,
    #[serde(default)]
    pub no_valve: bool,
    #[serde(default)]
    pub cost: Option<f64>,
    #[serde(default)]
    pub cost_tol: Option<f64>,
    /// Upper bound on cost (non-convex benchmarks publish best-known values).
    #[serde(default)]
    pub cost_max: Option<f64>,
    #[serde(default)]
    pub loss_mw: Option<f64>,
    #[serde(default)]
    pub loss_tol: Option<f64>,
    #[serde(default)]
    pub max_violation_mw: Option<f64>,
    #[serde(default)]
    pub p_mw: Option<Vec<f64>>,
    #[serde(default)]
    pub p_tol: Option<f64>,
    /// Expected zone per unit id, 1-based on both sides.
    #[serde(default)]
    pub zone_pattern: Option<BTreeMap<String, usize>>,
}

#[derive(Debug, Clone, Deserialize)]
struct ExpectedFile {
    #[serde(default)]
    #[allow(dead_code)]
    case: Option<String>,
    runs: Vec<ExpectedRun>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Error,
    /// No expectations to check against.
    Ran,
}

/// One row of the consolidated table.
#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub case: String,
    pub condition: String,
    pub cost: Option<f64>,
    pub expected: Option<String>,
    pub loss_mw: Option<f64>,
    pub violation_mw: Option<f64>,
    pub time_s: f64,
    pub status: Status,
    /// One line per failed check, empty on a pass.
    pub details: Vec<String>,
}

fn expected_dir(suite: &Path) -> PathBuf {
    suite.parent().unwrap_or(Path::new("")).join("expected")
}

fn load_expected(suite: &Path, stem: &str) -> Result<Option<Vec<ExpectedRun>>> {
    let path = expected_dir(suite).join(format!("{stem}.solve.json"));
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading {}", path.display()))?;
    let file: ExpectedFile =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(Some(file.runs))
}

fn run_one(case_path: &Path, exp: &ExpectedRun, seed: u64, starts: Option<usize>) -> BenchRow {
    let stem = case_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let condition = exp.label.clone().unwrap_or_else(|| "default".to_string());
    let mut row = BenchRow {
        case: stem,
        condition,
        cost: None,
        expected: None,
        loss_mw: None,
        violation_mw: None,
        time_s: 0.0,
        status: Status::Ran,
        details: Vec::new(),
    };
    row.expected = match (exp.cost, exp.cost_tol, exp.cost_max) {
        (Some(c), Some(t), _) => Some(format!("{c:.2} ± {t}")),
        (Some(c), None, _) => Some(format!("{c:.2}")),
        (None, _, Some(m)) => Some(format!("<= {m:.2}")),
        _ => None,
    };

    let started = std::time::Instant::now();
    let solved = load_case(case_path)
        .map_err(anyhow::Error::from)
        .and_then(|case| {
            let mut sys = case.into_case();
            if exp.no_loss {
                sys = sys.without_loss();
            }
            if exp.no_valve {
                sys = sys.without_valve();
            }
            let case = validate_case(sys)?;
            let opts = SearchOptions {
                nlp: NlpOptions {
                    seed,
                    n_starts: starts,
                    ..NlpOptions::default()
                },
                ..SearchOptions::default()
            };
            Ok((solve(&case, &opts)?, case))
        });
    row.time_s = started.elapsed().as_secs_f64();

    let (sol, case) = match solved {
        Ok(pair) => pair,
        Err(err) => {
            row.status = Status::Error;
            row.details.push(format!("{err:#}"));
            return row;
        }
    };
    row.cost = Some(sol.cost);
    row.loss_mw = Some(sol.loss_mw);
    row.violation_mw = Some(sol.violation_mw);

    let mut checked = false;
    if let (Some(c), Some(t)) = (exp.cost, exp.cost_tol) {
        checked = true;
        if (sol.cost - c).abs() > t {
            row.details
                .push(format!("cost {:.4} outside {:.4} ± {}", sol.cost, c, t));
        }
    }
    if let Some(m) = exp.cost_max {
        checked = true;
        if sol.cost > m {
            row.details
                .push(format!("cost {:.4} above {:.4}", sol.cost, m));
        }
    }
    if let (Some(l), Some(t)) = (exp.loss_mw, exp.loss_tol) {
        checked = true;
        if (sol.loss_mw - l).abs() > t {
            row.details
                .push(format!("loss {:.4} outside {:.4} ± {}", sol.loss_mw, l, t));
        }
    }
    if let Some(v) = exp.max_violation_mw {
        checked = true;
        if sol.violation_mw.abs() > v {
            row.details
                .push(format!("violation {:.6} above {}", sol.violation_mw, v));
        }
    }
    if let (Some(p_exp), Some(t)) = (exp.p_mw.as_ref(), exp.p_tol) {
        checked = true;
        if p_exp.len() != sol.p.len() {
            row.details
                .push(format!("expected {} outputs, solved {}", p_exp.len(), sol.p.len()));
        } else {
            for (i, (&got, &want)) in sol.p.iter().zip(p_exp).enumerate() {
                if (got - want).abs() > t {
                    row.details
                        .push(format!("p[{}] {:.4} outside {:.4} ± {}", i + 1, got, want, t));
                }
            }
        }
    }
    if let Some(pattern) = &exp.zone_pattern {
        checked = true;
        for (id_str, &want) in pattern {
            let id: u32 = match id_str.parse() {
                Ok(v) => v,
                Err(_) => {
                    row.details
                        .push(format!("bad unit id {id_str:?} in zone pattern"));
                    continue;
                }
            };
            match case.units.iter().position(|u| u.id == id) {
                Some(i) => {
                    let got = sol.assignment[i] + 1;
                    if got != want {
                        row.details
                            .push(format!("unit {id} in zone {got}, expected {want}"));
                    }
                }
                None => row
                    .details
                    .push(format!("zone pattern names unknown unit {id}")),
            }
        }
    }

    row.status = if !checked {
        Status::Ran
    } else if row.details.is_empty() {
        Status::Pass
    } else {
        Status::Fail
    };
    row
}

/// Run the whole suite.  Cases execute in parallel; the table is assembled
/// in case order, so two runs with the same seed print identical cost and
/// violation columns.
pub fn run_suite(suite: &Path, seed: u64, starts: Option<usize>) -> Result<Vec<BenchRow>> {
    let mut cases: Vec<PathBuf> = std::fs::read_dir(suite)
        .with_context(|| format!("reading suite directory {}", suite.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "case"))
        .collect();
    cases.sort();
    anyhow::ensure!(!cases.is_empty(), "no .case files in {}", suite.display());

    let mut jobs: Vec<(PathBuf, ExpectedRun)> = Vec::new();
    for path in &cases {
        let stem = path.file_stem().unwrap_or_default().to_string_lossy();
        match load_expected(suite, &stem)? {
            Some(runs) => {
                for run in runs {
                    jobs.push((path.clone(), run));
                }
            }
            None => jobs.push((path.clone(), ExpectedRun::default())),
        }
    }

    Ok(jobs
        .par_iter()
        .map(|(path, exp)| run_one(path, exp, seed, starts))
        .collect())
}

pub fn table_text(suite: &Path, seed: u64, rows: &[BenchRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "suite {} — {} runs, seed {}",
        suite.display(),
        rows.len(),
        seed
    );
    out.push('\n');
    let case_w = rows
        .iter()
        .map(|r| r.case.len())
        .chain(std::iter::once(4))
        .max()
        .unwrap_or(4);
    let cond_w = rows
        .iter()
        .map(|r| r.condition.len())
        .chain(std::iter::once(9))
        .max()
        .unwrap_or(9);
    let exp_w = rows
        .iter()
        .map(|r| r.expected.as_deref().unwrap_or("--").len())
        .chain(std::iter::once(8))
        .max()
        .unwrap_or(8);
    let _ = writeln!(
        out,
        "  {:<case_w$}  {:<cond_w$}  {:>12}  {:<exp_w$}  {:>10}  {:>9}  {:>7}  status",
        "case", "condition", "cost $/h", "expected", "loss MW", "viol MW", "time s"
    );
    let optf = |v: Option<f64>, prec: usize, w: usize| match v {
        Some(x) => format!("{x:>w$.prec$}"),
        None => format!("{:>w$}", "--"),
    };
    for r in rows {
        let status = match r.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Error => "ERROR",
            Status::Ran => "----",
        };
        let _ = writeln!(
            out,
            "  {:<case_w$}  {:<cond_w$}  {}  {:<exp_w$}  {}  {}  {:>7.2}  {status}",
            r.case,
            r.condition,
            optf(r.cost, 2, 12),
            r.expected.as_deref().unwrap_or("--"),
            optf(r.loss_mw, 4, 10),
            optf(r.violation_mw, 4, 9),
            r.time_s
        );
    }
    let failed: Vec<&BenchRow> = rows
        .iter()
        .filter(|r| matches!(r.status, Status::Fail | Status::Error))
        .collect();
    if !failed.is_empty() {
        out.push('\n');
        for r in failed {
            for d in &r.details {
                let _ = writeln!(out, "  {} [{}]: {}", r.case, r.condition, d);
            }
        }
    }
    let count = |s: Status| rows.iter().filter(|r| r.status == s).count();
    out.push('\n');
    let _ = writeln!(
        out,
        "summary: {} passed, {} failed, {} errors, {} unchecked",
        count(Status::Pass),
        count(Status::Fail),
        count(Status::Error),
        count(Status::Ran)
    );
    out
}
