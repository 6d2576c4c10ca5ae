//! Case and reported-dispatch file formats.
//!
//! Case files are UTF-8 JSON.  Coefficients are written as plain decimal
//! literals; `serde_json` parses each literal once, correctly rounded to the
//! nearest `f64`, and serialises with the shortest round-tripping
//! representation, so published 4-decimal data survives a load/save cycle
//! bit-for-bit.

use crate::error::LoadError;
use crate::model::{LossModel, SystemCase, Unit, ValidatedCase, ValvePoint};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;

/// On-disk unit record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitFile {
    pub id: u32,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<f64>,
    pub p_min: f64,
    pub p_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_prev: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ramp_up: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ramp_down: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reserve_cap: Option<f64>,
    /// Feasible `[lo, hi]` spans; omitted means the single zone
    /// `[p_min, p_max]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zones: Option<Vec<[f64; 2]>>,
}

/// On-disk loss block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossFile {
    pub base_mva: f64,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "B0")]
    pub b0: Vec<f64>,
    #[serde(rename = "B00")]
    pub b00: f64,
}

/// On-disk case record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseFile {
    pub schema_version: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Vec<String>>,
    pub demand_mw: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reserve_mw: Option<f64>,
    pub units: Vec<UnitFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<LossFile>,
}

impl From<&SystemCase> for CaseFile {
    fn from(c: &SystemCase) -> Self {
        CaseFile {
            schema_version: SCHEMA_VERSION,
            name: c.name.clone(),
            provenance: None,
            demand_mw: c.demand_mw,
            reserve_mw: c.reserve_mw,
            units: c
                .units
                .iter()
                .map(|u| UnitFile {
                    id: u.id,
                    a: u.a,
                    b: u.b,
                    c: u.c,
                    e: u.valve.map(|v| v.e),
                    f: u.valve.map(|v| v.f),
                    p_min: u.p_min,
                    p_max: u.p_max,
                    p_prev: u.p_prev,
                    ramp_up: u.ramp_up,
                    ramp_down: u.ramp_down,
                    reserve_cap: u.reserve_cap,
                    zones: if u.zones == vec![(u.p_min, u.p_max)] {
                        None
                    } else {
                        Some(u.zones.iter().map(|&(l, h)| [l, h]).collect())
                    },
                })
                .collect(),
            loss: c.loss.as_ref().map(|l| LossFile {
                base_mva: l.base_mva,
                b: l.b.clone(),
                b0: l.b0.clone(),
                b00: l.b00,
            }),
        }
    }
}

impl CaseFile {
    pub fn into_case(self) -> SystemCase {
        SystemCase {
            name: self.name,
            demand_mw: self.demand_mw,
            reserve_mw: self.reserve_mw,
            units: self
                .units
                .into_iter()
                .map(|u| {
                    let zones = match &u.zones {
                        Some(zs) => zs.iter().map(|z| (z[0], z[1])).collect(),
                        None => vec![(u.p_min, u.p_max)],
                    };
                    Unit {
                        id: u.id,
                        a: u.a,
                        b: u.b,
                        c: u.c,
                        valve: match (u.e, u.f) {
                            (Some(e), Some(f)) => Some(ValvePoint { e, f }),
                            _ => None,
                        },
                        p_min: u.p_min,
                        p_max: u.p_max,
                        p_prev: u.p_prev,
                        ramp_up: u.ramp_up,
                        ramp_down: u.ramp_down,
                        reserve_cap: u.reserve_cap,
                        zones,
                    }
                })
                .collect(),
            loss: self.loss.map(|l| LossModel {
                base_mva: l.base_mva,
                b: l.b,
                b0: l.b0,
                b00: l.b00,
            }),
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, LoadError> {
    let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| LoadError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Load the raw case file without validation.
pub fn load_case_file(path: impl AsRef<Path>) -> Result<CaseFile, LoadError> {
    let path = path.as_ref();
    let file: CaseFile = read_json(path)?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(LoadError::SchemaVersion {
            path: path.display().to_string(),
            expected: SCHEMA_VERSION,
            found: file.schema_version,
        });
    }
    Ok(file)
}

/// Load and validate a case.
pub fn load_case(path: impl AsRef<Path>) -> Result<ValidatedCase, LoadError> {
    let file = load_case_file(path)?;
    Ok(crate::model::validate_case(file.into_case())?)
}

/// Write a case back to disk in the on-disk schema.
pub fn write_case(case: &SystemCase, path: impl AsRef<Path>) -> std::io::Result<()> {
    let file = CaseFile::from(case);
    let mut text = serde_json::to_string_pretty(&file).expect("case serialises");
    text.push('\n');
    std::fs::write(path, text)
}

/// One dispatch as reported by an external source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportedRow {
    pub method: String,
    pub p_mw: Vec<f64>,
    #[serde(default)]
    pub loss_mw: Option<f64>,
    #[serde(default)]
    pub cost: Option<f64>,
    #[serde(default)]
    pub cpu_ghz: Option<f64>,
    #[serde(default)]
    pub cpu_time_s: Option<f64>,
}

/// A file of reported dispatches to audit against a case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportedFile {
    #[serde(default)]
    pub case: Option<String>,
    #[serde(default)]
    pub provenance: Option<Vec<String>>,
    /// Condition flags: audit the rows with valve ripple or losses disabled
    /// even when the case carries that data.
    #[serde(default)]
    pub no_valve: Option<bool>,
    #[serde(default)]
    pub no_loss: Option<bool>,
    pub rows: Vec<ReportedRow>,
}

/// Load a reported-dispatch file.
pub fn load_reported(path: impl AsRef<Path>) -> Result<ReportedFile, LoadError> {
    read_json(path.as_ref())
}
