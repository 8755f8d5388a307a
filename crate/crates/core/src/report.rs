//! CSV and manifest output.
//!
//! Numbers are written with six decimals and a dot separator, negative zero
//! is written as zero, and column order is fixed, so identical runs produce
//! identical bytes.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::experiments::{ComparisonReport, RunMetrics, ScheduleRow, Simulation};
use crate::scenario::Scenario;
use crate::settlement::CostBreakdown;

pub const SCHEDULE_FILE: &str = "schedule.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const COMPARISON_FILE: &str = "comparison.csv";

pub const SCHEDULE_COLUMNS: [&str; 8] = [
    "entity_id",
    "t",
    "e_sch_kwh",
    "e_dch_kwh",
    "e_fch_kwh",
    "soe_kwh",
    "delivered_kwh",
    "imbalance_kwh",
];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Six decimals, dot separator, no negative zero.
pub fn fmt_num(x: f64) -> String {
    let s = format!("{x:.6}");
    if s.bytes().all(|b| matches!(b, b'-' | b'0' | b'.')) {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn schedule_csv(rows: &[ScheduleRow]) -> Vec<u8> {
    csv_bytes(
        &SCHEDULE_COLUMNS,
        rows.iter().map(|r| {
            vec![
                r.entity_id.clone(),
                r.t.to_string(),
                fmt_num(r.e_sch_kwh),
                fmt_num(r.e_dch_kwh),
                fmt_num(r.e_fch_kwh),
                fmt_num(r.soe_kwh),
                fmt_num(r.delivered_kwh),
                fmt_num(r.imbalance_kwh),
            ]
        }),
    )
}

/// One `field,value` row per cost component.
pub fn summary_csv(costs: &CostBreakdown) -> Vec<u8> {
    csv_bytes(
        &["field", "value"],
        CostBreakdown::FIELDS
            .iter()
            .zip(costs.values())
            .map(|(f, v)| vec![f.to_string(), fmt_num(v)]),
    )
}

fn bool_str(b: bool) -> String {
    b.to_string()
}

/// Rows of one issue: each seed of a stochastic variant (`run`) followed by
/// its `mean` and `std`, and a single `fixed` row for deterministic ones.
pub fn issue_csv(issue: u8, report: &ComparisonReport) -> Vec<u8> {
    let mut header = vec![
        "issue",
        "variant",
        "model",
        "boundary",
        "obc_known",
        "noise",
        "row_kind",
        "seed",
    ];
    header.extend(RunMetrics::FIELDS);
    let mut rows = Vec::new();
    for v in &report.variants {
        let c = &v.config;
        let lead = |kind: &str, seed: String| {
            vec![
                issue.to_string(),
                v.label.clone(),
                c.model.to_string(),
                c.boundary_policy.to_string(),
                bool_str(c.obc_known),
                bool_str(c.forecast_error),
                kind.to_string(),
                seed,
            ]
        };
        let with = |mut lead: Vec<String>, m: &RunMetrics| {
            lead.extend(m.values().iter().map(|&x| fmt_num(x)));
            lead
        };
        if v.is_stochastic() {
            for r in &v.runs {
                rows.push(with(lead("run", r.seed.to_string()), &r.metrics));
            }
            rows.push(with(lead("mean", String::new()), &v.mean));
            rows.push(with(lead("std", String::new()), &v.std));
        } else {
            rows.push(with(
                lead("fixed", v.runs[0].seed.to_string()),
                &v.runs[0].metrics,
            ));
        }
    }
    csv_bytes(&header, rows)
}

/// Mean minus the EV-based baseline under the same fees, per variant.
pub fn comparison_csv(reports: &[(u8, ComparisonReport)]) -> Vec<u8> {
    let mut header = vec!["issue", "variant"];
    header.extend(RunMetrics::FIELDS);
    let rows = reports.iter().flat_map(|(k, rep)| {
        rep.variants.iter().map(move |v| {
            let mut row = vec![k.to_string(), v.label.clone()];
            row.extend(v.delta_vs_evba.values().iter().map(|&x| fmt_num(x)));
            row
        })
    });
    csv_bytes(&header, rows)
}

/// SHA-256 of the scenario as compact JSON with sorted keys.
pub fn scenario_hash(scenario: &Scenario) -> String {
    let value = serde_json::to_value(scenario).expect("scenario serializes");
    let canonical = serde_json::to_string(&value).expect("value serializes");
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Everything needed to repeat a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command_line: Vec<String>,
    pub scenario_sha256: String,
    /// Settings of the command, as given.
    pub config: serde_json::Value,
    pub seed: u64,
    pub created_utc: String,
    /// The scenario as loaded, before fee toggles are applied.
    pub scenario: Scenario,
}

impl RunManifest {
    pub fn new(
        command_line: Vec<String>,
        scenario: &Scenario,
        config: &impl Serialize,
        seed: u64,
    ) -> Self {
        Self {
            tool: "emob".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command_line,
            scenario_sha256: scenario_hash(scenario),
            config: serde_json::to_value(config).expect("config serializes"),
            seed,
            created_utc: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            scenario: scenario.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn load(dir: &Path) -> Result<Self, ReportError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| ReportError::Format {
            path,
            message: e.to_string(),
        })
    }
}

/// Files of a finished run, written only once everything is computed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OutputSet {
    pub files: Vec<(String, Vec<u8>)>,
}

impl OutputSet {
    pub fn add(&mut self, name: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.into(), bytes.into()));
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, b)| b.as_slice())
    }

    /// Writes every file into `dir`, creating it if needed. Each file is
    /// written to a temporary name first and renamed into place.
    pub fn write(&self, dir: &Path) -> Result<(), ReportError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut staged = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            let tmp = dir.join(format!(".{name}.partial"));
            if let Err(e) = fs::write(&tmp, bytes) {
                for (t, _) in &staged {
                    let _ = fs::remove_file(t);
                }
                let _ = fs::remove_file(&tmp);
                return Err(io_err(&tmp)(e));
            }
            staged.push((tmp, dir.join(name)));
        }
        for (tmp, dst) in &staged {
            fs::rename(tmp, dst).map_err(io_err(dst))?;
        }
        Ok(())
    }
}

/// `schedule.csv`, `summary.csv` and `manifest.json` of one simulation.
pub fn run_outputs(sim: &Simulation, manifest: &RunManifest) -> OutputSet {
    let mut out = OutputSet::default();
    out.add(SCHEDULE_FILE, schedule_csv(&sim.schedule_rows()));
    out.add(SUMMARY_FILE, summary_csv(&sim.metrics.costs));
    out.add(MANIFEST_FILE, manifest.to_json());
    out
}

pub fn issue_file(issue: u8) -> String {
    format!("issue{issue}.csv")
}

/// Reads back a `schedule.csv`.
pub fn read_schedule(path: &Path) -> Result<Vec<ScheduleRow>, ReportError> {
    let csv_err = |source| ReportError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut r = csv::Reader::from_reader(file);
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().ne(SCHEDULE_COLUMNS) {
        return Err(ReportError::Format {
            path: path.to_path_buf(),
            message: format!("unexpected columns {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    r.deserialize()
        .collect::<Result<Vec<ScheduleRow>, _>>()
        .map_err(csv_err)
}
