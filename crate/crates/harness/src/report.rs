//! Run reports: JSON for machines, a fixed-width table for people.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use chpc_core::model::{Millis, ReservationStatus};
use chpc_core::platform::{AppOutcome, LogEntry, Mode};
use chpc_core::scheduler::UtilizationReport;
use chpc_core::telemetry::Alarm;

/// One API call made while running the scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub t: Millis,
    pub tenant: String,
    pub op: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub payload: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<chpc_api::ApiError>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub apps: usize,
    pub completed: usize,
    pub terminated_walltime: usize,
    pub terminated_error: usize,
    pub cancelled: usize,
    pub unfinished: usize,
    pub rejected_requests: usize,
    pub alarms: usize,
    pub hollow_core_seconds: u64,
    /// Time the last application finished, if all did.
    pub makespan_s: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub scenario: String,
    pub mode: Mode,
    pub seed: u64,
    pub duration_s: u64,
    pub end_t: Millis,
    pub summary: Summary,
    pub outcomes: Vec<AppOutcome>,
    pub utilization: Option<UtilizationReport>,
    pub requests: Vec<RequestRecord>,
    pub events: Vec<LogEntry>,
    pub alarms: Vec<Alarm>,
}

impl Summary {
    pub fn build(outcomes: &[AppOutcome], requests: &[RequestRecord], alarms: usize) -> Self {
        let count = |s: ReservationStatus| outcomes.iter().filter(|o| o.status == s).count();
        let unfinished = outcomes.iter().filter(|o| !o.status.is_terminal()).count();
        Summary {
            apps: outcomes.len(),
            completed: count(ReservationStatus::Completed),
            terminated_walltime: count(ReservationStatus::TerminatedWalltime),
            terminated_error: count(ReservationStatus::TerminatedError),
            cancelled: count(ReservationStatus::Cancelled),
            unfinished,
            rejected_requests: requests.iter().filter(|r| !r.ok).count(),
            alarms,
            hollow_core_seconds: outcomes.iter().map(|o| o.hollow_core_seconds).sum(),
            makespan_s: if unfinished == 0 {
                Some(
                    outcomes
                        .iter()
                        .filter_map(|o| o.finished_at)
                        .max()
                        .unwrap_or(0)
                        / 1000,
                )
            } else {
                None
            },
        }
    }
}

fn secs(t: Option<Millis>) -> String {
    t.map(|t| format!("{}", t / 1000))
        .unwrap_or_else(|| "-".into())
}

impl Report {
    pub fn outcome(&self, app: &str) -> Option<&AppOutcome> {
        self.outcomes.iter().find(|o| o.app_id.as_str() == app)
    }

    /// Pretty JSON with a trailing newline. Identical inputs give identical
    /// bytes.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    /// Hex SHA-256 of [`Report::to_json`].
    pub fn digest(&self) -> String {
        Sha256::digest(self.to_json().as_bytes()).iter().fold(
            String::with_capacity(64),
            |mut s, b| {
                let _ = write!(s, "{b:02x}");
                s
            },
        )
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let name = if self.scenario.is_empty() {
            "(unnamed)"
        } else {
            &self.scenario
        };
        let mode = match self.mode {
            Mode::Symmetric => "symmetric",
            Mode::Asymmetric => "asymmetric",
        };
        let _ = writeln!(
            out,
            "scenario {name}  mode {mode}  seed {}  ended at {} s",
            self.seed,
            self.end_t / 1000
        );
        let _ = writeln!(
            out,
            "{:<20} {:<9} {:<18} {:>9} {:>9} {:>9} {:>9} {:>12}",
            "app", "kind", "status", "submit_s", "start_s", "finish_s", "run_s", "hollow_c*s"
        );
        for o in &self.outcomes {
            let run = match (o.start_t, o.finished_at) {
                (Some(a), Some(b)) => format!("{}", (b - a) / 1000),
                _ => "-".into(),
            };
            let kind = serde_json::to_value(o.kind)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "{:<20} {:<9} {:<18} {:>9} {:>9} {:>9} {:>9} {:>12}",
                o.app_id.as_str(),
                kind,
                format!("{:?}", o.status),
                o.submitted_at / 1000,
                secs(o.start_t),
                secs(o.finished_at),
                run,
                o.hollow_core_seconds
            );
        }
        let s = &self.summary;
        let _ = writeln!(
            out,
            "apps {}  completed {}  walltime {}  error {}  cancelled {}  unfinished {}",
            s.apps,
            s.completed,
            s.terminated_walltime,
            s.terminated_error,
            s.cancelled,
            s.unfinished
        );
        let _ = writeln!(
            out,
            "hollow core-seconds {}  alarms {}  rejected requests {}  makespan {}",
            s.hollow_core_seconds,
            s.alarms,
            s.rejected_requests,
            s.makespan_s
                .map(|m| format!("{m} s"))
                .unwrap_or_else(|| "-".into())
        );
        if let Some(u) = &self.utilization {
            let c = &u.cluster;
            let _ = writeln!(
                out,
                "mean committed: cpu {:.3}  mem {:.3}  fs {:.3}  net_in {:.3}  net_out {:.3}",
                c.cpu_cores, c.memory_bytes, c.fs_bps, c.net_in_bps, c.net_out_bps
            );
        }
        out
    }
}
