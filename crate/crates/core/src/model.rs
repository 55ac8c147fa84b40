//! Domain types shared by the scheduler, the simulated nodes and telemetry.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::resource::Dim;
use crate::{ResourceDelta, ResourceVector};

/// Virtual time in integer milliseconds.
pub type Millis = u64;

/// Length of one simulation tick. Rates are evaluated over one tick.
pub const TICK_MS: Millis = 1000;

macro_rules! string_id {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

string_id!(
    /// Application identifier; also the reservation key.
    AppId
);
string_id!(
    /// Node identifier. Nodes are ordered lexicographically by id.
    NodeId
);
string_id!(ImageId);

/// Task index within an application, `0..task_count`.
pub type TaskId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub node_id: NodeId,
    pub capacity: ResourceVector,
}

impl NodeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.capacity.cpu_cores == 0 || self.capacity.memory_bytes == 0 {
            return Err(Error::InvalidNode(format!(
                "{} needs non-zero cpu_cores and memory_bytes",
                self.node_id
            )));
        }
        Ok(())
    }
}

/// A user-deployed software environment that container applications run in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvironmentImage {
    pub image_id: ImageId,
    pub name: String,
    pub owner: String,
    pub content_digest: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AppKind {
    Container,
    Native,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseKind {
    Compute,
    FsIo,
    NetIo,
    Checkpoint,
    Idle,
}

impl PhaseKind {
    /// Multiplier from the declared `work_amount` to the simulator's internal
    /// work units: millicore-seconds for compute, bytes for I/O, milliseconds
    /// for idle and checkpoint.
    pub fn work_scale(self) -> u64 {
        match self {
            PhaseKind::Compute | PhaseKind::Idle | PhaseKind::Checkpoint => 1000,
            PhaseKind::FsIo | PhaseKind::NetIo => 1,
        }
    }
}

/// One step of a replayable workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub kind: PhaseKind,
    /// Core-seconds for compute, bytes for I/O, seconds for idle/checkpoint.
    pub work_amount: u64,
    /// Instantaneous desired rates while the phase runs. `storage_bytes` is the
    /// storage the task holds during the phase.
    #[serde(default)]
    pub demand: ResourceVector,
    pub emits_state: LogicalState,
    pub progress_at_end: f64,
    /// Desired traffic to the other tasks of the same application.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub interproc_bps: u64,
}

fn is_zero(v: &u64) -> bool {
    *v == 0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WorkloadTrace {
    pub phases: Vec<Phase>,
}

impl WorkloadTrace {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        let Some(last) = self.phases.last() else {
            return bad("trace has no phases".into());
        };
        let mut prev = 0.0;
        for (i, p) in self.phases.iter().enumerate() {
            if p.work_amount == 0 {
                return bad(format!("phase {i} has zero work_amount"));
            }
            if !(0.0..=1.0).contains(&p.progress_at_end) {
                return bad(format!("phase {i} progress_at_end outside [0, 1]"));
            }
            if p.progress_at_end < prev {
                return bad(format!("phase {i} progress_at_end decreases"));
            }
            let driver = match p.kind {
                PhaseKind::Compute => p.demand.cpu_cores,
                PhaseKind::FsIo => p.demand.fs_bps,
                PhaseKind::NetIo => p.demand.net_in_bps.saturating_add(p.demand.net_out_bps),
                PhaseKind::Checkpoint | PhaseKind::Idle => 1,
            };
            if driver == 0 {
                return bad(format!(
                    "phase {i} demands nothing of the resource it consumes"
                ));
            }
            if p.work_amount.checked_mul(p.kind.work_scale()).is_none() {
                return bad(format!("phase {i} work_amount too large"));
            }
            prev = p.progress_at_end;
        }
        if last.progress_at_end != 1.0 {
            return bad("final phase must end at progress 1.0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplicationSpec {
    pub app_id: AppId,
    pub kind: AppKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<ImageId>,
    pub task_count: u32,
    pub per_task_reservation: ResourceVector,
    pub walltime_limit_s: u64,
    pub trace: WorkloadTrace,
}

impl ApplicationSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(format!("{}: {m}", self.app_id)));
        if self.app_id.0.is_empty() {
            return Err(Error::InvalidSpec("empty app_id".into()));
        }
        if self.task_count == 0 {
            return bad("task_count must be at least 1");
        }
        if self.walltime_limit_s == 0 {
            return bad("walltime_limit_s must be positive");
        }
        if self.walltime_limit_s.checked_mul(1000).is_none() {
            return bad("walltime_limit_s too large");
        }
        match (self.kind, &self.image) {
            (AppKind::Container, None) => return bad("container apps need an image"),
            (AppKind::Native, Some(_)) => return bad("native apps carry no image"),
            _ => {}
        }
        if self.kind == AppKind::Native
            && Dim::ALL
                .iter()
                .any(|&d| !d.is_legacy() && self.per_task_reservation.get(d) != 0)
        {
            return bad("native apps reserve only cpu_cores and memory_bytes");
        }
        self.trace.validate()
    }

    pub fn walltime_ms(&self) -> Millis {
        self.walltime_limit_s * 1000
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LogicalState {
    Running,
    Checkpointing,
    Restoring,
    Idle,
    Error,
}

/// Application-declared state plus relative progress.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogicalStatus {
    pub state: LogicalState,
    pub progress: f64,
    pub updated_at: Millis,
}

impl LogicalStatus {
    pub fn new(state: LogicalState, progress: f64, updated_at: Millis) -> Self {
        Self {
            state,
            progress,
            updated_at,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvEventKind {
    Draining,
    Terminating,
    Adjusting,
    Freezing,
    Thawed,
}

/// Platform-to-application lifecycle notice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatformEnvEvent {
    pub event: EnvEventKind,
    pub app_id: AppId,
    pub reason: String,
    pub effective_at: Millis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<ResourceDelta>,
}

/// Reasons that allow `Terminating` without a preceding `Draining`.
pub const REASON_WALLTIME: &str = "walltime";
pub const REASON_ERROR: &str = "error";

/// Checks `next` against the events already emitted for the same application.
pub fn check_env_sequence(history: &[EnvEventKind], next: &PlatformEnvEvent) -> Result<()> {
    match next.event {
        EnvEventKind::Terminating => {
            let drained = history.contains(&EnvEventKind::Draining);
            let forced = next.reason == REASON_WALLTIME || next.reason == REASON_ERROR;
            if !drained && !forced {
                return Err(Error::InvalidEvent(format!(
                    "Terminating {} without Draining or walltime/error cause",
                    next.app_id
                )));
            }
        }
        EnvEventKind::Thawed => {
            let frozen = history
                .iter()
                .rev()
                .find(|k| matches!(k, EnvEventKind::Freezing | EnvEventKind::Thawed));
            if frozen != Some(&EnvEventKind::Freezing) {
                return Err(Error::InvalidEvent(format!(
                    "Thawed {} without a preceding Freezing",
                    next.app_id
                )));
            }
        }
        EnvEventKind::Adjusting => {
            if next.detail.is_none() {
                return Err(Error::InvalidEvent("Adjusting needs a detail delta".into()));
            }
        }
        EnvEventKind::Draining | EnvEventKind::Freezing => {}
    }
    if next.event != EnvEventKind::Adjusting && next.detail.is_some() {
        return Err(Error::InvalidEvent("only Adjusting carries a delta".into()));
    }
    Ok(())
}

/// One observation of a task's physical metrics over a tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalSample {
    pub t: Millis,
    pub app_id: AppId,
    pub task_id: TaskId,
    pub node_id: NodeId,
    pub cpu_cores_used: f64,
    pub memory_bytes_used: u64,
    pub fs_bps_used: u64,
    pub fs_iops_used: u64,
    pub storage_bytes_used: u64,
    pub net_in_bps_used: u64,
    pub net_out_bps_used: u64,
    pub interproc_bps_used: u64,
}

/// Per-node utilization over a tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSample {
    pub t: Millis,
    pub node_id: NodeId,
    pub cpu_cores_used: f64,
    pub memory_bytes_used: u64,
    pub fs_bps_used: u64,
    pub fs_iops_used: u64,
    pub storage_bytes_used: u64,
    pub net_in_bps_used: u64,
    pub net_out_bps_used: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReservationStatus {
    Queued,
    Scheduled,
    Active,
    Frozen,
    Completed,
    TerminatedWalltime,
    TerminatedError,
    Cancelled,
}

impl ReservationStatus {
    /// Holding resources on nodes right now.
    pub fn is_running(self) -> bool {
        matches!(self, ReservationStatus::Active | ReservationStatus::Frozen)
    }

    pub fn is_waiting(self) -> bool {
        matches!(
            self,
            ReservationStatus::Queued | ReservationStatus::Scheduled
        )
    }

    pub fn is_terminal(self) -> bool {
        !self.is_running() && !self.is_waiting()
    }
}

/// What the scheduler has committed for an application.
///
/// `end_t - start_t` always equals the current walltime grant. For waiting
/// reservations the window is the planned one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reservation {
    pub app_id: AppId,
    pub placement: BTreeMap<TaskId, NodeId>,
    pub per_task: ResourceVector,
    pub start_t: Millis,
    pub end_t: Millis,
    pub status: ReservationStatus,
}
