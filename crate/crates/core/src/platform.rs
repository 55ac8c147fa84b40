//! One serialized state machine combining the image registry, scheduler,
//! simulated cluster and telemetry.
//!
//! A tick at time `t` first terminates applications that entered Error,
//! enforces walltimes, starts due reservations, then advances the simulator
//! over `[t, t + TICK_MS)` and settles completions at `t + TICK_MS`.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::images::ImageRegistry;
use crate::model::{
    check_env_sequence, AppId, AppKind, ApplicationSpec, EnvEventKind, EnvironmentImage,
    LogicalStatus, Millis, NodeId, NodeSample, NodeSpec, PhysicalSample, PlatformEnvEvent,
    Reservation, ReservationStatus, TaskId, REASON_ERROR,
};
use crate::scheduler::{
    AdjustmentDecision, AdjustmentOutcome, AdjustmentRequest, Scheduler, SchedulerConfig,
    UtilizationReport,
};
use crate::simnode::{Engine, EngineEvent, RunState, StoragePolicy, TickOutput};
use crate::telemetry::{
    Alarm, BoundaryCondition, ChannelId, Mailbox, Telemetry, Topic, DEFAULT_RETENTION_S,
};

pub const REASON_DRAIN: &str = "drain";
pub const REASON_CANCEL: &str = "cancel";
pub const REASON_OPERATOR: &str = "operator";
pub const REASON_ADJUST: &str = "adjust";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Legacy batch model: I/O is best-effort, no adjustment, no introspection
    /// pushes.
    Asymmetric,
    #[default]
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlatformConfig {
    pub mode: Mode,
    pub grace_s: u64,
    pub retention_s: u64,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Symmetric,
            grace_s: SchedulerConfig::default().grace_s,
            retention_s: DEFAULT_RETENTION_S,
        }
    }
}

// Tagged enums buffer their fields, which turns integer map keys into strings.
fn task_keys<'de, D: serde::Deserializer<'de>>(
    d: D,
) -> std::result::Result<BTreeMap<TaskId, NodeId>, D::Error> {
    let raw = BTreeMap::<String, NodeId>::deserialize(d)?;
    raw.into_iter()
        .map(|(k, v)| k.parse().map(|k| (k, v)).map_err(serde::de::Error::custom))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Submitted {
        app_id: AppId,
        app_kind: AppKind,
    },
    Started {
        app_id: AppId,
        #[serde(deserialize_with = "task_keys")]
        placement: BTreeMap<TaskId, NodeId>,
        start_t: Millis,
        end_t: Millis,
    },
    Event {
        event: PlatformEnvEvent,
    },
    Adjusted {
        app_id: AppId,
        outcome: AdjustmentOutcome,
    },
    Finished {
        app_id: AppId,
        status: ReservationStatus,
    },
    NodeDraining {
        node_id: NodeId,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub t: Millis,
    pub record: LogRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitReceipt {
    pub reservation: Reservation,
    pub planned_start: Option<Millis>,
}

/// Reservation plus what the application last reported about itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppStatus {
    pub app_id: AppId,
    pub kind: AppKind,
    pub owner: String,
    pub reservation: Reservation,
    pub planned_start: Option<Millis>,
    pub logical: Option<LogicalStatus>,
    pub frozen: bool,
    pub drain_deadline: Option<Millis>,
    pub last_checkpoint_t: Option<Millis>,
    pub last_checkpoint_progress: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueEntry {
    pub app_id: AppId,
    pub status: ReservationStatus,
    pub planned_start: Option<Millis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvModel {
    pub now: Millis,
    pub mode: Mode,
    pub nodes: Vec<NodeSpec>,
    pub draining_nodes: Vec<NodeId>,
    pub committed: BTreeMap<NodeId, crate::ResourceVector>,
    pub latest: Vec<NodeSample>,
    pub queue: Vec<QueueEntry>,
}

/// Final or current state of one application for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppOutcome {
    pub app_id: AppId,
    pub kind: AppKind,
    pub status: ReservationStatus,
    pub submitted_at: Millis,
    pub start_t: Option<Millis>,
    pub finished_at: Option<Millis>,
    pub hollow_core_seconds: u64,
}

#[derive(Debug, Clone)]
struct AppRecord {
    spec: ApplicationSpec,
    owner: String,
    submitted_at: Millis,
    started_at: Option<Millis>,
    finished_at: Option<Millis>,
    env_history: Vec<EnvEventKind>,
}

#[derive(Debug)]
pub struct Platform {
    config: PlatformConfig,
    images: ImageRegistry,
    scheduler: Scheduler,
    engine: Engine,
    telemetry: Telemetry,
    apps: BTreeMap<AppId, AppRecord>,
    errored: Vec<AppId>,
    latest_samples: BTreeMap<AppId, BTreeMap<TaskId, PhysicalSample>>,
    latest_nodes: BTreeMap<NodeId, NodeSample>,
    log: Vec<LogEntry>,
    alarms: Vec<Alarm>,
}

impl Platform {
    pub fn new(nodes: &[NodeSpec], config: PlatformConfig) -> Result<Self> {
        let policy = match config.mode {
            Mode::Symmetric => StoragePolicy::Reserved,
            Mode::Asymmetric => StoragePolicy::NodeFree,
        };
        Ok(Self {
            config,
            images: ImageRegistry::default(),
            scheduler: Scheduler::new(
                nodes,
                SchedulerConfig {
                    grace_s: config.grace_s,
                },
            )?,
            engine: Engine::new(nodes, policy)?,
            telemetry: Telemetry::new(config.retention_s),
            apps: BTreeMap::new(),
            errored: Vec::new(),
            latest_samples: BTreeMap::new(),
            latest_nodes: BTreeMap::new(),
            log: Vec::new(),
            alarms: Vec::new(),
        })
    }

    pub fn now(&self) -> Millis {
        self.engine.now()
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn scheduler(&self) -> &Scheduler {
        &self.scheduler
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn telemetry(&self) -> &Telemetry {
        &self.telemetry
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn alarms(&self) -> &[Alarm] {
        &self.alarms
    }

    pub fn owner(&self, app: &AppId) -> Result<&str> {
        self.apps
            .get(app)
            .map(|r| r.owner.as_str())
            .ok_or_else(|| Error::NoSuchApp(app.clone()))
    }

    fn symmetric_only(&self) -> Result<()> {
        match self.config.mode {
            Mode::Symmetric => Ok(()),
            Mode::Asymmetric => Err(Error::PolicyDisabled),
        }
    }

    fn record(&mut self, record: LogRecord) {
        let seq = self.log.len() as u64;
        let t = self.now();
        self.log.push(LogEntry { seq, t, record });
    }

    /// Validates, pushes, applies and logs one environment event.
    fn emit(&mut self, ev: PlatformEnvEvent) -> Result<()> {
        let rec = self
            .apps
            .get_mut(&ev.app_id)
            .ok_or_else(|| Error::NoSuchApp(ev.app_id.clone()))?;
        check_env_sequence(&rec.env_history, &ev)?;
        rec.env_history.push(ev.event);
        if self.config.mode == Mode::Symmetric {
            self.telemetry.publish_event(&ev);
        }
        if self.engine.contains(&ev.app_id) {
            match self.engine.apply_env_event(&ev) {
                Ok(()) | Err(Error::NotActive(_)) => {}
                Err(e) => return Err(e),
            }
        }
        self.record(LogRecord::Event { event: ev });
        Ok(())
    }

    fn event(&self, kind: EnvEventKind, app: &AppId, reason: &str) -> PlatformEnvEvent {
        PlatformEnvEvent {
            event: kind,
            app_id: app.clone(),
            reason: reason.into(),
            effective_at: self.now(),
            detail: None,
        }
    }

    pub fn register_image(&mut self, image: EnvironmentImage) -> Result<()> {
        self.images.register(image)
    }

    pub fn images(&self) -> impl Iterator<Item = &EnvironmentImage> {
        self.images.iter()
    }

    pub fn submit(&mut self, spec: ApplicationSpec, owner: &str) -> Result<SubmitReceipt> {
        let mut spec = spec;
        if self.config.mode == Mode::Asymmetric {
            spec.per_task_reservation = spec.per_task_reservation.legacy_only();
        }
        let now = self.now();
        let reservation = self.scheduler.submit(&spec, &self.images, now)?;
        let planned_start = self.scheduler.current_plan().planned_start(&spec.app_id);
        let app_id = spec.app_id.clone();
        let kind = spec.kind;
        self.apps.insert(
            app_id.clone(),
            AppRecord {
                spec,
                owner: owner.into(),
                submitted_at: now,
                started_at: None,
                finished_at: None,
                env_history: Vec::new(),
            },
        );
        self.record(LogRecord::Submitted {
            app_id,
            app_kind: kind,
        });
        Ok(SubmitReceipt {
            reservation,
            planned_start,
        })
    }

    pub fn cancel(&mut self, app: &AppId) -> Result<()> {
        let now = self.now();
        let was_running = self.scheduler.cancel(app, now)?;
        if was_running {
            self.emit(self.event(EnvEventKind::Draining, app, REASON_CANCEL))?;
            self.emit(self.event(EnvEventKind::Terminating, app, REASON_CANCEL))?;
        }
        self.finish(app, ReservationStatus::Cancelled);
        Ok(())
    }

    fn finish(&mut self, app: &AppId, status: ReservationStatus) {
        let now = self.now();
        if let Some(r) = self.apps.get_mut(app) {
            r.finished_at = Some(now);
        }
        self.record(LogRecord::Finished {
            app_id: app.clone(),
            status,
        });
    }

    pub fn status(&self, app: &AppId) -> Result<AppStatus> {
        let rec = self
            .apps
            .get(app)
            .ok_or_else(|| Error::NoSuchApp(app.clone()))?;
        let reservation = self.scheduler.reservation(app)?.clone();
        let snap = self.engine.snapshot(app).ok();
        Ok(AppStatus {
            app_id: app.clone(),
            kind: rec.spec.kind,
            owner: rec.owner.clone(),
            planned_start: if reservation.status.is_waiting() {
                self.scheduler.current_plan().planned_start(app)
            } else {
                rec.started_at
            },
            reservation,
            logical: snap.as_ref().map(|s| s.logical),
            frozen: snap.as_ref().is_some_and(|s| s.frozen),
            drain_deadline: snap.as_ref().and_then(|s| s.drain_deadline),
            last_checkpoint_t: snap.as_ref().and_then(|s| s.last_checkpoint_t),
            last_checkpoint_progress: snap.as_ref().and_then(|s| s.last_checkpoint_progress),
        })
    }

    /// Latest sample of every task of `app`.
    pub fn physical_model(&self, app: &AppId) -> Result<Vec<PhysicalSample>> {
        if !self.apps.contains_key(app) {
            return Err(Error::NoSuchApp(app.clone()));
        }
        Ok(self
            .latest_samples
            .get(app)
            .map(|m| m.values().cloned().collect())
            .unwrap_or_default())
    }

    pub fn env_model(&self) -> EnvModel {
        let nodes = self.scheduler.node_specs();
        let draining_nodes = nodes
            .iter()
            .filter(|n| self.scheduler.is_draining(&n.node_id))
            .map(|n| n.node_id.clone())
            .collect();
        let plan = self.scheduler.current_plan();
        let queue = self
            .scheduler
            .reservations()
            .filter(|r| !r.status.is_terminal())
            .map(|r| QueueEntry {
                app_id: r.app_id.clone(),
                status: r.status,
                planned_start: if r.status.is_waiting() {
                    plan.planned_start(&r.app_id)
                } else {
                    Some(r.start_t)
                },
            })
            .collect();
        EnvModel {
            now: self.now(),
            mode: self.config.mode,
            nodes,
            draining_nodes,
            committed: self.scheduler.committed(),
            latest: self.latest_nodes.values().cloned().collect(),
            queue,
        }
    }

    /// Applies an application-reported logical status.
    pub fn set_logical_state(
        &mut self,
        app: &AppId,
        requested: &LogicalStatus,
    ) -> Result<LogicalStatus> {
        if !self.apps.contains_key(app) {
            return Err(Error::NoSuchApp(app.clone()));
        }
        match self.engine.report_logical(app, requested) {
            Err(Error::UnknownApp(a)) => Err(Error::NotActive(a)),
            other => other,
        }
    }

    /// Requests more or fewer resources or walltime. Any grant is announced
    /// with an Adjusting event before this returns.
    pub fn adjust(&mut self, req: &AdjustmentRequest) -> Result<AdjustmentOutcome> {
        self.symmetric_only()?;
        // Refused before the scheduler sees it so the log stays batch-identical.
        if self
            .apps
            .get(&req.app_id)
            .is_some_and(|r| r.spec.kind == AppKind::Native)
        {
            return Err(Error::NativeJob(req.app_id.clone()));
        }
        let mut req = req.clone();
        req.requested_at = self.now();
        let outcome = self.scheduler.request_adjustment(&req, self.now())?;
        if outcome.decision != AdjustmentDecision::Denied {
            let mut ev = self.event(EnvEventKind::Adjusting, &req.app_id, REASON_ADJUST);
            ev.detail = Some(outcome.granted_delta);
            self.emit(ev)?;
            if outcome.granted_extension_s > 0 {
                let end = self.scheduler.reservation(&req.app_id)?.end_t;
                self.engine.set_end(&req.app_id, end)?;
            }
        }
        self.record(LogRecord::Adjusted {
            app_id: req.app_id.clone(),
            outcome: outcome.clone(),
        });
        Ok(outcome)
    }

    pub fn register_boundary(&mut self, bc: BoundaryCondition) -> Result<()> {
        self.symmetric_only()?;
        self.telemetry.register_boundary(bc)
    }

    pub fn drop_boundary(&mut self, bc_id: &str) -> Result<BoundaryCondition> {
        self.symmetric_only()?;
        self.telemetry.drop_boundary(bc_id)
    }

    pub fn boundary(&self, bc_id: &str) -> Option<&BoundaryCondition> {
        self.telemetry.boundary(bc_id)
    }

    pub fn open_channel(&mut self) -> (ChannelId, Arc<Mailbox>) {
        self.telemetry.open_channel()
    }

    pub fn open_channel_with(&mut self, mailbox: Arc<Mailbox>) -> (ChannelId, Arc<Mailbox>) {
        self.telemetry.open_channel_with(mailbox)
    }

    pub fn close_channel(&mut self, id: ChannelId) -> Result<()> {
        self.telemetry.close_channel(id)
    }

    pub fn subscribe(&mut self, topic: Topic, channel: ChannelId) -> Result<u64> {
        self.symmetric_only()?;
        self.telemetry.subscribe(topic, channel)
    }

    pub fn unsubscribe(&mut self, id: u64) -> Result<()> {
        self.telemetry.unsubscribe(id).map(|_| ())
    }

    /// Stops new placements on `node` and tells the applications on it.
    pub fn drain_node(&mut self, node: &NodeId) -> Result<Vec<AppId>> {
        let apps = self.scheduler.drain_node(node, self.now())?;
        self.record(LogRecord::NodeDraining {
            node_id: node.clone(),
        });
        for app in &apps {
            self.emit(self.event(EnvEventKind::Draining, app, REASON_DRAIN))?;
        }
        Ok(apps)
    }

    pub fn freeze(&mut self, app: &AppId) -> Result<()> {
        self.symmetric_only()?;
        self.scheduler.set_frozen(app, true)?;
        self.emit(self.event(EnvEventKind::Freezing, app, REASON_OPERATOR))
    }

    pub fn thaw(&mut self, app: &AppId) -> Result<()> {
        self.symmetric_only()?;
        self.scheduler.set_frozen(app, false)?;
        self.emit(self.event(EnvEventKind::Thawed, app, REASON_OPERATOR))
    }

    pub fn utilization_report(&self, t0: Millis, t1: Millis) -> Result<UtilizationReport> {
        self.scheduler.utilization_report(t0, t1, self.now())
    }

    pub fn outcomes(&self) -> Vec<AppOutcome> {
        self.apps
            .iter()
            .map(|(id, rec)| {
                let r = self
                    .scheduler
                    .reservation(id)
                    .expect("submitted apps are known");
                AppOutcome {
                    app_id: id.clone(),
                    kind: rec.spec.kind,
                    status: r.status,
                    submitted_at: rec.submitted_at,
                    start_t: rec.started_at,
                    finished_at: rec.finished_at,
                    hollow_core_seconds: self.scheduler.hollow_core_seconds(id).unwrap_or(0),
                }
            })
            .collect()
    }

    /// True when nothing is queued or running.
    pub fn is_idle(&self) -> bool {
        self.scheduler
            .reservations()
            .all(|r| r.status.is_terminal())
    }

    /// Runs one tick.
    pub fn tick(&mut self) -> Result<TickOutput> {
        let now = self.now();
        for app in std::mem::take(&mut self.errored) {
            if !self.scheduler.reservation(&app)?.status.is_running() {
                continue;
            }
            self.emit(self.event(EnvEventKind::Terminating, &app, REASON_ERROR))?;
            self.scheduler.terminate_error(&app, now)?;
            self.finish(&app, ReservationStatus::TerminatedError);
        }

        for ev in self.scheduler.enforce_walltime(now) {
            let terminating = ev.event == EnvEventKind::Terminating;
            let app = ev.app_id.clone();
            self.emit(ev)?;
            if terminating {
                self.finish(&app, ReservationStatus::TerminatedWalltime);
            }
        }

        for r in self.scheduler.start_due(now) {
            let rec = self
                .apps
                .get_mut(&r.app_id)
                .expect("started apps were submitted");
            rec.started_at = Some(now);
            self.engine.launch(&rec.spec, &r)?;
            self.record(LogRecord::Started {
                app_id: r.app_id.clone(),
                placement: r.placement.clone(),
                start_t: r.start_t,
                end_t: r.end_t,
            });
        }

        let out = self.engine.step_tick();
        for s in &out.samples {
            self.alarms.extend(self.telemetry.publish_sample(s)?);
            self.latest_samples
                .entry(s.app_id.clone())
                .or_default()
                .insert(s.task_id, s.clone());
        }
        for s in &out.node_samples {
            self.alarms.extend(self.telemetry.publish_node_sample(s)?);
            self.latest_nodes.insert(s.node_id.clone(), s.clone());
        }
        for ev in &out.events {
            match ev {
                EngineEvent::Completed { app_id, t } => {
                    self.scheduler.complete(app_id, *t)?;
                    self.finish(app_id, ReservationStatus::Completed);
                }
                EngineEvent::Checkpointed { app_id, t, .. } => {
                    self.scheduler.record_checkpoint(app_id, *t);
                }
                EngineEvent::Errored { app_id, .. } => self.errored.push(app_id.clone()),
                EngineEvent::PhaseCompleted { .. } => {}
            }
        }
        Ok(out)
    }

    /// Ticks until the clock reaches `t`.
    pub fn advance_to(&mut self, t: Millis) -> Result<()> {
        while self.now() < t {
            self.tick()?;
        }
        Ok(())
    }

    pub fn run_state(&self, app: &AppId) -> Option<RunState> {
        self.engine.snapshot(app).ok().map(|s| s.state)
    }
}
