//! Reservation scheduler: admission, FCFS planning with conservative backfill,
//! first-fit placement, walltime enforcement and mid-run adjustment.
//!
//! Every reservation covers all seven resource dimensions, so filesystem and
//! network bandwidth, IOPS and storage constrain placement exactly like cores.

mod report;
mod timeline;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::images::ImageRegistry;
use crate::model::{
    AppId, AppKind, ApplicationSpec, EnvEventKind, Millis, NodeId, NodeSpec, PlatformEnvEvent,
    Reservation, ReservationStatus, TaskId, REASON_WALLTIME,
};
use crate::resource::Dim;
use crate::{ResourceDelta, ResourceVector};

pub use report::{HollowEntry, UtilizationReport};
use timeline::{Span, Timeline};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    /// Lead time of the Draining notice before a walltime kill.
    pub grace_s: u64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self { grace_s: 60 }
    }
}

/// A committed interval on one node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanSegment {
    pub app_id: AppId,
    pub start_t: Millis,
    pub end_t: Millis,
    pub amount: ResourceVector,
}

/// Planned window of a waiting reservation. `start_t` is `None` when no usable
/// node can host the job (all candidates draining).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedStart {
    pub app_id: AppId,
    pub start_t: Option<Millis>,
    pub end_t: Option<Millis>,
    pub placement: BTreeMap<TaskId, NodeId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedulePlan {
    pub nodes: BTreeMap<NodeId, Vec<PlanSegment>>,
    pub queue: Vec<PlannedStart>,
}

impl SchedulePlan {
    pub fn planned_start(&self, app: &AppId) -> Option<Millis> {
        self.queue
            .iter()
            .find(|p| &p.app_id == app)
            .and_then(|p| p.start_t)
    }

    /// Sweeps every node's timeline and returns the first `(node, instant)`
    /// where the committed sum exceeds capacity.
    pub fn first_capacity_violation(
        &self,
        capacity: &BTreeMap<NodeId, ResourceVector>,
    ) -> Option<(NodeId, Millis)> {
        for (node, segs) in &self.nodes {
            let cap = capacity.get(node).copied().unwrap_or_default();
            for t in segs.iter().map(|s| s.start_t) {
                let mut sum = ResourceVector::zero();
                for s in segs.iter().filter(|s| s.start_t <= t && t < s.end_t) {
                    match sum.checked_add(&s.amount) {
                        Ok(v) => sum = v,
                        Err(_) => return Some((node.clone(), t)),
                    }
                }
                if !sum.fits_within(&cap) {
                    return Some((node.clone(), t));
                }
            }
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjustmentRequest {
    pub app_id: AppId,
    /// Per-task change; negative components release resources.
    #[serde(default)]
    pub delta_per_task: ResourceDelta,
    #[serde(default)]
    pub walltime_extension_s: u64,
    #[serde(default)]
    pub requested_at: Millis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AdjustmentDecision {
    Granted,
    PartiallyGranted,
    Denied,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjustmentOutcome {
    pub decision: AdjustmentDecision,
    pub granted_delta: ResourceDelta,
    pub granted_extension_s: u64,
    pub reason: String,
}

#[derive(Debug, Clone)]
struct NodeState {
    capacity: ResourceVector,
    draining: bool,
}

#[derive(Debug, Clone)]
struct Job {
    kind: AppKind,
    task_count: u32,
    walltime_ms: Millis,
    submitted_at: Millis,
    reservation: Reservation,
    /// `end_t` for which a Draining notice was already emitted.
    drained_for: Option<Millis>,
    last_checkpoint_t: Option<Millis>,
    finished_at: Option<Millis>,
    hollow_core_seconds: u64,
}

fn per_node_amounts(
    placement: &BTreeMap<TaskId, NodeId>,
    per_task: &ResourceVector,
) -> BTreeMap<NodeId, ResourceVector> {
    let mut out: BTreeMap<NodeId, ResourceVector> = BTreeMap::new();
    for node in placement.values() {
        let e = out.entry(node.clone()).or_default();
        *e = e
            .checked_add(per_task)
            .expect("placed tasks fit their node");
    }
    out
}

impl Job {
    fn tasks_per_node(&self) -> BTreeMap<NodeId, u64> {
        let mut m = BTreeMap::new();
        for node in self.reservation.placement.values() {
            *m.entry(node.clone()).or_insert(0) += 1;
        }
        m
    }
}

/// Usage history of one application on one node, for utilization accounting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitRecord {
    pub app_id: AppId,
    pub node_id: NodeId,
    pub amount: ResourceVector,
    pub from: Millis,
    pub to: Option<Millis>,
}

#[derive(Debug, Clone)]
pub struct Scheduler {
    config: SchedulerConfig,
    nodes: BTreeMap<NodeId, NodeState>,
    jobs: BTreeMap<AppId, Job>,
    plan: SchedulePlan,
    history: Vec<CommitRecord>,
}

impl Scheduler {
    pub fn new(nodes: &[NodeSpec], config: SchedulerConfig) -> Result<Self> {
        let mut map = BTreeMap::new();
        for n in nodes {
            n.validate()?;
            let prev = map.insert(
                n.node_id.clone(),
                NodeState {
                    capacity: n.capacity,
                    draining: false,
                },
            );
            if prev.is_some() {
                return Err(Error::InvalidNode(format!(
                    "duplicate node id {}",
                    n.node_id
                )));
            }
        }
        Ok(Self {
            config,
            nodes: map,
            jobs: BTreeMap::new(),
            plan: SchedulePlan::default(),
            history: Vec::new(),
        })
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    pub fn node_specs(&self) -> Vec<NodeSpec> {
        self.nodes
            .iter()
            .map(|(id, n)| NodeSpec {
                node_id: id.clone(),
                capacity: n.capacity,
            })
            .collect()
    }

    pub fn capacities(&self) -> BTreeMap<NodeId, ResourceVector> {
        self.nodes
            .iter()
            .map(|(id, n)| (id.clone(), n.capacity))
            .collect()
    }

    pub fn is_draining(&self, node: &NodeId) -> bool {
        self.nodes.get(node).is_some_and(|n| n.draining)
    }

    pub fn reservation(&self, app: &AppId) -> Result<&Reservation> {
        self.jobs
            .get(app)
            .map(|j| &j.reservation)
            .ok_or_else(|| Error::NoSuchApp(app.clone()))
    }

    pub fn reservations(&self) -> impl Iterator<Item = &Reservation> {
        self.jobs.values().map(|j| &j.reservation)
    }

    pub fn current_plan(&self) -> &SchedulePlan {
        &self.plan
    }

    pub fn history(&self) -> &[CommitRecord] {
        &self.history
    }

    pub fn hollow_core_seconds(&self, app: &AppId) -> Option<u64> {
        self.jobs.get(app).map(|j| j.hollow_core_seconds)
    }

    /// Committed sums of running reservations per node.
    pub fn committed(&self) -> BTreeMap<NodeId, ResourceVector> {
        let mut out: BTreeMap<NodeId, ResourceVector> = self
            .nodes
            .keys()
            .map(|n| (n.clone(), ResourceVector::zero()))
            .collect();
        for job in self
            .jobs
            .values()
            .filter(|j| j.reservation.status.is_running())
        {
            for node in job.reservation.placement.values() {
                let e = out.entry(node.clone()).or_default();
                *e = e.map(|d, v| v.saturating_add(job.reservation.per_task.get(d)));
            }
        }
        out
    }

    /// Admits `spec` into the queue and replans.
    pub fn submit(
        &mut self,
        spec: &ApplicationSpec,
        images: &ImageRegistry,
        now: Millis,
    ) -> Result<Reservation> {
        spec.validate()?;
        if let Some(img) = &spec.image {
            images.get(img)?;
        }
        if self.jobs.contains_key(&spec.app_id) {
            return Err(Error::DuplicateApp(spec.app_id.clone()));
        }
        // Total request must not exceed the aggregate cluster capacity, and a
        // placement must exist on an otherwise empty cluster.
        let total = spec
            .per_task_reservation
            .checked_scale(spec.task_count as usize)?;
        let aggregate = crate::resource::checked_sum(self.nodes.values().map(|n| &n.capacity))?;
        let all: Vec<NodeId> = self.nodes.keys().cloned().collect();
        let empty = Timeline::default();
        let walltime_ms = spec.walltime_ms();
        if !total.fits_within(&aggregate)
            || self
                .place(
                    &empty,
                    &all,
                    spec.task_count,
                    &spec.per_task_reservation,
                    0,
                    walltime_ms,
                )
                .is_none()
        {
            return Err(Error::InsufficientCapacity(spec.app_id.clone()));
        }

        // Jobs queued at the same instant are ordered by app id, so any that sort
        // after this one give up their fresh slots and are placed behind it.
        for (id, j) in self.jobs.iter_mut() {
            if j.reservation.status.is_waiting() && j.submitted_at == now && id > &spec.app_id {
                j.reservation.placement.clear();
            }
        }
        let reservation = Reservation {
            app_id: spec.app_id.clone(),
            placement: BTreeMap::new(),
            per_task: spec.per_task_reservation,
            start_t: now,
            end_t: now + walltime_ms,
            status: ReservationStatus::Queued,
        };
        self.jobs.insert(
            spec.app_id.clone(),
            Job {
                kind: spec.kind,
                task_count: spec.task_count,
                walltime_ms,
                submitted_at: now,
                reservation,
                drained_for: None,
                last_checkpoint_t: None,
                finished_at: None,
                hollow_core_seconds: 0,
            },
        );
        self.plan(now);
        Ok(self.jobs[&spec.app_id].reservation.clone())
    }

    /// First-fit placement of `count` tasks over `nodes` (already sorted by id)
    /// for the window `[start, end)`.
    fn place(
        &self,
        tl: &Timeline,
        nodes: &[NodeId],
        count: u32,
        per_task: &ResourceVector,
        start: Millis,
        end: Millis,
    ) -> Option<BTreeMap<TaskId, NodeId>> {
        let headroom: Vec<ResourceVector> = nodes
            .iter()
            .map(|n| {
                self.nodes[n]
                    .capacity
                    .saturating_sub(&tl.peak(n, start, end))
            })
            .collect();
        let mut used = vec![ResourceVector::zero(); nodes.len()];
        let mut placement = BTreeMap::new();
        for task in 0..count {
            let slot = (0..nodes.len()).find(|&i| {
                used[i]
                    .checked_add(per_task)
                    .is_ok_and(|u| u.fits_within(&headroom[i]))
            })?;
            used[slot] = used[slot].checked_add(per_task).ok()?;
            placement.insert(task, nodes[slot].clone());
        }
        Some(placement)
    }

    /// Waiting jobs in FCFS order: submission time, then app id.
    fn queue_order(&self) -> Vec<AppId> {
        let mut q: Vec<(&Millis, &AppId)> = self
            .jobs
            .iter()
            .filter(|(_, j)| j.reservation.status.is_waiting())
            .map(|(id, j)| (&j.submitted_at, id))
            .collect();
        q.sort();
        q.into_iter().map(|(_, id)| id.clone()).collect()
    }

    fn running_timeline(&self, now: Millis, skip: Option<&AppId>) -> Timeline {
        let mut tl = Timeline::default();
        for (id, job) in &self.jobs {
            if !job.reservation.status.is_running() || Some(id) == skip {
                continue;
            }
            for (node, n) in job.tasks_per_node() {
                let amount = job
                    .reservation
                    .per_task
                    .checked_scale(n as usize)
                    .expect("admitted reservation fits a node");
                tl.add(
                    &node,
                    Span {
                        app_id: id.clone(),
                        start: job.reservation.start_t.max(now),
                        end: job.reservation.end_t,
                        amount,
                    },
                );
            }
        }
        tl
    }

    /// Recomputes the plan with conservative backfill and compression.
    ///
    /// Running reservations are fixed. Every waiting job keeps its current slot
    /// in the profile, then jobs are revisited in FCFS order and each moves to
    /// the earliest start that fits beside everything else. A job's previous
    /// slot always remains feasible, so replanning never makes a planned start
    /// later, and a newly queued job only takes capacity no earlier job was
    /// planned to use.
    pub fn plan(&mut self, now: Millis) -> SchedulePlan {
        let mut tl = self.running_timeline(now, None);
        let usable: Vec<NodeId> = self
            .nodes
            .iter()
            .filter(|(_, n)| !n.draining)
            .map(|(id, _)| id.clone())
            .collect();
        let order = self.queue_order();
        for app in &order {
            let r = &self.jobs[app].reservation;
            if !r.placement.is_empty() && r.start_t >= now {
                for (node, amount) in per_node_amounts(&r.placement, &r.per_task) {
                    tl.add(
                        &node,
                        Span {
                            app_id: app.clone(),
                            start: r.start_t,
                            end: r.end_t,
                            amount,
                        },
                    );
                }
            }
        }

        let mut queue = Vec::new();
        for app in order {
            tl.remove_app(&app);
            let job = &self.jobs[&app];
            let per_task = job.reservation.per_task;
            let mut candidates = vec![now];
            candidates.extend(tl.release_points(now));
            let found = candidates.into_iter().find_map(|s| {
                self.place(
                    &tl,
                    &usable,
                    job.task_count,
                    &per_task,
                    s,
                    s + job.walltime_ms,
                )
                .map(|p| (s, p))
            });
            let planned = match found {
                Some((start, placement)) => {
                    let end = start + job.walltime_ms;
                    for (node, amount) in per_node_amounts(&placement, &per_task) {
                        tl.add(
                            &node,
                            Span {
                                app_id: app.clone(),
                                start,
                                end,
                                amount,
                            },
                        );
                    }
                    PlannedStart {
                        app_id: app.clone(),
                        start_t: Some(start),
                        end_t: Some(end),
                        placement,
                    }
                }
                None => PlannedStart {
                    app_id: app.clone(),
                    start_t: None,
                    end_t: None,
                    placement: BTreeMap::new(),
                },
            };
            queue.push(planned);
        }

        for p in &queue {
            let job = self.jobs.get_mut(&p.app_id).expect("queued job exists");
            job.reservation.placement = p.placement.clone();
            if let (Some(s), Some(e)) = (p.start_t, p.end_t) {
                job.reservation.start_t = s;
                job.reservation.end_t = e;
            }
        }

        let mut nodes: BTreeMap<NodeId, Vec<PlanSegment>> =
            self.nodes.keys().map(|n| (n.clone(), Vec::new())).collect();
        for (node, s) in tl.iter() {
            nodes.entry(node.clone()).or_default().push(PlanSegment {
                app_id: s.app_id.clone(),
                start_t: s.start,
                end_t: s.end,
                amount: s.amount,
            });
        }
        for segs in nodes.values_mut() {
            segs.sort_by(|a, b| (a.start_t, &a.app_id).cmp(&(b.start_t, &b.app_id)));
        }
        self.plan = SchedulePlan { nodes, queue };
        self.plan.clone()
    }

    /// Activates every waiting reservation whose planned start has arrived.
    pub fn start_due(&mut self, now: Millis) -> Vec<Reservation> {
        let plan = self.plan(now);
        let mut started = Vec::new();
        for p in plan
            .queue
            .iter()
            .filter(|p| p.start_t.is_some_and(|s| s <= now))
        {
            let job = self.jobs.get_mut(&p.app_id).expect("queued job exists");
            job.reservation.status = ReservationStatus::Active;
            job.reservation.start_t = now;
            job.reservation.end_t = now + job.walltime_ms;
            started.push(job.reservation.clone());
        }
        for r in &started {
            self.open_history(&r.app_id, now);
        }
        if !started.is_empty() {
            self.plan(now);
        }
        started
    }

    fn open_history(&mut self, app: &AppId, now: Millis) {
        let job = &self.jobs[app];
        for (node, n) in job.tasks_per_node() {
            self.history.push(CommitRecord {
                app_id: app.clone(),
                node_id: node,
                amount: job
                    .reservation
                    .per_task
                    .checked_scale(n as usize)
                    .expect("fits"),
                from: now,
                to: None,
            });
        }
    }

    fn close_history(&mut self, app: &AppId, now: Millis) {
        for rec in self
            .history
            .iter_mut()
            .filter(|r| &r.app_id == app && r.to.is_none())
        {
            rec.to = Some(now);
        }
    }

    fn running_job_mut(&mut self, app: &AppId) -> Result<&mut Job> {
        let job = self
            .jobs
            .get_mut(app)
            .ok_or_else(|| Error::NoSuchApp(app.clone()))?;
        if !job.reservation.status.is_running() {
            return Err(Error::NotActive(app.clone()));
        }
        Ok(job)
    }

    fn finish(&mut self, app: &AppId, status: ReservationStatus, now: Millis) -> Result<()> {
        let job = self.running_job_mut(app)?;
        job.reservation.status = status;
        job.finished_at = Some(now);
        self.close_history(app, now);
        self.plan(now);
        Ok(())
    }

    /// The application ran to completion.
    pub fn complete(&mut self, app: &AppId, now: Millis) -> Result<()> {
        self.finish(app, ReservationStatus::Completed, now)
    }

    /// Terminated after entering the logical Error state.
    pub fn terminate_error(&mut self, app: &AppId, now: Millis) -> Result<()> {
        self.finish(app, ReservationStatus::TerminatedError, now)
    }

    /// Cancels a waiting or running reservation. Returns whether it was running.
    pub fn cancel(&mut self, app: &AppId, now: Millis) -> Result<bool> {
        let job = self
            .jobs
            .get_mut(app)
            .ok_or_else(|| Error::NoSuchApp(app.clone()))?;
        let status = job.reservation.status;
        if status.is_terminal() {
            return Err(Error::NotActive(app.clone()));
        }
        job.reservation.status = ReservationStatus::Cancelled;
        job.finished_at = Some(now);
        if status.is_waiting() {
            job.reservation.placement.clear();
        } else {
            self.close_history(app, now);
        }
        self.plan(now);
        Ok(status.is_running())
    }

    pub fn record_checkpoint(&mut self, app: &AppId, t: Millis) {
        if let Some(job) = self.jobs.get_mut(app) {
            job.last_checkpoint_t = Some(t);
        }
    }

    pub fn set_frozen(&mut self, app: &AppId, frozen: bool) -> Result<()> {
        let job = self.running_job_mut(app)?;
        if job.kind == AppKind::Native {
            return Err(Error::NativeJob(app.clone()));
        }
        let (from, to) = if frozen {
            (ReservationStatus::Active, ReservationStatus::Frozen)
        } else {
            (ReservationStatus::Frozen, ReservationStatus::Active)
        };
        if job.reservation.status != from {
            return Err(Error::NotActive(app.clone()));
        }
        job.reservation.status = to;
        Ok(())
    }

    /// Stops new placements on `node`. Returns the apps currently running there.
    pub fn drain_node(&mut self, node: &NodeId, now: Millis) -> Result<Vec<AppId>> {
        let state = self
            .nodes
            .get_mut(node)
            .ok_or_else(|| Error::UnknownNode(node.clone()))?;
        state.draining = true;
        let apps = self
            .jobs
            .iter()
            .filter(|(_, j)| j.reservation.status.is_running())
            .filter(|(_, j)| j.reservation.placement.values().any(|n| n == node))
            .map(|(id, _)| id.clone())
            .collect();
        self.plan(now);
        Ok(apps)
    }

    /// Emits Draining `grace_s` before each running reservation's end and
    /// Terminating at the end; terminated reservations become
    /// `TerminatedWalltime` and their hollow core-seconds are recorded.
    pub fn enforce_walltime(&mut self, now: Millis) -> Vec<PlatformEnvEvent> {
        let grace = self.config.grace_s * 1000;
        let mut events = Vec::new();
        let mut killed = Vec::new();
        for (id, job) in self.jobs.iter_mut() {
            if !job.reservation.status.is_running() {
                continue;
            }
            let end = job.reservation.end_t;
            let drain_at = end.saturating_sub(grace).max(job.reservation.start_t);
            if now >= drain_at && job.drained_for != Some(end) {
                job.drained_for = Some(end);
                events.push(PlatformEnvEvent {
                    event: EnvEventKind::Draining,
                    app_id: id.clone(),
                    reason: REASON_WALLTIME.into(),
                    effective_at: drain_at,
                    detail: None,
                });
            }
            if now >= end {
                let cores = job.reservation.per_task.cpu_cores * u64::from(job.task_count);
                let from = job
                    .last_checkpoint_t
                    .map_or(job.reservation.start_t, |c| c.max(job.reservation.start_t));
                job.hollow_core_seconds = cores * (end - from.min(end)) / 1000;
                job.reservation.status = ReservationStatus::TerminatedWalltime;
                job.finished_at = Some(end);
                events.push(PlatformEnvEvent {
                    event: EnvEventKind::Terminating,
                    app_id: id.clone(),
                    reason: REASON_WALLTIME.into(),
                    effective_at: end,
                    detail: None,
                });
                killed.push((id.clone(), end));
            }
        }
        for (id, end) in &killed {
            self.close_history(id, *end);
        }
        if !killed.is_empty() {
            self.plan(now);
        }
        events
    }

    /// Grants or denies a change to a running reservation.
    ///
    /// Releases are always granted. Increases are granted per dimension up to
    /// the headroom left on the job's nodes over its remaining window by every
    /// other running or planned reservation. The extension is granted up to the
    /// first instant after the current end where the (possibly enlarged)
    /// reservation would collide with another commitment.
    pub fn request_adjustment(
        &mut self,
        req: &AdjustmentRequest,
        now: Millis,
    ) -> Result<AdjustmentOutcome> {
        if req.delta_per_task.is_zero() && req.walltime_extension_s == 0 {
            return Err(Error::InvalidAdjustment("nothing requested".into()));
        }
        let job = self
            .jobs
            .get(&req.app_id)
            .ok_or_else(|| Error::NoSuchApp(req.app_id.clone()))?;
        if job.reservation.status != ReservationStatus::Active {
            return Err(Error::NotActive(req.app_id.clone()));
        }
        if job.kind == AppKind::Native {
            return Ok(AdjustmentOutcome {
                decision: AdjustmentDecision::Denied,
                granted_delta: ResourceDelta::zero(),
                granted_extension_s: 0,
                reason: "native jobs are not adjustable".into(),
            });
        }
        let releases = req.delta_per_task.releases();
        if !releases.fits_within(&job.reservation.per_task) {
            return Err(Error::InvalidAdjustment(
                "release exceeds the current reservation".into(),
            ));
        }

        self.plan(now);
        let job = &self.jobs[&req.app_id];
        let mut others = self.running_timeline(now, Some(&req.app_id));
        for (node, segs) in &self.plan.nodes {
            for s in segs.iter().filter(|s| {
                s.app_id != req.app_id && self.jobs[&s.app_id].reservation.status.is_waiting()
            }) {
                others.add(
                    node,
                    Span {
                        app_id: s.app_id.clone(),
                        start: s.start_t,
                        end: s.end_t,
                        amount: s.amount,
                    },
                );
            }
        }
        let per_node = job.tasks_per_node();
        let old = job.reservation.per_task;
        let old_end = job.reservation.end_t;
        let reduced = old.saturating_sub(&releases);

        // Largest per-task increase each dimension can take on every node.
        let wanted = req.delta_per_task.increases();
        let mut granted_inc = wanted;
        for (node, &count) in &per_node {
            let cap = self.nodes[node].capacity;
            let peak = others.peak(node, now, old_end);
            let own = reduced.checked_scale(count as usize)?;
            let room = cap.saturating_sub(&peak).saturating_sub(&own);
            granted_inc = granted_inc.inf(&room.map(|_, r| r / count));
        }
        let new_per_task = reduced.checked_add(&granted_inc)?;

        let wanted_ext_ms = req.walltime_extension_s * 1000;
        let mut granted_ext_ms = wanted_ext_ms;
        for (node, &count) in &per_node {
            let own = new_per_task.checked_scale(count as usize)?;
            let cap = self.nodes[node].capacity;
            if let Some(t) =
                others.first_overflow(node, old_end, old_end + wanted_ext_ms, &own, &cap)
            {
                granted_ext_ms = granted_ext_ms.min(t - old_end);
            }
        }
        let granted_ext_s = granted_ext_ms / 1000;

        let granted_delta =
            req.delta_per_task
                .map(|d, v| if v < 0 { v } else { granted_inc.get(d) as i64 });
        let full = granted_inc == wanted && granted_ext_s == req.walltime_extension_s;
        let nothing = granted_delta.is_zero() && granted_ext_s == 0;
        let (decision, reason) = if full {
            (AdjustmentDecision::Granted, "granted in full".to_string())
        } else if nothing {
            (
                AdjustmentDecision::Denied,
                "conflicts with planned reservations".to_string(),
            )
        } else {
            let short: Vec<&str> = Dim::ALL
                .iter()
                .filter(|&&d| granted_inc.get(d) < wanted.get(d))
                .map(|d| d.name())
                .collect();
            let mut reason = String::from("partially granted");
            if !short.is_empty() {
                reason.push_str(&format!("; limited: {}", short.join(", ")));
            }
            if granted_ext_s < req.walltime_extension_s {
                reason.push_str("; extension limited by a planned reservation");
            }
            (AdjustmentDecision::PartiallyGranted, reason)
        };

        if decision != AdjustmentDecision::Denied {
            let job = self.jobs.get_mut(&req.app_id).expect("checked above");
            let changed = job.reservation.per_task != new_per_task;
            job.reservation.per_task = new_per_task;
            job.reservation.end_t += granted_ext_s * 1000;
            job.walltime_ms += granted_ext_s * 1000;
            if changed {
                self.close_history(&req.app_id, now);
                self.open_history(&req.app_id, now);
            }
            self.plan(now);
        }
        Ok(AdjustmentOutcome {
            decision,
            granted_delta,
            granted_extension_s: granted_ext_s,
            reason,
        })
    }

    /// Per-dimension mean utilization over `[t0, t1)` plus the hollow
    /// core-seconds of walltime kills within the range.
    pub fn utilization_report(
        &self,
        t0: Millis,
        t1: Millis,
        now: Millis,
    ) -> Result<UtilizationReport> {
        if t0 >= t1 {
            return Err(Error::EmptyRange { t0, t1 });
        }
        if t1 > now {
            return Err(Error::RangeInFuture { t1, now });
        }
        let hollow = self
            .jobs
            .iter()
            .filter(|(_, j)| j.reservation.status == ReservationStatus::TerminatedWalltime)
            .filter(|(_, j)| j.finished_at.is_some_and(|f| f >= t0 && f <= t1))
            .map(|(id, j)| HollowEntry {
                app_id: id.clone(),
                cpu_cores: j.reservation.per_task.cpu_cores * u64::from(j.task_count),
                terminated_at: j.finished_at.unwrap_or_default(),
                last_checkpoint_t: j.last_checkpoint_t,
                hollow_core_seconds: j.hollow_core_seconds,
            })
            .collect();
        Ok(report::build(
            &self.capacities(),
            &self.history,
            t0,
            t1,
            now,
            hollow,
        ))
    }
}
