//! Deterministic tick-based execution of workload traces on simulated nodes.
//!
//! Each tick covers `[now, now + TICK_MS)` and its samples are stamped with the
//! tick's end. CPU and memory are capped at the reservation. The four I/O rate
//! dimensions get `min(demand, reservation)` guaranteed plus a max-min fair
//! share of whatever the node has left over.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fairness::water_fill;
use crate::logical::logical_transition;
use crate::model::{
    AppId, ApplicationSpec, EnvEventKind, LogicalState, LogicalStatus, Millis, NodeId, NodeSample,
    NodeSpec, Phase, PhaseKind, PhysicalSample, PlatformEnvEvent, Reservation, TaskId, TICK_MS,
};
use crate::resource::Dim;
use crate::ResourceVector;

/// Where a phase's storage stock is checked when the phase starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoragePolicy {
    /// Against the task's storage reservation.
    #[default]
    Reserved,
    /// Against whatever the node has not handed to other tasks.
    NodeFree,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimClock {
    pub now_ms: Millis,
    pub tick_ms: Millis,
}

impl Default for SimClock {
    fn default() -> Self {
        Self {
            now_ms: 0,
            tick_ms: TICK_MS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRuntime {
    pub app_id: AppId,
    pub task_id: TaskId,
    pub node_id: NodeId,
    pub phase_index: usize,
    /// Internal work units, see [`PhaseKind::work_scale`].
    pub work_done: u64,
    pub frozen: bool,
}

/// Demand, reservation and effective allocation of one task over one tick.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskTick {
    pub app_id: AppId,
    pub task_id: TaskId,
    pub node_id: NodeId,
    pub demand: ResourceVector,
    pub reserved: ResourceVector,
    pub effective: ResourceVector,
    pub interproc_bps_used: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EngineEvent {
    PhaseCompleted {
        app_id: AppId,
        phase_index: usize,
        t: Millis,
    },
    Checkpointed {
        app_id: AppId,
        t: Millis,
        progress: f64,
    },
    Completed {
        app_id: AppId,
        t: Millis,
    },
    Errored {
        app_id: AppId,
        t: Millis,
        reason: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TickOutput {
    pub t: Millis,
    pub samples: Vec<PhysicalSample>,
    pub node_samples: Vec<NodeSample>,
    pub tasks: Vec<TaskTick>,
    pub events: Vec<EngineEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunState {
    Running,
    Errored,
    Completed,
    Terminated,
}

#[derive(Debug, Clone)]
struct AppRuntime {
    phases: Vec<Phase>,
    reserved: ResourceVector,
    tasks: Vec<TaskRuntime>,
    phase_index: usize,
    frozen: bool,
    state: RunState,
    end_t: Millis,
    drain_deadline: Option<Millis>,
    logical: LogicalStatus,
    last_checkpoint: Option<(Millis, f64)>,
    /// Per-task storage granted by the last successful storage check.
    storage_held: u64,
}

impl AppRuntime {
    fn phase(&self) -> &Phase {
        &self.phases[self.phase_index]
    }

    fn phase_work(&self) -> u64 {
        let p = self.phase();
        p.work_amount * p.kind.work_scale()
    }

    fn progress_floor(&self) -> f64 {
        match self.phase_index {
            0 => 0.0,
            i => self.phases[i - 1].progress_at_end,
        }
    }

    fn is_live(&self) -> bool {
        matches!(self.state, RunState::Running | RunState::Errored)
    }
}

/// Read-only view of one application on the engine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppSnapshot {
    pub app_id: AppId,
    pub state: RunState,
    pub phase_index: usize,
    pub frozen: bool,
    pub reserved: ResourceVector,
    pub drain_deadline: Option<Millis>,
    pub logical: LogicalStatus,
    pub last_checkpoint_t: Option<Millis>,
    pub last_checkpoint_progress: Option<f64>,
    pub tasks: Vec<TaskRuntime>,
}

#[derive(Debug, Clone)]
pub struct Engine {
    clock: SimClock,
    policy: StoragePolicy,
    nodes: BTreeMap<NodeId, ResourceVector>,
    apps: BTreeMap<AppId, AppRuntime>,
    pending: Vec<EngineEvent>,
}

impl Engine {
    pub fn new(nodes: &[NodeSpec], policy: StoragePolicy) -> Result<Self> {
        let mut map = BTreeMap::new();
        for n in nodes {
            n.validate()?;
            if map.insert(n.node_id.clone(), n.capacity).is_some() {
                return Err(Error::InvalidNode(format!(
                    "duplicate node id {}",
                    n.node_id
                )));
            }
        }
        Ok(Self {
            clock: SimClock::default(),
            policy,
            nodes: map,
            apps: BTreeMap::new(),
            pending: Vec::new(),
        })
    }

    pub fn now(&self) -> Millis {
        self.clock.now_ms
    }

    pub fn clock(&self) -> SimClock {
        self.clock
    }

    /// Starts executing `spec` with the tasks placed as in `reservation`.
    pub fn launch(&mut self, spec: &ApplicationSpec, reservation: &Reservation) -> Result<()> {
        if self.apps.contains_key(&spec.app_id) {
            return Err(Error::DuplicateApp(spec.app_id.clone()));
        }
        if reservation.placement.len() != spec.task_count as usize {
            return Err(Error::InvalidSpec(format!(
                "{}: placement covers {} of {} tasks",
                spec.app_id,
                reservation.placement.len(),
                spec.task_count
            )));
        }
        spec.trace.validate()?;
        let mut tasks = Vec::new();
        for (&task_id, node) in &reservation.placement {
            if !self.nodes.contains_key(node) {
                return Err(Error::UnknownNode(node.clone()));
            }
            tasks.push(TaskRuntime {
                app_id: spec.app_id.clone(),
                task_id,
                node_id: node.clone(),
                phase_index: 0,
                work_done: 0,
                frozen: false,
            });
        }
        let now = self.now();
        let first_state = spec.trace.phases[0].emits_state;
        let app = AppRuntime {
            phases: spec.trace.phases.clone(),
            reserved: reservation.per_task,
            tasks,
            phase_index: 0,
            frozen: false,
            state: RunState::Running,
            end_t: reservation.end_t,
            drain_deadline: None,
            logical: LogicalStatus::new(first_state, 0.0, now),
            last_checkpoint: None,
            storage_held: 0,
        };
        self.apps.insert(spec.app_id.clone(), app);
        self.check_storage(&spec.app_id, now);
        Ok(())
    }

    pub fn contains(&self, app: &AppId) -> bool {
        self.apps.contains_key(app)
    }

    pub fn snapshot(&self, app: &AppId) -> Result<AppSnapshot> {
        let a = self
            .apps
            .get(app)
            .ok_or_else(|| Error::UnknownApp(app.clone()))?;
        Ok(AppSnapshot {
            app_id: app.clone(),
            state: a.state,
            phase_index: a.phase_index,
            frozen: a.frozen,
            reserved: a.reserved,
            drain_deadline: a.drain_deadline,
            logical: a.logical,
            last_checkpoint_t: a.last_checkpoint.map(|c| c.0),
            last_checkpoint_progress: a.last_checkpoint.map(|c| c.1),
            tasks: a.tasks.clone(),
        })
    }

    pub fn logical(&self, app: &AppId) -> Result<LogicalStatus> {
        self.apps
            .get(app)
            .map(|a| a.logical)
            .ok_or_else(|| Error::UnknownApp(app.clone()))
    }

    /// Applies an application-reported logical status. A report of `Error`
    /// stops the application from making further progress.
    pub fn report_logical(
        &mut self,
        app: &AppId,
        requested: &LogicalStatus,
    ) -> Result<LogicalStatus> {
        let now = self.now();
        let a = self
            .apps
            .get_mut(app)
            .ok_or_else(|| Error::UnknownApp(app.clone()))?;
        let floor = a.last_checkpoint.map(|c| c.1);
        let accepted = logical_transition(&a.logical, requested, floor, now)?;
        a.logical = accepted;
        if accepted.state == LogicalState::Error && a.state == RunState::Running {
            a.state = RunState::Errored;
            self.pending.push(EngineEvent::Errored {
                app_id: app.clone(),
                t: now,
                reason: "reported by application".into(),
            });
        }
        Ok(accepted)
    }

    /// Updates the reservation end the drain deadline refers to.
    pub fn set_end(&mut self, app: &AppId, end_t: Millis) -> Result<()> {
        let a = self
            .apps
            .get_mut(app)
            .ok_or_else(|| Error::UnknownApp(app.clone()))?;
        if a.end_t != end_t {
            a.end_t = end_t;
            a.drain_deadline = None;
        }
        Ok(())
    }

    pub fn apply_env_event(&mut self, ev: &PlatformEnvEvent) -> Result<()> {
        let a = self
            .apps
            .get_mut(&ev.app_id)
            .ok_or_else(|| Error::UnknownApp(ev.app_id.clone()))?;
        if !a.is_live() {
            return Err(Error::NotActive(ev.app_id.clone()));
        }
        match ev.event {
            EnvEventKind::Draining => a.drain_deadline = Some(a.end_t),
            EnvEventKind::Terminating => {
                a.state = RunState::Terminated;
                a.tasks.clear();
            }
            EnvEventKind::Freezing | EnvEventKind::Thawed => {
                let frozen = ev.event == EnvEventKind::Freezing;
                a.frozen = frozen;
                for t in &mut a.tasks {
                    t.frozen = frozen;
                }
            }
            EnvEventKind::Adjusting => {
                let delta = ev
                    .detail
                    .as_ref()
                    .ok_or_else(|| Error::InvalidEvent("Adjusting without a delta".into()))?;
                a.reserved = a.reserved.apply_delta(delta)?;
            }
        }
        Ok(())
    }

    /// Storage held by live tasks on `node`, skipping `skip`.
    fn node_storage(&self, node: &NodeId, skip: &AppId) -> u64 {
        self.apps
            .iter()
            .filter(|(id, a)| *id != skip && a.is_live())
            .flat_map(|(_, a)| {
                let held = a.storage_held;
                a.tasks
                    .iter()
                    .filter(move |t| &t.node_id == node)
                    .map(move |_| held)
            })
            .sum()
    }

    /// Puts the app into Error if its current phase needs more storage than
    /// it may hold.
    fn check_storage(&mut self, app: &AppId, now: Millis) {
        let a = &self.apps[app];
        let need = a.phase().demand.storage_bytes;
        let ok = match self.policy {
            StoragePolicy::Reserved => need <= a.reserved.storage_bytes,
            StoragePolicy::NodeFree => {
                let mut per_node: BTreeMap<&NodeId, u64> = BTreeMap::new();
                for t in &a.tasks {
                    *per_node.entry(&t.node_id).or_default() += need;
                }
                per_node.iter().all(|(node, &mine)| {
                    self.node_storage(node, app).saturating_add(mine)
                        <= self.nodes[*node].storage_bytes
                })
            }
        };
        let a = self.apps.get_mut(app).expect("checked by caller");
        if ok {
            a.storage_held = need;
        } else {
            a.storage_held = 0;
            a.state = RunState::Errored;
            a.logical = LogicalStatus::new(LogicalState::Error, a.logical.progress, now);
            self.pending.push(EngineEvent::Errored {
                app_id: app.clone(),
                t: now,
                reason: format!("phase {} exceeds available storage", a.phase_index),
            });
        }
    }

    /// Desired usage of one task this tick, before contention.
    fn task_demand(&self, a: &AppRuntime, t: &TaskRuntime) -> (ResourceVector, u64) {
        let p = a.phase();
        let mut d = ResourceVector::zero().with(Dim::MemoryBytes, p.demand.memory_bytes);
        d.storage_bytes = match a.state {
            RunState::Errored => a.storage_held,
            _ => p.demand.storage_bytes,
        };
        let stalled = a.state != RunState::Running || t.frozen || t.work_done >= a.phase_work();
        if stalled {
            return (d, 0);
        }
        d.cpu_cores = p.demand.cpu_cores;
        for dim in Dim::CONTENDED {
            *d.get_mut(dim) = p.demand.get(dim);
        }
        let mut off_node = 0;
        let peers = a.tasks.len() as u64 - 1;
        if p.interproc_bps > 0 && peers > 0 {
            let remote = a.tasks.iter().filter(|o| o.node_id != t.node_id).count() as u64;
            off_node =
                (u128::from(p.interproc_bps) * u128::from(remote) / u128::from(peers)) as u64;
            d.net_in_bps = d.net_in_bps.saturating_add(off_node);
            d.net_out_bps = d.net_out_bps.saturating_add(off_node);
        }
        (d, off_node)
    }

    /// Advances the simulation by one tick.
    pub fn step_tick(&mut self) -> TickOutput {
        let start = self.now();
        let t = start + self.clock.tick_ms;
        let mut out = TickOutput {
            t,
            events: std::mem::take(&mut self.pending),
            ..Default::default()
        };

        struct Slot {
            app: AppId,
            idx: usize,
            demand: ResourceVector,
            reserved: ResourceVector,
            effective: ResourceVector,
            off_node: u64,
        }
        let mut by_node: BTreeMap<NodeId, Vec<Slot>> = BTreeMap::new();
        for (id, a) in self.apps.iter().filter(|(_, a)| a.is_live()) {
            for (idx, task) in a.tasks.iter().enumerate() {
                let (demand, off_node) = self.task_demand(a, task);
                let mut effective = ResourceVector::zero();
                effective.cpu_cores = demand.cpu_cores.min(a.reserved.cpu_cores);
                effective.memory_bytes = demand.memory_bytes.min(a.reserved.memory_bytes);
                effective.storage_bytes = a.storage_held;
                by_node.entry(task.node_id.clone()).or_default().push(Slot {
                    app: id.clone(),
                    idx,
                    demand,
                    reserved: a.reserved,
                    effective,
                    off_node,
                });
            }
        }

        for (node, slots) in by_node.iter_mut() {
            let cap = self.nodes[node];
            for dim in Dim::CONTENDED {
                let demands: Vec<u64> = slots.iter().map(|s| s.demand.get(dim)).collect();
                let reserved: Vec<u64> = slots.iter().map(|s| s.reserved.get(dim)).collect();
                let shares = contended_shares(cap.get(dim), &demands, &reserved);
                for (s, v) in slots.iter_mut().zip(shares) {
                    *s.effective.get_mut(dim) = v;
                }
            }
            let mut used = ResourceVector::zero();
            for s in slots.iter() {
                used = used.map(|d, v| v.saturating_add(s.effective.get(d)));
            }
            out.node_samples.push(NodeSample {
                t,
                node_id: node.clone(),
                cpu_cores_used: used.cpu_cores as f64,
                memory_bytes_used: used.memory_bytes,
                fs_bps_used: used.fs_bps,
                fs_iops_used: used.fs_iops,
                storage_bytes_used: used.storage_bytes,
                net_in_bps_used: used.net_in_bps,
                net_out_bps_used: used.net_out_bps,
            });
        }

        let mut ticks: Vec<(AppId, usize, TaskTick)> = Vec::new();
        for (node, slots) in by_node {
            for s in slots {
                let a = self.apps.get_mut(&s.app).expect("slot app exists");
                let phase = a.phases[a.phase_index].clone();
                let work = a.phase_work();
                let task = &mut a.tasks[s.idx];
                let e = &s.effective;
                let ip_out = scaled(s.off_node, e.net_out_bps, s.demand.net_out_bps);
                let ip_in = scaled(s.off_node, e.net_in_bps, s.demand.net_in_bps);
                let mut interproc = ip_out.min(ip_in);
                let running = a.state == RunState::Running && !task.frozen && task.work_done < work;
                if running {
                    let on_node = phase.interproc_bps.saturating_sub(s.off_node);
                    interproc = interproc.saturating_add(on_node);
                    let gained = match phase.kind {
                        PhaseKind::Compute => e.cpu_cores * 1000,
                        PhaseKind::FsIo => e.fs_bps,
                        PhaseKind::NetIo => (e.net_in_bps - ip_in) + (e.net_out_bps - ip_out),
                        PhaseKind::Idle | PhaseKind::Checkpoint => TICK_MS,
                    };
                    task.work_done = task.work_done.saturating_add(gained).min(work);
                }
                ticks.push((
                    s.app.clone(),
                    s.idx,
                    TaskTick {
                        app_id: s.app,
                        task_id: task.task_id,
                        node_id: node.clone(),
                        demand: s.demand,
                        reserved: s.reserved,
                        effective: s.effective,
                        interproc_bps_used: interproc,
                    },
                ));
            }
        }
        ticks.sort_by(|x, y| (&x.0, x.1).cmp(&(&y.0, y.1)));
        for (_, _, tt) in ticks {
            out.samples.push(PhysicalSample {
                t,
                app_id: tt.app_id.clone(),
                task_id: tt.task_id,
                node_id: tt.node_id.clone(),
                cpu_cores_used: tt.effective.cpu_cores as f64,
                memory_bytes_used: tt.effective.memory_bytes,
                fs_bps_used: tt.effective.fs_bps,
                fs_iops_used: tt.effective.fs_iops,
                storage_bytes_used: tt.effective.storage_bytes,
                net_in_bps_used: tt.effective.net_in_bps,
                net_out_bps_used: tt.effective.net_out_bps,
                interproc_bps_used: tt.interproc_bps_used,
            });
            out.tasks.push(tt);
        }

        self.clock.now_ms = t;
        let ids: Vec<AppId> = self.apps.keys().cloned().collect();
        for id in ids {
            self.finish_tick(&id, t, &mut out.events);
        }
        out
    }

    /// Phase barrier and logical status bookkeeping after work has advanced.
    fn finish_tick(&mut self, id: &AppId, t: Millis, events: &mut Vec<EngineEvent>) {
        let a = self.apps.get_mut(id).expect("listed app");
        if a.state != RunState::Running {
            return;
        }
        let work = a.phase_work();
        let slowest = a.tasks.iter().map(|t| t.work_done).min().unwrap_or(work);
        if slowest < work {
            let lo = a.progress_floor();
            let hi = a.phase().progress_at_end;
            let p = lo + (hi - lo) * (slowest as f64 / work as f64);
            let requested = LogicalStatus::new(a.phase().emits_state, p, t);
            if let Ok(s) =
                logical_transition(&a.logical, &requested, a.last_checkpoint.map(|c| c.1), t)
            {
                a.logical = s;
            }
            return;
        }

        let done = a.phase().clone();
        let finished_index = a.phase_index;
        let requested = LogicalStatus::new(done.emits_state, done.progress_at_end, t);
        if let Ok(s) = logical_transition(&a.logical, &requested, a.last_checkpoint.map(|c| c.1), t)
        {
            a.logical = s;
        }
        events.push(EngineEvent::PhaseCompleted {
            app_id: id.clone(),
            phase_index: finished_index,
            t,
        });
        if done.kind == PhaseKind::Checkpoint {
            a.last_checkpoint = Some((t, a.logical.progress));
            events.push(EngineEvent::Checkpointed {
                app_id: id.clone(),
                t,
                progress: a.logical.progress,
            });
        }
        if finished_index + 1 == a.phases.len() {
            a.state = RunState::Completed;
            a.tasks.clear();
            events.push(EngineEvent::Completed {
                app_id: id.clone(),
                t,
            });
            return;
        }
        a.phase_index += 1;
        for task in &mut a.tasks {
            task.phase_index = a.phase_index;
            task.work_done = 0;
        }
        let next_state = a.phase().emits_state;
        let requested = LogicalStatus::new(next_state, a.logical.progress, t);
        if let Ok(s) = logical_transition(&a.logical, &requested, a.last_checkpoint.map(|c| c.1), t)
        {
            a.logical = s;
        }
        self.check_storage(id, t);
        events.append(&mut self.pending);
    }

    /// Every application the engine has seen, with its run state.
    pub fn apps(&self) -> impl Iterator<Item = (&AppId, RunState)> {
        self.apps.iter().map(|(id, a)| (id, a.state))
    }
}

/// `part * num / den`, rounded down, zero when `den` is zero.
fn scaled(part: u64, num: u64, den: u64) -> u64 {
    if den == 0 {
        0
    } else {
        (u128::from(part) * u128::from(num) / u128::from(den)) as u64
    }
}

/// Effective rates on one node for one contended dimension.
///
/// Each claimant gets `min(demand, reserved)` and then a max-min fair share of
/// the remaining capacity toward its unmet demand. If the guarantees alone
/// exceed the capacity they are themselves split max-min.
pub fn contended_shares(capacity: u64, demands: &[u64], reserved: &[u64]) -> Vec<u64> {
    let wanted: Vec<u64> = demands
        .iter()
        .zip(reserved)
        .map(|(&d, &r)| d.min(r))
        .collect();
    let guaranteed = water_fill(capacity, &wanted);
    let residual = capacity - guaranteed.iter().sum::<u64>();
    let extra: Vec<u64> = demands
        .iter()
        .zip(&guaranteed)
        .map(|(&d, &g)| d - g)
        .collect();
    let best_effort = water_fill(residual, &extra);
    guaranteed
        .iter()
        .zip(best_effort)
        .map(|(&g, b)| g + b)
        .collect()
}
