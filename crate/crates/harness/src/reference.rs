//! Scheduler-only replay of native batch workloads.
//!
//! Drives the [`Scheduler`] alone and takes completion times from the traces:
//! a compute phase lasts `ceil(work / min(demand, reserved cores))` seconds,
//! idle and checkpoint phases last `work` seconds. The resulting log is what
//! a plain batch system would record, so a platform run of the same workload
//! must reproduce it byte for byte.

use std::collections::BTreeMap;

use chpc_core::images::ImageRegistry;
use chpc_core::model::{AppId, Millis, PhaseKind, ReservationStatus, TICK_MS};
use chpc_core::platform::{LogEntry, LogRecord};
use chpc_core::scheduler::{Scheduler, SchedulerConfig};

use crate::error::{HarnessError, Result};
use crate::scenario::{Scenario, ScenarioApp};

/// Per-app schedule relative to its start: checkpoint completion offsets and
/// total runtime. `None` runtime means the trace never finishes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnalyticRun {
    pub checkpoints: Vec<Millis>,
    pub runtime: Option<Millis>,
}

pub fn analytic_run(app: &ScenarioApp) -> Result<AnalyticRun> {
    let reserved = app.spec.per_task_reservation;
    let mut elapsed: Millis = 0;
    let mut checkpoints = Vec::new();
    for (i, p) in app.spec.trace.phases.iter().enumerate() {
        if p.demand.storage_bytes > 0 || p.interproc_bps > 0 {
            return Err(HarnessError::validation(
                format!("apps.{}.trace[{i}]", app.spec.app_id),
                "storage and interprocess demand have no analytic duration",
            ));
        }
        let secs = match p.kind {
            PhaseKind::Compute => {
                let rate = p.demand.cpu_cores.min(reserved.cpu_cores);
                if rate == 0 {
                    return Ok(AnalyticRun {
                        checkpoints,
                        runtime: None,
                    });
                }
                p.work_amount.div_ceil(rate)
            }
            PhaseKind::Idle | PhaseKind::Checkpoint => p.work_amount,
            PhaseKind::FsIo | PhaseKind::NetIo => {
                return Err(HarnessError::validation(
                    format!("apps.{}.trace[{i}]", app.spec.app_id),
                    "I/O phases depend on contention and have no analytic duration",
                ))
            }
        };
        elapsed += secs * 1000;
        if p.kind == PhaseKind::Checkpoint {
            checkpoints.push(elapsed);
        }
    }
    Ok(AnalyticRun {
        checkpoints,
        runtime: Some(elapsed),
    })
}

/// Event log of `sc` replayed on the scheduler alone. Only native-only
/// scenarios qualify. The script is ignored: against native jobs every
/// scripted adjustment or freeze is rejected without side effects.
pub fn scheduler_only_log(sc: &Scenario) -> Result<Vec<LogEntry>> {
    sc.validate()?;
    if !sc.native_only() {
        return Err(HarnessError::validation(
            "apps",
            "reference runs need native jobs only",
        ));
    }
    let runs: BTreeMap<AppId, AnalyticRun> = sc
        .apps
        .iter()
        .map(|a| Ok((a.spec.app_id.clone(), analytic_run(a)?)))
        .collect::<Result<_>>()?;
    let config = SchedulerConfig {
        grace_s: sc.grace_s.unwrap_or(SchedulerConfig::default().grace_s),
    };
    let mut sched = Scheduler::new(&sc.cluster, config)?;
    let images = ImageRegistry::default();

    let mut log: Vec<LogEntry> = Vec::new();
    let mut record = |t: Millis, record: LogRecord| {
        let seq = log.len() as u64;
        log.push(LogEntry { seq, t, record });
    };

    let mut pending: Vec<&ScenarioApp> = sc.apps.iter().collect();
    pending.sort_by_key(|a| a.submit_at_s);
    let mut pending = pending.into_iter().peekable();
    let mut running: BTreeMap<AppId, Millis> = BTreeMap::new();
    let mut now: Millis = 0;
    let end = sc.duration_ms();

    loop {
        while let Some(a) = pending.next_if(|a| a.submit_at_s * 1000 <= now) {
            if sched.submit(&a.spec, &images, now).is_ok() {
                record(
                    now,
                    LogRecord::Submitted {
                        app_id: a.spec.app_id.clone(),
                        app_kind: a.spec.kind,
                    },
                );
            }
        }
        let idle = sched.reservations().all(|r| r.status.is_terminal());
        if now >= end || (pending.peek().is_none() && idle) {
            break;
        }

        for ev in sched.enforce_walltime(now) {
            let app = ev.app_id.clone();
            let terminating = ev.event == chpc_core::model::EnvEventKind::Terminating;
            record(now, LogRecord::Event { event: ev });
            if terminating {
                running.remove(&app);
                record(
                    now,
                    LogRecord::Finished {
                        app_id: app,
                        status: ReservationStatus::TerminatedWalltime,
                    },
                );
            }
        }
        for r in sched.start_due(now) {
            running.insert(r.app_id.clone(), now);
            record(
                now,
                LogRecord::Started {
                    app_id: r.app_id.clone(),
                    placement: r.placement.clone(),
                    start_t: r.start_t,
                    end_t: r.end_t,
                },
            );
        }

        now += TICK_MS;
        let mut done = Vec::new();
        for (app, &start) in &running {
            let run = &runs[app];
            for &c in &run.checkpoints {
                if start + c == now {
                    sched.record_checkpoint(app, now);
                }
            }
            if run.runtime.is_some_and(|r| start + r == now) {
                done.push(app.clone());
            }
        }
        for app in done {
            running.remove(&app);
            sched.complete(&app, now)?;
            record(
                now,
                LogRecord::Finished {
                    app_id: app,
                    status: ReservationStatus::Completed,
                },
            );
        }
    }
    Ok(log)
}
