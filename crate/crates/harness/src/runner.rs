//! Deterministic single-threaded scenario execution.
//!
//! Before each tick at time `t`, submissions due at `t` are made in file
//! order, then script steps due at `t` in file order. All calls go through
//! the API dispatcher, so scenario runs exercise the same code paths as live
//! clients.

use std::collections::BTreeMap;

use serde_json::{json, Value};

use chpc_api::dispatch::{handle, Session};
use chpc_core::platform::{Mode, Platform, PlatformConfig};
use chpc_core::scheduler::SchedulerConfig;
use chpc_core::simnode::TickOutput;

use crate::error::Result;
use crate::report::{Report, RequestRecord, Summary};
use crate::scenario::{Scenario, ScenarioApp, ScriptStep};

/// Tenant name of the session that runs unattributed script steps.
pub const OPERATOR: &str = "operator";

pub fn platform_for(sc: &Scenario, mode: Mode) -> Result<Platform> {
    let config = PlatformConfig {
        mode,
        grace_s: sc.grace_s.unwrap_or(SchedulerConfig::default().grace_s),
        ..PlatformConfig::default()
    };
    Ok(Platform::new(&sc.cluster, config)?)
}

enum Action<'a> {
    Submit(&'a ScenarioApp),
    Step(&'a ScriptStep),
}

struct Driver {
    sessions: BTreeMap<(String, bool), Session>,
    requests: Vec<RequestRecord>,
}

impl Driver {
    fn call(&mut self, p: &mut Platform, tenant: &str, operator: bool, op: &str, payload: Value) {
        let session = self
            .sessions
            .entry((tenant.to_owned(), operator))
            .or_insert_with(|| Session::authenticated(tenant, operator));
        let payload = if payload.is_null() {
            json!({})
        } else {
            payload
        };
        let t = p.now();
        let record = match handle(p, session, op, &payload) {
            Ok(v) => RequestRecord {
                t,
                tenant: tenant.into(),
                op: op.into(),
                ok: true,
                payload: v,
                error: None,
            },
            Err(e) => RequestRecord {
                t,
                tenant: tenant.into(),
                op: op.into(),
                ok: false,
                payload: Value::Null,
                error: Some(e),
            },
        };
        self.requests.push(record);
    }

    /// Discards queued pushes; the report records events and alarms from the
    /// platform's own logs.
    fn drain(&self) {
        for s in self.sessions.values() {
            if let Some((_, mb)) = s.channel() {
                mb.drain();
            }
        }
    }
}

/// Scenario submissions and script steps, applied as virtual time reaches
/// them.
pub struct Replay<'a> {
    actions: Vec<(u64, Action<'a>)>,
    next: usize,
    driver: Driver,
}

impl<'a> Replay<'a> {
    /// Registers the scenario's images on `p` and queues everything else.
    pub fn new(sc: &'a Scenario, p: &mut Platform) -> Self {
        let mut driver = Driver {
            sessions: BTreeMap::new(),
            requests: Vec::new(),
        };
        for img in &sc.images {
            driver.call(
                p,
                OPERATOR,
                true,
                "register_image",
                serde_json::to_value(img).expect("images serialize"),
            );
        }
        let mut actions: Vec<(u64, u8, Action)> = Vec::new();
        for a in &sc.apps {
            actions.push((a.submit_at_s * 1000, 0, Action::Submit(a)));
        }
        for s in &sc.script {
            actions.push((s.at_s * 1000, 1, Action::Step(s)));
        }
        // Stable: file order within (time, kind).
        actions.sort_by_key(|(t, kind, _)| (*t, *kind));
        Self {
            actions: actions.into_iter().map(|(t, _, a)| (t, a)).collect(),
            next: 0,
            driver,
        }
    }

    /// Applies every action due at or before the platform's current time.
    pub fn apply_due(&mut self, p: &mut Platform) {
        let now = p.now();
        while let Some((t, action)) = self.actions.get(self.next) {
            if *t > now {
                break;
            }
            match action {
                Action::Submit(a) => {
                    let spec = serde_json::to_value(&a.spec).expect("specs serialize");
                    self.driver.call(p, &a.owner, false, "submit", spec);
                }
                Action::Step(s) => {
                    let (tenant, operator) = match &s.tenant {
                        Some(t) => (t.as_str(), false),
                        None => (OPERATOR, true),
                    };
                    self.driver
                        .call(p, tenant, operator, &s.op, s.payload.clone());
                }
            }
            self.next += 1;
        }
        self.driver.drain();
    }

    pub fn finished(&self) -> bool {
        self.next == self.actions.len()
    }

    pub fn requests(&self) -> &[RequestRecord] {
        &self.driver.requests
    }

    pub fn into_requests(self) -> Vec<RequestRecord> {
        self.driver.requests
    }
}

pub fn run_scenario(sc: &Scenario, mode: Option<Mode>) -> Result<Report> {
    run_scenario_observed(sc, mode, |_, _| {})
}

/// Runs `sc` and calls `observe` after every tick with the platform state and
/// that tick's output.
pub fn run_scenario_observed(
    sc: &Scenario,
    mode: Option<Mode>,
    mut observe: impl FnMut(&Platform, &TickOutput),
) -> Result<Report> {
    sc.validate()?;
    let mode = mode.unwrap_or(sc.mode);
    let mut p = platform_for(sc, mode)?;
    let mut replay = Replay::new(sc, &mut p);
    let end = sc.duration_ms();
    loop {
        replay.apply_due(&mut p);
        if p.now() >= end || (replay.finished() && p.is_idle()) {
            break;
        }
        let out = p.tick()?;
        observe(&p, &out);
    }

    let end_t = p.now();
    let requests = replay.into_requests();
    let outcomes = p.outcomes();
    let alarms = p.alarms().to_vec();
    let utilization = if end_t > 0 {
        Some(p.utilization_report(0, end_t)?)
    } else {
        None
    };
    let summary = Summary::build(&outcomes, &requests, alarms.len());
    Ok(Report {
        scenario: sc.name.clone(),
        mode,
        seed: sc.seed,
        duration_s: sc.duration_s,
        end_t,
        summary,
        outcomes,
        utilization,
        requests,
        events: p.log().to_vec(),
        alarms,
    })
}
