//! End-to-end acceptance checks. Prints one line per criterion and fails if
//! any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use chpc_api::{spawn, Client, Listen};
use chpc_core::images::ImageRegistry;
use chpc_core::model::{
    AppId, AppKind, ApplicationSpec, EnvEventKind, LogicalState, Millis, NodeId, NodeSpec, Phase,
    PhaseKind, PhysicalSample, ReservationStatus, WorkloadTrace,
};
use chpc_core::platform::{LogRecord, Mode, Platform, PlatformConfig};
use chpc_core::scheduler::{Scheduler, SchedulerConfig};
use chpc_core::telemetry::{Bound, BoundaryCondition, Metric, Subject, Telemetry};
use chpc_core::{Dim, ResourceVector};
use chpc_harness::report::RequestRecord;
use chpc_harness::scenario::ScenarioApp;
use chpc_harness::{
    generate, run_scenario, run_scenario_observed, scheduler_only_log, GenParams, Report, Scenario,
};

const GIB: u64 = 1 << 30;

type Outcome = Result<String, String>;

fn scenario(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name);
    Scenario::load(&path).unwrap_or_else(|e| panic!("{e}"))
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn outcome_of<'a>(r: &'a Report, app: &str) -> Result<&'a chpc_core::platform::AppOutcome, String> {
    r.outcome(app)
        .ok_or_else(|| format!("{}: no outcome for {app}", r.scenario))
}

fn duration_s(r: &Report, app: &str) -> Result<u64, String> {
    let o = outcome_of(r, app)?;
    match (o.start_t, o.finished_at) {
        (Some(s), Some(f)) => Ok((f - s) / 1000),
        _ => Err(format!("{}: {app} did not finish", r.scenario)),
    }
}

/// Splits `items` over the available cores and concatenates per-item results
/// in input order.
fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(items.len().max(1));
    let chunk = items.len().div_ceil(workers).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(|| c.iter().map(&f).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().unwrap())
            .collect()
    })
}

// Criteria 1 and 2 share one randomized suite.
struct SuiteStats {
    scenarios: usize,
    ticks: u64,
    task_ticks: u64,
    capacity_violations: Vec<String>,
    guarantee_violations: Vec<String>,
    native_targets: Vec<String>,
}

fn random_suite(n: u64) -> SuiteStats {
    let seeds: Vec<u64> = (0..n).collect();
    let per_seed = par_map(&seeds, |&seed| {
        let sc = generate(seed, GenParams::default());
        let capacity: BTreeMap<NodeId, ResourceVector> = sc
            .cluster
            .iter()
            .map(|n| (n.node_id.clone(), n.capacity))
            .collect();
        let mut ticks = 0u64;
        let mut task_ticks = 0u64;
        let mut cap_bad = Vec::new();
        let mut guar_bad = Vec::new();
        let report = run_scenario_observed(&sc, None, |p, out| {
            ticks += 1;
            for (node, committed) in p.scheduler().committed() {
                let cap = capacity[&node];
                for d in Dim::ALL {
                    if committed.get(d) > cap.get(d) {
                        cap_bad.push(format!("seed {seed} t={} {node} committed {} {} > {}", out.t, d.name(), committed.get(d), cap.get(d)));
                    }
                }
            }
            let mut effective: BTreeMap<&NodeId, [u128; 7]> = BTreeMap::new();
            for task in &out.tasks {
                task_ticks += 1;
                let sum = effective.entry(&task.node_id).or_default();
                for (i, d) in Dim::ALL.into_iter().enumerate() {
                    sum[i] += u128::from(task.effective.get(d));
                    let floor = task.demand.get(d).min(task.reserved.get(d));
                    if task.effective.get(d) < floor {
                        guar_bad.push(format!(
                            "seed {seed} t={} {}/{} {} effective {} < min(demand, reserved) {floor}",
                            out.t,
                            task.app_id,
                            task.task_id,
                            d.name(),
                            task.effective.get(d)
                        ));
                    }
                }
            }
            for (node, sum) in effective {
                let cap = capacity[node];
                for (i, d) in Dim::ALL.into_iter().enumerate() {
                    if sum[i] > u128::from(cap.get(d)) {
                        cap_bad.push(format!("seed {seed} t={} {node} effective {} {} > {}", out.t, d.name(), sum[i], cap.get(d)));
                    }
                }
            }
        })
        .unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        let natives: BTreeSet<&AppId> = report
            .outcomes
            .iter()
            .filter(|o| o.kind == AppKind::Native)
            .map(|o| &o.app_id)
            .collect();
        let native_bad = native_adjust_or_freeze(&report, &natives);
        (ticks, task_ticks, cap_bad, guar_bad, native_bad)
    });
    let mut stats = SuiteStats {
        scenarios: n as usize,
        ticks: 0,
        task_ticks: 0,
        capacity_violations: Vec::new(),
        guarantee_violations: Vec::new(),
        native_targets: Vec::new(),
    };
    for (t, tt, c, g, nb) in per_seed {
        stats.ticks += t;
        stats.task_ticks += tt;
        stats.capacity_violations.extend(c);
        stats.guarantee_violations.extend(g);
        stats.native_targets.extend(nb);
    }
    stats
}

fn native_adjust_or_freeze(report: &Report, natives: &BTreeSet<&AppId>) -> Vec<String> {
    report
        .events
        .iter()
        .filter_map(|e| match &e.record {
            LogRecord::Event { event }
                if matches!(
                    event.event,
                    EnvEventKind::Adjusting | EnvEventKind::Freezing
                ) && natives.contains(&event.app_id) =>
            {
                Some(format!(
                    "{}: {:?} sent to native job {}",
                    report.scenario, event.event, event.app_id
                ))
            }
            LogRecord::Adjusted { app_id, .. } if natives.contains(app_id) => {
                Some(format!("{}: native job {app_id} adjusted", report.scenario))
            }
            _ => None,
        })
        .collect()
}

fn first_violations(v: &[String]) -> String {
    let shown: Vec<&str> = v.iter().take(3).map(String::as_str).collect();
    format!("{} violations, e.g. {}", v.len(), shown.join("; "))
}

fn criterion_1(s: &SuiteStats) -> Outcome {
    ensure(s.capacity_violations.is_empty(), || {
        first_violations(&s.capacity_violations)
    })?;
    Ok(format!(
        "{} scenarios, {} ticks, 0 violations",
        s.scenarios, s.ticks
    ))
}

fn criterion_2(s: &SuiteStats) -> Outcome {
    ensure(s.guarantee_violations.is_empty(), || {
        first_violations(&s.guarantee_violations)
    })?;
    Ok(format!("{} task-ticks, 0 violations", s.task_ticks))
}

/// Alarm instants by brute force. A sample is violating when the mean of the
/// samples in its trailing window breaks the bound. The first violating
/// sample alarms; after that a violating sample alarms only if, since the
/// previous alarm, some unbroken stretch of satisfying samples covered at
/// least one full window.
fn alarm_oracle(
    stream: &[(Millis, u64)],
    bound: Bound,
    threshold: u64,
    window_ms: u64,
) -> Vec<Millis> {
    let violating: Vec<bool> = stream
        .iter()
        .map(|&(t, _)| {
            let window: Vec<u64> = stream
                .iter()
                .filter(|(s, _)| *s <= t && *s + window_ms > t)
                .map(|&(_, v)| v)
                .collect();
            let total: u128 = window.iter().map(|&v| v as u128).sum();
            let limit = threshold as u128 * window.len() as u128;
            match bound {
                Bound::Min => total < limit,
                Bound::Max => total > limit,
            }
        })
        .collect();
    let mut out = Vec::new();
    let mut last: Option<usize> = None;
    for i in 0..stream.len() {
        if !violating[i] {
            continue;
        }
        let fire = match last {
            None => true,
            Some(a) => {
                let mut rearmed = false;
                for start in a + 1..i {
                    for end in start..i {
                        if (start..=end).all(|k| !violating[k])
                            && stream[end].0 - stream[start].0 + 1000 >= window_ms
                        {
                            rearmed = true;
                        }
                    }
                }
                rearmed
            }
        };
        if fire {
            out.push(stream[i].0);
            last = Some(i);
        }
    }
    out
}

fn criterion_3() -> Outcome {
    let mut compared = 0usize;
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0xa1a7 ^ seed);
        let mut tel = Telemetry::default();
        let (channel, _) = tel.open_channel();
        let conds: Vec<(Bound, u64, u64)> = (0..rng.gen_range(1..=4))
            .map(|_| {
                let bound = if rng.gen_bool(0.5) {
                    Bound::Max
                } else {
                    Bound::Min
                };
                (bound, rng.gen_range(0..200), rng.gen_range(1..=6))
            })
            .collect();
        for (i, &(bound, threshold, window_s)) in conds.iter().enumerate() {
            tel.register_boundary(BoundaryCondition {
                bc_id: format!("bc{i}"),
                subject: Subject::App("a".into()),
                metric: Metric::FsBpsUsed,
                bound,
                threshold: threshold as f64,
                window_s,
                subscriber: channel,
            })
            .map_err(|e| e.to_string())?;
        }
        let mut clocks = [0u64; 2];
        let mut streams: [Vec<(Millis, u64)>; 2] = [Vec::new(), Vec::new()];
        let mut got = Vec::new();
        for _ in 0..rng.gen_range(1..=150) {
            let task = rng.gen_range(0..2usize);
            clocks[task] += rng.gen_range(1..=2) * 1000;
            let v = rng.gen_range(0..200);
            streams[task].push((clocks[task], v));
            let sample = PhysicalSample {
                t: clocks[task],
                app_id: "a".into(),
                task_id: task as u32,
                node_id: "n0".into(),
                cpu_cores_used: 1.0,
                memory_bytes_used: GIB,
                fs_bps_used: v,
                fs_iops_used: 0,
                storage_bytes_used: 0,
                net_in_bps_used: 0,
                net_out_bps_used: 0,
                interproc_bps_used: 0,
            };
            for a in tel.publish_sample(&sample).map_err(|e| e.to_string())? {
                got.push((a.bc_id, a.task_id.unwrap_or(u32::MAX), a.t));
            }
        }
        let mut want = Vec::new();
        for (i, &(bound, threshold, window_s)) in conds.iter().enumerate() {
            for (task, s) in streams.iter().enumerate() {
                for t in alarm_oracle(s, bound, threshold, window_s * 1000) {
                    want.push((format!("bc{i}"), task as u32, t));
                }
            }
        }
        got.sort();
        want.sort();
        ensure(got == want, || {
            format!("stream {seed}: analytics {got:?} vs oracle {want:?}")
        })?;
        compared += want.len();
    }
    Ok(format!("200 streams, {compared} alarms matched"))
}

/// Seconds to finish `phases` of compute when the per-task core allocation is
/// `before` until `switch_s` and `after` from then on. Work does not carry
/// over between phases.
fn compute_completion_s(phases: &[Phase], before: u64, after: u64, switch_s: u64) -> u64 {
    let mut t = 0;
    for p in phases {
        assert_eq!(p.kind, PhaseKind::Compute);
        let mut left = p.work_amount;
        while left > 0 {
            let cores = if t < switch_s { before } else { after };
            left = left.saturating_sub(p.demand.cpu_cores.min(cores));
            t += 1;
        }
    }
    t
}

fn adjust_record(r: &Report) -> Result<&RequestRecord, String> {
    r.requests
        .iter()
        .find(|q| q.op == "adjust")
        .ok_or_else(|| format!("{}: no adjust request", r.scenario))
}

fn criterion_4() -> Outcome {
    let kalman = scenario("kalman.yaml");
    let app = &kalman.apps[0].spec;
    let cores = app.per_task_reservation.cpu_cores * u64::from(app.task_count);
    let asym = run_scenario(&kalman, Some(Mode::Asymmetric)).map_err(|e| e.to_string())?;
    let sym = run_scenario(&kalman, Some(Mode::Symmetric)).map_err(|e| e.to_string())?;
    let k_asym = outcome_of(&asym, "kalman")?;
    let k_sym = outcome_of(&sym, "kalman")?;
    ensure(
        k_asym.status == ReservationStatus::TerminatedWalltime,
        || format!("kalman asymmetric ended {:?}", k_asym.status),
    )?;
    ensure(asym.summary.hollow_core_seconds == cores * 7200, || {
        format!(
            "kalman asymmetric hollow {} != {cores} x 7200",
            asym.summary.hollow_core_seconds
        )
    })?;
    ensure(k_sym.status == ReservationStatus::Completed, || {
        format!("kalman symmetric ended {:?}", k_sym.status)
    })?;
    ensure(sym.summary.hollow_core_seconds == 0, || {
        format!(
            "kalman symmetric hollow {}",
            sym.summary.hollow_core_seconds
        )
    })?;

    let amr = scenario("amr.yaml");
    let spec = &amr.apps[0].spec;
    let step = &amr.script[0];
    let extra = step.payload["delta_per_task"]["cpu_cores"]
        .as_u64()
        .ok_or("amr script has no core delta")?;
    let reserved = spec.per_task_reservation.cpu_cores;
    let baseline = compute_completion_s(&spec.trace.phases, reserved, reserved, u64::MAX);
    let adjusted = compute_completion_s(&spec.trace.phases, reserved, reserved + extra, step.at_s);

    let granted = run_scenario(&amr, Some(Mode::Symmetric)).map_err(|e| e.to_string())?;
    let q = adjust_record(&granted)?;
    ensure(q.payload["decision"] == json!("Granted"), || {
        format!("amr adjust: {}", q.payload)
    })?;
    let granted_cores = q.payload["granted_delta"]["cpu_cores"]
        .as_u64()
        .unwrap_or(0)
        * u64::from(spec.task_count);
    ensure(granted_cores == 128, || {
        format!("amr granted {granted_cores} cores")
    })?;
    let legacy = run_scenario(&amr, Some(Mode::Asymmetric)).map_err(|e| e.to_string())?;
    let (t_adj, t_base) = (duration_s(&granted, "amr")?, duration_s(&legacy, "amr")?);
    ensure(t_base == baseline && t_adj == adjusted, || {
        format!("amr took {t_adj} s / {t_base} s, trace predicts {adjusted} s / {baseline} s")
    })?;

    // With every spare core taken the same request is denied and nothing moves.
    let mut full = amr.clone();
    let mut blocker = full.apps[0].clone();
    blocker.spec.app_id = "blocker".into();
    blocker.spec.kind = AppKind::Native;
    blocker.spec.image = None;
    blocker.spec.per_task_reservation = ResourceVector {
        cpu_cores: 32,
        memory_bytes: 64 * GIB,
        ..ResourceVector::zero()
    };
    blocker.spec.walltime_limit_s = 10_000;
    blocker.spec.trace.phases.truncate(1);
    blocker.spec.trace.phases[0].work_amount = 32 * 9_000;
    blocker.spec.trace.phases[0].progress_at_end = 1.0;
    full.apps.push(blocker);
    let denied = run_scenario(&full, Some(Mode::Symmetric)).map_err(|e| e.to_string())?;
    let q = adjust_record(&denied)?;
    ensure(q.payload["decision"] == json!("Denied"), || {
        format!("amr adjust on a full cluster: {}", q.payload)
    })?;
    let t_denied = duration_s(&denied, "amr")?;
    ensure(t_denied == baseline, || {
        format!("denied amr took {t_denied} s, expected {baseline} s")
    })?;

    Ok(format!(
        "kalman hollow {} / 0 core-s; amr +{granted_cores} cores Granted, {t_base} s -> {t_adj} s; Denied when full",
        asym.summary.hollow_core_seconds
    ))
}

/// Max-min fair split of `capacity` over `demands`.
fn water_fill(capacity: u64, demands: &[u64]) -> Vec<u64> {
    let mut share = vec![0u64; demands.len()];
    let mut left = capacity;
    let mut open: Vec<usize> = (0..demands.len()).filter(|&i| demands[i] > 0).collect();
    while left > 0 && !open.is_empty() {
        let each = (left / open.len() as u64).max(1);
        let mut next = Vec::new();
        for &i in &open {
            if left == 0 {
                break;
            }
            let give = each.min(demands[i] - share[i]).min(left);
            share[i] += give;
            left -= give;
            if share[i] < demands[i] {
                next.push(i);
            }
        }
        open = next;
    }
    share
}

fn criterion_5() -> Outcome {
    let sc = scenario("io-contention.yaml");
    let mut alone = sc.clone();
    alone
        .apps
        .retain(|a| a.spec.app_id.as_str() == "checkpointer");
    let solo = duration_s(
        &run_scenario(&alone, Some(Mode::Symmetric)).map_err(|e| e.to_string())?,
        "checkpointer",
    )?;
    let sym = duration_s(
        &run_scenario(&sc, Some(Mode::Symmetric)).map_err(|e| e.to_string())?,
        "checkpointer",
    )?;
    let asym = duration_s(
        &run_scenario(&sc, Some(Mode::Asymmetric)).map_err(|e| e.to_string())?,
        "checkpointer",
    )?;

    let fs_demand = |a: &ScenarioApp| a.spec.trace.phases[0].demand.fs_bps;
    let capacity = sc.cluster[0].capacity.fs_bps;
    let demands: Vec<u64> = sc.apps.iter().map(fs_demand).collect();
    let shares = water_fill(capacity, &demands);
    let ck = sc
        .apps
        .iter()
        .position(|a| a.spec.app_id.as_str() == "checkpointer")
        .unwrap();
    let predicted = sc.apps[ck].spec.trace.phases[0]
        .work_amount
        .div_ceil(shares[ck]);

    ensure(sym == solo, || {
        format!("symmetric {sym} s vs single-tenant {solo} s")
    })?;
    ensure(asym == predicted, || {
        format!("asymmetric {asym} s vs water-filling {predicted} s")
    })?;
    ensure(asym > sym, || {
        format!("asymmetric {asym} s not slower than symmetric {sym} s")
    })?;
    Ok(format!("checkpointer {solo} s alone, {sym} s symmetric, {asym} s asymmetric (oracle {predicted} s)"))
}

fn queue_job(id: &str, tasks: u32, cores: u64, mem_gib: u64, walltime_s: u64) -> ApplicationSpec {
    ApplicationSpec {
        app_id: id.into(),
        kind: AppKind::Native,
        image: None,
        task_count: tasks,
        per_task_reservation: ResourceVector {
            cpu_cores: cores,
            memory_bytes: mem_gib * GIB,
            ..ResourceVector::zero()
        },
        walltime_limit_s: walltime_s,
        trace: WorkloadTrace {
            phases: vec![Phase {
                kind: PhaseKind::Compute,
                work_amount: cores,
                demand: ResourceVector {
                    cpu_cores: cores,
                    ..ResourceVector::zero()
                },
                emits_state: LogicalState::Running,
                progress_at_end: 1.0,
                interproc_bps: 0,
            }],
        },
    }
}

/// Random queue evolution: submissions, early completions and starts. After
/// every step, no job queued before the newest one may be planned later than
/// it was.
fn criterion_6() -> Outcome {
    let images = ImageRegistry::default();
    let mut checks = 0usize;
    for seed in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0xbacf ^ seed);
        let nodes: Vec<NodeSpec> = (0..rng.gen_range(1..=4))
            .map(|i| NodeSpec {
                node_id: format!("n{i}").as_str().into(),
                capacity: ResourceVector {
                    cpu_cores: rng.gen_range(4..=32),
                    memory_bytes: rng.gen_range(1..=8) * 16 * GIB,
                    ..ResourceVector::zero()
                },
            })
            .collect();
        let mut s =
            Scheduler::new(&nodes, SchedulerConfig::default()).map_err(|e| e.to_string())?;
        let mut now: Millis = 0;
        let mut submitted: Vec<AppId> = Vec::new();
        for step in 0..rng.gen_range(2..=25) {
            let before = s.plan(now);
            let mut newest: Option<AppId> = None;
            match rng.gen_range(0..4) {
                0 | 1 => {
                    let id = format!("j{step:02}");
                    let spec = queue_job(
                        &id,
                        rng.gen_range(1..=3),
                        rng.gen_range(1..=16),
                        rng.gen_range(1..=48),
                        rng.gen_range(1..=30) * 100,
                    );
                    if s.submit(&spec, &images, now).is_ok() {
                        submitted.push(spec.app_id.clone());
                        newest = Some(spec.app_id);
                    }
                }
                2 => {
                    let active: Vec<AppId> = s
                        .reservations()
                        .filter(|r| r.status == ReservationStatus::Active)
                        .map(|r| r.app_id.clone())
                        .collect();
                    if let Some(app) = active.get(rng.gen_range(0..active.len().max(1))) {
                        s.complete(app, now).map_err(|e| e.to_string())?;
                    }
                }
                _ => {
                    now += rng.gen_range(1..=600) * 1000;
                    s.enforce_walltime(now);
                    s.start_due(now);
                    continue;
                }
            }
            let after = s.plan(now);
            ensure(
                after.first_capacity_violation(&s.capacities()).is_none(),
                || format!("queue {seed}: plan over capacity"),
            )?;
            for app in submitted.iter().filter(|a| Some(*a) != newest.as_ref()) {
                if let (Some(b), Some(a)) = (before.planned_start(app), after.planned_start(app)) {
                    checks += 1;
                    ensure(a <= b, || {
                        format!("queue {seed} step {step}: {app} moved from {b} to {a}")
                    })?;
                }
            }
        }
    }
    Ok(format!(
        "1000 queues, {checks} planned starts never delayed"
    ))
}

fn log_json(entries: &[chpc_core::platform::LogEntry]) -> String {
    serde_json::to_string(entries).expect("log serializes")
}

fn criterion_7(suite: &SuiteStats) -> Outcome {
    let mut runs = 0usize;
    let mut check = |sc: &Scenario| -> Result<(), String> {
        let reference = log_json(&scheduler_only_log(sc).map_err(|e| format!("{}: {e}", sc.name))?);
        for mode in [Mode::Symmetric, Mode::Asymmetric] {
            let report = run_scenario(sc, Some(mode)).map_err(|e| e.to_string())?;
            let natives: BTreeSet<&AppId> = report.outcomes.iter().map(|o| &o.app_id).collect();
            let bad = native_adjust_or_freeze(&report, &natives);
            ensure(bad.is_empty(), || bad.join("; "))?;
            ensure(log_json(&report.events) == reference, || {
                format!(
                    "{} ({mode:?}): log differs from the scheduler-only run",
                    sc.name
                )
            })?;
            runs += 1;
        }
        Ok(())
    };
    check(&scenario("native-only.yaml"))?;

    // Random native workloads, with scripted adjust and freeze attempts only.
    for seed in 0..40u64 {
        let mut sc = generate(
            seed,
            GenParams {
                max_apps: 24,
                ..GenParams::default()
            },
        );
        sc.apps.retain(|a| a.spec.kind == AppKind::Native);
        sc.script
            .retain(|s| s.op == "adjust" || s.op == "freeze_app");
        let ids: BTreeSet<String> = sc.apps.iter().map(|a| a.spec.app_id.to_string()).collect();
        sc.script.retain(|s| {
            s.payload["app_id"]
                .as_str()
                .is_some_and(|a| ids.contains(a))
        });
        check(&sc)?;
    }
    ensure(suite.native_targets.is_empty(), || {
        suite.native_targets.join("; ")
    })?;
    Ok(format!(
        "{runs} native-only runs match the scheduler-only log; no native job adjusted or frozen"
    ))
}

fn criterion_8() -> Outcome {
    let mut cases: Vec<Scenario> = [
        "kalman.yaml",
        "amr.yaml",
        "io-contention.yaml",
        "native-only.yaml",
        "empty.yaml",
    ]
    .into_iter()
    .map(scenario)
    .collect();
    cases.extend((1000..1030u64).map(|seed| generate(seed, GenParams::default())));
    let digests = par_map(&cases, |sc| {
        [Mode::Symmetric, Mode::Asymmetric].map(|m| {
            let a = run_scenario(sc, Some(m)).unwrap().to_json();
            let b = run_scenario(sc, Some(m)).unwrap().to_json();
            (sc.name.clone(), a == b)
        })
    });
    let differing: Vec<String> = digests
        .into_iter()
        .flatten()
        .filter(|(_, same)| !same)
        .map(|(n, _)| n)
        .collect();
    ensure(differing.is_empty(), || {
        format!("reports differ for {differing:?}")
    })?;
    Ok(format!(
        "{} scenario x mode pairs byte-identical across runs",
        cases.len() * 2
    ))
}

fn fuzz_app(id: &str, cores: u64) -> Value {
    json!({
        "app_id": id,
        "kind": "native",
        "task_count": 1,
        "per_task_reservation": {"cpu_cores": cores, "memory_bytes": 200 * GIB},
        "walltime_limit_s": 100,
        "trace": [{"kind": "compute", "work_amount": cores * 50, "demand": {"cpu_cores": cores}, "emits_state": "Running", "progress_at_end": 1.0}]
    })
}

fn fuzz_client(addr: Listen, seed: u64, rounds: usize) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = Client::connect(&addr).map_err(|e| e.to_string())?;
    c.hello(&format!("fuzz{seed}"), seed.is_multiple_of(5))
        .map_err(|e| e.to_string())?;
    c.call("subscribe_events", json!({}))
        .map_err(|e| e.to_string())?;
    let mut expected = Vec::new();
    let mut wire = Vec::new();
    for i in 0..rounds {
        let id = json!(format!("{seed}:{i}"));
        let app = format!("z{seed}-{}", rng.gen_range(0..5));
        let line = match rng.gen_range(0..9) {
            0 => json!({"id": id, "op": "submit", "payload": fuzz_app(&app, rng.gen_range(1..=4))}),
            1 => json!({"id": id, "op": "status", "payload": {"app_id": app}}),
            2 => {
                json!({"id": id, "op": "adjust", "payload": {"app_id": app, "delta_per_task": {"cpu_cores": 1}}})
            }
            3 => json!({"id": id, "op": "cancel", "payload": {"app_id": app}}),
            4 => json!({"id": id, "op": "nonexistent"}),
            5 => json!({"id": id, "op": "adjust", "payload": "not an object"}),
            6 => json!({"id": id, "op": "physical_model", "payload": {"app_id": app}}),
            7 => json!({"id": id, "op": "freeze_app", "payload": {"app_id": app}}),
            _ => json!({"id": id, "op": "env_model"}),
        };
        serde_json::to_writer(&mut wire, &line).unwrap();
        wire.push(b'\n');
        expected.push(id);
    }
    c.send_raw(&wire).map_err(|e| e.to_string())?;
    let mut got = Vec::new();
    while got.len() < expected.len() {
        let r = c.read_reply().map_err(|e| e.to_string())?;
        if !r.is_push() {
            got.push(r.id);
        }
    }
    ensure(got == expected, || {
        format!("fuzz client {seed}: replies out of order or duplicated")
    })?;
    Ok(got.len())
}

fn scripted_session(addr: &Listen) -> Result<(), String> {
    let mut c = Client::connect(addr).map_err(|e| e.to_string())?;
    c.record();
    c.hello("amr", false).map_err(|e| e.to_string())?;
    c.call("register_image", json!({"image_id": "amr-env", "name": "amr", "owner": "amr", "content_digest": "sha256:01"}))
        .map_err(|e| e.to_string())?;
    let mut spec = fuzz_app("amr", 32);
    spec["kind"] = json!("container");
    spec["image"] = json!("amr-env");
    spec["task_count"] = json!(4);
    spec["per_task_reservation"]["memory_bytes"] = json!(160 * GIB);
    spec["walltime_limit_s"] = json!(100_000);
    spec["trace"][0]["work_amount"] = json!(64 * 100_000);
    spec["trace"][0]["demand"]["cpu_cores"] = json!(64);
    c.call("submit", spec).map_err(|e| e.to_string())?;
    c.call("subscribe_events", json!({"app_id": "amr"}))
        .map_err(|e| e.to_string())?;
    let deadline = Instant::now() + Duration::from_secs(20);
    loop {
        let st = c
            .call("status", json!({"app_id": "amr"}))
            .map_err(|e| e.to_string())?;
        if st["reservation"]["status"] == json!("Active") {
            break;
        }
        ensure(Instant::now() < deadline, || {
            format!("amr never started: {st}")
        })?;
        std::thread::sleep(Duration::from_millis(5));
    }
    c.take_transcript();
    let outcome = c
        .call(
            "adjust",
            json!({"app_id": "amr", "delta_per_task": {"cpu_cores": 32}}),
        )
        .map_err(|e| e.to_string())?;
    ensure(outcome["decision"] == json!("Granted"), || {
        format!("adjust: {outcome}")
    })?;
    let lines = c.take_transcript();
    let push = lines.iter().position(|r| {
        r.is_push()
            && r.payload
                .as_ref()
                .is_some_and(|p| p["event"] == json!("Adjusting"))
    });
    let reply = lines.iter().position(|r| !r.is_push());
    ensure(matches!((push, reply), (Some(p), Some(r)) if p < r), || {
        "Adjusting push did not precede the adjust reply".into()
    })?;
    let st = c
        .call("status", json!({"app_id": "amr"}))
        .map_err(|e| e.to_string())?;
    ensure(
        st["reservation"]["per_task"]["cpu_cores"] == json!(64),
        || format!("status after adjust: {st}"),
    )?;
    let replies: Vec<Value> = c
        .take_transcript()
        .into_iter()
        .filter(|r| !r.is_push())
        .map(|r| r.id)
        .collect();
    ensure(replies.len() == 1, || {
        format!("status produced {} replies", replies.len())
    })?;
    Ok(())
}

fn criterion_9() -> Outcome {
    let nodes: Vec<NodeSpec> = (0..8)
        .map(|i| NodeSpec {
            node_id: format!("n{i}").as_str().into(),
            capacity: ResourceVector {
                cpu_cores: 64,
                memory_bytes: 256 * GIB,
                ..ResourceVector::zero()
            },
        })
        .collect();
    let platform = Arc::new(Mutex::new(
        Platform::new(&nodes, PlatformConfig::default()).map_err(|e| e.to_string())?,
    ));
    let server = spawn(
        &Listen::Tcp("127.0.0.1:0".into()),
        platform,
        Some(Duration::from_millis(5)),
    )
    .map_err(|e| e.to_string())?;
    let fuzzers: Vec<_> = (0..16u64)
        .map(|seed| {
            let addr = server.addr().clone();
            std::thread::spawn(move || fuzz_client(addr, seed, 200))
        })
        .collect();
    let scripted = scripted_session(server.addr());
    let mut answered = 0;
    for f in fuzzers {
        answered += f.join().map_err(|_| "fuzz client panicked".to_string())??;
    }
    scripted?;
    ensure(answered == 16 * 200, || format!("{answered} fuzz replies"))?;
    Ok(format!(
        "scripted session ordered correctly beside 16 fuzz clients ({answered} replies, each once)"
    ))
}

fn main() {
    let started = Instant::now();
    let suite = random_suite(500);
    let results: Vec<(u8, &str, Outcome)> = vec![
        (1, "capacity safety", criterion_1(&suite)),
        (2, "guaranteed share", criterion_2(&suite)),
        (3, "alarm oracle equivalence", criterion_3()),
        (4, "hollow utilization and adjustment", criterion_4()),
        (5, "I/O isolation", criterion_5()),
        (6, "backfill never delays", criterion_6()),
        (7, "native coexistence", criterion_7(&suite)),
        (8, "determinism", criterion_8()),
        (9, "wire protocol under load", criterion_9()),
    ];
    let mut failed = 0;
    for (n, name, r) in &results {
        match r {
            Ok(detail) => println!("criterion {n}: PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n}: FAIL  {name}: {why}");
            }
        }
    }
    println!(
        "acceptance: {}/9 passed in {:.1} s",
        9 - failed,
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
