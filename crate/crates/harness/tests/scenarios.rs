use std::path::{Path, PathBuf};

use proptest::prelude::*;
use serde_json::json;

use chpc_core::model::{PhaseKind, ReservationStatus};
use chpc_core::platform::Mode;
use chpc_harness::reference::analytic_run;
use chpc_harness::{generate, run_scenario, GenParams, HarnessError, Report, Scenario};

fn path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn load(name: &str) -> Scenario {
    Scenario::load(&path(name)).unwrap()
}

fn run(sc: &Scenario, mode: Mode) -> Report {
    run_scenario(sc, Some(mode)).unwrap()
}

fn finished_s(r: &Report, app: &str) -> u64 {
    r.outcome(app).unwrap().finished_at.unwrap() / 1000
}

#[test]
fn every_shipped_scenario_runs_in_both_modes() {
    let mut names: Vec<String> = std::fs::read_dir(path(""))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".yaml"))
        .collect();
    names.sort();
    assert!(names.len() >= 5, "{names:?}");
    for name in names {
        let sc = load(&name);
        for mode in [Mode::Symmetric, Mode::Asymmetric] {
            let r = run(&sc, mode);
            assert_eq!(r.summary.apps, sc.apps.len(), "{name}");
            assert_eq!(r.summary.unfinished, 0, "{name} {mode:?}");
        }
    }
}

#[test]
fn kalman_finishes_only_when_it_may_extend_its_walltime() {
    let sc = load("kalman.yaml");
    let spec = &sc.apps[0].spec;
    // Each phase is split evenly over the tasks, which run at their reserved cores.
    let needed_s: u64 = spec
        .trace
        .phases
        .iter()
        .map(|p| p.work_amount / p.demand.cpu_cores.min(spec.per_task_reservation.cpu_cores))
        .sum();
    assert_eq!(needed_s, 4 * 3600);
    assert_eq!(spec.walltime_limit_s, 2 * 3600);

    let sym = run(&sc, Mode::Symmetric);
    assert_eq!(
        sym.outcome("kalman").unwrap().status,
        ReservationStatus::Completed
    );
    assert_eq!(finished_s(&sym, "kalman"), needed_s);
    let adjust = sym.requests.iter().find(|q| q.op == "adjust").unwrap();
    assert_eq!(adjust.payload["granted_extension_s"], json!(7800));

    let asym = run(&sc, Mode::Asymmetric);
    let o = asym.outcome("kalman").unwrap();
    assert_eq!(o.status, ReservationStatus::TerminatedWalltime);
    assert_eq!(o.finished_at, Some(7200 * 1000));
    assert_eq!(asym.summary.rejected_requests, 2);
    assert!(asym
        .requests
        .iter()
        .filter(|q| !q.ok)
        .all(|q| q.error.as_ref().unwrap().code == "policy_disabled"));
}

#[test]
fn amr_phases_follow_the_trace() {
    let sc = load("amr.yaml");
    let run_ = analytic_run(&sc.apps[0]).unwrap();
    let asym = run(&sc, Mode::Asymmetric);
    assert_eq!(Some(finished_s(&asym, "amr") * 1000), run_.runtime);
    let sym = run(&sc, Mode::Symmetric);
    assert!(finished_s(&sym, "amr") < finished_s(&asym, "amr"));
}

#[test]
fn io_contention_scanner_finishes_at_the_same_time_in_both_modes() {
    let sc = load("io-contention.yaml");
    let cap = sc.cluster[0].capacity.fs_bps;
    let scan = &sc.apps[1].spec.trace.phases[0];
    assert_eq!(scan.kind, PhaseKind::FsIo);
    // Bytes are conserved: the node moves at full rate while both stream.
    let total = sc
        .apps
        .iter()
        .map(|a| a.spec.trace.phases[0].work_amount)
        .sum::<u64>();
    let both_busy_until = |r: &Report| finished_s(r, "checkpointer");
    for mode in [Mode::Symmetric, Mode::Asymmetric] {
        let r = run(&sc, mode);
        assert!(both_busy_until(&r) * cap <= total);
        assert_eq!(finished_s(&r, "scanner"), total / cap, "{mode:?}");
    }
}

#[test]
fn native_only_scripted_requests_are_refused() {
    let sc = load("native-only.yaml");
    for (mode, code) in [
        (Mode::Symmetric, "native_job"),
        (Mode::Asymmetric, "policy_disabled"),
    ] {
        let r = run(&sc, mode);
        let scripted: Vec<_> = r
            .requests
            .iter()
            .filter(|q| q.tenant == "operator" && q.op != "register_image")
            .collect();
        assert_eq!(scripted.len(), 2);
        for q in scripted {
            assert_eq!(
                q.error.as_ref().map(|e| e.code.as_str()),
                Some(code),
                "{mode:?} {}",
                q.op
            );
        }
    }
}

#[test]
fn empty_scenario_reports_nothing() {
    let r = run(&load("empty.yaml"), Mode::Symmetric);
    assert_eq!(r.end_t, 0);
    assert!(r.utilization.is_none());
    assert!(r.events.is_empty() && r.outcomes.is_empty());
    assert_eq!(r.summary.makespan_s, Some(0));
}

#[test]
fn symmetric_mode_never_wastes_more_than_asymmetric_on_shipped_scenarios() {
    for name in [
        "kalman.yaml",
        "amr.yaml",
        "io-contention.yaml",
        "native-only.yaml",
    ] {
        let sc = load(name);
        let sym = run(&sc, Mode::Symmetric);
        let asym = run(&sc, Mode::Asymmetric);
        assert!(
            sym.summary.hollow_core_seconds <= asym.summary.hollow_core_seconds,
            "{name}"
        );
        assert!(sym.summary.completed >= asym.summary.completed, "{name}");
    }
}

#[test]
fn report_records_every_request_and_outcome() {
    let sc = generate(7, GenParams::default());
    let r = run_scenario(&sc, None).unwrap();
    assert_eq!(r.mode, sc.mode);
    assert_eq!(
        r.requests.len(),
        sc.images.len() + sc.apps.len() + sc.script.len()
    );
    let s = &r.summary;
    assert_eq!(
        s.completed + s.terminated_walltime + s.terminated_error + s.cancelled + s.unfinished,
        s.apps
    );
    assert_eq!(
        s.rejected_requests,
        r.requests.iter().filter(|q| !q.ok).count()
    );
    assert_eq!(s.alarms, r.alarms.len());
    let back: Report = serde_json::from_str(&r.to_json()).unwrap();
    assert_eq!(back.to_json(), r.to_json());
    assert_eq!(r.digest().len(), 64);
    assert!(r.render_text().contains(&format!(
        "mode {}",
        if sc.mode == Mode::Symmetric {
            "symmetric"
        } else {
            "asymmetric"
        }
    )));
}

#[test]
fn parse_errors_carry_a_location() {
    let err =
        Scenario::parse("schema: 1\nname: x\nduration_s: [\n", Path::new("bad.yaml")).unwrap_err();
    match err {
        HarnessError::Parse { line, path, .. } => {
            assert!(line >= 3);
            assert_eq!(path, Path::new("bad.yaml"));
        }
        other => panic!("{other:?}"),
    }
    let err = Scenario::parse(
        "schema: 1\nname: x\nduration_s: 1\nbogus: 2\n",
        Path::new("u.yaml"),
    )
    .unwrap_err();
    assert!(err.to_string().contains("bogus"), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn load_names_a_missing_file() {
    let err = Scenario::load(Path::new("/nonexistent/x.yaml")).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/x.yaml"), "{err}");
    assert_eq!(err.exit_code(), 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generated_scenarios_survive_a_yaml_round_trip(seed in any::<u64>()) {
        let sc = generate(seed, GenParams { max_apps: 16, ..GenParams::default() });
        let back = Scenario::parse(&sc.to_yaml(), Path::new("gen.yaml")).unwrap();
        prop_assert_eq!(back, sc);
    }

    #[test]
    fn same_scenario_same_report(seed in any::<u64>()) {
        let params = GenParams { max_nodes: 4, max_apps: 12, duration_s: 200, script_steps: 8 };
        let sc = generate(seed, params);
        let a = run_scenario(&sc, None).unwrap();
        let b = run_scenario(&generate(seed, params), None).unwrap();
        prop_assert_eq!(a.digest(), b.digest());
    }
}
