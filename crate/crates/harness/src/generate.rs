//! Seeded random scenarios for property suites and `chpc generate`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use chpc_core::model::{
    AppKind, ApplicationSpec, EnvironmentImage, LogicalState, NodeSpec, Phase, PhaseKind,
    WorkloadTrace,
};
use chpc_core::platform::Mode;
use chpc_core::ResourceVector;

use crate::scenario::{Scenario, ScenarioApp, ScriptStep, SCHEMA_VERSION};

const GIB: u64 = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenParams {
    pub max_nodes: usize,
    pub max_apps: usize,
    pub duration_s: u64,
    pub script_steps: usize,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            max_nodes: 16,
            max_apps: 64,
            duration_s: 600,
            script_steps: 24,
        }
    }
}

fn node(rng: &mut ChaCha8Rng, i: usize) -> NodeSpec {
    NodeSpec {
        node_id: format!("n{i:02}").as_str().into(),
        capacity: ResourceVector {
            cpu_cores: *[8, 16, 32, 64].choose(rng).unwrap(),
            memory_bytes: *[32, 64, 128, 256].choose(rng).unwrap() * GIB,
            net_in_bps: rng.gen_range(1..=10) * 1_000_000_000,
            net_out_bps: rng.gen_range(1..=10) * 1_000_000_000,
            fs_bps: rng.gen_range(1..=10) * 100_000_000,
            fs_iops: rng.gen_range(1..=50) * 1000,
            storage_bytes: rng.gen_range(1..=20) * 100 * GIB,
        },
    }
}

fn frac(rng: &mut ChaCha8Rng, cap: u64) -> u64 {
    match rng.gen_range(0..4) {
        0 => 0,
        _ => cap / rng.gen_range(2..=8),
    }
}

// Demands straddle the reservation so both capped and surplus cases occur.
fn around(rng: &mut ChaCha8Rng, r: u64, floor: u64) -> u64 {
    let base = r.max(floor);
    match rng.gen_range(0..3) {
        0 => base / 2,
        1 => base,
        _ => base.saturating_mul(2),
    }
    .max(1)
}

/// A reservation that fits on the smallest node, with I/O for containers.
fn reservation(rng: &mut ChaCha8Rng, smallest: &ResourceVector, kind: AppKind) -> ResourceVector {
    let mut r = ResourceVector::zero();
    r.cpu_cores = (smallest.cpu_cores / rng.gen_range(2..=8)).max(1);
    r.memory_bytes = (smallest.memory_bytes / rng.gen_range(2..=16)).max(1);
    if kind == AppKind::Container {
        r.net_in_bps = frac(rng, smallest.net_in_bps);
        r.net_out_bps = frac(rng, smallest.net_out_bps);
        r.fs_bps = frac(rng, smallest.fs_bps);
        r.fs_iops = frac(rng, smallest.fs_iops);
        r.storage_bytes = frac(rng, smallest.storage_bytes);
    }
    r
}

fn phase(
    rng: &mut ChaCha8Rng,
    reserved: &ResourceVector,
    kind: AppKind,
    progress_at_end: f64,
) -> Phase {
    let kinds: &[PhaseKind] = match kind {
        AppKind::Native => &[
            PhaseKind::Compute,
            PhaseKind::Compute,
            PhaseKind::Checkpoint,
            PhaseKind::Idle,
        ],
        AppKind::Container => &[
            PhaseKind::Compute,
            PhaseKind::FsIo,
            PhaseKind::NetIo,
            PhaseKind::Checkpoint,
            PhaseKind::Idle,
        ],
    };
    let pk = *kinds.choose(rng).unwrap();
    let mut demand = ResourceVector {
        cpu_cores: around(rng, reserved.cpu_cores, 1),
        memory_bytes: around(rng, reserved.memory_bytes, GIB).min(reserved.memory_bytes.max(1) * 2),
        ..ResourceVector::zero()
    };
    let mut interproc_bps = 0;
    let work_amount;
    match pk {
        PhaseKind::Compute => work_amount = demand.cpu_cores * rng.gen_range(5..=60),
        PhaseKind::FsIo => {
            demand.fs_bps = around(rng, reserved.fs_bps, 50_000_000);
            demand.fs_iops = around(rng, reserved.fs_iops, 500);
            work_amount = demand.fs_bps * rng.gen_range(5..=60);
        }
        PhaseKind::NetIo => {
            demand.net_in_bps = around(rng, reserved.net_in_bps, 100_000_000);
            demand.net_out_bps = around(rng, reserved.net_out_bps, 100_000_000);
            work_amount = (demand.net_in_bps + demand.net_out_bps) * rng.gen_range(5..=60);
        }
        PhaseKind::Checkpoint => {
            demand.fs_bps = reserved.fs_bps / 2;
            work_amount = rng.gen_range(2..=20);
        }
        PhaseKind::Idle => work_amount = rng.gen_range(2..=30),
    }
    if kind == AppKind::Container {
        if rng.gen_bool(0.3) {
            interproc_bps = rng.gen_range(1..=5) * 10_000_000;
        }
        // Occasionally exceed the storage reservation to exercise the error path.
        demand.storage_bytes = match rng.gen_range(0..10) {
            0 => reserved.storage_bytes + GIB,
            1..=4 => reserved.storage_bytes / 2,
            _ => 0,
        };
    }
    let emits_state = match pk {
        PhaseKind::Checkpoint => LogicalState::Checkpointing,
        PhaseKind::Idle => LogicalState::Idle,
        _ => LogicalState::Running,
    };
    Phase {
        kind: pk,
        work_amount,
        demand,
        emits_state,
        progress_at_end,
        interproc_bps,
    }
}

/// Deterministic scenario for `seed`.
pub fn generate(seed: u64, params: GenParams) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_nodes = rng.gen_range(1..=params.max_nodes.max(1));
    let cluster: Vec<NodeSpec> = (0..n_nodes).map(|i| node(&mut rng, i)).collect();
    let smallest = cluster.iter().fold(cluster[0].capacity, |acc, n| {
        acc.map(|d, v| v.min(n.capacity.get(d)))
    });
    let images = vec![EnvironmentImage {
        image_id: "img".into(),
        name: "generated".into(),
        owner: "operator".into(),
        content_digest: format!("sha256:{seed:016x}"),
    }];

    let n_apps = rng.gen_range(0..=params.max_apps);
    let mut apps = Vec::with_capacity(n_apps);
    for i in 0..n_apps {
        let kind = if rng.gen_bool(0.5) {
            AppKind::Container
        } else {
            AppKind::Native
        };
        let reserved = reservation(&mut rng, &smallest, kind);
        let n_phases = rng.gen_range(1..=4);
        let phases = (0..n_phases)
            .map(|k| {
                let p = if k + 1 == n_phases {
                    1.0
                } else {
                    (k + 1) as f64 / n_phases as f64
                };
                phase(&mut rng, &reserved, kind, p)
            })
            .collect();
        let task_count = rng.gen_range(1..=(n_nodes as u32).min(4));
        apps.push(ScenarioApp {
            submit_at_s: rng.gen_range(0..=params.duration_s / 2),
            owner: format!("tenant{}", i % 4),
            spec: ApplicationSpec {
                app_id: format!("app{i:02}").as_str().into(),
                kind,
                image: (kind == AppKind::Container).then(|| "img".into()),
                task_count,
                per_task_reservation: reserved,
                walltime_limit_s: rng.gen_range(30..=300),
                trace: WorkloadTrace { phases },
            },
        });
    }

    let mut script = Vec::new();
    if !apps.is_empty() {
        for _ in 0..rng.gen_range(0..=params.script_steps) {
            let a = &apps[rng.gen_range(0..apps.len())];
            let app_id = a.spec.app_id.as_str();
            let at_s = rng.gen_range(0..=params.duration_s);
            let (op, payload) = match rng.gen_range(0..9) {
                0 | 1 => (
                    "adjust",
                    json!({"app_id": app_id, "delta_per_task": {"cpu_cores": rng.gen_range(-2i64..=4), "fs_bps": rng.gen_range(-1i64..=2) * 50_000_000}}),
                ),
                2 => (
                    "adjust",
                    json!({"app_id": app_id, "walltime_extension_s": rng.gen_range(10..=200)}),
                ),
                3 => ("freeze_app", json!({"app_id": app_id})),
                4 => ("thaw_app", json!({"app_id": app_id})),
                5 => ("cancel", json!({"app_id": app_id})),
                6 => (
                    "drain_node",
                    json!({"node_id": cluster[rng.gen_range(0..n_nodes)].node_id}),
                ),
                7 => (
                    "register_boundary",
                    json!({"bc_id": format!("bc{at_s}"), "subject": {"app": app_id}, "metric": "cpu_cores_used", "bound": "min", "threshold": 1.0, "window_s": rng.gen_range(1..=5)}),
                ),
                _ => (
                    "set_logical_state",
                    json!({"app_id": app_id, "state": "Checkpointing", "progress": 0.5}),
                ),
            };
            script.push(ScriptStep {
                at_s,
                op: op.into(),
                payload,
                tenant: None,
            });
        }
        script.sort_by_key(|s| s.at_s);
    }

    Scenario {
        schema: SCHEMA_VERSION,
        name: format!("generated-{seed}"),
        mode: if rng.gen_bool(0.5) {
            Mode::Symmetric
        } else {
            Mode::Asymmetric
        },
        seed,
        duration_s: params.duration_s,
        grace_s: Some(rng.gen_range(0..=30)),
        cluster,
        images,
        apps,
        script,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_scenarios_validate_and_repeat() {
        for seed in 0..50 {
            let sc = generate(seed, GenParams::default());
            sc.validate().unwrap_or_else(|e| panic!("seed {seed}: {e}"));
            assert_eq!(sc, generate(seed, GenParams::default()));
        }
    }
}
