use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::CommitRecord;
use crate::model::{AppId, Millis, NodeId};
use crate::resource::{Dim, ResourceVec};
use crate::ResourceVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HollowEntry {
    pub app_id: AppId,
    pub cpu_cores: u64,
    pub terminated_at: Millis,
    pub last_checkpoint_t: Option<Millis>,
    pub hollow_core_seconds: u64,
}

/// Mean committed/capacity per dimension over a time range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilizationReport {
    pub t0: Millis,
    pub t1: Millis,
    pub per_node: BTreeMap<NodeId, ResourceVec<f64>>,
    pub cluster: ResourceVec<f64>,
    /// Core-seconds held by walltime-killed jobs since their last completed
    /// checkpoint (whole runtime without one).
    pub hollow_core_seconds: u64,
    pub hollow: Vec<HollowEntry>,
}

fn ratio(num: u128, den: u128) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub(super) fn build(
    capacity: &BTreeMap<NodeId, ResourceVector>,
    history: &[CommitRecord],
    t0: Millis,
    t1: Millis,
    now: Millis,
    hollow: Vec<HollowEntry>,
) -> UtilizationReport {
    let span = u128::from(t1 - t0);
    let mut integral: BTreeMap<&NodeId, ResourceVec<u128>> =
        capacity.keys().map(|n| (n, ResourceVec::zero())).collect();
    for rec in history {
        let from = rec.from.max(t0);
        let to = rec.to.unwrap_or(now).min(t1);
        if from >= to {
            continue;
        }
        let dt = u128::from(to - from);
        if let Some(acc) = integral.get_mut(&rec.node_id) {
            *acc = acc.map(|d, v| v + u128::from(rec.amount.get(d)) * dt);
        }
    }

    let mut per_node = BTreeMap::new();
    let mut total_used = ResourceVec::<u128>::zero();
    let mut total_cap = ResourceVec::<u128>::zero();
    for (node, acc) in &integral {
        let cap = capacity[*node];
        per_node.insert(
            (*node).clone(),
            acc.map(|d, v| ratio(v, u128::from(cap.get(d)) * span)),
        );
        total_used = total_used.map(|d, v| v + acc.get(d));
        total_cap = total_cap.map(|d, v| v + u128::from(cap.get(d)));
    }
    let cluster =
        ResourceVec::<f64>::zero().map(|d, _| ratio(total_used.get(d), total_cap.get(d) * span));
    debug_assert!(Dim::ALL.iter().all(|&d| cluster.get(d) <= 1.0 + 1e-12));

    UtilizationReport {
        t0,
        t1,
        per_node,
        cluster,
        hollow_core_seconds: hollow.iter().map(|h| h.hollow_core_seconds).sum(),
        hollow,
    }
}
