use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AppId, Millis, NodeId, NodeSample, PhysicalSample, TaskId};

/// What a series or boundary condition is about.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subject {
    App(AppId),
    Node(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    CpuCoresUsed,
    MemoryBytesUsed,
    FsBpsUsed,
    FsIopsUsed,
    StorageBytesUsed,
    NetInBpsUsed,
    NetOutBpsUsed,
    InterprocBpsUsed,
}

impl Metric {
    pub const ALL: [Metric; 8] = [
        Metric::CpuCoresUsed,
        Metric::MemoryBytesUsed,
        Metric::FsBpsUsed,
        Metric::FsIopsUsed,
        Metric::StorageBytesUsed,
        Metric::NetInBpsUsed,
        Metric::NetOutBpsUsed,
        Metric::InterprocBpsUsed,
    ];

    /// Stored units per metric unit. CPU is kept in millicores.
    pub fn scale(self) -> u64 {
        match self {
            Metric::CpuCoresUsed => 1000,
            _ => 1,
        }
    }

    pub fn applies_to_nodes(self) -> bool {
        self != Metric::InterprocBpsUsed
    }

    pub fn of_sample(self, s: &PhysicalSample) -> u64 {
        match self {
            Metric::CpuCoresUsed => (s.cpu_cores_used * 1000.0).round() as u64,
            Metric::MemoryBytesUsed => s.memory_bytes_used,
            Metric::FsBpsUsed => s.fs_bps_used,
            Metric::FsIopsUsed => s.fs_iops_used,
            Metric::StorageBytesUsed => s.storage_bytes_used,
            Metric::NetInBpsUsed => s.net_in_bps_used,
            Metric::NetOutBpsUsed => s.net_out_bps_used,
            Metric::InterprocBpsUsed => s.interproc_bps_used,
        }
    }

    pub fn of_node_sample(self, s: &NodeSample) -> Option<u64> {
        Some(match self {
            Metric::CpuCoresUsed => (s.cpu_cores_used * 1000.0).round() as u64,
            Metric::MemoryBytesUsed => s.memory_bytes_used,
            Metric::FsBpsUsed => s.fs_bps_used,
            Metric::FsIopsUsed => s.fs_iops_used,
            Metric::StorageBytesUsed => s.storage_bytes_used,
            Metric::NetInBpsUsed => s.net_in_bps_used,
            Metric::NetOutBpsUsed => s.net_out_bps_used,
            Metric::InterprocBpsUsed => return None,
        })
    }
}

/// One stream of observations: a node, or one task of an application.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SeriesKey {
    pub subject: Subject,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_id: Option<TaskId>,
}

impl SeriesKey {
    pub fn task(app: &AppId, task: TaskId) -> Self {
        Self {
            subject: Subject::App(app.clone()),
            task_id: Some(task),
        }
    }

    pub fn node(node: &NodeId) -> Self {
        Self {
            subject: Subject::Node(node.clone()),
            task_id: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub t: Millis,
    pub value: f64,
}

#[derive(Debug, Clone, Default)]
struct Series {
    last_t: Option<Millis>,
    values: BTreeMap<Metric, VecDeque<(Millis, u64)>>,
}

/// Fixed-capacity ring buffers of `(t, value)` per series and metric.
#[derive(Debug, Clone)]
pub struct SeriesStore {
    capacity: usize,
    series: BTreeMap<SeriesKey, Series>,
}

impl SeriesStore {
    /// Keeps the newest `retention_points` observations of every series.
    pub fn new(retention_points: usize) -> Self {
        Self {
            capacity: retention_points.max(1),
            series: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Appends one observation of several metrics at `t`.
    pub fn append(&mut self, key: SeriesKey, t: Millis, values: &[(Metric, u64)]) -> Result<()> {
        let s = self.series.entry(key).or_default();
        if let Some(last) = s.last_t {
            if t <= last {
                return Err(Error::OutOfOrderSample { t, last });
            }
        }
        s.last_t = Some(t);
        for &(m, v) in values {
            let buf = s.values.entry(m).or_default();
            if buf.len() == self.capacity {
                buf.pop_front();
            }
            buf.push_back((t, v));
        }
        Ok(())
    }

    pub fn knows(&self, subject: &Subject) -> bool {
        self.keys_of(subject).next().is_some()
    }

    fn keys_of<'a>(&'a self, subject: &'a Subject) -> impl Iterator<Item = &'a SeriesKey> + 'a {
        self.series.keys().filter(move |k| &k.subject == subject)
    }

    /// Raw stored values of one series in `[t0, t1)`.
    pub fn range(
        &self,
        key: &SeriesKey,
        metric: Metric,
        t0: Millis,
        t1: Millis,
    ) -> Vec<(Millis, u64)> {
        let Some(buf) = self.series.get(key).and_then(|s| s.values.get(&metric)) else {
            return Vec::new();
        };
        let lo = buf.partition_point(|&(t, _)| t < t0);
        let hi = buf.partition_point(|&(t, _)| t < t1);
        buf.range(lo..hi).copied().collect()
    }

    /// Points of `subject` in `[t0, t1)`; task series of an application are
    /// summed per timestamp.
    pub fn query(
        &self,
        subject: &Subject,
        metric: Metric,
        t0: Millis,
        t1: Millis,
    ) -> Result<Vec<Point>> {
        if t0 >= t1 {
            return Err(Error::EmptyRange { t0, t1 });
        }
        if !self.knows(subject) {
            return Err(Error::UnknownSubject);
        }
        let mut sums: BTreeMap<Millis, u128> = BTreeMap::new();
        for key in self.keys_of(subject) {
            for (t, v) in self.range(key, metric, t0, t1) {
                *sums.entry(t).or_default() += u128::from(v);
            }
        }
        let scale = metric.scale() as f64;
        Ok(sums
            .into_iter()
            .map(|(t, v)| Point {
                t,
                value: v as f64 / scale,
            })
            .collect())
    }
}
