use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::store::{Metric, SeriesKey, SeriesStore, Subject};
use crate::error::{Error, Result};
use crate::model::{Millis, TaskId, TICK_MS};

pub type ChannelId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCondition {
    pub bc_id: String,
    pub subject: Subject,
    pub metric: Metric,
    pub bound: Bound,
    /// In metric units (cores for cpu, bytes or bytes/s otherwise).
    pub threshold: f64,
    #[serde(default = "one")]
    pub window_s: u64,
    pub subscriber: ChannelId,
}

fn one() -> u64 {
    1
}

impl BoundaryCondition {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidBoundary(format!("{}: {m}", self.bc_id)));
        if self.bc_id.is_empty() {
            return Err(Error::InvalidBoundary("empty bc_id".into()));
        }
        if !self.threshold.is_finite() || self.threshold < 0.0 {
            return bad("threshold must be a finite non-negative number");
        }
        if self.window_s == 0 {
            return bad("window_s must be at least 1");
        }
        if matches!(self.subject, Subject::Node(_)) && !self.metric.applies_to_nodes() {
            return bad("metric is not recorded for nodes");
        }
        Ok(())
    }

    /// Threshold in stored units.
    fn threshold_units(&self) -> u128 {
        (self.threshold * self.metric.scale() as f64).round() as u128
    }

    fn window_ms(&self) -> Millis {
        self.window_s.saturating_mul(1000)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    EnteredViolation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alarm {
    pub bc_id: String,
    pub subject: Subject,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_id: Option<TaskId>,
    pub t: Millis,
    /// Window mean in metric units.
    pub observed: f64,
    pub threshold: f64,
    pub direction: Direction,
}

#[derive(Debug, Clone, Copy)]
struct Arming {
    armed: bool,
    satisfied_since: Option<Millis>,
}

impl Default for Arming {
    fn default() -> Self {
        Self {
            armed: true,
            satisfied_since: None,
        }
    }
}

/// Evaluates boundary conditions against freshly stored samples.
#[derive(Debug, Clone, Default)]
pub struct Analytics {
    conditions: BTreeMap<String, BoundaryCondition>,
    arming: BTreeMap<(String, SeriesKey), Arming>,
}

impl Analytics {
    pub fn register(&mut self, bc: BoundaryCondition) -> Result<()> {
        bc.validate()?;
        self.arming.retain(|(id, _), _| id != &bc.bc_id);
        self.conditions.insert(bc.bc_id.clone(), bc);
        Ok(())
    }

    pub fn drop_condition(&mut self, bc_id: &str) -> Result<BoundaryCondition> {
        let bc = self
            .conditions
            .remove(bc_id)
            .ok_or_else(|| Error::UnknownBoundary(bc_id.into()))?;
        self.arming.retain(|(id, _), _| id != bc_id);
        Ok(bc)
    }

    pub fn conditions(&self) -> impl Iterator<Item = &BoundaryCondition> {
        self.conditions.values()
    }

    pub fn get(&self, bc_id: &str) -> Option<&BoundaryCondition> {
        self.conditions.get(bc_id)
    }

    /// Checks every condition on the series `key` after a sample at `t` was stored.
    pub fn evaluate(&mut self, store: &SeriesStore, key: &SeriesKey, t: Millis) -> Vec<Alarm> {
        let mut alarms = Vec::new();
        for bc in self
            .conditions
            .values()
            .filter(|bc| bc.subject == key.subject)
        {
            let from = (t + 1).saturating_sub(bc.window_ms());
            let window = store.range(key, bc.metric, from, t + 1);
            if window.is_empty() {
                continue;
            }
            let n = window.len() as u128;
            let sum: u128 = window.iter().map(|&(_, v)| u128::from(v)).sum();
            let limit = bc.threshold_units() * n;
            let violated = match bc.bound {
                Bound::Min => sum < limit,
                Bound::Max => sum > limit,
            };
            let st = self
                .arming
                .entry((bc.bc_id.clone(), key.clone()))
                .or_default();
            if violated {
                st.satisfied_since = None;
                if st.armed {
                    st.armed = false;
                    alarms.push(Alarm {
                        bc_id: bc.bc_id.clone(),
                        subject: bc.subject.clone(),
                        task_id: key.task_id,
                        t,
                        observed: sum as f64 / n as f64 / bc.metric.scale() as f64,
                        threshold: bc.threshold,
                        direction: Direction::EnteredViolation,
                    });
                }
            } else if !st.armed {
                let since = *st.satisfied_since.get_or_insert(t);
                if t - since + TICK_MS >= bc.window_ms() {
                    st.armed = true;
                    st.satisfied_since = None;
                }
            }
        }
        alarms
    }
}
