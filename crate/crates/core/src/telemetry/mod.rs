//! Metric bus, ring-buffer metric store and boundary-condition analytics.
//!
//! Every publish is stored, fanned out to matching subscriptions and then
//! evaluated against the registered boundary conditions, in that order.
//! Alarms go to the channel named by the condition's `subscriber`.

mod analytics;
mod bus;
mod store;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use analytics::{Alarm, Analytics, Bound, BoundaryCondition, ChannelId, Direction};
pub use bus::{BusMessage, Mailbox, Topic, MAILBOX_DEPTH};
pub use store::{Metric, Point, SeriesKey, SeriesStore, Subject};

use crate::error::{Error, Result};
use crate::model::{Millis, NodeSample, PhysicalSample, PlatformEnvEvent, TICK_MS};

pub type SubscriptionId = u64;

/// Default retention: one hour of 1 Hz samples.
pub const DEFAULT_RETENTION_S: u64 = 3600;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subscription {
    pub id: SubscriptionId,
    pub channel: ChannelId,
    pub topic: Topic,
}

#[derive(Debug)]
pub struct Telemetry {
    store: SeriesStore,
    analytics: Analytics,
    channels: BTreeMap<ChannelId, Arc<Mailbox>>,
    subscriptions: BTreeMap<SubscriptionId, Subscription>,
    next_channel: ChannelId,
    next_subscription: SubscriptionId,
    rejected: u64,
}

impl Default for Telemetry {
    fn default() -> Self {
        Self::new(DEFAULT_RETENTION_S)
    }
}

impl Telemetry {
    pub fn new(retention_s: u64) -> Self {
        Self {
            store: SeriesStore::new((retention_s * 1000 / TICK_MS) as usize),
            analytics: Analytics::default(),
            channels: BTreeMap::new(),
            subscriptions: BTreeMap::new(),
            next_channel: 1,
            next_subscription: 1,
            rejected: 0,
        }
    }

    pub fn store(&self) -> &SeriesStore {
        &self.store
    }

    /// Samples refused for arriving out of order.
    pub fn rejected(&self) -> u64 {
        self.rejected
    }

    pub fn open_channel(&mut self) -> (ChannelId, Arc<Mailbox>) {
        self.open_channel_with(Mailbox::new())
    }

    pub fn open_channel_with(&mut self, mailbox: Arc<Mailbox>) -> (ChannelId, Arc<Mailbox>) {
        let id = self.next_channel;
        self.next_channel += 1;
        self.channels.insert(id, mailbox.clone());
        (id, mailbox)
    }

    /// Closes the channel and drops its subscriptions. Boundary conditions
    /// that point at it stay registered but their alarms go nowhere.
    pub fn close_channel(&mut self, id: ChannelId) -> Result<()> {
        let mb = self.channels.remove(&id).ok_or(Error::UnknownChannel(id))?;
        mb.close();
        self.subscriptions.retain(|_, s| s.channel != id);
        Ok(())
    }

    pub fn channel(&self, id: ChannelId) -> Result<Arc<Mailbox>> {
        self.channels
            .get(&id)
            .cloned()
            .ok_or(Error::UnknownChannel(id))
    }

    pub fn subscribe(&mut self, topic: Topic, channel: ChannelId) -> Result<SubscriptionId> {
        if !self.channels.contains_key(&channel) {
            return Err(Error::UnknownChannel(channel));
        }
        let id = self.next_subscription;
        self.next_subscription += 1;
        self.subscriptions
            .insert(id, Subscription { id, channel, topic });
        Ok(id)
    }

    pub fn unsubscribe(&mut self, id: SubscriptionId) -> Result<Subscription> {
        self.subscriptions
            .remove(&id)
            .ok_or(Error::UnknownSubscription(id))
    }

    pub fn subscriptions(&self) -> impl Iterator<Item = &Subscription> {
        self.subscriptions.values()
    }

    pub fn register_boundary(&mut self, bc: BoundaryCondition) -> Result<()> {
        if !self.channels.contains_key(&bc.subscriber) {
            return Err(Error::UnknownChannel(bc.subscriber));
        }
        self.analytics.register(bc)
    }

    pub fn drop_boundary(&mut self, bc_id: &str) -> Result<BoundaryCondition> {
        self.analytics.drop_condition(bc_id)
    }

    pub fn boundary(&self, bc_id: &str) -> Option<&BoundaryCondition> {
        self.analytics.get(bc_id)
    }

    pub fn boundaries(&self) -> impl Iterator<Item = &BoundaryCondition> {
        self.analytics.conditions()
    }

    fn fan_out(&self, msg: &BusMessage) -> usize {
        let mut delivered = 0;
        for s in self.subscriptions.values().filter(|s| s.topic.matches(msg)) {
            if let Some(mb) = self.channels.get(&s.channel) {
                mb.push(msg.clone());
                delivered += 1;
            }
        }
        delivered
    }

    fn raise(&self, alarms: &[Alarm]) {
        for a in alarms {
            let target = self.analytics.get(&a.bc_id).map(|bc| bc.subscriber);
            if let Some(mb) = target.and_then(|c| self.channels.get(&c)) {
                mb.push(BusMessage::Alarm(a.clone()));
            }
        }
    }

    pub fn publish_sample(&mut self, s: &PhysicalSample) -> Result<Vec<Alarm>> {
        let key = SeriesKey::task(&s.app_id, s.task_id);
        let values: Vec<(Metric, u64)> = Metric::ALL.iter().map(|&m| (m, m.of_sample(s))).collect();
        self.ingest(key, s.t, &values, BusMessage::Sample(s.clone()))
    }

    pub fn publish_node_sample(&mut self, s: &NodeSample) -> Result<Vec<Alarm>> {
        let key = SeriesKey::node(&s.node_id);
        let values: Vec<(Metric, u64)> = Metric::ALL
            .iter()
            .filter_map(|&m| m.of_node_sample(s).map(|v| (m, v)))
            .collect();
        self.ingest(key, s.t, &values, BusMessage::NodeSample(s.clone()))
    }

    fn ingest(
        &mut self,
        key: SeriesKey,
        t: Millis,
        values: &[(Metric, u64)],
        msg: BusMessage,
    ) -> Result<Vec<Alarm>> {
        if let Err(e) = self.store.append(key.clone(), t, values) {
            self.rejected += 1;
            return Err(e);
        }
        self.fan_out(&msg);
        let alarms = self.analytics.evaluate(&self.store, &key, t);
        self.raise(&alarms);
        Ok(alarms)
    }

    /// Delivers a platform environment event to matching event subscriptions.
    pub fn publish_event(&self, ev: &PlatformEnvEvent) -> usize {
        self.fan_out(&BusMessage::Event(ev.clone()))
    }

    pub fn query(
        &self,
        subject: &Subject,
        metric: Metric,
        t0: Millis,
        t1: Millis,
    ) -> Result<Vec<Point>> {
        self.store.query(subject, metric, t0, t1)
    }
}
