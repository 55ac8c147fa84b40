use std::collections::VecDeque;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};

use super::analytics::Alarm;
use super::store::Subject;
use crate::model::{AppId, NodeSample, PhysicalSample, PlatformEnvEvent};

pub const MAILBOX_DEPTH: usize = 1024;

/// Everything that travels over a subscription channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BusMessage {
    Sample(PhysicalSample),
    NodeSample(NodeSample),
    Alarm(Alarm),
    Event(PlatformEnvEvent),
    /// Stands in for `dropped` older messages the consumer fell behind on.
    Gap {
        dropped: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Topic {
    /// Physical and node samples; `None` matches every subject.
    Metrics {
        #[serde(default)]
        subject: Option<Subject>,
    },
    /// Platform environment events; `None` matches every application.
    Events {
        #[serde(default)]
        app_id: Option<AppId>,
    },
}

impl Topic {
    pub fn matches(&self, msg: &BusMessage) -> bool {
        match (self, msg) {
            (Topic::Metrics { subject }, BusMessage::Sample(s)) => match subject {
                None => true,
                Some(Subject::App(a)) => a == &s.app_id,
                Some(Subject::Node(_)) => false,
            },
            (Topic::Metrics { subject }, BusMessage::NodeSample(s)) => match subject {
                None => true,
                Some(Subject::Node(n)) => n == &s.node_id,
                Some(Subject::App(_)) => false,
            },
            (Topic::Events { app_id }, BusMessage::Event(e)) => {
                app_id.as_ref().is_none_or(|a| a == &e.app_id)
            }
            _ => false,
        }
    }
}

#[derive(Default)]
struct Inner {
    queue: VecDeque<BusMessage>,
    /// Dropped since the consumer last saw a gap marker.
    gap: u64,
    dropped_total: u64,
    closed: bool,
}

type Notify = Box<dyn Fn() + Send + Sync>;

/// Bounded single-consumer queue. When full, the oldest message is discarded
/// and the consumer later receives a [`BusMessage::Gap`] in its place.
pub struct Mailbox {
    depth: usize,
    inner: Mutex<Inner>,
    ready: Condvar,
    notify: Mutex<Option<Notify>>,
}

impl std::fmt::Debug for Mailbox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let inner = self.inner.lock();
        f.debug_struct("Mailbox")
            .field("depth", &self.depth)
            .field("queued", &inner.queue.len())
            .field("gap", &inner.gap)
            .field("closed", &inner.closed)
            .finish()
    }
}

impl Mailbox {
    pub fn new() -> Arc<Self> {
        Self::with_depth(MAILBOX_DEPTH)
    }

    pub fn with_depth(depth: usize) -> Arc<Self> {
        Arc::new(Self {
            depth: depth.max(1),
            inner: Mutex::new(Inner::default()),
            ready: Condvar::new(),
            notify: Mutex::new(None),
        })
    }

    /// Registers a callback run after every push, e.g. to wake an async writer.
    pub fn set_notify(&self, f: impl Fn() + Send + Sync + 'static) {
        *self.notify.lock() = Some(Box::new(f));
    }

    pub fn push(&self, msg: BusMessage) {
        {
            let mut inner = self.inner.lock();
            if inner.closed {
                return;
            }
            if inner.queue.len() == self.depth {
                inner.queue.pop_front();
                inner.gap += 1;
                inner.dropped_total += 1;
            }
            inner.queue.push_back(msg);
        }
        self.ready.notify_all();
        if let Some(f) = self.notify.lock().as_ref() {
            f();
        }
    }

    pub fn try_recv(&self) -> Option<BusMessage> {
        Self::take(&mut self.inner.lock())
    }

    fn take(inner: &mut Inner) -> Option<BusMessage> {
        if inner.gap > 0 {
            let dropped = std::mem::take(&mut inner.gap);
            return Some(BusMessage::Gap { dropped });
        }
        inner.queue.pop_front()
    }

    /// Waits up to `timeout` for a message. Returns `None` on timeout or once
    /// the mailbox is closed and empty.
    pub fn recv_timeout(&self, timeout: Duration) -> Option<BusMessage> {
        let mut inner = self.inner.lock();
        loop {
            if let Some(m) = Self::take(&mut inner) {
                return Some(m);
            }
            if inner.closed || self.ready.wait_for(&mut inner, timeout).timed_out() {
                return Self::take(&mut inner);
            }
        }
    }

    pub fn drain(&self) -> Vec<BusMessage> {
        let mut inner = self.inner.lock();
        let mut out = Vec::with_capacity(inner.queue.len() + 1);
        while let Some(m) = Self::take(&mut inner) {
            out.push(m);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.inner.lock().queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dropped_total(&self) -> u64 {
        self.inner.lock().dropped_total
    }

    pub fn close(&self) {
        self.inner.lock().closed = true;
        self.ready.notify_all();
        if let Some(f) = self.notify.lock().as_ref() {
            f();
        }
    }

    pub fn is_closed(&self) -> bool {
        self.inner.lock().closed
    }
}
