use thiserror::Error;

use crate::model::{AppId, ImageId, NodeId};
use crate::resource::Dim;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("resource component {0} overflowed")]
    ResourceOverflow(Dim),
    #[error("application is in a terminal Error state")]
    TerminalState,
    #[error("progress may not decrease from {from} to {to} outside Restoring")]
    ProgressRegression { from: f64, to: f64 },
    #[error("progress {0} outside [0, 1]")]
    ProgressOutOfRange(f64),
    #[error("invalid application spec: {0}")]
    InvalidSpec(String),
    #[error("invalid adjustment: {0}")]
    InvalidAdjustment(String),
    #[error("invalid node: {0}")]
    InvalidNode(String),
    #[error("unknown image {0}")]
    UnknownImage(ImageId),
    #[error("image {0} already registered")]
    DuplicateImage(ImageId),
    #[error("no feasible placement for {0} on this cluster")]
    InsufficientCapacity(AppId),
    #[error("application {0} already submitted")]
    DuplicateApp(AppId),
    #[error("no such application {0}")]
    NoSuchApp(AppId),
    #[error("application {0} is not running on the simulator")]
    UnknownApp(AppId),
    #[error("application {0} is not active")]
    NotActive(AppId),
    #[error("application {0} is a native job and cannot be adjusted or frozen")]
    NativeJob(AppId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("empty range [{t0}, {t1})")]
    EmptyRange { t0: u64, t1: u64 },
    #[error("range end {t1} is after the current time {now}")]
    RangeInFuture { t1: u64, now: u64 },
    #[error("sample at {t} is not after the last sample at {last}")]
    OutOfOrderSample { t: u64, last: u64 },
    #[error("unknown subject")]
    UnknownSubject,
    #[error("unknown subscription {0}")]
    UnknownSubscription(u64),
    #[error("unknown channel {0}")]
    UnknownChannel(u64),
    #[error("unknown boundary condition {0}")]
    UnknownBoundary(String),
    #[error("invalid boundary condition: {0}")]
    InvalidBoundary(String),
    #[error("invalid platform event: {0}")]
    InvalidEvent(String),
    #[error("operation disabled in asymmetric mode")]
    PolicyDisabled,
}

impl Error {
    /// Stable machine-readable code used on the wire.
    pub fn code(&self) -> &'static str {
        match self {
            Error::ResourceOverflow(_) => "resource_overflow",
            Error::TerminalState => "terminal_state",
            Error::ProgressRegression { .. } => "progress_regression",
            Error::ProgressOutOfRange(_) => "progress_out_of_range",
            Error::InvalidSpec(_) => "invalid_spec",
            Error::InvalidAdjustment(_) => "invalid_adjustment",
            Error::InvalidNode(_) => "invalid_node",
            Error::UnknownImage(_) => "unknown_image",
            Error::DuplicateImage(_) => "duplicate_image",
            Error::InsufficientCapacity(_) => "insufficient_capacity",
            Error::DuplicateApp(_) => "duplicate_app",
            Error::NoSuchApp(_) => "no_such_app",
            Error::UnknownApp(_) => "unknown_app",
            Error::NotActive(_) => "not_active",
            Error::NativeJob(_) => "native_job",
            Error::UnknownNode(_) => "unknown_node",
            Error::EmptyRange { .. } => "empty_range",
            Error::RangeInFuture { .. } => "range_in_future",
            Error::OutOfOrderSample { .. } => "out_of_order_sample",
            Error::UnknownSubject => "unknown_subject",
            Error::UnknownSubscription(_) => "unknown_subscription",
            Error::UnknownChannel(_) => "unknown_channel",
            Error::UnknownBoundary(_) => "unknown_boundary",
            Error::InvalidBoundary(_) => "invalid_boundary",
            Error::InvalidEvent(_) => "invalid_event",
            Error::PolicyDisabled => "policy_disabled",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
