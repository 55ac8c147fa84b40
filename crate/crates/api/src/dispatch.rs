//! Maps wire operations onto [`Platform`] calls.

use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use chpc_core::model::{
    AppId, ApplicationSpec, EnvironmentImage, LogicalState, LogicalStatus, Millis, NodeId,
};
use chpc_core::platform::Platform;
use chpc_core::scheduler::AdjustmentRequest;
use chpc_core::telemetry::{ChannelId, Mailbox, Metric, Subject, Topic};
use chpc_core::ResourceDelta;

use crate::protocol::{ApiError, Reply, Request};

/// Every operation name the dispatcher understands.
pub const OPS: &[&str] = &[
    "hello",
    "register_image",
    "submit",
    "cancel",
    "status",
    "physical_model",
    "env_model",
    "set_logical_state",
    "report_progress",
    "adjust",
    "register_boundary",
    "drop_boundary",
    "subscribe_metrics",
    "subscribe_events",
    "unsubscribe",
    "query_metrics",
    "drain_node",
    "freeze_app",
    "thaw_app",
    "utilization_report",
];

/// Per-connection state: who is talking and where their pushes go.
#[derive(Debug, Default)]
pub struct Session {
    pub tenant: Option<String>,
    pub operator: bool,
    channel: Option<(ChannelId, Arc<Mailbox>)>,
}

impl Session {
    pub fn new() -> Self {
        Self::default()
    }

    /// A session already bound to `tenant`, for in-process drivers.
    pub fn authenticated(tenant: &str, operator: bool) -> Self {
        Self {
            tenant: Some(tenant.into()),
            operator,
            channel: None,
        }
    }

    /// Attaches a channel opened by the caller. Pushes for this session land
    /// in its mailbox.
    pub fn with_channel(mut self, id: ChannelId, mailbox: Arc<Mailbox>) -> Self {
        self.channel = Some((id, mailbox));
        self
    }

    pub fn channel(&self) -> Option<(ChannelId, &Arc<Mailbox>)> {
        self.channel.as_ref().map(|(id, mb)| (*id, mb))
    }

    fn channel_id(&mut self, platform: &mut Platform) -> ChannelId {
        let (id, _) = self.channel.get_or_insert_with(|| platform.open_channel());
        *id
    }

    /// Closes the session's channel, if any.
    pub fn close(&mut self, platform: &mut Platform) {
        if let Some((id, _)) = self.channel.take() {
            let _ = platform.close_channel(id);
        }
    }
}

type OpResult = Result<Value, ApiError>;

fn parse<T: DeserializeOwned>(payload: &Value) -> Result<T, ApiError> {
    serde_json::from_value(payload.clone()).map_err(|e| ApiError::invalid_payload(e.to_string()))
}

fn to_value<T: serde::Serialize>(v: T) -> OpResult {
    Ok(serde_json::to_value(v).expect("platform types serialize"))
}

#[derive(Deserialize)]
struct Hello {
    tenant: String,
    #[serde(default)]
    operator: bool,
}

#[derive(Deserialize)]
struct AppRef {
    app_id: AppId,
}

#[derive(Deserialize)]
struct SetLogical {
    app_id: AppId,
    state: LogicalState,
    progress: f64,
}

#[derive(Deserialize)]
struct Progress {
    app_id: AppId,
    progress: f64,
}

#[derive(Deserialize)]
struct Adjust {
    app_id: AppId,
    #[serde(default)]
    delta_per_task: ResourceDelta,
    #[serde(default)]
    walltime_extension_s: u64,
}

#[derive(Deserialize)]
struct BcRef {
    bc_id: String,
}

#[derive(Deserialize)]
struct MetricsTopic {
    #[serde(default)]
    subject: Option<Subject>,
}

#[derive(Deserialize)]
struct EventsTopic {
    #[serde(default)]
    app_id: Option<AppId>,
}

#[derive(Deserialize)]
struct SubRef {
    subscription_id: u64,
}

#[derive(Deserialize)]
struct Query {
    subject: Subject,
    metric: Metric,
    #[serde(default)]
    t0: Millis,
    #[serde(default)]
    t1: Option<Millis>,
}

#[derive(Deserialize)]
struct NodeRef {
    node_id: NodeId,
}

#[derive(Deserialize)]
struct Window {
    #[serde(default)]
    t0: Millis,
    #[serde(default)]
    t1: Option<Millis>,
}

fn require_owner(platform: &Platform, session: &Session, app: &AppId) -> Result<(), ApiError> {
    let owner = platform.owner(app)?;
    if session.operator || session.tenant.as_deref() == Some(owner) {
        Ok(())
    } else {
        Err(ApiError::forbidden(format!(
            "{app} belongs to another tenant"
        )))
    }
}

fn require_operator(session: &Session) -> Result<(), ApiError> {
    if session.operator {
        Ok(())
    } else {
        Err(ApiError::forbidden("operator op"))
    }
}

/// Handles one request and builds its reply.
pub fn dispatch(platform: &mut Platform, session: &mut Session, req: &Request) -> Reply {
    match handle(platform, session, &req.op, &req.payload) {
        Ok(payload) => Reply::ok(req.id.clone(), &req.op, payload),
        Err(e) => Reply::err(req.id.clone(), &req.op, e),
    }
}

/// Handles one operation.
pub fn handle(
    platform: &mut Platform,
    session: &mut Session,
    op: &str,
    payload: &Value,
) -> OpResult {
    if op == "hello" {
        let h: Hello = parse(payload)?;
        if h.tenant.is_empty() {
            return Err(ApiError::invalid_payload("empty tenant"));
        }
        session.tenant = Some(h.tenant.clone());
        session.operator = h.operator;
        let channel = session.channel_id(platform);
        return Ok(json!({
            "tenant": h.tenant,
            "operator": h.operator,
            "channel": channel,
            "mode": platform.mode(),
            "now": platform.now(),
        }));
    }
    if !OPS.contains(&op) {
        return Err(ApiError::unknown_op(op));
    }
    let Some(tenant) = session.tenant.clone() else {
        return Err(ApiError::unauthenticated());
    };

    match op {
        "register_image" => {
            let image: EnvironmentImage = parse(payload)?;
            if !session.operator && image.owner != tenant {
                return Err(ApiError::forbidden(
                    "image owner must be the session tenant",
                ));
            }
            platform.register_image(image)?;
            Ok(json!({}))
        }
        "submit" => {
            let spec: ApplicationSpec = parse(payload)?;
            to_value(platform.submit(spec, &tenant)?)
        }
        "cancel" => {
            let r: AppRef = parse(payload)?;
            require_owner(platform, session, &r.app_id)?;
            platform.cancel(&r.app_id)?;
            Ok(json!({}))
        }
        "status" => {
            let r: AppRef = parse(payload)?;
            to_value(platform.status(&r.app_id)?)
        }
        "physical_model" => {
            let r: AppRef = parse(payload)?;
            Ok(json!({ "samples": platform.physical_model(&r.app_id)? }))
        }
        "env_model" => to_value(platform.env_model()),
        "set_logical_state" => {
            let r: SetLogical = parse(payload)?;
            require_owner(platform, session, &r.app_id)?;
            let requested = LogicalStatus::new(r.state, r.progress, platform.now());
            to_value(platform.set_logical_state(&r.app_id, &requested)?)
        }
        "report_progress" => {
            let r: Progress = parse(payload)?;
            require_owner(platform, session, &r.app_id)?;
            let current = platform
                .status(&r.app_id)?
                .logical
                .ok_or_else(|| ApiError::from(chpc_core::Error::NotActive(r.app_id.clone())))?;
            let requested = LogicalStatus::new(current.state, r.progress, platform.now());
            to_value(platform.set_logical_state(&r.app_id, &requested)?)
        }
        "adjust" => {
            let r: Adjust = parse(payload)?;
            require_owner(platform, session, &r.app_id)?;
            let req = AdjustmentRequest {
                app_id: r.app_id,
                delta_per_task: r.delta_per_task,
                walltime_extension_s: r.walltime_extension_s,
                requested_at: platform.now(),
            };
            to_value(platform.adjust(&req)?)
        }
        "register_boundary" => {
            let mut body = payload.clone();
            let channel = session.channel_id(platform);
            match body.as_object_mut() {
                Some(map) => map.insert("subscriber".into(), json!(channel)),
                None => return Err(ApiError::invalid_payload("expected an object")),
            };
            let bc = parse(&body)?;
            platform.register_boundary(bc)?;
            Ok(json!({ "subscriber": channel }))
        }
        "drop_boundary" => {
            let r: BcRef = parse(payload)?;
            let mine = session.channel().map(|(id, _)| id);
            match platform.boundary(&r.bc_id) {
                Some(bc) if !session.operator && Some(bc.subscriber) != mine => {
                    return Err(ApiError::forbidden("boundary belongs to another session"));
                }
                _ => {}
            }
            to_value(platform.drop_boundary(&r.bc_id)?)
        }
        "subscribe_metrics" => {
            let r: MetricsTopic = parse(payload)?;
            let channel = session.channel_id(platform);
            let id = platform.subscribe(Topic::Metrics { subject: r.subject }, channel)?;
            Ok(json!({ "subscription_id": id }))
        }
        "subscribe_events" => {
            let r: EventsTopic = parse(payload)?;
            let channel = session.channel_id(platform);
            let id = platform.subscribe(Topic::Events { app_id: r.app_id }, channel)?;
            Ok(json!({ "subscription_id": id }))
        }
        "unsubscribe" => {
            let r: SubRef = parse(payload)?;
            let mine = session.channel().map(|(id, _)| id);
            let owned = platform
                .telemetry()
                .subscriptions()
                .any(|s| s.id == r.subscription_id && Some(s.channel) == mine);
            if !owned && !session.operator {
                return Err(chpc_core::Error::UnknownSubscription(r.subscription_id).into());
            }
            platform.unsubscribe(r.subscription_id)?;
            Ok(json!({}))
        }
        "query_metrics" => {
            let r: Query = parse(payload)?;
            let t1 = r.t1.unwrap_or_else(|| platform.now() + 1);
            Ok(json!({ "points": platform.telemetry().query(&r.subject, r.metric, r.t0, t1)? }))
        }
        "drain_node" => {
            require_operator(session)?;
            let r: NodeRef = parse(payload)?;
            Ok(json!({ "apps": platform.drain_node(&r.node_id)? }))
        }
        "freeze_app" => {
            require_operator(session)?;
            let r: AppRef = parse(payload)?;
            platform.freeze(&r.app_id)?;
            Ok(json!({}))
        }
        "thaw_app" => {
            require_operator(session)?;
            let r: AppRef = parse(payload)?;
            platform.thaw(&r.app_id)?;
            Ok(json!({}))
        }
        "utilization_report" => {
            let r: Window = parse(payload)?;
            let t1 = r.t1.unwrap_or_else(|| platform.now());
            to_value(platform.utilization_report(r.t0, t1)?)
        }
        _ => Err(ApiError::unknown_op(op)),
    }
}
