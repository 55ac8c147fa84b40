//! Wire format: one UTF-8 JSON object per line.
//!
//! Requests are `{"id", "op", "payload"}`. Every request gets exactly one
//! response `{"id", "op", "ok": true, "payload"}` or
//! `{"id", "op", "ok": false, "error": {"code", "message"}}`. Pushes carry
//! `"id": null` and `"op": "push"`.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use chpc_core::telemetry::BusMessage;

/// Longest accepted line, excluding the newline.
pub const MAX_LINE: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: Value,
    pub op: String,
    #[serde(default = "empty_object")]
    pub payload: Value,
}

fn empty_object() -> Value {
    Value::Object(Default::default())
}

impl Request {
    pub fn new(id: impl Into<Value>, op: &str, payload: Value) -> Self {
        Self {
            id: id.into(),
            op: op.into(),
            payload,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            message: message.into(),
        }
    }

    pub fn malformed(message: impl Into<String>) -> Self {
        Self::new("malformed_message", message)
    }

    pub fn oversize() -> Self {
        Self::new("oversize_message", format!("line exceeds {MAX_LINE} bytes"))
    }

    pub fn unknown_op(op: &str) -> Self {
        Self::new("unknown_op", format!("unknown op {op:?}"))
    }

    pub fn invalid_payload(message: impl Into<String>) -> Self {
        Self::new("invalid_payload", message)
    }

    pub fn unauthenticated() -> Self {
        Self::new("unauthenticated", "send hello first")
    }

    pub fn forbidden(message: impl Into<String>) -> Self {
        Self::new("forbidden", message)
    }
}

impl From<chpc_core::Error> for ApiError {
    fn from(e: chpc_core::Error) -> Self {
        Self::new(e.code(), e.to_string())
    }
}

/// Any line the server writes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reply {
    pub id: Value,
    pub op: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ok: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ApiError>,
}

impl Reply {
    pub fn ok(id: Value, op: &str, payload: Value) -> Self {
        Self {
            id,
            op: op.into(),
            ok: Some(true),
            payload: Some(payload),
            error: None,
        }
    }

    pub fn err(id: Value, op: &str, error: ApiError) -> Self {
        Self {
            id,
            op: op.into(),
            ok: Some(false),
            payload: None,
            error: Some(error),
        }
    }

    pub fn push(msg: &BusMessage) -> Self {
        Self {
            id: Value::Null,
            op: "push".into(),
            ok: None,
            payload: Some(serde_json::to_value(msg).expect("bus messages serialize")),
            error: None,
        }
    }

    pub fn is_push(&self) -> bool {
        self.id.is_null() && self.op == "push"
    }

    pub fn into_result(self) -> Result<Value, ApiError> {
        match (self.ok, self.error) {
            (Some(false), Some(e)) => Err(e),
            (Some(false), None) => Err(ApiError::new("error", "request failed")),
            _ => Ok(self.payload.unwrap_or(Value::Null)),
        }
    }

    /// Serialized line including the trailing newline.
    pub fn to_line(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec(self).expect("replies serialize");
        v.push(b'\n');
        v
    }
}

/// Parses one line (without its newline) into a request. On failure, returns
/// whatever id could be recovered so the error can still be correlated.
pub fn decode_request(line: &[u8]) -> Result<Request, (Value, ApiError)> {
    let text =
        std::str::from_utf8(line).map_err(|_| (Value::Null, ApiError::malformed("not UTF-8")))?;
    let value: Value = serde_json::from_str(text.trim_end_matches('\r'))
        .map_err(|e| (Value::Null, ApiError::malformed(e.to_string())))?;
    let Value::Object(map) = &value else {
        return Err((Value::Null, ApiError::malformed("expected a JSON object")));
    };
    let id = map.get("id").cloned().unwrap_or(Value::Null);
    if id.is_null() {
        return Err((id, ApiError::malformed("missing id")));
    }
    if !matches!(map.get("op"), Some(Value::String(_))) {
        return Err((id, ApiError::malformed("missing op")));
    }
    if map.get("payload").is_some_and(|p| !p.is_object()) {
        return Err((id, ApiError::malformed("payload must be an object")));
    }
    serde_json::from_value(value).map_err(|e| (id, ApiError::malformed(e.to_string())))
}

/// Outcome of reading one frame.
#[derive(Debug, PartialEq, Eq)]
pub enum Frame {
    Line(Vec<u8>),
    Oversize,
    Eof,
}

/// Reads one newline-terminated frame of at most `max` bytes from a blocking
/// reader. An unterminated final line counts as a frame.
pub fn read_frame<R: std::io::BufRead>(r: &mut R, max: usize) -> std::io::Result<Frame> {
    let mut buf = Vec::new();
    loop {
        let chunk = r.fill_buf()?;
        if chunk.is_empty() {
            return Ok(if buf.is_empty() {
                Frame::Eof
            } else {
                Frame::Line(buf)
            });
        }
        match chunk.iter().position(|&b| b == b'\n') {
            Some(i) => {
                buf.extend_from_slice(&chunk[..i]);
                r.consume(i + 1);
                return Ok(if buf.len() > max {
                    Frame::Oversize
                } else {
                    Frame::Line(buf)
                });
            }
            None => {
                let n = chunk.len();
                buf.extend_from_slice(chunk);
                r.consume(n);
                if buf.len() > max {
                    return Ok(Frame::Oversize);
                }
            }
        }
    }
}

/// Async counterpart of [`read_frame`].
pub async fn read_frame_async<R>(r: &mut R, max: usize) -> std::io::Result<Frame>
where
    R: tokio::io::AsyncBufRead + Unpin,
{
    use tokio::io::AsyncBufReadExt;
    let mut buf = Vec::new();
    loop {
        let chunk = r.fill_buf().await?;
        if chunk.is_empty() {
            return Ok(if buf.is_empty() {
                Frame::Eof
            } else {
                Frame::Line(buf)
            });
        }
        match chunk.iter().position(|&b| b == b'\n') {
            Some(i) => {
                buf.extend_from_slice(&chunk[..i]);
                r.consume(i + 1);
                return Ok(if buf.len() > max {
                    Frame::Oversize
                } else {
                    Frame::Line(buf)
                });
            }
            None => {
                let n = chunk.len();
                buf.extend_from_slice(chunk);
                r.consume(n);
                if buf.len() > max {
                    return Ok(Frame::Oversize);
                }
            }
        }
    }
}
