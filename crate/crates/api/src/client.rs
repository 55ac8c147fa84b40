//! Blocking wire client.

use std::collections::VecDeque;
use std::io::{self, BufReader, Write};
use std::net::TcpStream;
use std::os::unix::net::UnixStream;
use std::time::Duration;

use serde_json::{json, Value};

use chpc_core::telemetry::BusMessage;

use crate::listen::Listen;
use crate::protocol::{read_frame, ApiError, Frame, Reply, Request, MAX_LINE};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("server error {0}")]
    Api(#[from] ApiError),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("connection closed")]
    Closed,
}

impl ClientError {
    /// The server's error code, if this is a server-side rejection.
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api(e) => Some(&e.code),
            _ => None,
        }
    }
}

enum Stream {
    Tcp(TcpStream),
    Unix(UnixStream),
}

impl Stream {
    fn try_clone(&self) -> io::Result<Stream> {
        Ok(match self {
            Stream::Tcp(s) => Stream::Tcp(s.try_clone()?),
            Stream::Unix(s) => Stream::Unix(s.try_clone()?),
        })
    }

    fn set_read_timeout(&self, t: Option<Duration>) -> io::Result<()> {
        match self {
            Stream::Tcp(s) => s.set_read_timeout(t),
            Stream::Unix(s) => s.set_read_timeout(t),
        }
    }
}

impl io::Read for Stream {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        match self {
            Stream::Tcp(s) => s.read(buf),
            Stream::Unix(s) => s.read(buf),
        }
    }
}

impl Write for Stream {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        match self {
            Stream::Tcp(s) => s.write(buf),
            Stream::Unix(s) => s.write(buf),
        }
    }

    fn flush(&mut self) -> io::Result<()> {
        match self {
            Stream::Tcp(s) => s.flush(),
            Stream::Unix(s) => s.flush(),
        }
    }
}

/// One connection. Pushes that arrive while waiting for a response are
/// buffered in arrival order.
pub struct Client {
    reader: BufReader<Stream>,
    writer: Stream,
    next_id: u64,
    pushes: VecDeque<BusMessage>,
    transcript: Option<Vec<Reply>>,
}

impl Client {
    pub fn connect(addr: &Listen) -> io::Result<Self> {
        let stream = match addr {
            Listen::Tcp(a) => {
                let s = TcpStream::connect(a)?;
                s.set_nodelay(true)?;
                Stream::Tcp(s)
            }
            Listen::Unix(p) => Stream::Unix(UnixStream::connect(p)?),
        };
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
            next_id: 1,
            pushes: VecDeque::new(),
            transcript: None,
        })
    }

    /// Keeps every line received from now on, pushes and responses alike.
    pub fn record(&mut self) {
        self.transcript.get_or_insert_with(Vec::new);
    }

    pub fn take_transcript(&mut self) -> Vec<Reply> {
        self.transcript
            .as_mut()
            .map(std::mem::take)
            .unwrap_or_default()
    }

    pub fn hello(&mut self, tenant: &str, operator: bool) -> Result<Value, ClientError> {
        self.call("hello", json!({ "tenant": tenant, "operator": operator }))
    }

    /// Sends a request and waits for its response.
    pub fn call(&mut self, op: &str, payload: Value) -> Result<Value, ClientError> {
        let id = Value::String(self.next_id.to_string());
        self.next_id += 1;
        self.send(&Request::new(id.clone(), op, payload))?;
        let reply = self.read_until(&id)?;
        if reply.op != op {
            return Err(ClientError::Protocol(format!(
                "response op {} for request {op}",
                reply.op
            )));
        }
        Ok(reply.into_result()?)
    }

    pub fn send(&mut self, req: &Request) -> io::Result<()> {
        let mut line = serde_json::to_vec(req).expect("requests serialize");
        line.push(b'\n');
        self.send_raw(&line)
    }

    pub fn send_raw(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.writer.write_all(bytes)?;
        self.writer.flush()
    }

    /// Reads the next line from the server.
    pub fn read_reply(&mut self) -> Result<Reply, ClientError> {
        match read_frame(&mut self.reader, MAX_LINE * 2)? {
            Frame::Eof => Err(ClientError::Closed),
            Frame::Oversize => Err(ClientError::Protocol("oversize line from server".into())),
            Frame::Line(l) => {
                let reply: Reply =
                    serde_json::from_slice(&l).map_err(|e| ClientError::Protocol(e.to_string()))?;
                if let Some(t) = self.transcript.as_mut() {
                    t.push(reply.clone());
                }
                Ok(reply)
            }
        }
    }

    fn read_until(&mut self, id: &Value) -> Result<Reply, ClientError> {
        loop {
            let reply = self.read_reply()?;
            if reply.is_push() {
                self.buffer_push(&reply)?;
            } else if &reply.id == id {
                return Ok(reply);
            } else {
                return Err(ClientError::Protocol(format!(
                    "unexpected response id {}",
                    reply.id
                )));
            }
        }
    }

    fn buffer_push(&mut self, reply: &Reply) -> Result<(), ClientError> {
        let payload = reply.payload.clone().unwrap_or(Value::Null);
        let msg =
            serde_json::from_value(payload).map_err(|e| ClientError::Protocol(e.to_string()))?;
        self.pushes.push_back(msg);
        Ok(())
    }

    /// Next push, waiting up to `timeout` if none is buffered. `None` on
    /// timeout.
    pub fn next_push(
        &mut self,
        timeout: Option<Duration>,
    ) -> Result<Option<BusMessage>, ClientError> {
        if let Some(m) = self.pushes.pop_front() {
            return Ok(Some(m));
        }
        self.reader.get_ref().set_read_timeout(timeout)?;
        let got = self.read_reply();
        self.reader.get_ref().set_read_timeout(None)?;
        match got {
            Ok(r) if r.is_push() => {
                self.buffer_push(&r)?;
                Ok(self.pushes.pop_front())
            }
            Ok(r) => Err(ClientError::Protocol(format!(
                "unsolicited response id {}",
                r.id
            ))),
            Err(ClientError::Io(e))
                if matches!(
                    e.kind(),
                    io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut
                ) =>
            {
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }

    /// Buffered pushes, oldest first.
    pub fn pushes(&self) -> impl Iterator<Item = &BusMessage> {
        self.pushes.iter()
    }

    pub fn take_pushes(&mut self) -> Vec<BusMessage> {
        self.pushes.drain(..).collect()
    }
}
