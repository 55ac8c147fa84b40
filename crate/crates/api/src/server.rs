//! Async wire server.
//!
//! All connections share one [`Platform`] behind a mutex, so requests from
//! every client form a single serialized command stream with the clock task.
//! Each connection owns a telemetry channel. Queued pushes are always written
//! before the next response on the same connection, so a subscriber sees an
//! event caused by its own request before that request's reply.

use std::io;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use tokio::io::{AsyncRead, AsyncWrite, AsyncWriteExt, BufReader, WriteHalf};
use tokio::net::{TcpListener, UnixListener};
use tokio::sync::{oneshot, Notify};

use chpc_core::platform::Platform;
use chpc_core::telemetry::Mailbox;

use crate::dispatch::{dispatch, Session};
use crate::listen::Listen;
use crate::protocol::{decode_request, read_frame_async, ApiError, Frame, Reply, MAX_LINE};

pub type SharedPlatform = Arc<Mutex<Platform>>;

enum Listener {
    Tcp(TcpListener),
    Unix(UnixListener, PathBuf),
}

pub struct Server {
    platform: SharedPlatform,
    listener: Listener,
    tick_every: Option<Duration>,
}

impl Server {
    pub async fn bind(listen: &Listen, platform: SharedPlatform) -> io::Result<Self> {
        let listener = match listen {
            Listen::Tcp(addr) => Listener::Tcp(TcpListener::bind(addr).await?),
            Listen::Unix(path) => {
                if path.exists() {
                    std::fs::remove_file(path)?;
                }
                Listener::Unix(UnixListener::bind(path)?, path.clone())
            }
        };
        Ok(Self {
            platform,
            listener,
            tick_every: None,
        })
    }

    /// Advances the simulation one tick every `period` of real time.
    pub fn with_clock(mut self, period: Duration) -> Self {
        self.tick_every = Some(period);
        self
    }

    /// The bound address, with the actual port for `:0` binds.
    pub fn local_addr(&self) -> io::Result<Listen> {
        Ok(match &self.listener {
            Listener::Tcp(l) => Listen::Tcp(l.local_addr()?.to_string()),
            Listener::Unix(_, p) => Listen::Unix(p.clone()),
        })
    }

    pub async fn run(self) -> io::Result<()> {
        self.run_until(std::future::pending()).await
    }

    pub async fn run_until(
        self,
        shutdown: impl std::future::Future<Output = ()>,
    ) -> io::Result<()> {
        let clock = self
            .tick_every
            .map(|period| tokio::spawn(run_clock(self.platform.clone(), period)));
        tokio::pin!(shutdown);
        let result = loop {
            tokio::select! {
                _ = &mut shutdown => break Ok(()),
                accepted = accept(&self.listener) => match accepted {
                    Ok(conn) => {
                        let platform = self.platform.clone();
                        tokio::spawn(async move {
                            match conn {
                                Conn::Tcp(s) => serve_connection(s, platform).await,
                                Conn::Unix(s) => serve_connection(s, platform).await,
                            }
                        });
                    }
                    Err(e) if is_transient(&e) => continue,
                    Err(e) => break Err(e),
                },
            }
        };
        if let Some(c) = clock {
            c.abort();
        }
        if let Listener::Unix(_, path) = &self.listener {
            let _ = std::fs::remove_file(path);
        }
        result
    }
}

enum Conn {
    Tcp(tokio::net::TcpStream),
    Unix(tokio::net::UnixStream),
}

async fn accept(l: &Listener) -> io::Result<Conn> {
    match l {
        Listener::Tcp(l) => {
            let (s, _) = l.accept().await?;
            s.set_nodelay(true)?;
            Ok(Conn::Tcp(s))
        }
        Listener::Unix(l, _) => Ok(Conn::Unix(l.accept().await?.0)),
    }
}

fn is_transient(e: &io::Error) -> bool {
    matches!(
        e.kind(),
        io::ErrorKind::ConnectionAborted
            | io::ErrorKind::ConnectionReset
            | io::ErrorKind::Interrupted
    )
}

async fn run_clock(platform: SharedPlatform, period: Duration) {
    let mut interval = tokio::time::interval(period);
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    interval.tick().await;
    loop {
        interval.tick().await;
        if let Err(e) = platform.lock().tick() {
            eprintln!("tick failed: {e}");
        }
    }
}

async fn flush_pushes<W: AsyncWrite + Unpin>(mailbox: &Mailbox, w: &mut W) -> io::Result<()> {
    for msg in mailbox.drain() {
        w.write_all(&Reply::push(&msg).to_line()).await?;
    }
    Ok(())
}

async fn serve_connection<S>(stream: S, platform: SharedPlatform)
where
    S: AsyncRead + AsyncWrite + Send + 'static,
{
    let (rd, wr) = tokio::io::split(stream);
    let mut rd = BufReader::new(rd);
    let writer: Arc<tokio::sync::Mutex<WriteHalf<S>>> = Arc::new(tokio::sync::Mutex::new(wr));
    let wake = Arc::new(Notify::new());
    let mailbox = Mailbox::new();
    {
        let wake = wake.clone();
        mailbox.set_notify(move || wake.notify_one());
    }
    let mut session = {
        let (id, mb) = platform.lock().open_channel_with(mailbox.clone());
        Session::new().with_channel(id, mb)
    };

    let forwarder = {
        let writer = writer.clone();
        let mailbox = mailbox.clone();
        tokio::spawn(async move {
            loop {
                wake.notified().await;
                let mut w = writer.lock().await;
                if flush_pushes(&mailbox, &mut *w).await.is_err() || w.flush().await.is_err() {
                    break;
                }
                if mailbox.is_closed() {
                    break;
                }
            }
        })
    };

    loop {
        let reply = match read_frame_async(&mut rd, MAX_LINE).await {
            Ok(Frame::Line(line)) => {
                if line.iter().all(u8::is_ascii_whitespace) {
                    continue;
                }
                match decode_request(&line) {
                    Ok(req) => {
                        let mut p = platform.lock();
                        dispatch(&mut p, &mut session, &req)
                    }
                    Err((id, e)) => Reply::err(id, "error", e),
                }
            }
            Ok(Frame::Oversize) => {
                let mut w = writer.lock().await;
                let _ = w
                    .write_all(
                        &Reply::err(serde_json::Value::Null, "error", ApiError::oversize())
                            .to_line(),
                    )
                    .await;
                let _ = w.flush().await;
                break;
            }
            Ok(Frame::Eof) | Err(_) => break,
        };
        let mut w = writer.lock().await;
        let sent = async {
            flush_pushes(&mailbox, &mut *w).await?;
            w.write_all(&reply.to_line()).await?;
            w.flush().await
        };
        if sent.await.is_err() {
            break;
        }
    }

    session.close(&mut platform.lock());
    forwarder.abort();
    let _ = writer.lock().await.shutdown().await;
}

/// A server running on its own thread and runtime.
pub struct ServerHandle {
    addr: Listen,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<io::Result<()>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> &Listen {
        &self.addr
    }

    pub fn stop(mut self) -> io::Result<()> {
        self.stop_inner()
    }

    fn stop_inner(&mut self) -> io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t
                .join()
                .unwrap_or_else(|_| Err(io::Error::other("server thread panicked"))),
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.stop_inner();
    }
}

/// Binds `listen` and serves on a background thread until the handle is
/// stopped or dropped.
pub fn spawn(
    listen: &Listen,
    platform: SharedPlatform,
    tick_every: Option<Duration>,
) -> io::Result<ServerHandle> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(4)
        .enable_all()
        .build()?;
    let mut server = runtime.block_on(Server::bind(listen, platform))?;
    if let Some(p) = tick_every {
        server = server.with_clock(p);
    }
    let addr = server.local_addr()?;
    let (tx, rx) = oneshot::channel();
    let thread = std::thread::Builder::new()
        .name("chpc-server".into())
        .spawn(move || {
            let r = runtime.block_on(server.run_until(async {
                let _ = rx.await;
            }));
            runtime.shutdown_timeout(Duration::from_millis(100));
            r
        })?;
    Ok(ServerHandle {
        addr,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
