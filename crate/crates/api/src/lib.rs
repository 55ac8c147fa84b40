//! Newline-delimited JSON interface to a [`chpc_core::platform::Platform`].
//!
//! [`dispatch`] maps operations onto the platform and is shared by the async
//! [`server`] and in-process drivers. [`client::Client`] is a small blocking
//! client for tools and tests.

pub mod client;
pub mod dispatch;
pub mod listen;
pub mod protocol;
pub mod server;

pub use client::{Client, ClientError};
pub use dispatch::{dispatch, handle, Session};
pub use listen::Listen;
pub use protocol::{ApiError, Reply, Request};
pub use server::{spawn, Server, ServerHandle, SharedPlatform};
