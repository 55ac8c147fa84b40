use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

/// Environment variable naming the listen address.
pub const LISTEN_ENV: &str = "CHPC_LISTEN";
pub const DEFAULT_LISTEN: &str = "tcp:127.0.0.1:7411";

/// Where the server listens and clients connect.
///
/// Accepted forms: `tcp:HOST:PORT`, `unix:PATH`, a bare `HOST:PORT`, or a
/// bare path starting with `/` or `.`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Listen {
    Tcp(String),
    Unix(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid listen address {0:?}")]
pub struct ListenParseError(pub String);

impl FromStr for Listen {
    type Err = ListenParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || ListenParseError(s.to_owned());
        if let Some(p) = s.strip_prefix("unix:") {
            return if p.is_empty() {
                Err(bad())
            } else {
                Ok(Listen::Unix(p.into()))
            };
        }
        if s.starts_with('/') || s.starts_with('.') {
            return Ok(Listen::Unix(s.into()));
        }
        let addr = s.strip_prefix("tcp:").unwrap_or(s);
        match addr.rsplit_once(':') {
            Some((host, port)) if !host.is_empty() && port.parse::<u16>().is_ok() => {
                Ok(Listen::Tcp(addr.into()))
            }
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Listen {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Listen::Tcp(a) => write!(f, "tcp:{a}"),
            Listen::Unix(p) => write!(f, "unix:{}", p.display()),
        }
    }
}

impl Listen {
    /// `CHPC_LISTEN` if set, else the default.
    pub fn from_env() -> Result<Self, ListenParseError> {
        match std::env::var(LISTEN_ENV) {
            Ok(v) if !v.trim().is_empty() => v.parse(),
            _ => DEFAULT_LISTEN.parse(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_accepted_forms() {
        assert_eq!(
            "tcp:127.0.0.1:80".parse(),
            Ok(Listen::Tcp("127.0.0.1:80".into()))
        );
        assert_eq!(
            "localhost:9000".parse(),
            Ok(Listen::Tcp("localhost:9000".into()))
        );
        assert_eq!("[::1]:9000".parse(), Ok(Listen::Tcp("[::1]:9000".into())));
        assert_eq!("unix:/tmp/s".parse(), Ok(Listen::Unix("/tmp/s".into())));
        assert_eq!("/tmp/s".parse(), Ok(Listen::Unix("/tmp/s".into())));
        assert!("nohost".parse::<Listen>().is_err());
        assert!("tcp:host:99999".parse::<Listen>().is_err());
        assert!("unix:".parse::<Listen>().is_err());
        let l: Listen = DEFAULT_LISTEN.parse().unwrap();
        assert_eq!(l.to_string(), DEFAULT_LISTEN);
    }
}
