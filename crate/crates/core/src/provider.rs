//! Shared plumbing for external model providers (embedding, rerank, chat).
//!
//! Every provider speaks JSON over HTTP POST. Transport failures and
//! timeouts are retryable; malformed responses are not.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    #[error("{provider}: transport failure: {message}")]
    Transport { provider: String, message: String },
    #[error("{provider}: request timed out")]
    Timeout { provider: String },
    #[error("{provider}: HTTP status {status}: {message}")]
    Status {
        provider: String,
        status: u16,
        message: String,
    },
    #[error("{provider}: invalid response: {message}")]
    InvalidResponse { provider: String, message: String },
}

impl ProviderError {
    pub fn invalid(provider: &str, message: impl Into<String>) -> Self {
        ProviderError::InvalidResponse {
            provider: provider.to_string(),
            message: message.into(),
        }
    }

    /// Worth another attempt: network trouble, timeouts, 429 and 5xx.
    pub fn is_retryable(&self) -> bool {
        match self {
            ProviderError::Transport { .. } | ProviderError::Timeout { .. } => true,
            ProviderError::Status { status, .. } => *status == 429 || *status >= 500,
            ProviderError::InvalidResponse { .. } => false,
        }
    }

    /// The endpoint could not be reached at all.
    pub fn is_unreachable(&self) -> bool {
        matches!(self, ProviderError::Transport { .. } | ProviderError::Timeout { .. })
    }
}

/// Endpoint settings shared by the HTTP providers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpEndpoint {
    pub url: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    /// Environment variable holding a bearer token, if the endpoint needs one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_env: Option<String>,
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_retries() -> u32 {
    2
}

impl HttpEndpoint {
    pub fn new(url: impl Into<String>) -> Self {
        HttpEndpoint {
            url: url.into(),
            timeout_ms: default_timeout_ms(),
            retries: default_retries(),
            token_env: None,
        }
    }
}

/// Blocking JSON-over-HTTP client used by every HTTP provider.
#[derive(Debug, Clone)]
pub struct JsonClient {
    name: String,
    endpoint: HttpEndpoint,
    agent: ureq::Agent,
}

impl JsonClient {
    pub fn new(name: impl Into<String>, endpoint: HttpEndpoint) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_millis(endpoint.timeout_ms))
            .build();
        JsonClient {
            name: name.into(),
            endpoint,
            agent,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn endpoint(&self) -> &HttpEndpoint {
        &self.endpoint
    }

    fn post_once<Req: Serialize, Resp: DeserializeOwned>(&self, body: &Req) -> Result<Resp, ProviderError> {
        let mut req = self.agent.post(&self.endpoint.url);
        if let Some(var) = &self.endpoint.token_env {
            if let Ok(token) = std::env::var(var) {
                req = req.set("Authorization", &format!("Bearer {token}"));
            }
        }
        match req.send_json(body) {
            Ok(resp) => resp
                .into_json::<Resp>()
                .map_err(|e| ProviderError::invalid(&self.name, e.to_string())),
            Err(ureq::Error::Status(status, resp)) => Err(ProviderError::Status {
                provider: self.name.clone(),
                status,
                message: resp.into_string().unwrap_or_default(),
            }),
            Err(ureq::Error::Transport(t)) => {
                let message = t.to_string();
                if message.to_ascii_lowercase().contains("timed out") {
                    Err(ProviderError::Timeout {
                        provider: self.name.clone(),
                    })
                } else {
                    Err(ProviderError::Transport {
                        provider: self.name.clone(),
                        message,
                    })
                }
            }
        }
    }

    /// POST `body` and decode the JSON reply, retrying retryable failures up
    /// to the endpoint's retry count.
    pub fn post<Req: Serialize, Resp: DeserializeOwned>(&self, body: &Req) -> Result<Resp, ProviderError> {
        with_retries(self.endpoint.retries, Duration::from_millis(200), || {
            self.post_once(body)
        })
    }
}

/// Run `op` up to `retries + 1` times with exponential backoff starting at
/// `base_delay`, stopping early on success or a non-retryable error.
pub fn with_retries<T>(
    retries: u32,
    base_delay: Duration,
    mut op: impl FnMut() -> Result<T, ProviderError>,
) -> Result<T, ProviderError> {
    let mut attempt = 0;
    loop {
        match op() {
            Ok(v) => return Ok(v),
            Err(e) if e.is_retryable() && attempt < retries => {
                let delay = base_delay.saturating_mul(1u32 << attempt.min(16));
                log::warn!("{e}; retrying in {delay:?} (attempt {} of {})", attempt + 1, retries);
                if !delay.is_zero() {
                    std::thread::sleep(delay);
                }
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

#[cfg(test)]
pub(crate) mod testserver {
    //! Minimal single-threaded HTTP responder for provider tests.

    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;
    use std::thread;

    pub struct Served {
        pub url: String,
        pub requests: mpsc::Receiver<(Vec<(String, String)>, String)>,
    }

    /// Serve `responses` in order (status, body), one per connection.
    pub fn serve(responses: Vec<(u16, String)>) -> Served {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for (status, body) in responses {
                let Ok((stream, _)) = listener.accept() else { return };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut headers = Vec::new();
                let mut len = 0usize;
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                loop {
                    line.clear();
                    reader.read_line(&mut line).unwrap();
                    let l = line.trim_end();
                    if l.is_empty() {
                        break;
                    }
                    if let Some((k, v)) = l.split_once(':') {
                        if k.eq_ignore_ascii_case("content-length") {
                            len = v.trim().parse().unwrap();
                        }
                        headers.push((k.to_ascii_lowercase(), v.trim().to_string()));
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                let _ = tx.send((headers, String::from_utf8_lossy(&buf).into_owned()));
                let mut stream = stream;
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                let _ = stream.write_all(reply.as_bytes());
            }
        });
        Served { url, requests: rx }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn retries_stop_after_budget() {
        let calls = Cell::new(0);
        let r: Result<(), _> = with_retries(2, Duration::ZERO, || {
            calls.set(calls.get() + 1);
            Err(ProviderError::Timeout { provider: "p".into() })
        });
        assert!(r.is_err());
        assert_eq!(calls.get(), 3);
    }

    #[test]
    fn non_retryable_fails_fast() {
        let calls = Cell::new(0);
        let r: Result<(), _> = with_retries(5, Duration::ZERO, || {
            calls.set(calls.get() + 1);
            Err(ProviderError::invalid("p", "bad json"))
        });
        assert!(r.is_err());
        assert_eq!(calls.get(), 1);
    }

    #[test]
    fn client_retries_server_errors_then_succeeds() {
        let served = testserver::serve(vec![(503, "{}".into()), (200, r#"{"ok": true}"#.into())]);
        let mut ep = HttpEndpoint::new(served.url);
        ep.retries = 1;
        let client = JsonClient::new("test", ep);
        #[derive(Deserialize)]
        struct Ok_ {
            ok: bool,
        }
        let resp: Ok_ = client.post(&serde_json::json!({"x": 1})).unwrap();
        assert!(resp.ok);
    }

    #[test]
    fn unreachable_endpoint_is_transport_error() {
        // Bind then drop to get a port nobody listens on.
        let port = std::net::TcpListener::bind("127.0.0.1:0")
            .unwrap()
            .local_addr()
            .unwrap()
            .port();
        let mut ep = HttpEndpoint::new(format!("http://127.0.0.1:{port}/"));
        ep.retries = 0;
        let client = JsonClient::new("dead", ep);
        let err = client.post::<_, serde_json::Value>(&serde_json::json!({})).unwrap_err();
        assert!(err.is_unreachable(), "{err}");
    }
}
