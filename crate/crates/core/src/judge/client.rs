//! HTTP client for a chat-completions style judge endpoint.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{JudgeError, Message};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub url: String,
    pub model: String,
    /// Name of the environment variable holding a bearer token.
    pub token_env: Option<String>,
    pub timeout_ms: u64,
    pub parallelism: usize,
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles for each later one.
    pub backoff_ms: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            url: String::new(),
            model: String::new(),
            token_env: None,
            timeout_ms: 60_000,
            parallelism: 4,
            max_attempts: 3,
            backoff_ms: 500,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), JudgeError> {
        let bad = |m: &str| Err(JudgeError::InvalidConfig(m.to_string()));
        if self.url.is_empty() {
            return bad("endpoint.url is required");
        }
        if self.model.is_empty() {
            return bad("endpoint.model is required");
        }
        if self.max_attempts == 0 {
            return bad("endpoint.max_attempts must be at least 1");
        }
        if self.timeout_ms == 0 {
            return bad("endpoint.timeout_ms must be positive");
        }
        if self.parallelism == 0 {
            return bad("endpoint.parallelism must be at least 1");
        }
        Ok(())
    }
}

/// Anything that turns a judge prompt into a raw reply.
pub trait JudgeClient: Sync {
    fn judge(&self, messages: &[Message]) -> Result<String, JudgeError>;
}

pub struct HttpJudge {
    cfg: EndpointConfig,
    token: Option<String>,
    http: reqwest::blocking::Client,
}

enum Attempt {
    Done(String),
    Retry(String),
    Fail(JudgeError),
}

impl HttpJudge {
    pub fn new(cfg: EndpointConfig) -> Result<Self, JudgeError> {
        cfg.validate()?;
        let token = match &cfg.token_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                JudgeError::InvalidConfig(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(cfg.timeout_ms))
            .build()
            .map_err(|e| JudgeError::InvalidConfig(e.to_string()))?;
        Ok(HttpJudge { cfg, token, http })
    }

    fn attempt(&self, body: &serde_json::Value) -> Attempt {
        let mut req = self.http.post(&self.cfg.url).json(body);
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        if status.is_server_error() || status.as_u16() == 429 {
            return Attempt::Retry(format!("status {}", status.as_u16()));
        }
        if !status.is_success() {
            return Attempt::Fail(JudgeError::Status {
                status: status.as_u16(),
                body: text,
            });
        }
        match extract_reply(&text) {
            Ok(s) => Attempt::Done(s),
            Err(e) => Attempt::Fail(e),
        }
    }
}

/// `choices[0].message.content` of a chat-completions response.
pub(crate) fn extract_reply(body: &str) -> Result<String, JudgeError> {
    let v: serde_json::Value =
        serde_json::from_str(body).map_err(|e| JudgeError::MalformedResponse(e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| JudgeError::MalformedResponse("missing choices[0].message.content".into()))
}

impl JudgeClient for HttpJudge {
    fn judge(&self, messages: &[Message]) -> Result<String, JudgeError> {
        let body = json!({
            "model": self.cfg.model,
            "messages": messages,
            "temperature": 0,
        });
        let mut last = String::new();
        for attempt in 1..=self.cfg.max_attempts {
            if attempt > 1 {
                let delay = self.cfg.backoff_ms.saturating_mul(1 << (attempt - 2).min(16));
                std::thread::sleep(Duration::from_millis(delay));
            }
            match self.attempt(&body) {
                Attempt::Done(s) => return Ok(s),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(msg) => {
                    log::debug!("judge attempt {attempt} failed: {msg}");
                    last = msg;
                }
            }
        }
        Err(JudgeError::Network {
            attempts: self.cfg.max_attempts,
            message: last,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::judge::mock::{MockResponse, MockServer};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn cfg(url: String) -> EndpointConfig {
        EndpointConfig {
            url,
            model: "judge-model".into(),
            backoff_ms: 1,
            ..EndpointConfig::default()
        }
    }

    fn user(s: &str) -> Vec<Message> {
        vec![Message { role: "user".into(), content: s.into() }]
    }

    #[test]
    fn passes_reply_through() {
        let server = MockServer::start(|req| {
            let v: serde_json::Value = serde_json::from_str(&req.body).unwrap();
            assert_eq!(v["temperature"], 0);
            assert_eq!(v["model"], "judge-model");
            MockResponse::reply(&format!("echo {}", v["messages"][0]["content"].as_str().unwrap()))
        });
        let client = HttpJudge::new(cfg(server.url())).unwrap();
        assert_eq!(client.judge(&user("hi")).unwrap(), "echo hi");
    }

    #[test]
    fn retries_then_fails_on_5xx() {
        let server = MockServer::start(|_| MockResponse::status(500, "boom"));
        let client = HttpJudge::new(cfg(server.url())).unwrap();
        match client.judge(&user("x")) {
            Err(JudgeError::Network { attempts: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(server.requests(), 3);
    }

    #[test]
    fn recovers_after_transient_failure() {
        let n = Arc::new(AtomicUsize::new(0));
        let n2 = n.clone();
        let server = MockServer::start(move |_| {
            if n2.fetch_add(1, Ordering::SeqCst) == 0 {
                MockResponse::status(429, "slow down")
            } else {
                MockResponse::reply("[[6]]")
            }
        });
        let client = HttpJudge::new(cfg(server.url())).unwrap();
        assert_eq!(client.judge(&user("x")).unwrap(), "[[6]]");
        assert_eq!(server.requests(), 2);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let server = MockServer::start(|_| MockResponse::status(401, "no"));
        let client = HttpJudge::new(cfg(server.url())).unwrap();
        assert!(matches!(client.judge(&user("x")), Err(JudgeError::Status { status: 401, .. })));
        assert_eq!(server.requests(), 1);
    }

    #[test]
    fn malformed_body() {
        let server = MockServer::start(|_| MockResponse::status(200, "{\"choices\":[]}"));
        let client = HttpJudge::new(cfg(server.url())).unwrap();
        assert!(matches!(client.judge(&user("x")), Err(JudgeError::MalformedResponse(_))));
    }

    #[test]
    fn bearer_token_from_env() {
        std::env::set_var("GAELFORGE_TEST_JUDGE_TOKEN", "s3cret");
        let server = MockServer::start(|req| {
            assert_eq!(req.header("authorization"), Some("Bearer s3cret"));
            MockResponse::reply("ok")
        });
        let client = HttpJudge::new(EndpointConfig {
            token_env: Some("GAELFORGE_TEST_JUDGE_TOKEN".into()),
            ..cfg(server.url())
        })
        .unwrap();
        assert_eq!(client.judge(&user("x")).unwrap(), "ok");
        let missing = EndpointConfig {
            token_env: Some("GAELFORGE_TEST_UNSET_VAR".into()),
            ..cfg(server.url())
        };
        assert!(HttpJudge::new(missing).is_err());
    }

    #[test]
    fn unreachable_endpoint_is_network_error() {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        drop(listener);
        let client = HttpJudge::new(cfg(url)).unwrap();
        assert!(matches!(client.judge(&user("x")), Err(JudgeError::Network { attempts: 3, .. })));
    }
}
