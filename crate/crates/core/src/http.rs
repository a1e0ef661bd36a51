//! Blocking JSON-over-HTTP with bounded retries, shared by the remote
//! retriever, NLI and generator clients.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use ureq::Agent;

use crate::error::BackendError;

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub timeout: Duration,
    /// Total attempts per request, including the first.
    pub max_attempts: u32,
    pub backoff: Duration,
    pub api_key: Option<String>,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(60),
            max_attempts: 3,
            backoff: Duration::from_millis(200),
            api_key: None,
        }
    }
}

#[derive(Clone)]
pub(crate) struct JsonClient {
    agent: Agent,
    cfg: HttpConfig,
    service: &'static str,
}

impl JsonClient {
    pub(crate) fn new(service: &'static str, cfg: HttpConfig) -> Self {
        let agent: Agent = Agent::config_builder().timeout_global(Some(cfg.timeout)).build().into();
        Self { agent, cfg, service }
    }

    pub(crate) fn post<B: Serialize, R: DeserializeOwned>(&self, url: &str, body: &B) -> Result<R, BackendError> {
        let mut last = String::new();
        for attempt in 0..self.cfg.max_attempts.max(1) {
            if attempt > 0 {
                std::thread::sleep(self.cfg.backoff * 2u32.pow(attempt - 1));
            }
            let mut req = self.agent.post(url);
            if let Some(key) = &self.cfg.api_key {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
            match req.send_json(body) {
                Ok(mut resp) => {
                    return resp.body_mut().read_json::<R>().map_err(|e| BackendError::Malformed {
                        service: self.service,
                        message: e.to_string(),
                    });
                }
                Err(e) => {
                    log::debug!("{} attempt {} failed: {e}", self.service, attempt + 1);
                    last = e.to_string();
                }
            }
        }
        Err(BackendError::Exhausted {
            service: self.service,
            attempts: self.cfg.max_attempts.max(1),
            last,
        })
    }
}

pub(crate) fn join_url(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path.trim_start_matches('/'))
}
