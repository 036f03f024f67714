//! Blocking client for the twin's HTTP API.

use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use serde_json::Value;

pub const TERMINAL: [&str; 4] = ["Completed", "Rejected", "TimedOut", "Failed"];

pub struct ApiClient {
    base: String,
    agent: ureq::Agent,
}

impl ApiClient {
    pub fn new(base: &str) -> Self {
        let base = if base.contains("://") {
            base.trim_end_matches('/').to_string()
        } else {
            format!("http://{}", base.trim_end_matches('/'))
        };
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(10)))
            .build()
            .into();
        Self { base, agent }
    }

    fn finish(path: &str, resp: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> anyhow::Result<Value> {
        let mut resp = resp.with_context(|| format!("request to {path} failed"))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string()?;
        let body: Value = serde_json::from_str(&text).unwrap_or(Value::String(text));
        if status >= 400 {
            let code = body.get("error").and_then(Value::as_str).unwrap_or("error");
            let detail = body.get("detail").and_then(Value::as_str).unwrap_or("");
            bail!("{status} {code}: {detail}");
        }
        Ok(body)
    }

    pub fn get(&self, path: &str) -> anyhow::Result<Value> {
        Self::finish(path, self.agent.get(format!("{}{path}", self.base)).call())
    }

    pub fn post(&self, path: &str, body: &Value) -> anyhow::Result<Value> {
        let req = self
            .agent
            .post(format!("{}{path}", self.base))
            .header("content-type", "application/json");
        Self::finish(path, req.send(body.to_string()))
    }

    /// Polls a mission until it reaches a terminal state.
    pub fn wait_mission(&self, id: u64, limit: Duration) -> anyhow::Result<Value> {
        let start = Instant::now();
        loop {
            let m = self.get(&format!("/missions/{id}"))?;
            let state = m.get("state").and_then(Value::as_str).unwrap_or("");
            if TERMINAL.contains(&state) {
                return Ok(m);
            }
            if start.elapsed() > limit {
                bail!("mission {id} still {state} after {}s", limit.as_secs());
            }
            std::thread::sleep(Duration::from_millis(100));
        }
    }
}
