//! Blocking JSON POST with bounded retries, shared by the HTTP backends.

use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct HttpSettings {
    pub timeout: Duration,
    pub max_retries: u32,
    pub backoff: Duration,
    pub api_key: Option<String>,
}

impl Default for HttpSettings {
    fn default() -> Self {
        HttpSettings {
            timeout: Duration::from_secs(60),
            max_retries: 2,
            backoff: Duration::from_millis(200),
            api_key: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct JsonClient {
    client: Client,
    settings: HttpSettings,
}

impl JsonClient {
    pub fn new(settings: HttpSettings) -> Result<Self> {
        let client = Client::builder()
            .timeout(settings.timeout)
            .build()
            .map_err(|e| Error::Config(format!("building HTTP client: {e}")))?;
        Ok(JsonClient { client, settings })
    }

    /// POSTs `body` and returns the raw response bytes. Transport errors,
    /// 429 and 5xx are retried with exponential backoff; other non-2xx
    /// statuses fail immediately.
    pub fn post<B: Serialize + ?Sized>(&self, url: &str, body: &B) -> Result<Vec<u8>> {
        let payload = serde_json::to_vec(body)
            .map_err(|e| Error::InvalidRequest(format!("encoding request body: {e}")))?;
        let mut attempt = 0;
        loop {
            match self.try_post(url, &payload) {
                Ok(bytes) => return Ok(bytes),
                Err((retryable, reason)) => {
                    if !retryable || attempt >= self.settings.max_retries {
                        return Err(Error::BackendUnreachable {
                            url: url.to_string(),
                            reason: format!("{reason} (after {} attempt(s))", attempt + 1),
                        });
                    }
                    thread::sleep(self.settings.backoff * 2u32.saturating_pow(attempt));
                    attempt += 1;
                }
            }
        }
    }

    fn try_post(&self, url: &str, payload: &[u8]) -> std::result::Result<Vec<u8>, (bool, String)> {
        let mut req = self
            .client
            .post(url)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(payload.to_vec());
        if let Some(key) = &self.settings.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| (true, e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let retryable = status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error();
            return Err((retryable, format!("HTTP status {status}")));
        }
        resp.bytes()
            .map(|b| b.to_vec())
            .map_err(|e| (true, format!("reading response body: {e}")))
    }
}
