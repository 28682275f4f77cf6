// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 Podseal Authors

use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use crate::api::ApiClient;
use crate::pod::PodRef;
use crate::policy::{RemediationAction, Violation};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemediationEvent {
    pub agent_id: String,
    pub scope: PodRef,
    pub action: RemediationAction,
    /// One-line summary of why the scope became untrusted.
    pub cause: String,
    #[serde(default)]
    pub violations: Vec<Violation>,
    /// Time of the Untrusted transition; identifies the transition.
    pub transition_at: u64,
}

/// Receiver of remediation events (a webhook in deployment).
#[async_trait]
pub trait RemediationSink: Send + Sync {
    async fn deliver(&self, event: &RemediationEvent) -> Result<(), String>;
}

#[derive(Debug, Clone)]
pub struct WebhookSink {
    client: ApiClient,
    path: String,
}

impl WebhookSink {
    /// `url` is the full webhook URL, e.g. `http://sim:8080/v1/remediate`.
    pub fn new(url: &str, token: Option<String>) -> Self {
        let (base, path) = split_url(url);
        WebhookSink {
            client: ApiClient::new(base, token).with_timeout(Duration::from_secs(2)),
            path,
        }
    }
}

fn split_url(url: &str) -> (String, String) {
    let after_scheme = url.find("://").map(|i| i + 3).unwrap_or(0);
    match url[after_scheme..].find('/') {
        Some(i) => (url[..after_scheme + i].to_string(), url[after_scheme + i..].to_string()),
        None => (url.to_string(), "/".to_string()),
    }
}

#[async_trait]
impl RemediationSink for WebhookSink {
    async fn deliver(&self, event: &RemediationEvent) -> Result<(), String> {
        self.client
            .post::<_, serde_json::Value>(&self.path, event)
            .await
            .map(|_| ())
            .map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 4,
            initial_backoff: Duration::from_millis(100),
        }
    }
}

/// At-least-once delivery with bounded exponential backoff. Returns the
/// last error if every attempt failed.
pub async fn deliver_with_retry(
    sink: &dyn RemediationSink,
    event: &RemediationEvent,
    retry: RetryPolicy,
) -> Result<u32, String> {
    let mut backoff = retry.initial_backoff;
    let mut last = String::new();
    for attempt in 1..=retry.attempts.max(1) {
        match sink.deliver(event).await {
            Ok(()) => return Ok(attempt),
            Err(e) => {
                tracing::warn!(agent = %event.agent_id, scope = %event.scope, attempt, "remediation delivery failed: {e}");
                last = e;
            }
        }
        if attempt < retry.attempts {
            tokio::time::sleep(backoff).await;
            backoff *= 2;
        }
    }
    Err(last)
}
