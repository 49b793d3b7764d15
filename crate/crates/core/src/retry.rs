use std::future::Future;
use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Errors that say whether another attempt could succeed.
pub trait Retryable {
    fn is_retryable(&self) -> bool;
}

/// Exponential backoff applied to timeouts and connection failures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_s: f64,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 2, base_delay_s: 0.5, factor: 2.0 }
    }
}

impl RetryPolicy {
    pub fn max_attempts(&self) -> u32 {
        self.max_retries + 1
    }

    /// Delay before retry number `retry` (1-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let secs = self.base_delay_s * self.factor.powi(retry.saturating_sub(1) as i32);
        Duration::from_secs_f64(secs.max(0.0))
    }

    /// Runs `op` until it succeeds, fails with a non-retryable error, or the
    /// attempt budget is spent. Returns the outcome and the attempts made.
    pub async fn run<T, E, F, Fut>(&self, mut op: F) -> (Result<T, E>, u32)
    where
        E: Retryable,
        F: FnMut(u32) -> Fut,
        Fut: Future<Output = Result<T, E>>,
    {
        let mut attempt = 1;
        loop {
            match op(attempt).await {
                Err(err) if err.is_retryable() && attempt < self.max_attempts() => {
                    tracing::debug!(attempt, "retryable failure, backing off");
                    tokio::time::sleep(self.delay(attempt)).await;
                    attempt += 1;
                }
                outcome => return (outcome, attempt),
            }
        }
    }
}
