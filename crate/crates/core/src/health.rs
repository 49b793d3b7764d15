use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum HealthStatus {
    Healthy,
    Unhealthy { reason: String },
}

impl HealthStatus {
    pub fn unhealthy(reason: impl Into<String>) -> Self {
        Self::Unhealthy { reason: reason.into() }
    }

    pub fn is_healthy(&self) -> bool {
        matches!(self, Self::Healthy)
    }

    /// Classifies a failed HTTP probe.
    pub(crate) fn from_probe_error(err: &reqwest::Error) -> Self {
        if err.is_timeout() {
            Self::unhealthy(format!("timeout: {err}"))
        } else if err.is_connect() || err.is_request() {
            Self::unhealthy(format!("connection: {err}"))
        } else {
            Self::unhealthy(err.to_string())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendHealth {
    pub backend_id: String,
    #[serde(flatten)]
    pub status: HealthStatus,
}
