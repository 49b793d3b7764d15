//! Service configuration: one TOML file plus `BERTA_*` environment overrides.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use scribe_core::asr::{AsrBackendDescriptor, AsrBackendKind, LexiconEntry, VocabularyLexicon};
use scribe_core::domain::{Facility, Role, UserId};
use scribe_core::llm::{LlmBackendDescriptor, LlmBackendKind};
use scribe_core::metrics::CostModel;
use scribe_core::pipeline::DEFAULT_WORKERS;
use scribe_core::retry::RetryPolicy;

pub const ENV_PREFIX: &str = "BERTA_";
pub const DEFAULT_MAX_UPLOAD_BYTES: u64 = 200 * 1024 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthMode {
    StaticToken,
    OidcStub,
    NoneDev,
}

impl std::str::FromStr for AuthMode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "static_token" => Ok(Self::StaticToken),
            "oidc_stub" => Ok(Self::OidcStub),
            "none_dev" => Ok(Self::NoneDev),
            other => Err(invalid(format!("unknown auth mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuthConfig {
    pub mode: AuthMode,
    /// static_token: bearer token to user id.
    #[serde(default)]
    pub tokens: BTreeMap<String, UserId>,
    /// oidc_stub: shared HS256 verification key.
    #[serde(default)]
    pub hs256_key: Option<String>,
    /// oidc_stub: required `iss` claim, when set.
    #[serde(default)]
    pub issuer: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSeed {
    pub id: UserId,
    #[serde(default)]
    pub display_name: Option<String>,
    #[serde(default = "default_role")]
    pub role: Role,
}

fn default_role() -> Role {
    Role::Clinician
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkerConfig {
    pub transcription: usize,
    pub generation: usize,
}

impl Default for WorkerConfig {
    fn default() -> Self {
        Self { transcription: DEFAULT_WORKERS, generation: DEFAULT_WORKERS }
    }
}

fn default_listen() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}

fn default_max_upload() -> u64 {
    DEFAULT_MAX_UPLOAD_BYTES
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApiConfig {
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
    pub storage_root: PathBuf,
    #[serde(default = "default_max_upload")]
    pub max_upload_bytes: u64,
    #[serde(default)]
    pub blob_quota_bytes: Option<u64>,
    /// Must be set for `none_dev` authentication.
    #[serde(default)]
    pub dev: bool,
    pub auth: AuthConfig,
    #[serde(default)]
    pub asr: Vec<AsrBackendDescriptor>,
    #[serde(default)]
    pub llm: Vec<LlmBackendDescriptor>,
    /// Defaults to the first configured backend.
    #[serde(default)]
    pub default_asr_backend: Option<String>,
    #[serde(default)]
    pub default_llm_backend: Option<String>,
    #[serde(default)]
    pub workers: WorkerConfig,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub lexicon: Vec<LexiconEntry>,
    #[serde(default)]
    pub users: Vec<UserSeed>,
    #[serde(default)]
    pub facilities: Vec<Facility>,
    /// Enables the cost estimate in metrics output.
    #[serde(default)]
    pub cost: Option<CostModel>,
}

impl ApiConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Reads the file, applies process environment overrides and validates.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.to_owned(), source })?;
        let mut config =
            Self::from_toml(&text).map_err(|source| ConfigError::Parse { path: path.to_owned(), source })?;
        config.apply_env(std::env::vars())?;
        config.validate()?;
        Ok(config)
    }

    /// Applies `BERTA_*` overrides. Unrecognised names are ignored.
    ///
    /// `BERTA_ASR_ENDPOINT` and `BERTA_LLM_ENDPOINT` point the default
    /// backend at an HTTP endpoint, switching a mock backend to HTTP.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), ConfigError> {
        let vars: BTreeMap<String, String> = vars
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|k| (k.to_owned(), v)))
            .collect();
        let parse_err = |name: &str, e: &dyn std::fmt::Display| invalid(format!("{ENV_PREFIX}{name}: {e}"));

        if let Some(v) = vars.get("LISTEN") {
            self.listen = v.parse().map_err(|e| parse_err("LISTEN", &e))?;
        }
        if let Some(v) = vars.get("STORAGE_ROOT") {
            self.storage_root = PathBuf::from(v);
        }
        if let Some(v) = vars.get("MAX_UPLOAD_BYTES") {
            self.max_upload_bytes = v.parse().map_err(|e| parse_err("MAX_UPLOAD_BYTES", &e))?;
        }
        if let Some(v) = vars.get("DEV") {
            self.dev = matches!(v.as_str(), "1" | "true" | "yes");
        }
        if let Some(v) = vars.get("AUTH_MODE") {
            self.auth.mode = v.parse()?;
        }
        if let Some(v) = vars.get("AUTH_HS256_KEY") {
            self.auth.hs256_key = Some(v.clone());
        }
        if let Some(v) = vars.get("ASR_BACKEND") {
            self.default_asr_backend = Some(v.clone());
        }
        if let Some(v) = vars.get("LLM_BACKEND") {
            self.default_llm_backend = Some(v.clone());
        }
        if let Some(v) = vars.get("ASR_ENDPOINT") {
            let id = self.asr_default_id().ok_or_else(|| invalid("BERTA_ASR_ENDPOINT with no ASR backend"))?;
            let d = self.asr.iter_mut().find(|d| d.backend_id == id).ok_or_else(|| unknown("ASR", &id))?;
            if d.kind == AsrBackendKind::Mock {
                d.kind = AsrBackendKind::HttpTranscription;
                d.fixture_dir = None;
                d.fallback_text = None;
            }
            d.endpoint = Some(v.clone());
        }
        if let Some(v) = vars.get("LLM_ENDPOINT") {
            let id = self.llm_default_id().ok_or_else(|| invalid("BERTA_LLM_ENDPOINT with no LLM backend"))?;
            let d = self.llm.iter_mut().find(|d| d.backend_id == id).ok_or_else(|| unknown("LLM", &id))?;
            d.kind = LlmBackendKind::HttpChat;
            d.endpoint = Some(v.clone());
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.asr.is_empty() {
            return Err(invalid("at least one ASR backend is required"));
        }
        if self.llm.is_empty() {
            return Err(invalid("at least one LLM backend is required"));
        }
        for d in &self.asr {
            d.validate().map_err(|e| invalid(e.to_string()))?;
        }
        for d in &self.llm {
            d.validate().map_err(|e| invalid(e.to_string()))?;
        }
        let asr = self.asr_default_id().unwrap_or_default();
        if !self.asr.iter().any(|d| d.backend_id == asr) {
            return Err(unknown("ASR", &asr));
        }
        let llm = self.llm_default_id().unwrap_or_default();
        if !self.llm.iter().any(|d| d.backend_id == llm) {
            return Err(unknown("LLM", &llm));
        }
        if self.workers.transcription == 0 || self.workers.generation == 0 {
            return Err(invalid("worker counts must be positive"));
        }
        if self.max_upload_bytes == 0 {
            return Err(invalid("max_upload_bytes must be positive"));
        }
        if !(self.retry.base_delay_s >= 0.0 && self.retry.factor >= 1.0) {
            return Err(invalid("retry delays must be non-negative and factor at least 1"));
        }
        self.vocabulary()?;
        if let Some(cost) = &self.cost {
            cost.validate().map_err(|e| invalid(e.to_string()))?;
        }

        match self.auth.mode {
            AuthMode::NoneDev if !self.dev => {
                return Err(invalid("none_dev authentication requires `dev = true`"));
            }
            AuthMode::StaticToken => {
                if self.auth.tokens.is_empty() {
                    return Err(invalid("static_token authentication needs at least one token"));
                }
                for (token, user) in &self.auth.tokens {
                    if token.trim().is_empty() {
                        return Err(invalid("static tokens must not be empty"));
                    }
                    if !self.users.iter().any(|u| &u.id == user) {
                        return Err(invalid(format!("token maps to undeclared user `{user}`")));
                    }
                }
            }
            AuthMode::OidcStub => {
                if self.auth.hs256_key.as_deref().is_none_or(str::is_empty) {
                    return Err(invalid("oidc_stub authentication needs `hs256_key`"));
                }
            }
            AuthMode::NoneDev => {}
        }
        Ok(())
    }

    pub fn asr_default_id(&self) -> Option<String> {
        self.default_asr_backend.clone().or_else(|| self.asr.first().map(|d| d.backend_id.clone()))
    }

    pub fn llm_default_id(&self) -> Option<String> {
        self.default_llm_backend.clone().or_else(|| self.llm.first().map(|d| d.backend_id.clone()))
    }

    pub fn vocabulary(&self) -> Result<VocabularyLexicon, ConfigError> {
        VocabularyLexicon::new(self.lexicon.clone()).map_err(|e| invalid(e.to_string()))
    }

    /// A mock-backed, dev-authenticated configuration rooted at `storage_root`.
    pub fn dev(storage_root: impl Into<PathBuf>) -> Self {
        Self {
            listen: default_listen(),
            storage_root: storage_root.into(),
            max_upload_bytes: DEFAULT_MAX_UPLOAD_BYTES,
            blob_quota_bytes: None,
            dev: true,
            auth: AuthConfig { mode: AuthMode::NoneDev, tokens: BTreeMap::new(), hs256_key: None, issuer: None },
            asr: vec![AsrBackendDescriptor::mock("mock-asr")],
            llm: vec![LlmBackendDescriptor::mock("mock-llm")],
            default_asr_backend: None,
            default_llm_backend: None,
            workers: WorkerConfig::default(),
            retry: RetryPolicy::default(),
            lexicon: Vec::new(),
            users: Vec::new(),
            facilities: Vec::new(),
            cost: None,
        }
    }
}

fn unknown(what: &str, id: &str) -> ConfigError {
    invalid(format!("default {what} backend `{id}` is not configured"))
}
