//! Bearer-token authentication for the three supported modes.

use std::collections::BTreeMap;

use jsonwebtoken::{Algorithm, DecodingKey, Validation};
use serde::{Deserialize, Serialize};

use scribe_core::domain::{Role, Timestamp, UserId, UserProfile};
use scribe_core::{Orchestrator, ScribeError};

use crate::config::{AuthConfig, AuthMode};

/// The user every request acts as under `none_dev`.
pub const DEV_USER: &str = "dev";

#[derive(Debug, thiserror::Error)]
pub enum AuthError {
    #[error("unauthorized: {0}")]
    Unauthorized(String),
    #[error("user lookup failed: {0}")]
    Lookup(#[from] ScribeError),
}

fn unauthorized(msg: impl Into<String>) -> AuthError {
    AuthError::Unauthorized(msg.into())
}

/// Claims accepted from an `oidc_stub` token.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Claims {
    pub sub: String,
    pub exp: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iss: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
}

pub enum Authenticator {
    StaticToken(BTreeMap<String, UserId>),
    OidcStub { key: DecodingKey, validation: Box<Validation> },
    NoneDev,
}

impl Authenticator {
    pub fn new(config: &AuthConfig) -> Self {
        match config.mode {
            AuthMode::StaticToken => Self::StaticToken(config.tokens.clone()),
            AuthMode::OidcStub => {
                let mut validation = Validation::new(Algorithm::HS256);
                validation.validate_aud = false;
                if let Some(iss) = &config.issuer {
                    validation.set_issuer(&[iss]);
                }
                let secret = config.hs256_key.as_deref().unwrap_or_default();
                Self::OidcStub { key: DecodingKey::from_secret(secret.as_bytes()), validation: Box::new(validation) }
            }
            AuthMode::NoneDev => Self::NoneDev,
        }
    }

    pub fn mode(&self) -> AuthMode {
        match self {
            Self::StaticToken(_) => AuthMode::StaticToken,
            Self::OidcStub { .. } => AuthMode::OidcStub,
            Self::NoneDev => AuthMode::NoneDev,
        }
    }

    /// Resolves the `Authorization` header value to a user.
    ///
    /// `oidc_stub` provisions users it has not seen before.
    pub fn authenticate(
        &self,
        authorization: Option<&str>,
        orch: &Orchestrator,
    ) -> Result<UserProfile, AuthError> {
        if let Self::NoneDev = self {
            return load(orch, &UserId::from(DEV_USER));
        }
        let token = bearer(authorization)?;
        match self {
            Self::StaticToken(tokens) => {
                let user = tokens.get(token).ok_or_else(|| unauthorized("unknown token"))?;
                load(orch, user)
            }
            Self::OidcStub { key, validation } => {
                let data = jsonwebtoken::decode::<Claims>(token, key, validation)
                    .map_err(|e| unauthorized(format!("invalid token: {e}")))?;
                let claims = data.claims;
                if claims.sub.trim().is_empty() {
                    return Err(unauthorized("token has an empty subject"));
                }
                let profile = UserProfile {
                    id: UserId::from(claims.sub.clone()),
                    display_name: claims.name.unwrap_or(claims.sub),
                    role: claims.role.unwrap_or(Role::Clinician),
                    created_at: Timestamp::now(),
                };
                Ok(orch.ensure_user(profile)?)
            }
            Self::NoneDev => unreachable!(),
        }
    }
}

fn bearer(header: Option<&str>) -> Result<&str, AuthError> {
    let header = header.ok_or_else(|| unauthorized("missing bearer token"))?;
    let (scheme, token) = header
        .split_once(' ')
        .ok_or_else(|| unauthorized("malformed authorization header"))?;
    if !scheme.eq_ignore_ascii_case("bearer") || token.trim().is_empty() {
        return Err(unauthorized("expected a bearer token"));
    }
    Ok(token.trim())
}

fn load(orch: &Orchestrator, id: &UserId) -> Result<UserProfile, AuthError> {
    match orch.store().try_load::<UserProfile>(id) {
        Ok(Some(user)) => Ok(user),
        Ok(None) => Err(unauthorized(format!("user {id} is not provisioned"))),
        Err(e) => Err(AuthError::Lookup(e.into())),
    }
}

/// Signs an `oidc_stub` token. Used by tooling and tests.
pub fn sign_stub_token(claims: &Claims, key: &str) -> String {
    jsonwebtoken::encode(
        &jsonwebtoken::Header::new(Algorithm::HS256),
        claims,
        &jsonwebtoken::EncodingKey::from_secret(key.as_bytes()),
    )
    .expect("HS256 signing does not fail")
}
