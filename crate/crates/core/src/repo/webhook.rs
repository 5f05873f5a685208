//! Push webhooks authenticated with HMAC-SHA256 over the raw payload.

use hmac::{Hmac, KeyInit, Mac};
use serde::Deserialize;
use sha2::Sha256;
use thiserror::Error;

type HmacSha256 = Hmac<Sha256>;

pub const SIGNATURE_HEADER: &str = "X-Hub-Signature-256";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WebhookError {
    #[error("unknown repository '{0}'")]
    UnknownRepo(String),
    #[error("signature verification failed")]
    BadSignature,
    #[error("malformed push payload: {0}")]
    BadPayload(String),
}

/// `sha256=<hex>` signature for `body`.
pub fn sign_payload(secret: &[u8], body: &[u8]) -> String {
    let mut mac = HmacSha256::new_from_slice(secret).expect("HMAC accepts keys of any length");
    mac.update(body);
    format!("sha256={}", hex::encode(mac.finalize().into_bytes()))
}

/// Constant-time check of a `sha256=<hex>` signature header.
pub fn verify_signature(secret: &[u8], body: &[u8], header: &str) -> bool {
    let Some(digest) = header.trim().strip_prefix("sha256=") else {
        return false;
    };
    let Ok(expected) = hex::decode(digest) else {
        return false;
    };
    let Ok(mut mac) = HmacSha256::new_from_slice(secret) else {
        return false;
    };
    mac.update(body);
    mac.verify_slice(&expected).is_ok()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PushEvent {
    /// Branch name without the `refs/heads/` prefix; `None` for tag pushes.
    pub branch: Option<String>,
}

#[derive(Deserialize)]
struct RawPush {
    #[serde(rename = "ref")]
    git_ref: String,
}

pub fn parse_push(payload: &[u8]) -> Result<PushEvent, WebhookError> {
    let raw: RawPush = serde_json::from_slice(payload).map_err(|e| WebhookError::BadPayload(e.to_string()))?;
    Ok(PushEvent {
        branch: raw.git_ref.strip_prefix("refs/heads/").map(str::to_string),
    })
}
