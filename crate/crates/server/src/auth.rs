//! API tokens: 160 random bits, hex-encoded, stored only as SHA-256 hashes.

use rand::RngCore;
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;

use crate::error::{ApiError, ApiResult};
use crate::store::Store;

pub const TOKEN_BYTES: usize = 20;

/// The authenticated caller of a request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Principal {
    pub user: String,
    /// Worker-class tokens may use the worker protocol endpoints.
    pub worker: bool,
}

impl Principal {
    pub fn require_worker(&self) -> ApiResult<()> {
        if self.worker {
            Ok(())
        } else {
            Err(ApiError::forbidden("a worker token is required for this endpoint"))
        }
    }
}

fn hash_token(token: &str) -> [u8; 32] {
    Sha256::digest(token.as_bytes()).into()
}

pub fn create_token(store: &Store, user: &str, worker: bool) -> ApiResult<String> {
    if user.trim().is_empty() {
        return Err(ApiError::unprocessable("user name must not be empty"));
    }
    let mut raw = [0u8; TOKEN_BYTES];
    rand::rngs::OsRng.fill_bytes(&mut raw);
    let token = hex::encode(raw);
    let created = chrono::Utc::now().to_rfc3339();
    store.write(|tx| {
        tx.execute(
            "INSERT INTO tokens (hash, user, worker, created_at) VALUES (?1, ?2, ?3, ?4)",
            rusqlite::params![hex::encode(hash_token(&token)), user, worker, created],
        )?;
        Ok(())
    })?;
    Ok(token)
}

/// Resolves a presented token.
///
/// Every stored hash is compared in constant time so that the match
/// position does not leak through timing.
pub fn authenticate(store: &Store, token: &str) -> ApiResult<Principal> {
    let presented = hash_token(token);
    let rows: Vec<(String, String, bool)> = store.read(|tx| {
        let mut stmt = tx.prepare("SELECT hash, user, worker FROM tokens")?;
        let rows = stmt.query_map([], |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?)))?;
        Ok(rows.collect::<Result<_, _>>()?)
    })?;
    let mut found = None;
    for (hash, user, worker) in rows {
        let stored = hex::decode(&hash).unwrap_or_default();
        if bool::from(stored.ct_eq(&presented)) {
            found = Some(Principal { user, worker });
        }
    }
    found.ok_or_else(|| ApiError::unauthorized("invalid token"))
}

/// Extracts the token from an `Authorization: Token <hex>` header value.
pub fn parse_header(value: &str) -> Option<&str> {
    let (scheme, token) = value.trim().split_once(char::is_whitespace)?;
    let token = token.trim();
    (scheme.eq_ignore_ascii_case("token") && !token.is_empty()).then_some(token)
}
