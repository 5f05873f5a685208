//! API tokens. A token reads `<id>.<secret>`; only a SHA-256 hash of the
//! secret is stored and checked in constant time.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Mutex;

use chrono::{DateTime, TimeZone, Utc};
use rand::Rng;
use rusqlite::{params, Connection, OptionalExtension};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Submit,
    Read,
    Admin,
}

impl Scope {
    pub fn as_str(self) -> &'static str {
        match self {
            Scope::Submit => "submit",
            Scope::Read => "read",
            Scope::Admin => "admin",
        }
    }
}

impl FromStr for Scope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "submit" => Ok(Scope::Submit),
            "read" => Ok(Scope::Read),
            "admin" => Ok(Scope::Admin),
            other => Err(format!("unknown scope '{other}'")),
        }
    }
}

pub fn parse_scopes(list: &str) -> Result<BTreeSet<Scope>, String> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ApiToken {
    pub id: String,
    /// The user acting through this token.
    pub principal: String,
    pub scopes: BTreeSet<Scope>,
    pub created_at: DateTime<Utc>,
    pub revoked: bool,
}

impl ApiToken {
    /// Admin tokens carry every scope.
    pub fn allows(&self, scope: Scope) -> bool {
        self.scopes.contains(&scope) || self.scopes.contains(&Scope::Admin)
    }

    pub fn is_admin(&self) -> bool {
        self.scopes.contains(&Scope::Admin)
    }
}

/// A freshly created token; the only time the secret is visible.
pub struct IssuedToken {
    pub token: ApiToken,
    pub secret: String,
}

impl IssuedToken {
    pub fn header_value(&self) -> String {
        format!("Token {}", self.bearer())
    }

    pub fn bearer(&self) -> String {
        format!("{}.{}", self.token.id, self.secret)
    }
}

impl fmt::Debug for IssuedToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IssuedToken").field("token", &self.token).finish_non_exhaustive()
    }
}

fn hash(secret: &str) -> Vec<u8> {
    Sha256::digest(secret.as_bytes()).to_vec()
}

fn random_hex(bytes: usize) -> String {
    let mut buf = vec![0u8; bytes];
    rand::rng().fill(&mut buf[..]);
    hex::encode(buf)
}

pub struct TokenStore {
    conn: Mutex<Connection>,
}

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS api_tokens (
    id          TEXT PRIMARY KEY,
    secret_hash BLOB    NOT NULL,
    principal   TEXT    NOT NULL,
    scopes      TEXT    NOT NULL,
    created_at  INTEGER NOT NULL,
    revoked     INTEGER NOT NULL DEFAULT 0
);
";

type Row = (String, Vec<u8>, String, String, i64, bool);

fn to_token((id, _, principal, scopes, created, revoked): Row) -> ApiToken {
    ApiToken {
        id,
        principal,
        scopes: parse_scopes(&scopes).unwrap_or_default(),
        created_at: Utc.timestamp_millis_opt(created).single().unwrap_or_default(),
        revoked,
    }
}

impl TokenStore {
    pub fn open(path: &Path) -> rusqlite::Result<Self> {
        let conn = Connection::open(path)?;
        conn.busy_timeout(std::time::Duration::from_secs(10))?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        conn.execute_batch(SCHEMA)?;
        Ok(TokenStore { conn: Mutex::new(conn) })
    }

    pub fn in_memory() -> rusqlite::Result<Self> {
        let conn = Connection::open_in_memory()?;
        conn.execute_batch(SCHEMA)?;
        Ok(TokenStore { conn: Mutex::new(conn) })
    }

    fn conn(&self) -> std::sync::MutexGuard<'_, Connection> {
        self.conn.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn create(&self, principal: &str, scopes: BTreeSet<Scope>) -> rusqlite::Result<IssuedToken> {
        let token = ApiToken {
            id: random_hex(8),
            principal: principal.to_string(),
            scopes,
            created_at: Utc::now(),
            revoked: false,
        };
        let secret = random_hex(24);
        let scopes: Vec<&str> = token.scopes.iter().map(|s| s.as_str()).collect();
        self.conn().execute(
            "INSERT INTO api_tokens (id, secret_hash, principal, scopes, created_at) VALUES (?1, ?2, ?3, ?4, ?5)",
            params![token.id, hash(&secret), token.principal, scopes.join(","), token.created_at.timestamp_millis()],
        )?;
        Ok(IssuedToken { token, secret })
    }

    pub fn list(&self) -> rusqlite::Result<Vec<ApiToken>> {
        let conn = self.conn();
        let mut stmt =
            conn.prepare("SELECT id, secret_hash, principal, scopes, created_at, revoked FROM api_tokens ORDER BY created_at, id")?;
        let rows = stmt.query_map([], |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?, r.get(3)?, r.get(4)?, r.get(5)?)))?;
        rows.map(|r| r.map(to_token)).collect()
    }

    pub fn revoke(&self, id: &str) -> rusqlite::Result<bool> {
        Ok(self.conn().execute("UPDATE api_tokens SET revoked = 1 WHERE id = ?1", [id])? == 1)
    }

    /// Resolves `<id>.<secret>` to a live token.
    pub fn authenticate(&self, presented: &str) -> Option<ApiToken> {
        let (id, secret) = presented.split_once('.')?;
        let row: Option<Row> = self
            .conn()
            .query_row(
                "SELECT id, secret_hash, principal, scopes, created_at, revoked FROM api_tokens WHERE id = ?1",
                [id],
                |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?, r.get(3)?, r.get(4)?, r.get(5)?)),
            )
            .optional()
            .ok()
            .flatten();
        // Hash even for unknown ids so timing does not reveal which exist.
        let presented_hash = hash(secret);
        let row = row?;
        let matches: bool = presented_hash.ct_eq(&row.1).into();
        let token = to_token(row);
        (matches && !token.revoked).then_some(token)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn create_authenticate_revoke() {
        let store = TokenStore::in_memory().unwrap();
        let issued = store.create("alice", parse_scopes("submit,read").unwrap()).unwrap();
        let tok = store.authenticate(&issued.bearer()).unwrap();
        assert_eq!(tok.principal, "alice");
        assert!(tok.allows(Scope::Submit) && !tok.allows(Scope::Admin));
        assert!(store.authenticate(&format!("{}.wrong", issued.token.id)).is_none());
        assert!(store.authenticate("nodot").is_none());
        assert!(store.revoke(&issued.token.id).unwrap());
        assert!(store.authenticate(&issued.bearer()).is_none());
        assert_eq!(store.list().unwrap().len(), 1);
    }

    #[test]
    fn admin_implies_everything() {
        let store = TokenStore::in_memory().unwrap();
        let issued = store.create("root", parse_scopes("admin").unwrap()).unwrap();
        assert!(issued.token.allows(Scope::Read) && issued.token.allows(Scope::Submit));
        assert!(parse_scopes("read,bogus").is_err());
    }
}
