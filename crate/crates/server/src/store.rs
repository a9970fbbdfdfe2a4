//! Persistence: a SQLite database for records plus a directory of
//! content-addressed blobs for uploaded files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard};

use rusqlite::{Connection, OptionalExtension, Transaction, TransactionBehavior};
use sha2::{Digest, Sha256};

use crate::error::{ApiError, ApiResult};

const SCHEMA: &str = r#"
CREATE TABLE IF NOT EXISTS tokens (
    hash        TEXT PRIMARY KEY,
    user        TEXT NOT NULL,
    worker      INTEGER NOT NULL,
    created_at  TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS models (
    seq         INTEGER PRIMARY KEY AUTOINCREMENT,
    id          TEXT NOT NULL UNIQUE,
    owner       TEXT NOT NULL,
    name        TEXT NOT NULL,
    kernel_tag  TEXT NOT NULL,
    source      TEXT NOT NULL,
    manifest    TEXT NOT NULL,
    diagnostics TEXT NOT NULL,
    created_at  TEXT NOT NULL,
    UNIQUE (owner, name)
);
CREATE TABLE IF NOT EXISTS interface_values (
    model_id    TEXT NOT NULL REFERENCES models(id) ON DELETE CASCADE,
    name        TEXT NOT NULL,
    value       TEXT NOT NULL,
    PRIMARY KEY (model_id, name)
);
CREATE TABLE IF NOT EXISTS executions (
    seq         INTEGER PRIMARY KEY AUTOINCREMENT,
    id          TEXT NOT NULL UNIQUE,
    model_id    TEXT NOT NULL REFERENCES models(id) ON DELETE CASCADE,
    kernel_tag  TEXT NOT NULL,
    status      TEXT NOT NULL,
    snapshot    TEXT NOT NULL,
    results     TEXT NOT NULL,
    created_at  TEXT NOT NULL,
    started_at  TEXT,
    ended_at    TEXT,
    worker_id   TEXT,
    attempts    INTEGER NOT NULL DEFAULT 0
);
CREATE INDEX IF NOT EXISTS executions_by_status ON executions (status, seq);
CREATE INDEX IF NOT EXISTS executions_by_model ON executions (model_id, seq);
CREATE TABLE IF NOT EXISTS execution_logs (
    execution_id TEXT NOT NULL REFERENCES executions(id) ON DELETE CASCADE,
    seq          INTEGER NOT NULL,
    line         TEXT NOT NULL,
    PRIMARY KEY (execution_id, seq)
);
CREATE TABLE IF NOT EXISTS workers (
    id             TEXT PRIMARY KEY,
    owner          TEXT NOT NULL,
    kernel_tags    TEXT NOT NULL,
    last_heartbeat INTEGER NOT NULL,
    active_job     TEXT,
    embedded       INTEGER NOT NULL DEFAULT 0
);
"#;

pub struct Store {
    conn: Mutex<Connection>,
    blob_dir: PathBuf,
}

impl Store {
    pub fn open(data_dir: &Path) -> ApiResult<Self> {
        let blob_dir = data_dir.join("blobs");
        fs::create_dir_all(&blob_dir)?;
        let conn = Connection::open(data_dir.join("modelhub.db"))?;
        conn.busy_timeout(std::time::Duration::from_secs(5))?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        conn.pragma_update(None, "synchronous", "FULL")?;
        conn.pragma_update(None, "foreign_keys", true)?;
        conn.execute_batch(SCHEMA)?;
        Ok(Store { conn: Mutex::new(conn), blob_dir })
    }

    fn lock(&self) -> MutexGuard<'_, Connection> {
        // A panic while holding the lock leaves SQLite consistent (the open
        // transaction is rolled back on drop), so poisoning is ignored.
        self.conn.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Runs `f` inside one write transaction; commits on `Ok`.
    pub fn write<T>(&self, f: impl FnOnce(&Transaction<'_>) -> ApiResult<T>) -> ApiResult<T> {
        let mut conn = self.lock();
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        let out = f(&tx)?;
        tx.commit()?;
        Ok(out)
    }

    /// Runs `f` against a consistent snapshot.
    pub fn read<T>(&self, f: impl FnOnce(&Transaction<'_>) -> ApiResult<T>) -> ApiResult<T> {
        let mut conn = self.lock();
        let tx = conn.transaction_with_behavior(TransactionBehavior::Deferred)?;
        f(&tx)
    }

    /// Stores `bytes` under their SHA-256 and returns the digest string.
    pub fn put_blob(&self, bytes: &[u8]) -> ApiResult<String> {
        let hex = hex::encode(Sha256::digest(bytes));
        let path = self.blob_dir.join(&hex);
        if !path.exists() {
            let tmp = self.blob_dir.join(format!(".{hex}.{}", uuid::Uuid::new_v4().simple()));
            let mut f = fs::File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
            fs::rename(&tmp, &path)?;
        }
        Ok(format!("sha256:{hex}"))
    }

    pub fn get_blob(&self, digest: &str) -> ApiResult<Vec<u8>> {
        let hex = digest
            .strip_prefix("sha256:")
            .filter(|h| h.len() == 64 && h.bytes().all(|b| b.is_ascii_hexdigit()))
            .ok_or_else(|| ApiError::internal(format!("malformed blob digest {digest:?}")))?;
        Ok(fs::read(self.blob_dir.join(hex))?)
    }
}

/// Fetches one optional row; absent rows are `None`, not an error.
pub fn optional<T>(r: rusqlite::Result<T>) -> ApiResult<Option<T>> {
    Ok(r.optional()?)
}
