//! Institution-local persistence.
//!
//! On-disk layout under the storage root:
//!
//! ```text
//! blobs/<first2>/<digest>   content-addressed audio
//! entities.redb             entity records keyed `kind/id` (canonical JSON)
//! audit.log                 hash-chained audit events, one JSON object per line
//! ```

mod audit;
mod blob;

use std::io;
use std::path::{Path, PathBuf};

use redb::{Database, ReadableDatabase, ReadableTable, TableDefinition};
use serde_json::Value;
use sha2::{Digest, Sha256};

pub use audit::{chain_digest, verify_log_bytes, AuditEvent, AuditLog, ChainStatus, GENESIS_DIGEST};
pub use blob::BlobRef;

use crate::domain::{
    Entity, EntityKind, InvariantViolation, MediaFormat, MemoryView, Note, NoteId, Recording,
    RecordingId, Session, StoreView, Transcript, UserId, UserProfile,
};
use crate::pipeline::Job;
use crate::template::NoteTemplate;
use blob::BlobStore;

const ENTITIES: TableDefinition<&str, &[u8]> = TableDefinition::new("entities");

pub fn digest(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(digest(bytes))
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("blob is empty")]
    EmptyBlob,
    #[error("storage is full")]
    StorageFull,
    #[error("{kind} {id} not found")]
    NotFound { kind: String, id: String },
    #[error(transparent)]
    Invariant(#[from] InvariantViolation),
    #[error("unknown user {0}")]
    UnknownUser(UserId),
    #[error("stored data is corrupt: {0}")]
    Corrupt(String),
    #[error("database error: {0}")]
    Database(String),
    #[error("i/o error: {0}")]
    Io(io::Error),
}

impl StoreError {
    pub fn not_found(kind: impl ToString, id: impl ToString) -> Self {
        Self::NotFound { kind: kind.to_string(), id: id.to_string() }
    }
}

impl From<io::Error> for StoreError {
    fn from(err: io::Error) -> Self {
        if err.kind() == io::ErrorKind::StorageFull {
            Self::StorageFull
        } else {
            Self::Io(err)
        }
    }
}

macro_rules! db_error {
    ($($ty:ty),*) => {
        $(impl From<$ty> for StoreError {
            fn from(err: $ty) -> Self {
                Self::Database(err.to_string())
            }
        })*
    };
}

db_error!(
    redb::DatabaseError,
    redb::TransactionError,
    redb::TableError,
    redb::StorageError,
    redb::CommitError
);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SortOrder {
    Ascending,
    #[default]
    Descending,
}

#[derive(Debug, Clone, Default)]
pub struct StoreOptions {
    /// Refuse new blobs once this many bytes are stored.
    pub blob_quota_bytes: Option<u64>,
}

/// Every entity, read from one consistent read transaction.
#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    pub sessions: Vec<Session>,
    pub view: MemoryView,
    pub transcripts: Vec<Transcript>,
    pub templates: Vec<NoteTemplate>,
    pub users: Vec<UserProfile>,
}

impl StoreView for Snapshot {
    fn recording(&self, id: &RecordingId) -> Option<Recording> {
        self.view.recording(id)
    }

    fn note(&self, id: &NoteId) -> Option<Note> {
        self.view.note(id)
    }
}

fn key_for(kind: EntityKind, id: &impl std::fmt::Display) -> String {
    format!("{kind}/{id}")
}

fn decode<E: Entity>(key: &str, bytes: &[u8]) -> Result<E, StoreError> {
    serde_json::from_slice(bytes).map_err(|e| StoreError::Corrupt(format!("{key}: {e}")))
}

pub struct Store {
    root: PathBuf,
    db: Database,
    blobs: BlobStore,
    audit: AuditLog,
}

impl Store {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        Self::open_with(root, StoreOptions::default())
    }

    pub fn open_with(root: impl AsRef<Path>, options: StoreOptions) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        std::fs::create_dir_all(&root)?;
        let db = Database::create(root.join("entities.redb"))?;
        let txn = db.begin_write()?;
        txn.open_table(ENTITIES)?;
        txn.commit()?;
        let blobs = BlobStore::open(root.join("blobs"), options.blob_quota_bytes)?;
        let audit = AuditLog::open(root.join("audit.log"))?;
        Ok(Self { root, db, blobs, audit })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    // ---- blobs ----

    pub fn put_blob(&self, bytes: &[u8], media_format: MediaFormat) -> Result<BlobRef, StoreError> {
        self.blobs.put(bytes, media_format)
    }

    pub fn get_blob(&self, address: &str) -> Result<Vec<u8>, StoreError> {
        self.blobs.get(address)
    }

    pub fn blob_count(&self) -> Result<usize, StoreError> {
        self.blobs.count()
    }

    pub fn blob_bytes(&self) -> u64 {
        self.blobs.used_bytes()
    }

    // ---- entities ----

    pub fn save<E: Entity>(&self, entity: &E) -> Result<(), StoreError> {
        self.save_batch(std::slice::from_ref(entity))
    }

    /// Saves several records of one kind in a single transaction.
    pub fn save_batch<E: Entity>(&self, entities: &[E]) -> Result<(), StoreError> {
        let encoded = entities
            .iter()
            .map(|e| {
                e.validate()?;
                Ok((key_for(E::KIND, e.id()), serde_json::to_vec(e).expect("entity serializes")))
            })
            .collect::<Result<Vec<_>, StoreError>>()?;
        let txn = self.db.begin_write()?;
        {
            let mut table = txn.open_table(ENTITIES)?;
            for (key, value) in &encoded {
                table.insert(key.as_str(), value.as_slice())?;
            }
        }
        txn.commit()?;
        Ok(())
    }

    pub fn load<E: Entity>(&self, id: &E::Id) -> Result<E, StoreError> {
        self.try_load(id)?.ok_or_else(|| StoreError::not_found(E::KIND, id))
    }

    pub fn try_load<E: Entity>(&self, id: &E::Id) -> Result<Option<E>, StoreError> {
        let key = key_for(E::KIND, id);
        let txn = self.db.begin_read()?;
        let table = txn.open_table(ENTITIES)?;
        let value = table.get(key.as_str())?;
        value.map(|v| decode(&key, v.value())).transpose()
    }

    pub fn exists<E: Entity>(&self, id: &E::Id) -> Result<bool, StoreError> {
        let key = key_for(E::KIND, id);
        let txn = self.db.begin_read()?;
        let table = txn.open_table(ENTITIES)?;
        Ok(table.get(key.as_str())?.is_some())
    }

    /// Read-modify-write of one record inside a single write transaction.
    ///
    /// The closure sees the committed value; if it returns an error nothing
    /// is written. Write transactions are serialized, so concurrent updates
    /// to the same record never lose writes.
    pub fn update<E, R, Err>(
        &self,
        id: &E::Id,
        apply: impl FnOnce(&mut E) -> Result<R, Err>,
    ) -> Result<(E, R), Err>
    where
        E: Entity,
        Err: From<StoreError>,
    {
        let key = key_for(E::KIND, id);
        let txn = self.db.begin_write().map_err(StoreError::from)?;
        let (entity, out) = {
            let mut table = txn.open_table(ENTITIES).map_err(StoreError::from)?;
            let mut entity: E = {
                let current = table
                    .get(key.as_str())
                    .map_err(StoreError::from)?
                    .ok_or_else(|| StoreError::not_found(E::KIND, id))?;
                decode(&key, current.value())?
            };
            let out = apply(&mut entity)?;
            entity.validate().map_err(StoreError::from)?;
            let bytes = serde_json::to_vec(&entity).expect("entity serializes");
            table.insert(key.as_str(), bytes.as_slice()).map_err(StoreError::from)?;
            (entity, out)
        };
        txn.commit().map_err(StoreError::from)?;
        Ok((entity, out))
    }

    pub fn list<E: Entity>(&self) -> Result<Vec<E>, StoreError> {
        let txn = self.db.begin_read()?;
        let table = txn.open_table(ENTITIES)?;
        Self::scan(&table, E::KIND)
    }

    fn scan<E: Entity>(table: &impl ReadableTable<&'static str, &'static [u8]>, kind: EntityKind) -> Result<Vec<E>, StoreError> {
        let lo = format!("{kind}/");
        let hi = format!("{kind}0"); // '0' sorts right after '/'
        table
            .range(lo.as_str()..hi.as_str())?
            .map(|item| {
                let (k, v) = item?;
                decode(k.value(), v.value())
            })
            .collect()
    }

    /// Raw `(key, canonical JSON)` pairs for every record, in key order.
    pub fn raw_entities(&self) -> Result<Vec<(String, Vec<u8>)>, StoreError> {
        let txn = self.db.begin_read()?;
        let table = txn.open_table(ENTITIES)?;
        table
            .iter()?
            .map(|item| {
                let (k, v) = item?;
                Ok((k.value().to_owned(), v.value().to_vec()))
            })
            .collect()
    }

    pub fn snapshot(&self) -> Result<Snapshot, StoreError> {
        let txn = self.db.begin_read()?;
        let table = txn.open_table(ENTITIES)?;
        let mut view = MemoryView::default();
        for r in Self::scan::<Recording>(&table, EntityKind::Recording)? {
            view.insert_recording(r);
        }
        for n in Self::scan::<Note>(&table, EntityKind::Note)? {
            view.insert_note(n);
        }
        Ok(Snapshot {
            sessions: Self::scan(&table, EntityKind::Session)?,
            view,
            transcripts: Self::scan(&table, EntityKind::Transcript)?,
            templates: Self::scan(&table, EntityKind::Template)?,
            users: Self::scan(&table, EntityKind::User)?,
        })
    }

    /// An owner's sessions by `created_at`, ties broken by id.
    pub fn list_sessions(&self, owner: &UserId, order: SortOrder) -> Result<Vec<Session>, StoreError> {
        if !self.exists::<UserProfile>(owner)? {
            return Err(StoreError::UnknownUser(owner.clone()));
        }
        let mut sessions: Vec<Session> = self
            .list::<Session>()?
            .into_iter()
            .filter(|s| &s.owner_id == owner)
            .collect();
        sessions.sort_by(|a, b| (a.created_at, &a.id).cmp(&(b.created_at, &b.id)));
        if order == SortOrder::Descending {
            sessions.reverse();
        }
        Ok(sessions)
    }

    pub fn jobs(&self) -> Result<Vec<Job>, StoreError> {
        self.list()
    }

    // ---- audit ----

    pub fn append_audit(
        &self,
        actor_id: &str,
        action: &str,
        entity_kind: EntityKind,
        entity_id: &str,
        payload: Value,
    ) -> Result<AuditEvent, StoreError> {
        self.audit.append(actor_id, action, entity_kind.as_str(), entity_id, payload)
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    pub fn verify_audit_chain(&self) -> Result<ChainStatus, StoreError> {
        self.audit.verify()
    }
}

impl StoreView for Store {
    fn recording(&self, id: &RecordingId) -> Option<Recording> {
        self.try_load(id).ok().flatten()
    }

    fn note(&self, id: &NoteId) -> Option<Note> {
        self.try_load(id).ok().flatten()
    }
}
