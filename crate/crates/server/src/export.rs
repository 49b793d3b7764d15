//! Portable archive of the audit log and every entity record.
//!
//! Layout: `manifest.json`, `audit.log`, and `entities/<kind>/<id>.json`.
//! Audio blobs are not included.

use std::io::Write;

use serde::{Deserialize, Serialize};

use scribe_core::domain::Timestamp;
use scribe_core::store::{verify_log_bytes, ChainStatus, StoreError};
use scribe_core::Store;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub exported_at: Timestamp,
    pub audit_events: u64,
    pub entity_count: usize,
    pub audit_chain: ChainStatus,
}

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cannot write archive: {0}")]
    Io(#[from] std::io::Error),
}

fn append<W: Write>(tar: &mut tar::Builder<W>, path: &str, bytes: &[u8], mtime: u64) -> std::io::Result<()> {
    let mut header = tar::Header::new_gnu();
    header.set_size(bytes.len() as u64);
    header.set_mode(0o644);
    header.set_mtime(mtime);
    header.set_cksum();
    tar.append_data(&mut header, path, bytes)
}

/// Writes the archive and returns its manifest.
///
/// The audit log is read once and the manifest describes exactly those
/// bytes, even if events are appended concurrently.
pub fn export_archive<W: Write>(store: &Store, out: W) -> Result<Manifest, ExportError> {
    let audit = store.audit().read_bytes()?;
    let entities = store.raw_entities()?;
    let audit_chain = verify_log_bytes(&audit);
    let manifest = Manifest {
        exported_at: Timestamp::now(),
        audit_events: audit.split(|b| *b == b'\n').filter(|l| !l.is_empty()).count() as u64,
        entity_count: entities.len(),
        audit_chain,
    };
    let mtime = (manifest.exported_at.millis() / 1000).max(0) as u64;

    let mut tar = tar::Builder::new(out);
    let manifest_bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    append(&mut tar, "manifest.json", &manifest_bytes, mtime)?;
    append(&mut tar, "audit.log", &audit, mtime)?;
    for (key, value) in &entities {
        append(&mut tar, &format!("entities/{key}.json"), value, mtime)?;
    }
    tar.into_inner()?.flush()?;
    Ok(manifest)
}
