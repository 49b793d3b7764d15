use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{digest_hex, StoreError};
use crate::domain::MediaFormat;

/// Pointer to an immutable blob, addressed by the SHA-256 of its bytes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobRef {
    pub address: String,
    pub size_bytes: u64,
    pub media_format: MediaFormat,
}

pub(crate) struct BlobStore {
    root: PathBuf,
    quota_bytes: Option<u64>,
    used_bytes: AtomicU64,
    write_lock: Mutex<()>,
}

fn is_address(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

impl BlobStore {
    pub(crate) fn open(root: PathBuf, quota_bytes: Option<u64>) -> Result<Self, StoreError> {
        fs::create_dir_all(root.join("tmp"))?;
        let mut used = 0;
        for shard in fs::read_dir(&root)? {
            let shard = shard?;
            if shard.file_name() == "tmp" || !shard.file_type()?.is_dir() {
                continue;
            }
            for blob in fs::read_dir(shard.path())? {
                used += blob?.metadata()?.len();
            }
        }
        Ok(Self { root, quota_bytes, used_bytes: AtomicU64::new(used), write_lock: Mutex::new(()) })
    }

    fn path_for(&self, address: &str) -> PathBuf {
        self.root.join(&address[..2]).join(address)
    }

    pub(crate) fn put(&self, bytes: &[u8], media_format: MediaFormat) -> Result<BlobRef, StoreError> {
        if bytes.is_empty() {
            return Err(StoreError::EmptyBlob);
        }
        let address = digest_hex(bytes);
        let blob = BlobRef { address: address.clone(), size_bytes: bytes.len() as u64, media_format };
        let path = self.path_for(&address);
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        if path.exists() {
            return Ok(blob);
        }
        let size = bytes.len() as u64;
        let used = self.used_bytes.load(Ordering::SeqCst);
        if self.quota_bytes.is_some_and(|quota| used + size > quota) {
            return Err(StoreError::StorageFull);
        }
        self.write_atomically(&path, bytes)?;
        self.used_bytes.fetch_add(size, Ordering::SeqCst);
        Ok(blob)
    }

    fn write_atomically(&self, dest: &Path, bytes: &[u8]) -> io::Result<()> {
        let shard = dest.parent().expect("blob path has a shard directory");
        fs::create_dir_all(shard)?;
        let mut tmp = tempfile::NamedTempFile::new_in(self.root.join("tmp"))?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(dest).map_err(|e| e.error)?;
        File::open(shard)?.sync_all()
    }

    pub(crate) fn get(&self, address: &str) -> Result<Vec<u8>, StoreError> {
        if !is_address(address) {
            return Err(StoreError::not_found("blob", address));
        }
        match fs::read(self.path_for(address)) {
            Ok(bytes) => Ok(bytes),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(StoreError::not_found("blob", address)),
            Err(e) => Err(e.into()),
        }
    }

    pub(crate) fn count(&self) -> Result<usize, StoreError> {
        let mut n = 0;
        for shard in fs::read_dir(&self.root)? {
            let shard = shard?;
            if shard.file_name() != "tmp" && shard.file_type()?.is_dir() {
                n += fs::read_dir(shard.path())?.count();
            }
        }
        Ok(n)
    }

    pub(crate) fn used_bytes(&self) -> u64 {
        self.used_bytes.load(Ordering::SeqCst)
    }
}
