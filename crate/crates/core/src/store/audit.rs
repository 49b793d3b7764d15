//! Append-only, hash-chained audit log stored as line-delimited JSON.
//!
//! Each event commits to its own content through `payload_digest` and to
//! its predecessor through `prev_digest`:
//!
//! ```text
//! payload_digest = SHA-256(canonical JSON of the event body)
//! chain_digest   = SHA-256(prev_digest || payload_digest || seq as u64 big-endian)
//! ```
//!
//! The genesis predecessor is 32 zero bytes. A line is only accepted by the
//! verifier if it is byte-identical to the canonical serialization of the
//! event it parses to, so any edit to the file body is detected.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{digest, StoreError};
use crate::domain::Timestamp;

pub const GENESIS_DIGEST: [u8; 32] = [0; 32];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditEvent {
    pub seq: u64,
    pub timestamp: Timestamp,
    pub actor_id: String,
    pub action: String,
    pub entity_kind: String,
    pub entity_id: String,
    pub payload: Value,
    pub payload_digest: String,
    pub prev_digest: String,
    pub chain_digest: String,
}

/// The digested portion of an event.
#[derive(Serialize)]
struct AuditBody<'a> {
    seq: u64,
    timestamp: &'a Timestamp,
    actor_id: &'a str,
    action: &'a str,
    entity_kind: &'a str,
    entity_id: &'a str,
    payload: &'a Value,
}

impl AuditEvent {
    fn body(&self) -> AuditBody<'_> {
        AuditBody {
            seq: self.seq,
            timestamp: &self.timestamp,
            actor_id: &self.actor_id,
            action: &self.action,
            entity_kind: &self.entity_kind,
            entity_id: &self.entity_id,
            payload: &self.payload,
        }
    }

    pub fn compute_payload_digest(&self) -> [u8; 32] {
        digest(&serde_json::to_vec(&self.body()).expect("audit body serializes"))
    }

    /// The canonical line for this event, without the trailing newline.
    pub fn canonical_line(&self) -> String {
        serde_json::to_string(self).expect("audit event serializes")
    }
}

pub fn chain_digest(prev: &[u8; 32], payload_digest: &[u8; 32], seq: u64) -> [u8; 32] {
    let mut buf = Vec::with_capacity(72);
    buf.extend_from_slice(prev);
    buf.extend_from_slice(payload_digest);
    buf.extend_from_slice(&seq.to_be_bytes());
    digest(&buf)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "seq")]
pub enum ChainStatus {
    Ok,
    BrokenAt(u64),
}

fn decode_digest(hex_str: &str) -> Option<[u8; 32]> {
    let mut out = [0u8; 32];
    hex::decode_to_slice(hex_str, &mut out).ok()?;
    // reject uppercase spellings of the same bytes
    (hex::encode(out) == hex_str).then_some(out)
}

/// Checks a whole log body.
///
/// Reports the smallest sequence number whose line fails to parse, is not in
/// canonical form, or whose digests do not recompute.
pub fn verify_log_bytes(bytes: &[u8]) -> ChainStatus {
    if bytes.is_empty() {
        return ChainStatus::Ok;
    }
    let mut prev = GENESIS_DIGEST;
    let mut lines = bytes.split(|b| *b == b'\n').peekable();
    let mut seq = 0u64;
    while let Some(line) = lines.next() {
        let is_last = lines.peek().is_none();
        if is_last {
            // the body must end with a newline, leaving an empty final piece
            return if line.is_empty() { ChainStatus::Ok } else { ChainStatus::BrokenAt(seq + 1) };
        }
        seq += 1;
        match verify_line(line, seq, &prev) {
            Some(chain) => prev = chain,
            None => return ChainStatus::BrokenAt(seq),
        }
    }
    ChainStatus::Ok
}

fn verify_line(line: &[u8], expected_seq: u64, prev: &[u8; 32]) -> Option<[u8; 32]> {
    let event: AuditEvent = serde_json::from_slice(line).ok()?;
    if event.canonical_line().as_bytes() != line || event.seq != expected_seq {
        return None;
    }
    if decode_digest(&event.prev_digest)? != *prev {
        return None;
    }
    let payload_digest = event.compute_payload_digest();
    if decode_digest(&event.payload_digest)? != payload_digest {
        return None;
    }
    let chain = chain_digest(prev, &payload_digest, event.seq);
    (decode_digest(&event.chain_digest)? == chain).then_some(chain)
}

struct Tail {
    file: File,
    last_seq: u64,
    last_chain: [u8; 32],
}

pub struct AuditLog {
    path: PathBuf,
    tail: Mutex<Tail>,
}

impl AuditLog {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        let (last_seq, last_chain) = Self::read_tail(&path)?;
        Ok(Self { path, tail: Mutex::new(Tail { file, last_seq, last_chain }) })
    }

    fn read_tail(path: &Path) -> Result<(u64, [u8; 32]), StoreError> {
        let bytes = fs::read(path)?;
        let Some(last) = bytes
            .split(|b| *b == b'\n')
            .rev()
            .find(|line| !line.is_empty())
        else {
            return Ok((0, GENESIS_DIGEST));
        };
        let event: AuditEvent = serde_json::from_slice(last)
            .map_err(|e| StoreError::Corrupt(format!("audit log tail: {e}")))?;
        let chain = decode_digest(&event.chain_digest)
            .ok_or_else(|| StoreError::Corrupt("audit log tail digest".into()))?;
        Ok((event.seq, chain))
    }

    pub fn append(
        &self,
        actor_id: &str,
        action: &str,
        entity_kind: &str,
        entity_id: &str,
        payload: Value,
    ) -> Result<AuditEvent, StoreError> {
        let mut tail = self.tail.lock().unwrap_or_else(|p| p.into_inner());
        let seq = tail.last_seq + 1;
        let mut event = AuditEvent {
            seq,
            timestamp: Timestamp::now(),
            actor_id: actor_id.to_owned(),
            action: action.to_owned(),
            entity_kind: entity_kind.to_owned(),
            entity_id: entity_id.to_owned(),
            payload,
            payload_digest: String::new(),
            prev_digest: hex::encode(tail.last_chain),
            chain_digest: String::new(),
        };
        let payload_digest = event.compute_payload_digest();
        let chain = chain_digest(&tail.last_chain, &payload_digest, seq);
        event.payload_digest = hex::encode(payload_digest);
        event.chain_digest = hex::encode(chain);

        let mut line = event.canonical_line().into_bytes();
        line.push(b'\n');
        tail.file.write_all(&line)?;
        tail.file.sync_data()?;
        tail.last_seq = seq;
        tail.last_chain = chain;
        Ok(event)
    }

    pub fn len(&self) -> u64 {
        self.tail.lock().unwrap_or_else(|p| p.into_inner()).last_seq
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Raw log contents, read while appends are held off.
    pub fn read_bytes(&self) -> io::Result<Vec<u8>> {
        let _tail = self.tail.lock().unwrap_or_else(|p| p.into_inner());
        fs::read(&self.path)
    }

    pub fn events(&self) -> Result<Vec<AuditEvent>, StoreError> {
        self.read_bytes()?
            .split(|b| *b == b'\n')
            .filter(|line| !line.is_empty())
            .map(|line| {
                serde_json::from_slice(line)
                    .map_err(|e| StoreError::Corrupt(format!("audit log line: {e}")))
            })
            .collect()
    }

    pub fn verify(&self) -> Result<ChainStatus, StoreError> {
        Ok(verify_log_bytes(&self.read_bytes()?))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}
