use std::sync::Arc;
use std::time::Instant;

use scribe_core::audio::silent_wav;
use scribe_core::domain::{
    MediaFormat, Role, Session, Timestamp, UserId, UserProfile,
};
use scribe_core::store::{verify_log_bytes, ChainStatus, SortOrder, Store, StoreError, StoreOptions};
use serde_json::json;

/// FIPS 180-4 SHA-256, written out so the chain check does not lean on the
/// same library the store uses.
fn sha256(msg: &[u8]) -> [u8; 32] {
    const K: [u32; 64] = [
        0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4, 0xab1c5ed5,
        0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174,
        0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
        0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967,
        0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85,
        0xa2bfe8a1, 0xa81a664b, 0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
        0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
        0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2,
    ];
    let mut h: [u32; 8] = [
        0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a, 0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19,
    ];
    let mut data = msg.to_vec();
    data.push(0x80);
    while data.len() % 64 != 56 {
        data.push(0);
    }
    data.extend_from_slice(&((msg.len() as u64) * 8).to_be_bytes());
    for block in data.chunks(64) {
        let mut w = [0u32; 64];
        for i in 0..16 {
            w[i] = u32::from_be_bytes(block[4 * i..4 * i + 4].try_into().unwrap());
        }
        for i in 16..64 {
            let s0 = w[i - 15].rotate_right(7) ^ w[i - 15].rotate_right(18) ^ (w[i - 15] >> 3);
            let s1 = w[i - 2].rotate_right(17) ^ w[i - 2].rotate_right(19) ^ (w[i - 2] >> 10);
            w[i] = w[i - 16].wrapping_add(s0).wrapping_add(w[i - 7]).wrapping_add(s1);
        }
        let [mut a, mut b, mut c, mut d, mut e, mut f, mut g, mut hh] = h;
        for i in 0..64 {
            let s1 = e.rotate_right(6) ^ e.rotate_right(11) ^ e.rotate_right(25);
            let ch = (e & f) ^ (!e & g);
            let t1 = hh.wrapping_add(s1).wrapping_add(ch).wrapping_add(K[i]).wrapping_add(w[i]);
            let s0 = a.rotate_right(2) ^ a.rotate_right(13) ^ a.rotate_right(22);
            let maj = (a & b) ^ (a & c) ^ (b & c);
            let t2 = s0.wrapping_add(maj);
            hh = g;
            g = f;
            f = e;
            e = d.wrapping_add(t1);
            d = c;
            c = b;
            b = a;
            a = t1.wrapping_add(t2);
        }
        for (x, y) in h.iter_mut().zip([a, b, c, d, e, f, g, hh]) {
            *x = x.wrapping_add(y);
        }
    }
    let mut out = [0u8; 32];
    for (i, word) in h.iter().enumerate() {
        out[4 * i..4 * i + 4].copy_from_slice(&word.to_be_bytes());
    }
    out
}

fn hexs(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn open() -> (tempfile::TempDir, Store) {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    (dir, store)
}

fn user(store: &Store, id: &str) -> UserId {
    let profile = UserProfile {
        id: UserId::from(id),
        display_name: id.to_uppercase(),
        role: Role::Clinician,
        created_at: Timestamp::now(),
    };
    store.save(&profile).unwrap();
    profile.id
}

#[test]
fn sha256_oracle_matches_known_vectors() {
    assert_eq!(hexs(&sha256(b"")), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    assert_eq!(hexs(&sha256(b"abc")), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    assert_eq!(
        hexs(&sha256(b"abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq")),
        "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1"
    );
}

#[test]
fn audit_digests_match_an_independent_recomputation() {
    let (_dir, store) = open();
    for i in 0..20 {
        store
            .append_audit("u1", "session_created", scribe_core::domain::EntityKind::Session, &format!("s{i}"), json!({ "n": i, "z": [1, 2], "a": null }))
            .unwrap();
    }
    let mut prev = [0u8; 32];
    for (i, e) in store.audit().events().unwrap().iter().enumerate() {
        assert_eq!(e.seq, i as u64 + 1);
        let body = format!(
            "{{\"seq\":{},\"timestamp\":{},\"actor_id\":{},\"action\":{},\"entity_kind\":{},\"entity_id\":{},\"payload\":{}}}",
            e.seq,
            serde_json::to_string(&e.timestamp).unwrap(),
            serde_json::to_string(&e.actor_id).unwrap(),
            serde_json::to_string(&e.action).unwrap(),
            serde_json::to_string(&e.entity_kind).unwrap(),
            serde_json::to_string(&e.entity_id).unwrap(),
            serde_json::to_string(&e.payload).unwrap(),
        );
        let payload_digest = sha256(body.as_bytes());
        assert_eq!(e.payload_digest, hexs(&payload_digest));
        assert_eq!(e.prev_digest, hexs(&prev));
        let mut chained = prev.to_vec();
        chained.extend_from_slice(&payload_digest);
        chained.extend_from_slice(&e.seq.to_be_bytes());
        prev = sha256(&chained);
        assert_eq!(e.chain_digest, hexs(&prev));
    }
}

fn log_with(n: usize) -> (tempfile::TempDir, Store) {
    let (dir, store) = open();
    for i in 0..n {
        store
            .append_audit("actor", "note_edited", scribe_core::domain::EntityKind::Note, &format!("n{i}"), json!({ "i": i }))
            .unwrap();
    }
    (dir, store)
}

#[test]
fn every_single_event_tamper_is_located() {
    let (_dir, store) = log_with(100);
    let bytes = store.audit().read_bytes().unwrap();
    assert_eq!(verify_log_bytes(&bytes), ChainStatus::Ok);
    let text = String::from_utf8(bytes).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 100);
    for target in 0..lines.len() {
        // edit the payload, keeping the line valid JSON
        let mut tampered = lines.clone();
        let edited = lines[target].replacen(&format!("\"i\":{target}"), &format!("\"i\":{}", target + 1000), 1);
        assert_ne!(edited, lines[target]);
        tampered[target] = &edited;
        let body = tampered.join("\n") + "\n";
        assert_eq!(verify_log_bytes(body.as_bytes()), ChainStatus::BrokenAt(target as u64 + 1), "payload edit at {target}");

        // drop the event entirely
        let mut dropped = lines.clone();
        dropped.remove(target);
        let body = dropped.join("\n") + "\n";
        let expect = if target == lines.len() - 1 { ChainStatus::Ok } else { ChainStatus::BrokenAt(target as u64 + 1) };
        assert_eq!(verify_log_bytes(body.as_bytes()), expect, "deletion at {target}");
    }
}

#[test]
fn ten_thousand_events_verify_quickly() {
    let (_dir, store) = open();
    let log = store.audit();
    let bytes = {
        for i in 0..10_000 {
            log.append("a", "x", "job", &i.to_string(), json!({ "k": i })).unwrap();
        }
        log.read_bytes().unwrap()
    };
    let started = Instant::now();
    assert_eq!(verify_log_bytes(&bytes), ChainStatus::Ok);
    assert!(started.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn concurrent_appenders_produce_one_valid_chain() {
    let (_dir, store) = open();
    let store = Arc::new(store);
    let handles: Vec<_> = (0..8)
        .map(|w| {
            let store = Arc::clone(&store);
            std::thread::spawn(move || {
                for i in 0..100 {
                    store
                        .append_audit(&format!("w{w}"), "job_done", scribe_core::domain::EntityKind::Job, &format!("{w}-{i}"), json!({}))
                        .unwrap();
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    assert_eq!(store.verify_audit_chain().unwrap(), ChainStatus::Ok);
    let events = store.audit().events().unwrap();
    assert_eq!(events.len(), 800);
    assert!(events.iter().enumerate().all(|(i, e)| e.seq == i as u64 + 1));
}

#[test]
fn entities_survive_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let owner;
    let session;
    {
        let store = Store::open(dir.path()).unwrap();
        owner = user(&store, "dr-a");
        session = Session::new(owner.clone(), None);
        store.save(&session).unwrap();
    }
    let store = Store::open(dir.path()).unwrap();
    assert_eq!(store.load::<Session>(&session.id).unwrap(), session);
    assert!(store.exists::<UserProfile>(&owner).unwrap());
}

#[test]
fn missing_entities_are_not_found() {
    let (_dir, store) = open();
    let err = store.load::<Session>(&"nope".into()).unwrap_err();
    assert!(matches!(err, StoreError::NotFound { .. }));
    assert!(store.try_load::<Session>(&"nope".into()).unwrap().is_none());
}

#[test]
fn invalid_entities_are_refused() {
    let (_dir, store) = open();
    let mut s = Session::new("u".into(), None);
    let r = scribe_core::domain::RecordingId::generate();
    s.recording_ids = vec![r.clone(), r];
    assert!(matches!(store.save(&s), Err(StoreError::Invariant(_))));
}

#[test]
fn sessions_list_newest_first_with_id_tiebreak() {
    let (_dir, store) = open();
    let a = user(&store, "a");
    let b = user(&store, "b");
    let stamps = [3_000, 1_000, 2_000, 2_000, 5_000];
    let mut mine = Vec::new();
    for (i, ms) in stamps.iter().enumerate() {
        let mut s = Session::new(if i == 4 { b.clone() } else { a.clone() }, None);
        s.created_at = Timestamp::from_millis(*ms);
        store.save(&s).unwrap();
        if i != 4 {
            mine.push(s);
        }
    }
    let listed = store.list_sessions(&a, SortOrder::Descending).unwrap();
    let mut expect = mine.clone();
    expect.sort_by(|x, y| (y.created_at, &y.id).cmp(&(x.created_at, &x.id)));
    assert_eq!(listed, expect);
    let asc = store.list_sessions(&a, SortOrder::Ascending).unwrap();
    assert_eq!(asc.iter().rev().cloned().collect::<Vec<_>>(), expect);
    assert!(matches!(store.list_sessions(&"ghost".into(), SortOrder::Descending), Err(StoreError::UnknownUser(_))));
}

#[test]
fn blobs_are_content_addressed_and_deduplicated() {
    let (_dir, store) = open();
    let audio = silent_wav(1.0, 8000, 7);
    let first = store.put_blob(&audio, MediaFormat::WavPcm16).unwrap();
    let second = store.put_blob(&audio, MediaFormat::WavPcm16).unwrap();
    assert_eq!(first, second);
    assert_eq!(first.address, hexs(&sha256(&audio)));
    assert_eq!(first.size_bytes, audio.len() as u64);
    assert_eq!(store.blob_count().unwrap(), 1);
    assert_eq!(store.get_blob(&first.address).unwrap(), audio);
    assert!(matches!(store.put_blob(&[], MediaFormat::WavPcm16), Err(StoreError::EmptyBlob)));
    assert!(matches!(store.get_blob(&"0".repeat(64)), Err(StoreError::NotFound { .. })));
}

#[test]
fn quota_reports_storage_full() {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open_with(dir.path(), StoreOptions { blob_quota_bytes: Some(20_000) }).unwrap();
    store.put_blob(&silent_wav(1.0, 8000, 1), MediaFormat::WavPcm16).unwrap();
    let err = store.put_blob(&silent_wav(1.0, 8000, 2), MediaFormat::WavPcm16).unwrap_err();
    assert!(matches!(err, StoreError::StorageFull));
    assert_eq!(store.blob_count().unwrap(), 1);
}

#[test]
fn concurrent_updates_do_not_lose_writes() {
    let (_dir, store) = open();
    let store = Arc::new(store);
    let s = Session::new("u".into(), None);
    store.save(&s).unwrap();
    let handles: Vec<_> = (0..8)
        .map(|_| {
            let store = Arc::clone(&store);
            let id = s.id.clone();
            std::thread::spawn(move || {
                for _ in 0..25 {
                    store
                        .update::<Session, _, StoreError>(&id, |s| {
                            s.recording_ids.push(scribe_core::domain::RecordingId::generate());
                            Ok(())
                        })
                        .unwrap();
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    assert_eq!(store.load::<Session>(&s.id).unwrap().recording_ids.len(), 200);
}
