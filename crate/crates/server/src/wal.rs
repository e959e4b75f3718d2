//! Write-ahead log plus snapshot file.
//!
//! Record layout, little endian:
//!
//! ```text
//! len: u32 | seq: u64 | tag: u16 | crc32: u32 | payload: [u8; len]
//! ```
//!
//! `crc32` covers `seq`, `tag` and the payload. The payload is the JSON
//! encoding of a [`Command`].

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use lbsn_core::platform::{Command, Platform};
use lbsn_core::service::Journal;
use lbsn_core::Error;
use serde::{Deserialize, Serialize};

pub const WAL_FILE: &str = "wal.log";
pub const SNAPSHOT_FILE: &str = "snapshot.json";
pub const HEADER_LEN: usize = 4 + 8 + 2 + 4;
/// Records larger than this are treated as corruption.
pub const MAX_RECORD_LEN: usize = 16 << 20;
pub const DEFAULT_CHECKPOINT_EVERY: usize = 1000;

fn checksum(seq: u64, tag: u16, payload: &[u8]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(&seq.to_le_bytes());
    h.update(&tag.to_le_bytes());
    h.update(payload);
    h.finalize()
}

pub fn encode_record(seq: u64, cmd: &Command) -> Vec<u8> {
    let payload = serde_json::to_vec(cmd).expect("commands serialize");
    let tag = cmd.tag_code();
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&seq.to_le_bytes());
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&checksum(seq, tag, &payload).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalRecord {
    pub seq: u64,
    pub command: Command,
    /// Offset just past this record.
    pub end: usize,
}

#[derive(Debug)]
pub struct LogScan {
    pub records: Vec<WalRecord>,
    /// Length of the prefix made of whole, valid records.
    pub valid_len: usize,
    /// Why scanning stopped early, as a `CorruptLog` error.
    pub error: Option<Error>,
}

/// Decodes records until the first invalid or incomplete one.
pub fn scan_log(bytes: &[u8]) -> LogScan {
    let mut records = Vec::new();
    let mut at = 0usize;
    let mut last_seq = 0u64;
    let error = loop {
        let rest = &bytes[at..];
        if rest.is_empty() {
            break None;
        }
        if rest.len() < HEADER_LEN {
            break Some(format!("truncated header at offset {at}"));
        }
        let len = u32::from_le_bytes(rest[0..4].try_into().unwrap()) as usize;
        let seq = u64::from_le_bytes(rest[4..12].try_into().unwrap());
        let tag = u16::from_le_bytes(rest[12..14].try_into().unwrap());
        let crc = u32::from_le_bytes(rest[14..18].try_into().unwrap());
        if len > MAX_RECORD_LEN {
            break Some(format!("implausible record length {len} at offset {at}"));
        }
        if rest.len() < HEADER_LEN + len {
            break Some(format!("truncated payload at offset {at}"));
        }
        let payload = &rest[HEADER_LEN..HEADER_LEN + len];
        if checksum(seq, tag, payload) != crc {
            break Some(format!("checksum mismatch at offset {at}"));
        }
        if seq <= last_seq {
            break Some(format!("sequence {seq} does not follow {last_seq} at offset {at}"));
        }
        let command: Command = match serde_json::from_slice(payload) {
            Ok(c) => c,
            Err(e) => break Some(format!("undecodable payload at offset {at}: {e}")),
        };
        if command.tag_code() != tag {
            break Some(format!("tag {tag} does not match payload at offset {at}"));
        }
        at += HEADER_LEN + len;
        records.push(WalRecord { seq, command, end: at });
        last_seq = seq;
    };
    LogScan {
        records,
        valid_len: at,
        error: error.map(Error::CorruptLog),
    }
}

#[derive(Serialize)]
struct SnapshotRef<'a> {
    seq: u64,
    state: &'a Platform,
}

#[derive(Deserialize)]
struct SnapshotOwned {
    seq: u64,
    state: Platform,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RecoveryReport {
    /// Sequence number covered by the snapshot, 0 without one.
    pub snapshot_seq: u64,
    /// Log records applied on top of the snapshot.
    pub replayed: usize,
    /// Bytes cut from the end of the log.
    pub truncated_bytes: u64,
    pub warning: Option<String>,
}

/// Rebuilds state from `snapshot` plus log `bytes` without touching disk.
/// Returns the state, the next sequence number, the valid log length and a
/// report.
pub fn recover_bytes(snapshot: Option<&[u8]>, bytes: &[u8]) -> Result<(Platform, u64, usize, RecoveryReport), Error> {
    let (mut state, snapshot_seq) = match snapshot {
        Some(b) => {
            let s: SnapshotOwned =
                serde_json::from_slice(b).map_err(|e| Error::CorruptLog(format!("snapshot unreadable: {e}")))?;
            (s.state, s.seq)
        }
        None => (Platform::default(), 0),
    };
    let scan = scan_log(bytes);
    let mut report = RecoveryReport {
        snapshot_seq,
        ..Default::default()
    };
    let mut valid_len = 0usize;
    let mut next_seq = snapshot_seq + 1;
    let mut warning = scan.error.map(|e| e.to_string());
    for rec in scan.records {
        if rec.seq > snapshot_seq {
            if let Err(e) = state.apply(&rec.command) {
                warning = Some(format!("record {} no longer applies: {e}", rec.seq));
                break;
            }
            report.replayed += 1;
        }
        valid_len = rec.end;
        next_seq = next_seq.max(rec.seq + 1);
    }
    state.drain_touched();
    report.truncated_bytes = (bytes.len() - valid_len) as u64;
    report.warning = warning;
    Ok((state, next_seq, valid_len, report))
}

/// File-backed [`Journal`].
pub struct Store {
    dir: PathBuf,
    file: File,
    next_seq: u64,
    sync: bool,
    checkpoint_every: usize,
    since_checkpoint: usize,
}

impl Store {
    /// Opens `dir`, recovering whatever state it holds. A damaged log tail is
    /// cut off and reported in the [`RecoveryReport`].
    pub fn open(dir: &Path) -> Result<(Store, Platform, RecoveryReport), Error> {
        let io_err = |e: io::Error| Error::StorageFailure(format!("{}: {e}", dir.display()));
        fs::create_dir_all(dir).map_err(io_err)?;
        let snap_path = dir.join(SNAPSHOT_FILE);
        let snapshot = match fs::read(&snap_path) {
            Ok(b) => Some(b),
            Err(e) if e.kind() == io::ErrorKind::NotFound => None,
            Err(e) => return Err(io_err(e)),
        };
        let wal_path = dir.join(WAL_FILE);
        let bytes = match fs::read(&wal_path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(io_err(e)),
        };
        let (state, next_seq, valid_len, report) = recover_bytes(snapshot.as_deref(), &bytes)?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&wal_path)
            .map_err(io_err)?;
        if report.truncated_bytes > 0 {
            tracing::warn!(
                bytes = report.truncated_bytes,
                reason = report.warning.as_deref().unwrap_or(""),
                "truncating damaged log tail"
            );
            file.set_len(valid_len as u64).map_err(io_err)?;
            file.sync_all().map_err(io_err)?;
        }
        let store = Store {
            dir: dir.to_path_buf(),
            file,
            next_seq,
            sync: true,
            checkpoint_every: DEFAULT_CHECKPOINT_EVERY,
            since_checkpoint: 0,
        };
        Ok((store, state, report))
    }

    /// Whether every append waits for the disk.
    pub fn with_sync(mut self, sync: bool) -> Self {
        self.sync = sync;
        self
    }

    /// Records between automatic snapshots; 0 disables them.
    pub fn with_checkpoint_every(mut self, n: usize) -> Self {
        self.checkpoint_every = n;
        self
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn wal_path(&self) -> PathBuf {
        self.dir.join(WAL_FILE)
    }
}

impl Journal for Store {
    fn append(&mut self, cmd: &Command) -> io::Result<()> {
        let rec = encode_record(self.next_seq, cmd);
        self.file.write_all(&rec)?;
        if self.sync {
            self.file.sync_data()?;
        }
        self.next_seq += 1;
        self.since_checkpoint += 1;
        Ok(())
    }

    fn checkpoint(&mut self, state: &Platform) -> io::Result<()> {
        let bytes = serde_json::to_vec(&SnapshotRef {
            seq: self.next_seq - 1,
            state,
        })
        .map_err(io::Error::other)?;
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        {
            let mut f = File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, self.dir.join(SNAPSHOT_FILE))?;
        if let Ok(d) = File::open(&self.dir) {
            let _ = d.sync_all();
        }
        // Records up to the snapshot are now redundant. A crash before this
        // truncation is harmless: recovery skips them by sequence number.
        self.file.set_len(0)?;
        self.file.sync_all()?;
        self.since_checkpoint = 0;
        Ok(())
    }

    fn wants_checkpoint(&self) -> bool {
        self.checkpoint_every > 0 && self.since_checkpoint >= self.checkpoint_every
    }
}
