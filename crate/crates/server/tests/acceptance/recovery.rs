use std::fs;

use lbsn_server::wal::{Store, SNAPSHOT_FILE, WAL_FILE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use crate::common::workload::{drive, oracle, rig, Segment};
use crate::{ensure, Outcome};

/// What the data directory holds if the process dies at a given moment.
struct Crash {
    snapshot: Option<Vec<u8>>,
    wal: Vec<u8>,
    stray_tmp: bool,
    /// Commands the recovered state must reflect.
    expect: usize,
    what: String,
}

fn crash_in_segment(rng: &mut ChaCha8Rng, segs: &[Segment]) -> Crash {
    let i = rng.random_range(0..segs.len());
    let seg = &segs[i];
    // Mostly arbitrary byte offsets; sometimes exactly on a record boundary.
    let cut = if rng.random_bool(0.2) && !seg.ends.is_empty() {
        seg.ends[rng.random_range(0..seg.ends.len())]
    } else {
        rng.random_range(0..=seg.wal.len() as u64)
    };
    Crash {
        snapshot: seg.snapshot.clone(),
        wal: seg.wal[..cut as usize].to_vec(),
        stray_tmp: false,
        expect: seg.base + seg.ends.iter().filter(|&&e| e <= cut).count(),
        what: format!("segment {i}, byte {cut}"),
    }
}

/// Dies inside a checkpoint: either before the snapshot rename (old files
/// plus a half-written temp file) or after it but before the log is emptied.
fn crash_in_checkpoint(rng: &mut ChaCha8Rng, segs: &[Segment]) -> Crash {
    let i = rng.random_range(0..segs.len() - 1);
    let (seg, next) = (&segs[i], &segs[i + 1]);
    if rng.random_bool(0.5) {
        Crash {
            snapshot: seg.snapshot.clone(),
            wal: seg.wal.clone(),
            stray_tmp: true,
            expect: next.base,
            what: format!("checkpoint {i}, before rename"),
        }
    } else {
        Crash {
            snapshot: next.snapshot.clone(),
            wal: seg.wal.clone(),
            stray_tmp: false,
            expect: next.base,
            what: format!("checkpoint {i}, before log truncation"),
        }
    }
}

pub fn kill_points() -> Outcome {
    let live_dir = TempDir::new().unwrap();
    let r = rig(live_dir.path(), 120);
    drive(&r, 77, 500);
    let commands = r.commands();
    let segs = r.segments(live_dir.path());
    drop(r);
    ensure!(segs.len() >= 4, "workload produced only {} checkpoint segments", segs.len());

    let mut rng = ChaCha8Rng::seed_from_u64(0xDEAD);
    let mut torn = 0;
    for k in 0..100 {
        let crash = if k % 10 == 9 {
            crash_in_checkpoint(&mut rng, &segs)
        } else {
            crash_in_segment(&mut rng, &segs)
        };
        let dir = TempDir::new().unwrap();
        if let Some(snap) = &crash.snapshot {
            fs::write(dir.path().join(SNAPSHOT_FILE), snap).unwrap();
        }
        if crash.stray_tmp {
            fs::write(dir.path().join(format!("{SNAPSHOT_FILE}.tmp")), b"{\"seq\":9").unwrap();
        }
        fs::write(dir.path().join(WAL_FILE), &crash.wal).unwrap();
        let (_, state, report) = Store::open(dir.path()).map_err(|e| format!("kill {k} ({}): {e}", crash.what))?;
        torn += usize::from(report.truncated_bytes > 0);
        ensure!(
            state.snapshot_bytes() == oracle(&commands, crash.expect),
            "kill {k} ({}): recovered state differs from replay of {} commands",
            crash.what,
            crash.expect
        );
    }
    Ok(format!(
        "100 kill points over {} commands in {} segments ({torn} torn tails) match replay",
        commands.len(),
        segs.len()
    ))
}
