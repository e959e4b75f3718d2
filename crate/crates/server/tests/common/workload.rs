//! Random multi-user workload against a `Service` journaled to a real WAL.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;
use std::sync::{Arc, Mutex};

use lbsn_core::content::CommentTarget;
use lbsn_core::identity::{MemoryOutbox, PasswordHasher, RegistrationForm};
use lbsn_core::messaging::ChatBody;
use lbsn_core::platform::{Command, Platform};
use lbsn_core::service::{GpsReading, Journal, ManualClock, PositionReport, Service};
use lbsn_core::social::{FieldGroup, Tier};
use lbsn_server::wal::{Store, SNAPSHOT_FILE, WAL_FILE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Every appended command with the log length right after it hit the file.
pub type AppendLog = Arc<Mutex<Vec<(Command, u64)>>>;

/// The files on disk between two checkpoints: the snapshot it started from,
/// the log bytes written on top, and where each record ended.
#[derive(Debug, Clone, Default)]
pub struct Segment {
    pub snapshot: Option<Vec<u8>>,
    /// Commands journaled before this segment began.
    pub base: usize,
    pub wal: Vec<u8>,
    pub ends: Vec<u64>,
}

pub type Segments = Arc<Mutex<Vec<Segment>>>;

pub struct Tee {
    pub store: Store,
    pub log: AppendLog,
    pub segments: Segments,
}

impl Journal for Tee {
    fn append(&mut self, cmd: &Command) -> io::Result<()> {
        self.store.append(cmd)?;
        let len = std::fs::metadata(self.store.wal_path())?.len();
        self.log.lock().unwrap().push((cmd.clone(), len));
        self.segments.lock().unwrap().last_mut().unwrap().ends.push(len);
        Ok(())
    }

    fn checkpoint(&mut self, state: &Platform) -> io::Result<()> {
        let wal = std::fs::read(self.store.wal_path())?;
        self.segments.lock().unwrap().last_mut().unwrap().wal = wal;
        self.store.checkpoint(state)?;
        let snap = std::fs::read(self.store.wal_path().with_file_name(SNAPSHOT_FILE))?;
        let base = self.log.lock().unwrap().len();
        self.segments.lock().unwrap().push(Segment {
            snapshot: Some(snap),
            base,
            ..Default::default()
        });
        Ok(())
    }

    fn wants_checkpoint(&self) -> bool {
        self.store.wants_checkpoint()
    }
}

pub struct Rig {
    pub svc: Service,
    pub log: AppendLog,
    pub segments: Segments,
    pub sms: Arc<MemoryOutbox>,
    pub clock: Arc<ManualClock>,
}

/// Opens `dir` and wires a service to it. `checkpoint_every` 0 keeps the
/// whole history in the log.
pub fn rig(dir: &Path, checkpoint_every: usize) -> Rig {
    let (store, state, _) = Store::open(dir).unwrap();
    let log = AppendLog::default();
    let segments = Segments::default();
    segments.lock().unwrap().push(Segment {
        snapshot: std::fs::read(dir.join(SNAPSHOT_FILE)).ok(),
        ..Default::default()
    });
    let sms = Arc::new(MemoryOutbox::default());
    let clock = Arc::new(ManualClock::new(1_790_000_000_000));
    let svc = Service::builder()
        .state(state)
        .journal(Tee {
            store: store.with_sync(false).with_checkpoint_every(checkpoint_every),
            log: log.clone(),
            segments: segments.clone(),
        })
        .clock(clock.clone())
        .hasher(PasswordHasher::insecure_fast())
        .sms(sms.clone())
        .build();
    Rig {
        svc,
        log,
        segments,
        sms,
        clock,
    }
}

impl Rig {
    pub fn appended(&self) -> usize {
        self.log.lock().unwrap().len()
    }

    pub fn commands(&self) -> Vec<Command> {
        self.log.lock().unwrap().iter().map(|(c, _)| c.clone()).collect()
    }

    /// All segments, the last one filled with the current log contents.
    pub fn segments(&self, dir: &Path) -> Vec<Segment> {
        let mut segs = self.segments.lock().unwrap().clone();
        segs.last_mut().unwrap().wal = std::fs::read(dir.join(WAL_FILE)).unwrap_or_default();
        segs
    }

    pub fn offsets(&self) -> Vec<u64> {
        self.log.lock().unwrap().iter().map(|(_, o)| *o).collect()
    }
}

const TIERS: [Tier; 3] = [Tier::Everyone, Tier::FriendsOnly, Tier::Nobody];
const FIELDS: [FieldGroup; 6] = [
    FieldGroup::Phone,
    FieldGroup::Gender,
    FieldGroup::Birthday,
    FieldGroup::Email,
    FieldGroup::Location,
    FieldGroup::Status,
];

/// Drives random user actions until at least `records` commands were
/// journaled. Failed actions are part of the mix; they append nothing.
pub fn drive(rig: &Rig, seed: u64, records: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let svc = &rig.svc;
    let names: Vec<String> = (0..8).map(|i| format!("w{seed}u{i}")).collect();
    let mut tokens = Vec::new();
    for (i, n) in names.iter().enumerate() {
        let phone = format!("1{seed:04}{i:06}");
        svc.register(RegistrationForm {
            username: n.clone(),
            password: "pw".into(),
            nickname: n.clone(),
            email: format!("{n}@example.org"),
            phone: phone.clone(),
            interests: vec![["hiking", "chess", "food"][i % 3].into()],
            ..Default::default()
        })
        .unwrap();
        svc.activate(n, &rig.sms.last_code_for(&phone).unwrap()).unwrap();
        tokens.push(svc.login(n, "pw").unwrap().token);
    }
    let mut posts = Vec::new();
    while rig.appended() < records {
        rig.clock.advance(rng.random_range(0..4000));
        let a = rng.random_range(0..names.len());
        let b = (a + rng.random_range(1..names.len())) % names.len();
        let (ta, nb) = (&tokens[a], &names[b]);
        let _ = match rng.random_range(0..16) {
            0 | 1 => svc.request_friend(ta, nb).map(drop),
            2 => svc.respond_friend(&tokens[b], &names[a], rng.random_bool(0.8)).map(drop),
            3 | 4 => svc
                .send_chat(ta, nb, ChatBody::Text(format!("m{}", rng.random::<u32>())))
                .map(drop),
            5 => svc.send_mail(ta, nb, "subject", "body").map(drop),
            6 => svc
                .submit_position(
                    ta,
                    &PositionReport {
                        gps: Some(GpsReading {
                            lat: 38.9 + rng.random_range(-0.05..0.05),
                            lon: 121.6 + rng.random_range(-0.05..0.05),
                            accuracy: 15.0,
                        }),
                        ..Default::default()
                    },
                )
                .map(drop),
            7 => svc.blog_write(ta, "t", "b").map(|p| posts.push((a, p.post_id))),
            8 => match posts.pop() {
                Some((owner, id)) => svc.blog_publish(&tokens[owner], id).map(drop),
                None => Ok(()),
            },
            9 => svc.heartbeat(ta).map(drop),
            10 => {
                let mut m = BTreeMap::new();
                m.insert(FIELDS[rng.random_range(0..6)], TIERS[rng.random_range(0..3)]);
                svc.set_privacy(ta, &m).map(drop)
            }
            11 => svc.poll_events(ta, 0).map(drop),
            12 => svc.set_history_saving(ta, rng.random_bool(0.7)),
            13 => match svc.feed(ta, None, 1).ok().and_then(|f| f.first().map(|i| i.event.event_id)) {
                Some(e) => svc.comment(ta, CommentTarget::Event(e), "c").map(drop),
                None => Ok(()),
            },
            14 => svc.create_group(ta, &format!("g{}", rng.random_range(0..3))).map(drop),
            _ => {
                if rng.random_bool(0.3) {
                    svc.remove_friend(ta, nb).map(drop)
                } else {
                    svc.record_visit(ta, nb).map(drop)
                }
            }
        };
    }
}

/// Independent oracle: a fresh state replaying the first `n` commands.
pub fn oracle(commands: &[Command], n: usize) -> Vec<u8> {
    Platform::default().replay(&commands[..n]).snapshot_bytes()
}
