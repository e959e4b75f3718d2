use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use lbsn_core::events::Event;
use lbsn_core::identity::{MemoryOutbox, PasswordHasher, RegistrationForm};
use lbsn_core::messaging::{ChatBody, LIVENESS_WINDOW_MS};
use lbsn_core::service::{ManualClock, MemoryJournal, Service};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{ensure, Outcome};

type R<T> = Result<T, String>;

fn s<T>(r: lbsn_core::Result<T>) -> R<T> {
    r.map_err(|e| e.to_string())
}

struct World {
    svc: Service,
    clock: Arc<ManualClock>,
    tokens: BTreeMap<String, String>,
}

impl World {
    fn new(users: &[&str]) -> R<World> {
        let sms = Arc::new(MemoryOutbox::default());
        let clock = Arc::new(ManualClock::new(1_790_000_000_000));
        let svc = Service::builder()
            .hasher(PasswordHasher::insecure_fast())
            .sms(sms.clone())
            .clock(clock.clone())
            .journal(MemoryJournal::default())
            .build();
        let mut tokens = BTreeMap::new();
        for (i, name) in users.iter().enumerate() {
            let phone = format!("5559{i:05}");
            s(svc.register(RegistrationForm {
                username: name.to_string(),
                password: "pw".into(),
                nickname: name.to_string(),
                email: format!("{name}@example.org"),
                phone: phone.clone(),
                ..Default::default()
            }))?;
            s(svc.activate(name, &sms.last_code_for(&phone).unwrap()))?;
            tokens.insert(name.to_string(), s(svc.login(name, "pw"))?.token);
        }
        Ok(World { svc, clock, tokens })
    }

    fn tok(&self, name: &str) -> &str {
        &self.tokens[name]
    }

    fn befriend(&self, a: &str, b: &str) -> R<()> {
        s(self.svc.request_friend(self.tok(a), b))?;
        s(self.svc.respond_friend(self.tok(b), a, true))
    }

    /// Lets the liveness window lapse so `user` is swept offline.
    fn drop_offline(&self) -> R<()> {
        self.clock.advance(LIVENESS_WINDOW_MS + 1_000);
        s(self.svc.sweep_presence()).map(drop)
    }
}

/// A client that resumes from its last processed sequence number and
/// de-duplicates by sequence, as the web client does.
struct Receiver {
    name: String,
    cursor: u64,
    seen_seqs: BTreeSet<u64>,
    /// Chat messages in the order they were observed: (sender, text).
    rows: Vec<(u64, String)>,
}

impl Receiver {
    fn new(name: &str) -> Receiver {
        Receiver {
            name: name.into(),
            cursor: 0,
            seen_seqs: BTreeSet::new(),
            rows: Vec::new(),
        }
    }

    /// One poll. With `lose_response` the reply never reaches the client, so
    /// its cursor does not move.
    fn poll(&mut self, w: &World, lose_response: bool) -> R<usize> {
        let envs = s(w.svc.poll_events(w.tok(&self.name), self.cursor))?;
        if lose_response {
            return Ok(0);
        }
        let mut fresh = 0;
        for env in envs {
            if !self.seen_seqs.insert(env.seq) {
                continue;
            }
            self.cursor = self.cursor.max(env.seq);
            if let Event::Chat { message } = env.event {
                if let ChatBody::Text(t) = message.body {
                    self.rows.push((message.sender, t));
                    fresh += 1;
                }
            }
        }
        Ok(fresh)
    }

    fn drain(&mut self, w: &World) -> R<()> {
        s(w.svc.heartbeat(w.tok(&self.name)))?;
        while self.poll(w, false)? > 0 {}
        // A final poll acknowledges everything processed so far.
        self.poll(w, false).map(drop)
    }
}

fn uid(w: &World, name: &str) -> u64 {
    w.svc.read().identity().lookup(name).unwrap().user_id
}

/// Per-sender FIFO under 10³ interleaved sends while the receiver flips
/// between online and offline.
fn fifo() -> R<String> {
    let senders = ["s0", "s1", "s2", "s3"];
    let w = World::new(&["rcv", "s0", "s1", "s2", "s3"])?;
    for snd in senders {
        w.befriend(snd, "rcv")?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0xF1F0);
    let mut rx = Receiver::new("rcv");
    let mut sent: BTreeMap<u64, Vec<String>> = BTreeMap::new();
    for i in 0..1000 {
        let snd = senders[rng.random_range(0..senders.len())];
        let text = format!("{snd}-{i}");
        s(w.svc.send_chat(w.tok(snd), "rcv", ChatBody::Text(text.clone())))?;
        sent.entry(uid(&w, snd)).or_default().push(text);
        w.clock.advance(rng.random_range(0..500));
        match rng.random_range(0..20) {
            0 => w.drop_offline()?,
            1..=3 => {
                s(w.svc.heartbeat(w.tok("rcv")))?;
                rx.poll(&w, false)?;
            }
            _ => {}
        }
    }
    rx.drain(&w)?;
    let mut got: BTreeMap<u64, Vec<String>> = BTreeMap::new();
    for (snd, t) in &rx.rows {
        got.entry(*snd).or_default().push(t.clone());
    }
    for (snd, texts) in &sent {
        ensure!(got.get(snd) == Some(texts), "sender {snd}: order or content differs");
    }
    Ok(format!("FIFO over {} sends", rx.rows.len()))
}

/// Exactly-once across 10 forced reconnects with lost poll responses.
fn reconnects() -> R<String> {
    let w = World::new(&["rcv", "a", "b"])?;
    w.befriend("a", "rcv")?;
    w.befriend("b", "rcv")?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x2EC0);
    let mut rx = Receiver::new("rcv");
    let mut sent = Vec::new();
    let mut n = 0;
    for round in 0..10 {
        s(w.svc.heartbeat(w.tok("rcv")))?;
        for _ in 0..rng.random_range(5..30) {
            let snd = if rng.random_bool(0.5) { "a" } else { "b" };
            let text = format!("r{round}-{n}");
            n += 1;
            s(w.svc.send_chat(w.tok(snd), "rcv", ChatBody::Text(text.clone())))?;
            sent.push(text);
            if rng.random_bool(0.2) {
                rx.poll(&w, false)?;
            }
        }
        // The connection dies mid-response, then the client is gone long
        // enough to be swept offline while more messages queue up.
        rx.poll(&w, true)?;
        w.drop_offline()?;
        for _ in 0..rng.random_range(5..30) {
            let text = format!("r{round}-{n}-queued");
            n += 1;
            s(w.svc.send_chat(w.tok("a"), "rcv", ChatBody::Text(text.clone())))?;
            sent.push(text);
        }
        rx.drain(&w)?;
    }
    let got: Vec<&String> = rx.rows.iter().map(|(_, t)| t).collect();
    let unique: BTreeSet<&String> = got.iter().copied().collect();
    ensure!(unique.len() == got.len(), "{} duplicate rows", got.len() - unique.len());
    let want: BTreeSet<&String> = sent.iter().collect();
    ensure!(unique == want, "missing {} messages", want.difference(&unique).count());
    Ok(format!("{} messages exactly once over 10 reconnects", got.len()))
}

/// With history saving off on one side nothing stays in the store once the
/// recipient has acknowledged delivery.
fn history_off() -> R<String> {
    let w = World::new(&["keep", "forget"])?;
    w.befriend("keep", "forget")?;
    s(w.svc.set_history_saving(w.tok("forget"), false))?;
    let mut rx = Receiver::new("forget");
    let mut rng = ChaCha8Rng::seed_from_u64(0x0FF);
    for i in 0..100 {
        if rng.random_bool(0.1) {
            w.drop_offline()?;
        } else if rng.random_bool(0.3) {
            rx.drain(&w)?;
        }
        s(w.svc.send_chat(w.tok("keep"), "forget", ChatBody::Text(format!("secret-{i}"))))?;
    }
    rx.drain(&w)?;
    ensure!(rx.rows.len() == 100, "delivered {} of 100", rx.rows.len());
    let state = w.svc.read();
    let stored = state.messaging().stored_messages().count();
    ensure!(stored == 0, "{stored} chat records stored");
    let queued = state.messaging().pending_count(uid(&w, "forget"));
    ensure!(queued == 0, "{queued} still queued");
    let snapshot = String::from_utf8(state.snapshot_bytes()).unwrap();
    ensure!(!snapshot.contains("secret-"), "message text survives in the state snapshot");
    drop(state);
    let hist = s(w.svc.chat_history(w.tok("keep"), "forget", None, 1000))?;
    ensure!(hist.is_empty(), "history API returned {} rows", hist.len());
    Ok("history off: 100 delivered, 0 stored".into())
}

pub fn suite() -> Outcome {
    Ok([fifo()?, reconnects()?, history_off()?].join("; "))
}
